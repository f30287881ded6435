"""Rectified stereo camera geometry.

Depth and disparity are linked through the focal length ``f`` (px) and the
baseline term ``tx`` (mm):

    Z = tx * f / (d + (cx1 - cx2))
    d = tx * f / Z - (cx1 - cx2)

``tx`` is stored positive.  The right camera centre sits at ``+tx`` along
the left camera X axis, so disparity is non-negative for visible points
and the partner of left pixel ``u`` lies at ``u - d + (cx2 - cx1)`` in the
right image.

The 4x4 reprojection matrix produced by :func:`build_matrices` has last
row ``[0, 0, 1/tx, (cx1 - cx2)/tx]`` so that dehomogenising
``Q @ [u, v, d, 1]`` is numerically identical to :func:`triangulate_pixel`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "RectifiedRig",
    "rig_from_matrices",
    "build_matrices",
    "disparity_to_depth",
    "depth_to_disparity",
    "triangulate_pixel",
    "project_point",
    "triangulate_chessboard",
]

# Rectified rows must align this tightly for the rig to be usable.
_CY_TOL = 1e-9


@dataclass(frozen=True)
class RectifiedRig:
    """Rectified stereo camera model.

    f: focal length in pixels (shared by both eyes).
    cx1, cy1 / cx2, cy2: principal points of the left / right eye (px).
    tx: baseline term in mm, stored positive.
    width, height: image size in pixels.
    """

    f: float
    cx1: float
    cy1: float
    cx2: float
    cy2: float
    tx: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (self.f > 0):
            raise ValueError(f"focal length must be positive, got {self.f}")
        if not (self.tx > 0):
            raise ValueError(f"baseline term must be positive, got {self.tx}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(
                f"image size must be positive, got {self.width}x{self.height}"
            )
        if abs(self.cy1 - self.cy2) > _CY_TOL:
            raise ValueError(
                "rectified rows do not align: "
                f"cy1={self.cy1!r} differs from cy2={self.cy2!r}"
            )

    @property
    def cx_offset(self) -> float:
        """The principal-point term cx1 - cx2 entering the depth formula."""
        return self.cx1 - self.cx2


def rig_from_matrices(p1, p2, width: int, height: int) -> RectifiedRig:
    """Reconstruct a rig from the two 3x4 projection matrices.

    Inverse of :func:`build_matrices`; used when loading calibration files.
    """
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    if p1.shape != (3, 4) or p2.shape != (3, 4):
        raise ValueError("projection matrices must be 3x4")
    f = p1[0, 0]
    if f <= 0:
        raise ValueError(f"P1 carries a non-positive focal length: {f}")
    if abs(p2[0, 0] - f) > 1e-6 * max(abs(f), 1.0):
        raise ValueError("P1 and P2 disagree on the focal length")
    return RectifiedRig(
        f=f,
        cx1=p1[0, 2],
        cy1=p1[1, 2],
        cx2=p2[0, 2],
        cy2=p2[1, 2],
        tx=p2[0, 3] / f,
        width=width,
        height=height,
    )


def build_matrices(rig: RectifiedRig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (P1, P2, Q) for the rig.

    P1/P2 are the 3x4 per-eye projection matrices of the rectified pair;
    Q reprojects homogeneous (u, v, d, 1) to a homogeneous 3D point.
    """
    f = rig.f
    p1 = np.array(
        [
            [f, 0.0, rig.cx1, 0.0],
            [0.0, f, rig.cy1, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ]
    )
    p2 = np.array(
        [
            [f, 0.0, rig.cx2, rig.tx * f],
            [0.0, f, rig.cy2, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ]
    )
    q = np.array(
        [
            [1.0, 0.0, 0.0, -rig.cx1],
            [0.0, 1.0, 0.0, -rig.cy1],
            [0.0, 0.0, 0.0, f],
            [0.0, 0.0, 1.0 / rig.tx, rig.cx_offset / rig.tx],
        ]
    )
    return p1, p2, q


def disparity_to_depth(rig: RectifiedRig, d):
    """Convert disparity (px) to metric depth (mm).

    Accepts scalars or arrays; every element must satisfy
    d + (cx1 - cx2) > 0, otherwise the point would be at infinity or
    behind the cameras.
    """
    d = np.asarray(d, dtype=float)
    denom = d + rig.cx_offset
    if np.any(denom <= 0.0):
        raise ValueError(
            "disparity maps to an infinite or behind-camera point "
            f"(d + (cx1 - cx2) = {np.min(denom)})"
        )
    z = rig.tx * rig.f / denom
    return float(z) if z.ndim == 0 else z


def depth_to_disparity(rig: RectifiedRig, z):
    """Convert metric depth (mm, > 0) to disparity (px)."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0.0):
        raise ValueError(f"depth must be positive, got minimum {np.min(z)}")
    d = rig.tx * rig.f / z - rig.cx_offset
    return float(d) if d.ndim == 0 else d


def triangulate_pixel(rig: RectifiedRig, u, v, d) -> np.ndarray:
    """Reproject left-image pixel (u, v) with disparity d to the left
    camera frame (mm).

    Broadcasts over array inputs; the last output axis holds (X, Y, Z).
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    z = disparity_to_depth(rig, d)
    x = (u - rig.cx1) * z / rig.f
    y = (v - rig.cy1) * z / rig.f
    return np.stack(np.broadcast_arrays(x, y, z), axis=-1)


def project_point(rig: RectifiedRig, eye: str, point) -> np.ndarray:
    """Project camera-frame points (mm) through one eye to pixel (u, v).

    ``eye`` is "left" or "right"; the right camera centre is at +tx along
    X, so right-image u values come out smaller for the same point.
    """
    p = np.asarray(point, dtype=float)
    if p.shape[-1] != 3:
        raise ValueError(f"expected 3-vectors, got shape {p.shape}")
    z = p[..., 2]
    if np.any(z <= 0.0):
        raise ValueError("cannot project points at or behind the camera plane")
    if eye == "left":
        u = rig.f * p[..., 0] / z + rig.cx1
        v = rig.f * p[..., 1] / z + rig.cy1
    elif eye == "right":
        u = rig.f * (p[..., 0] - rig.tx) / z + rig.cx2
        v = rig.f * p[..., 1] / z + rig.cy2
    else:
        raise ValueError(f"unknown eye {eye!r}")
    return np.stack(np.broadcast_arrays(u, v), axis=-1)


def triangulate_chessboard(
    rig: RectifiedRig, left_pts, right_pts, row_tolerance: float = 2.0
) -> np.ndarray:
    """Triangulate corresponding rectified corner lists to 3D (mm).

    Both inputs are (N, 2) pixel coordinates.  Corresponding rows must
    agree to ``row_tolerance`` px or the pair violates rectification.
    Per pair the disparity is uL - uR and the left pixel is reprojected.
    """
    lp = np.asarray(left_pts, dtype=float).reshape(-1, 2)
    rp = np.asarray(right_pts, dtype=float).reshape(-1, 2)
    if lp.shape != rp.shape:
        raise ValueError(
            f"corresponding lists differ in length: {lp.shape[0]} vs {rp.shape[0]}"
        )
    if lp.shape[0] == 0:
        raise ValueError("no point pairs supplied")
    row_err = np.abs(lp[:, 1] - rp[:, 1])
    if np.any(row_err > row_tolerance):
        bad = int(np.argmax(row_err))
        raise ValueError(
            "rectification violated: rows differ by "
            f"{row_err[bad]:.3f} px at pair {bad}"
        )
    d = lp[:, 0] - rp[:, 0]
    return triangulate_pixel(rig, lp[:, 0], lp[:, 1], d)
