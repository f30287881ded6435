"""Rigid transforms, transform averaging, point registration and the
constrained pose parameterisation used during manual alignment.

Transforms map model (CT) coordinates in mm to left-camera coordinates:
``x_cam = R @ x_model + T``.  Camera axes follow image conventions:
X right, Y down, Z forward (viewing direction).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "RigidTransform",
    "AlignmentSet",
    "MarkerTriple",
    "AmbiguousRotationMeanWarning",
    "compose",
    "invert",
    "apply",
    "rot_x",
    "rot_y",
    "rot_z",
    "average_rotations",
    "average_transforms",
    "register_points",
    "initial_pose_from_markers",
    "constrained_adjust",
]

_ROT_TOL = 1e-9
DEFAULT_DZ_BOUND = 20.0  # mm; effective pinhole sits only slightly inside the shaft


class AmbiguousRotationMeanWarning(UserWarning):
    """The rotation mean is not unique (antipodal or widely spread inputs)."""


def _check_rotation(r: np.ndarray, tol: float = _ROT_TOL) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {r.shape}")
    if np.max(np.abs(r.T @ r - np.eye(3))) > tol:
        raise ValueError("matrix is not orthonormal within 1e-9")
    if abs(np.linalg.det(r) - 1.0) > tol:
        raise ValueError("matrix is not a proper rotation (det != 1)")
    return r


@dataclass(frozen=True)
class RigidTransform:
    """Rotation + translation mapping model coordinates to camera
    coordinates (mm)."""

    R: np.ndarray
    T: np.ndarray

    def __post_init__(self) -> None:
        r = _check_rotation(self.R).copy()
        t = np.asarray(self.T, dtype=float).reshape(3).copy()
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", r)
        object.__setattr__(self, "T", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        """Build from a 4x4 row-major homogeneous matrix."""
        m = np.asarray(m, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"expected 4x4 matrix, got {m.shape}")
        if np.max(np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0]))) > 1e-9:
            raise ValueError("last row of a homogeneous transform must be 0 0 0 1")
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.R
        m[:3, 3] = self.T
        return m

    def camera_center(self) -> np.ndarray:
        """Camera origin expressed in model coordinates."""
        return -self.R.T @ self.T

    def view_axis(self) -> np.ndarray:
        """Camera +Z (viewing direction) expressed in model coordinates."""
        return self.R.T @ np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class AlignmentSet:
    """Repeated manual alignments of one scene plus the rotation centre
    (a surface point near the image centre at roughly average depth)."""

    transforms: tuple[RigidTransform, ...]
    c_ct: np.ndarray
    inlier_flags: tuple[bool, ...] = field(default=())

    def __post_init__(self) -> None:
        transforms = tuple(self.transforms)
        if not transforms:
            raise ValueError("alignment set must hold at least one transform")
        c = np.asarray(self.c_ct, dtype=float).reshape(3).copy()
        if not np.all(np.isfinite(c)):
            raise ValueError("rotation centre must be finite")
        c.setflags(write=False)
        flags = tuple(self.inlier_flags) or tuple(True for _ in transforms)
        if len(flags) != len(transforms):
            raise ValueError("one inlier flag per transform required")
        object.__setattr__(self, "transforms", transforms)
        object.__setattr__(self, "c_ct", c)
        object.__setattr__(self, "inlier_flags", flags)


@dataclass(frozen=True)
class MarkerTriple:
    """Marked left/right camera positions and a view-direction target, all
    in model coordinates (mm)."""

    left_cam: np.ndarray
    right_cam: np.ndarray
    target: np.ndarray

    def __post_init__(self) -> None:
        lc = np.asarray(self.left_cam, dtype=float).reshape(3).copy()
        rc = np.asarray(self.right_cam, dtype=float).reshape(3).copy()
        tg = np.asarray(self.target, dtype=float).reshape(3).copy()
        base = rc - lc
        if np.linalg.norm(base) < 1e-12:
            raise ValueError("left and right camera markers coincide")
        view = tg - lc
        nv = np.linalg.norm(view)
        if nv < 1e-12:
            raise ValueError("target marker coincides with the left camera")
        # sin of the angle between the view direction and the camera pair
        lateral = np.linalg.norm(np.cross(base / np.linalg.norm(base), view / nv))
        if lateral < 1e-6:
            raise ValueError("target is collinear with the camera pair")
        for name, v in (("left_cam", lc), ("right_cam", rc), ("target", tg)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """a after b: apply(compose(a, b), p) == apply(a, apply(b, p))."""
    return RigidTransform(a.R @ b.R, a.R @ b.T + a.T)


def invert(a: RigidTransform) -> RigidTransform:
    return RigidTransform(a.R.T, -a.R.T @ a.T)


def apply(a: RigidTransform, p) -> np.ndarray:
    """Transform one point or an (N, 3) batch."""
    p = np.asarray(p, dtype=float)
    return p @ a.R.T + a.T


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _quat_from_rotation(r: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) for a rotation matrix (Shepperd)."""
    t = np.trace(r)
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        return np.array(
            [
                0.25 * s,
                (r[2, 1] - r[1, 2]) / s,
                (r[0, 2] - r[2, 0]) / s,
                (r[1, 0] - r[0, 1]) / s,
            ]
        )
    i = int(np.argmax(np.diag(r)))
    if i == 0:
        s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        q = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
    elif i == 1:
        s = np.sqrt(1.0 - r[0, 0] + r[1, 1] - r[2, 2]) * 2.0
        q = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
    else:
        s = np.sqrt(1.0 - r[0, 0] - r[1, 1] + r[2, 2]) * 2.0
        q = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    return np.array(q)


def _rotation_from_quat(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def average_rotations(rotations) -> np.ndarray:
    """Mean rotation via the quaternion outer-product eigenvector.

    Accumulates M = sum(q q^T) over unit quaternions (sign-invariant) and
    returns the rotation of the eigenvector with the largest eigenvalue.
    When that eigenvalue is not isolated the mean is not unique; an
    arbitrary maximiser is returned and
    :class:`AmbiguousRotationMeanWarning` is emitted.
    """
    rotations = [_check_rotation(r) for r in rotations]
    if not rotations:
        raise ValueError("cannot average an empty rotation set")
    quats = np.array([_quat_from_rotation(r) for r in rotations])
    m = quats.T @ quats
    vals, vecs = np.linalg.eigh(m)
    if len(rotations) > 1 and vals[-1] - vals[-2] <= 1e-9 * max(vals[-1], 1.0):
        warnings.warn(
            "rotation mean is ambiguous (eigenvalue multiplicity)",
            AmbiguousRotationMeanWarning,
            stacklevel=2,
        )
    return _rotation_from_quat(vecs[:, -1])


def average_transforms(aset: AlignmentSet) -> RigidTransform:
    """Average the inlier transforms about the rotation centre.

    The translation mean is taken through the transformed centre:
    y_i = R_i @ c + T_i, then T = mean(y) - R_mean @ c, which keeps the
    averaged transform mapping c onto the mean of the individual images
    of c exactly.
    """
    inliers = [t for t, ok in zip(aset.transforms, aset.inlier_flags) if ok]
    if not inliers:
        raise ValueError("alignment set has no inliers to average")
    r_mean = average_rotations([t.R for t in inliers])
    y = np.mean([t.R @ aset.c_ct + t.T for t in inliers], axis=0)
    return RigidTransform(r_mean, y - r_mean @ aset.c_ct)


def register_points(src, dst, with_scale: bool = False):
    """Least-squares rigid (optionally similarity) alignment of point sets.

    Minimises sum ||dst - s*R@src - T||^2 over rotations (and the scalar
    s when ``with_scale``); returns (RigidTransform, s, fre_rms) where
    fre_rms is the RMS residual in mm.  Needs >= 3 non-collinear points.
    """
    src = np.asarray(src, dtype=float).reshape(-1, 3)
    dst = np.asarray(dst, dtype=float).reshape(-1, 3)
    if src.shape != dst.shape:
        raise ValueError("source and destination point counts differ")
    n = src.shape[0]
    if n < 3:
        raise ValueError(f"registration needs at least 3 points, got {n}")
    centroid_src = src.mean(axis=0)
    centroid_dst = dst.mean(axis=0)
    x = src - centroid_src
    y = dst - centroid_dst
    for name, pts in (("source", x), ("destination", y)):
        sv = np.linalg.svd(pts, compute_uv=False)
        if sv[1] < max(sv[0] * 1e-9, 1e-12):
            raise ValueError(f"degenerate configuration: {name} points are collinear")
    u, s, vt = np.linalg.svd(x.T @ y)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    corr = np.array([1.0, 1.0, d])
    r = vt.T @ np.diag(corr) @ u.T
    scale = float(np.sum(s * corr) / np.sum(x * x)) if with_scale else 1.0
    t = centroid_dst - scale * r @ centroid_src
    residuals = dst - (scale * src @ r.T + t)
    fre_rms = float(np.sqrt(np.mean(np.sum(residuals**2, axis=1))))
    return RigidTransform(r, t), scale, fre_rms


def initial_pose_from_markers(m: MarkerTriple) -> RigidTransform:
    """Initial model-to-camera pose from the three marked points.

    Camera origin at the left marker, Z towards the target, X along the
    component of (right - left) orthogonal to Z, Y = Z x X.
    """
    z = m.target - m.left_cam
    z = z / np.linalg.norm(z)
    base = m.right_cam - m.left_cam
    x = base - np.dot(base, z) * z
    nx = np.linalg.norm(x)
    if nx < 1e-6 * np.linalg.norm(base):
        raise ValueError("target is collinear with the camera pair")
    x = x / nx
    y = np.cross(z, x)
    r = np.stack([x, y, z])
    return RigidTransform(r, -r @ m.left_cam)


def constrained_adjust(
    pose: RigidTransform,
    rx: float,
    ry: float,
    rz: float,
    dz: float,
    max_dz: float = DEFAULT_DZ_BOUND,
) -> RigidTransform:
    """Rotate about the camera origin, then slide the camera along its
    own viewing axis by dz (mm).

    The Euler angles are applied in camera frame in the order X, Y, Z
    (scene as seen by the camera rotates by Rz@Ry@Rx).  The camera centre
    in model coordinates therefore moves only along the viewing axis,
    which preserves the scanned camera-to-surface distance.
    """
    if abs(dz) > max_dz:
        raise ValueError(f"axial translation {dz} mm exceeds the {max_dz} mm bound")
    rd = rot_z(rz) @ rot_y(ry) @ rot_x(rx)
    return RigidTransform(rd @ pose.R, rd @ pose.T - np.array([0.0, 0.0, dz]))
