"""Software rasteriser producing metric depth buffers and overlay
renderings through one eye of a rectified rig.

The pipeline mirrors a perspective GL setup: triangles are clipped to the
[z_near, z_far] slab in camera space, projected through the pinhole of
the requested eye, and filled at pixel centres (i + 0.5, j + 0.5).
1/Z is interpolated linearly in screen space (exact for planar
triangles) and stored as a normalised depth in [0, 1]:

    z_gl = 0.5 + (z_near + z_far - 2*z_near*z_far/Z) / (2*(z_far - z_near))

:func:`linearize_depth` inverts this.  Unwritten pixels keep z_gl = 1
(the back plane).

Determinism: triangles are always traversed in index order, pixel
ownership on shared edges follows a top-left fill rule, and depth ties
within 1e-12 go to the lower triangle index, so output buffers are
bit-identical across repeated runs and across tile partitionings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import TriangleMesh, UNSEEN_COLOR
from .rig import RectifiedRig
from .se3 import RigidTransform, apply

__all__ = [
    "RenderConfig",
    "DepthBuffer",
    "rasterize_depth",
    "linearize_depth",
    "depth_to_gl",
    "render_overlay",
    "project_texture",
    "sample_bilinear",
]

_TIE_EPS = 1e-12
FLAT_COLOR = np.array([0.7, 0.7, 0.7])

_MODES = ("solid", "wireframe", "points")


@dataclass(frozen=True)
class RenderConfig:
    """Clipping planes (mm), draw mode and overlay opacity."""

    z_near: float = 1.0
    z_far: float = 1000.0
    mode: str = "solid"
    alpha: float = 1.0

    def __post_init__(self) -> None:
        if not (0.0 < self.z_near < self.z_far):
            raise ValueError(
                f"need 0 < z_near < z_far, got {self.z_near}, {self.z_far}"
            )
        if self.mode not in _MODES:
            raise ValueError(f"unknown render mode {self.mode!r}")
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class DepthBuffer:
    """Per-pixel normalised depth in [0, 1]; 1 marks the back plane."""

    z_gl: np.ndarray
    z_near: float
    z_far: float

    @property
    def width(self) -> int:
        return self.z_gl.shape[1]

    @property
    def height(self) -> int:
        return self.z_gl.shape[0]

    def to_metric(self) -> np.ndarray:
        """Metric depth map in mm with NaN at back-plane pixels."""
        z = linearize_depth(self.z_gl, self.z_near, self.z_far)
        return np.where(self.z_gl >= 1.0, np.nan, z)


def depth_to_gl(z, z_near: float, z_far: float):
    """Forward mapping from metric depth to normalised buffer depth."""
    z = np.asarray(z, dtype=float)
    out = 0.5 + (z_near + z_far - 2.0 * z_near * z_far / z) / (2.0 * (z_far - z_near))
    return float(out) if out.ndim == 0 else out


def linearize_depth(z_gl, z_near: float, z_far: float):
    """Invert the normalised Z-buffer value to metric depth (mm)."""
    z_gl = np.asarray(z_gl, dtype=float)
    if np.any(z_gl < 0.0) or np.any(z_gl > 1.0):
        raise ValueError("normalised depth must lie in [0, 1]")
    denom = 2.0 * (z_gl - 0.5) * (z_far - z_near) - z_near - z_far
    out = -2.0 * z_near * z_far / denom
    return float(out) if out.ndim == 0 else out


def _eye_setup(rig: RectifiedRig, eye: str) -> tuple[float, float, float]:
    """Camera X shift and principal point for one eye."""
    if eye == "left":
        return 0.0, rig.cx1, rig.cy1
    if eye == "right":
        return rig.tx, rig.cx2, rig.cy2
    raise ValueError(f"unknown eye {eye!r}")


def _clip_z(points: list[np.ndarray], z_near: float, z_far: float) -> list[np.ndarray]:
    """Sutherland-Hodgman clip of a camera-space polygon to the Z slab."""
    for keep_sign, z_plane in ((1.0, z_near), (-1.0, z_far)):
        if not points:
            return []
        out: list[np.ndarray] = []
        prev = points[-1]
        prev_d = keep_sign * (prev[2] - z_plane)
        for cur in points:
            cur_d = keep_sign * (cur[2] - z_plane)
            if cur_d >= 0.0:
                if prev_d < 0.0:
                    t = prev_d / (prev_d - cur_d)
                    out.append(prev + t * (cur - prev))
                out.append(cur)
            elif prev_d >= 0.0:
                t = prev_d / (prev_d - cur_d)
                out.append(prev + t * (cur - prev))
            prev, prev_d = cur, cur_d
        points = out
    return points


def _fill_triangle(
    zbuf: np.ndarray,
    owner: np.ndarray,
    color_buf: np.ndarray | None,
    tri_index: int,
    pts: np.ndarray,  # (3, 2) screen coordinates
    q: np.ndarray,  # (3,) 1/Z at the vertices
    colors: np.ndarray | None,  # (3, 3) vertex colors or None
    z_near: float,
    z_far: float,
    row0: int,
    row1: int,
) -> None:
    height, width = zbuf.shape
    # pixel centres live at integer + 0.5
    x_lo = max(0, int(np.ceil(pts[:, 0].min() - 0.5)))
    x_hi = min(width - 1, int(np.floor(pts[:, 0].max() - 0.5)))
    y_lo = max(row0, int(np.ceil(pts[:, 1].min() - 0.5)))
    y_hi = min(row1 - 1, int(np.floor(pts[:, 1].max() - 0.5)))
    if x_lo > x_hi or y_lo > y_hi:
        return

    area = (pts[1, 0] - pts[0, 0]) * (pts[2, 1] - pts[0, 1]) - (
        pts[2, 0] - pts[0, 0]
    ) * (pts[1, 1] - pts[0, 1])
    if area == 0.0:
        return
    if area < 0.0:
        pts = pts[[0, 2, 1]]
        q = q[[0, 2, 1]]
        if colors is not None:
            colors = colors[[0, 2, 1]]
        area = -area

    xs = np.arange(x_lo, x_hi + 1, dtype=float) + 0.5
    ys = (np.arange(y_lo, y_hi + 1, dtype=float) + 0.5)[:, None]

    inside = None
    edge_vals = []
    for a, b in ((0, 1), (1, 2), (2, 0)):
        dx = pts[b, 0] - pts[a, 0]
        dy = pts[b, 1] - pts[a, 1]
        e = dx * (ys - pts[a, 1]) - dy * (xs - pts[a, 0])
        # top-left ownership of pixels exactly on an edge
        own = (dy < 0.0) or (dy == 0.0 and dx > 0.0)
        cond = (e > 0.0) | ((e == 0.0) & own)
        inside = cond if inside is None else (inside & cond)
        edge_vals.append(e)
    if not np.any(inside):
        return

    # barycentric weights: vertex k is opposite the edge not touching it
    w0 = edge_vals[1] / area
    w1 = edge_vals[2] / area
    w2 = edge_vals[0] / area
    q_pix = w0 * q[0] + w1 * q[1] + w2 * q[2]
    with np.errstate(divide="ignore"):
        z_cam = np.where(q_pix > 0.0, 1.0 / np.where(q_pix > 0.0, q_pix, 1.0), np.inf)
    z_cam = np.clip(z_cam, z_near, z_far)
    z_gl = depth_to_gl(z_cam, z_near, z_far)

    window = (slice(y_lo, y_hi + 1), slice(x_lo, x_hi + 1))
    z_cur = zbuf[window]
    own_cur = owner[window]
    better = inside & (
        (z_gl < z_cur - _TIE_EPS)
        | ((np.abs(z_gl - z_cur) <= _TIE_EPS) & (tri_index < own_cur))
    )
    if not np.any(better):
        return
    z_cur[better] = z_gl[better]
    own_cur[better] = tri_index
    if color_buf is not None and colors is not None:
        # perspective-correct vertex color interpolation
        c_over_z = colors * q[:, None]
        c_pix = (
            w0[..., None] * c_over_z[0]
            + w1[..., None] * c_over_z[1]
            + w2[..., None] * c_over_z[2]
        ) / q_pix[..., None]
        color_buf[window][better] = c_pix[better]


def _camera_vertices(
    mesh: TriangleMesh, rig: RectifiedRig, eye: str, pose: RigidTransform
) -> tuple[np.ndarray, float, float]:
    shift, cx, cy = _eye_setup(rig, eye)
    cam = apply(pose, mesh.vertices)
    if shift:
        cam = cam - np.array([shift, 0.0, 0.0])
    return cam, cx, cy


def _raster_pass(
    mesh: TriangleMesh,
    rig: RectifiedRig,
    eye: str,
    pose: RigidTransform,
    config: RenderConfig,
    tiles: int,
    want_color: bool,
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    h, w = rig.height, rig.width
    zbuf = np.ones((h, w))
    owner = np.full((h, w), np.iinfo(np.int64).max, dtype=np.int64)
    color_buf = np.zeros((h, w, 3)) if want_color else None

    cam, cx, cy = _camera_vertices(mesh, rig, eye, pose)
    if want_color:
        vcolors = mesh.colors if mesh.colors is not None else None

    tiles = max(1, int(tiles))
    bounds = np.linspace(0, h, tiles + 1).astype(int)
    for row0, row1 in zip(bounds[:-1], bounds[1:]):
        if row0 >= row1:
            continue
        for ti, tri in enumerate(mesh.triangles):
            poly = _clip_z([cam[i] for i in tri], config.z_near, config.z_far)
            if len(poly) < 3:
                continue
            if want_color:
                if vcolors is None:
                    base = np.tile(FLAT_COLOR, (3, 1))
                else:
                    base = vcolors[tri]
                # clipped polygon vertices inherit interpolated colors;
                # recompute them barycentrically in camera space
                poly_colors = [
                    _barycentric_color(cam[tri], base, p) for p in poly
                ]
            screen = []
            qs = []
            for p in poly:
                z = p[2]
                screen.append((rig.f * p[0] / z + cx, rig.f * p[1] / z + cy))
                qs.append(1.0 / z)
            screen = np.asarray(screen)
            qs = np.asarray(qs)
            for k in range(1, len(poly) - 1):
                idx = [0, k, k + 1]
                _fill_triangle(
                    zbuf,
                    owner,
                    color_buf,
                    ti,
                    screen[idx],
                    qs[idx],
                    np.asarray([poly_colors[i] for i in idx]) if want_color else None,
                    config.z_near,
                    config.z_far,
                    row0,
                    row1,
                )
    return zbuf, owner, color_buf


def _barycentric_color(tri_cam: np.ndarray, tri_colors: np.ndarray, p: np.ndarray):
    """Color of a point on a triangle's plane by 3D barycentric weights."""
    v0 = tri_cam[1] - tri_cam[0]
    v1 = tri_cam[2] - tri_cam[0]
    v2 = p - tri_cam[0]
    d00, d01, d11 = v0 @ v0, v0 @ v1, v1 @ v1
    d20, d21 = v2 @ v0, v2 @ v1
    denom = d00 * d11 - d01 * d01
    if abs(denom) < 1e-30:
        return tri_colors[0]
    w1 = (d11 * d20 - d01 * d21) / denom
    w2 = (d00 * d21 - d01 * d20) / denom
    w0 = 1.0 - w1 - w2
    return w0 * tri_colors[0] + w1 * tri_colors[1] + w2 * tri_colors[2]


def rasterize_depth(
    mesh: TriangleMesh,
    rig: RectifiedRig,
    eye: str,
    pose: RigidTransform,
    config: RenderConfig,
    tiles: int = 1,
) -> DepthBuffer:
    """Rasterise the mesh into a normalised depth buffer for one eye.

    An empty mesh yields an all-background buffer.  ``tiles`` splits the
    rows into bands processed independently; the result is bit-identical
    for any tile count.
    """
    zbuf, _, _ = _raster_pass(mesh, rig, eye, pose, config, tiles, want_color=False)
    zbuf.setflags(write=False)
    return DepthBuffer(zbuf, config.z_near, config.z_far)


def _clip_segment_z(
    p0: np.ndarray, p1: np.ndarray, z_near: float, z_far: float
) -> tuple[np.ndarray, np.ndarray] | None:
    """Clip a camera-space segment to the Z slab; None when fully outside."""
    t0, t1 = 0.0, 1.0
    for sign, plane in ((1.0, z_near), (-1.0, z_far)):
        d0 = sign * (p0[2] - plane)
        d1 = sign * (p1[2] - plane)
        if d0 < 0.0 and d1 < 0.0:
            return None
        if d0 < 0.0:
            t0 = max(t0, d0 / (d0 - d1))
        elif d1 < 0.0:
            t1 = min(t1, d0 / (d0 - d1))
    if t0 > t1:
        return None
    return p0 + t0 * (p1 - p0), p0 + t1 * (p1 - p0)


def _draw_lines(
    mesh: TriangleMesh,
    cam: np.ndarray,
    rig: RectifiedRig,
    cx: float,
    cy: float,
    config: RenderConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """DDA edge drawing with a per-pixel nearest-line depth test.

    Hidden-line removal against solid surfaces is intentionally not
    performed; wireframe and point modes are alignment aids only.
    """
    h, w = rig.height, rig.width
    zline = np.full((h, w), np.inf)
    color = np.zeros((h, w, 3))
    vcolors = mesh.colors

    edges = set()
    for tri in mesh.triangles:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            edges.add((min(a, b), max(a, b)))
    for a, b in sorted(edges):
        seg = _clip_segment_z(cam[a], cam[b], config.z_near, config.z_far)
        if seg is None:
            continue
        p0, p1 = seg
        s0 = np.array([rig.f * p0[0] / p0[2] + cx, rig.f * p0[1] / p0[2] + cy])
        s1 = np.array([rig.f * p1[0] / p1[2] + cx, rig.f * p1[1] / p1[2] + cy])
        n = int(max(np.abs(s1 - s0).max(), 1.0)) + 1
        ts = np.linspace(0.0, 1.0, n)
        xs = s0[0] + (s1[0] - s0[0]) * ts
        ys = s0[1] + (s1[1] - s0[1]) * ts
        qs = (1.0 / p0[2]) + ((1.0 / p1[2]) - (1.0 / p0[2])) * ts
        cols = np.floor(xs).astype(int)
        rows = np.floor(ys).astype(int)
        ok = (cols >= 0) & (cols < w) & (rows >= 0) & (rows < h)
        if vcolors is not None:
            ca, cb = vcolors[a], vcolors[b]
            cl = ca[None, :] + (cb - ca)[None, :] * ts[:, None]
        for i in np.nonzero(ok)[0]:
            z = 1.0 / qs[i]
            if z < zline[rows[i], cols[i]]:
                zline[rows[i], cols[i]] = z
                color[rows[i], cols[i]] = cl[i] if vcolors is not None else FLAT_COLOR
    return np.isfinite(zline), color


def _draw_points(
    mesh: TriangleMesh,
    cam: np.ndarray,
    rig: RectifiedRig,
    cx: float,
    cy: float,
    config: RenderConfig,
) -> tuple[np.ndarray, np.ndarray]:
    h, w = rig.height, rig.width
    zpt = np.full((h, w), np.inf)
    color = np.zeros((h, w, 3))
    vcolors = mesh.colors
    for i, p in enumerate(cam):
        if not (config.z_near <= p[2] <= config.z_far):
            continue
        col = int(np.floor(rig.f * p[0] / p[2] + cx))
        row = int(np.floor(rig.f * p[1] / p[2] + cy))
        if 0 <= col < w and 0 <= row < h and p[2] < zpt[row, col]:
            zpt[row, col] = p[2]
            color[row, col] = vcolors[i] if vcolors is not None else FLAT_COLOR
    return np.isfinite(zpt), color


def render_overlay(
    mesh: TriangleMesh,
    rig: RectifiedRig,
    eye: str,
    pose: RigidTransform,
    config: RenderConfig,
    background: np.ndarray,
) -> np.ndarray:
    """Alpha-blend the rendered mesh over a uint8 RGB background."""
    background = np.asarray(background)
    if background.shape != (rig.height, rig.width, 3):
        raise ValueError(
            f"background shape {background.shape} does not match the "
            f"{rig.width}x{rig.height} rig"
        )
    if config.alpha == 0.0:
        return background.copy()

    if config.mode == "solid":
        zbuf, _, color = _raster_pass(
            mesh, rig, eye, pose, config, tiles=1, want_color=True
        )
        coverage = zbuf < 1.0
    else:
        cam, cx, cy = _camera_vertices(mesh, rig, eye, pose)
        draw = _draw_lines if config.mode == "wireframe" else _draw_points
        coverage, color = draw(mesh, cam, rig, cx, cy, config)

    out = background.astype(float)
    fg = color * 255.0
    out[coverage] = (1.0 - config.alpha) * out[coverage] + config.alpha * fg[coverage]
    return np.rint(out).astype(np.uint8)


def sample_bilinear(image: np.ndarray, x, y) -> np.ndarray:
    """Bilinear sample at continuous coordinates with pixel centres at
    integer + 0.5; border samples clamp to the edge pixels."""
    img = np.asarray(image, dtype=float)
    h, w = img.shape[:2]
    tx = np.asarray(x, dtype=float) - 0.5
    ty = np.asarray(y, dtype=float) - 0.5
    x0 = np.clip(np.floor(tx).astype(int), 0, w - 1)
    y0 = np.clip(np.floor(ty).astype(int), 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    fx = np.clip(tx - x0, 0.0, 1.0)
    fy = np.clip(ty - y0, 0.0, 1.0)
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def project_texture(
    image: np.ndarray,
    rig: RectifiedRig,
    eye: str,
    pose: RigidTransform,
    mesh: TriangleMesh,
    config: RenderConfig | None = None,
    depth_tolerance: float = 0.5,
) -> TriangleMesh:
    """Color each mesh vertex with the bilinear image sample at its
    projection; vertices occluded from the eye or projecting outside the
    image keep the sentinel color."""
    image = np.asarray(image)
    if image.shape[:2] != (rig.height, rig.width):
        raise ValueError(
            f"image shape {image.shape} does not match the rig dimensions"
        )
    config = config or RenderConfig()
    buf = rasterize_depth(mesh, rig, eye, pose, config)
    depth = buf.to_metric()

    cam, cx, cy = _camera_vertices(mesh, rig, eye, pose)
    colors = np.tile(UNSEEN_COLOR, (mesh.n_vertices, 1))
    z = cam[:, 2]
    ok = (z >= config.z_near) & (z <= config.z_far)
    u = np.where(ok, rig.f * cam[:, 0] / np.where(ok, z, 1.0) + cx, -1.0)
    v = np.where(ok, rig.f * cam[:, 1] / np.where(ok, z, 1.0) + cy, -1.0)
    ok &= (u >= 0.0) & (u < rig.width) & (v >= 0.0) & (v < rig.height)
    cols = np.clip(np.floor(u).astype(int), 0, rig.width - 1)
    rows = np.clip(np.floor(v).astype(int), 0, rig.height - 1)
    nearest = depth[rows, cols]
    visible = ok & (np.isnan(nearest) | (z <= nearest + depth_tolerance))
    if np.any(visible):
        samples = sample_bilinear(image, u[visible], v[visible])
        if image.dtype == np.uint8:
            samples = samples / 255.0
        colors[visible] = samples
    return TriangleMesh(mesh.vertices, mesh.triangles, colors)
