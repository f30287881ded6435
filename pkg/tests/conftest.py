import numpy as np
import pytest

from stereoref import RectifiedRig, TriangleMesh


@pytest.fixture
def rig1000() -> RectifiedRig:
    return RectifiedRig(f=1000, cx1=320, cy1=240, cx2=320, cy2=240, tx=5, width=640, height=480)


@pytest.fixture
def plane_rig() -> RectifiedRig:
    # the 640x512 configuration used by the plane-scene checks
    return RectifiedRig(f=500, cx1=320, cy1=256, cx2=320, cy2=256, tx=5, width=640, height=512)


@pytest.fixture
def small_rig() -> RectifiedRig:
    return RectifiedRig(f=500, cx1=80, cy1=60, cx2=80, cy2=60, tx=5, width=160, height=120)


def make_plane_mesh(z: float, half_x: float, half_y: float, colors=None) -> TriangleMesh:
    v = np.array(
        [
            [-half_x, -half_y, z],
            [half_x, -half_y, z],
            [half_x, half_y, z],
            [-half_x, half_y, z],
        ],
        dtype=float,
    )
    t = np.array([[0, 1, 2], [0, 2, 3]])
    return TriangleMesh(v, t, colors)


def make_strip_scene(
    z_fg: float = 50.0,
    z_bg: float = 100.0,
    x0: float = -2.0,
    x1: float = 2.0,
    extent: float = 40.0,
) -> TriangleMesh:
    bg = np.array(
        [
            [-extent, -extent, z_bg],
            [extent, -extent, z_bg],
            [extent, extent, z_bg],
            [-extent, extent, z_bg],
        ]
    )
    fg = np.array(
        [
            [x0, -extent, z_fg],
            [x1, -extent, z_fg],
            [x1, extent, z_fg],
            [x0, extent, z_fg],
        ]
    )
    v = np.vstack([bg, fg]).astype(float)
    t = np.array([[0, 1, 2], [0, 2, 3], [4, 5, 6], [4, 6, 7]])
    return TriangleMesh(v, t)


def make_sphere_mesh(center, radius: float, n_lat: int = 48, n_lon: int = 96) -> TriangleMesh:
    center = np.asarray(center, dtype=float)
    verts = [center + [0.0, 0.0, -radius]]  # near pole (towards the camera)
    for i in range(1, n_lat):
        polar = np.pi * i / n_lat
        for j in range(n_lon):
            az = 2.0 * np.pi * j / n_lon
            verts.append(
                center
                + radius
                * np.array(
                    [np.sin(polar) * np.cos(az), np.sin(polar) * np.sin(az), -np.cos(polar)]
                )
            )
    verts.append(center + [0.0, 0.0, radius])
    tris = []

    def ring(i, j):
        return 1 + (i - 1) * n_lon + (j % n_lon)

    for j in range(n_lon):
        tris.append([0, ring(1, j), ring(1, j + 1)])
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            tris.append([a, c, d])
            tris.append([a, d, b])
    last = len(verts) - 1
    for j in range(n_lon):
        tris.append([last, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)])
    return TriangleMesh(np.asarray(verts), np.asarray(tris))


def gradient_image(width: int, height: int) -> np.ndarray:
    """Horizontal uint8 ramp; pixel (., i) holds round(i * 255 / (w - 1))."""
    row = np.rint(np.arange(width) * 255.0 / (width - 1)).astype(np.uint8)
    return np.repeat(row[None, :, None], 3, axis=2) * np.ones((height, 1, 1), dtype=np.uint8)
