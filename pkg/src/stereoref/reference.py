"""Per-view reference bundles: left/right metric depth, left-to-right
disparity, the combined validity mask and diagnostic images.

Depth and disparity maps are float64 (H, W) arrays in mm / px with NaN as
the invalid sentinel.  Mask maps are uint8 (H, W) arrays holding one
:class:`MaskLabel` per pixel.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import NamedTuple

import numpy as np

from .mesh import TriangleMesh
from .render import RenderConfig, rasterize_depth, sample_bilinear
from .rig import RectifiedRig
from .se3 import RigidTransform

__all__ = [
    "MaskLabel",
    "ReferenceBundle",
    "RangeStats",
    "DEFAULT_OCCLUSION_MARGIN",
    "generate_reference",
    "depthmap_to_disparity",
    "compute_occlusions",
    "resample_and_diff",
    "range_stats",
    "valid_mask",
]

DEFAULT_OCCLUSION_MARGIN = 1.0  # mm; above raster error, below anatomical steps


class MaskLabel(IntEnum):
    VALID = 0
    OCCLUDED_LEFT = 1
    OCCLUDED_RIGHT = 2
    NON_OVERLAP = 3
    OUTSIDE_MODEL = 4


class ReferenceBundle(NamedTuple):
    depth_left: np.ndarray
    depth_right: np.ndarray
    disparity: np.ndarray
    mask: np.ndarray


@dataclass(frozen=True)
class RangeStats:
    minimum: float
    maximum: float
    mean: float
    percentile_1: float
    percentile_99: float


def valid_mask(map_array: np.ndarray) -> np.ndarray:
    """Boolean validity of a depth/disparity map (NaN = invalid)."""
    return np.isfinite(map_array)


def generate_reference(
    mesh: TriangleMesh,
    rig: RectifiedRig,
    pose: RigidTransform,
    config: RenderConfig | None = None,
    margin: float = DEFAULT_OCCLUSION_MARGIN,
) -> ReferenceBundle:
    """Render both eyes and derive disparity and the combined mask."""
    config = config or RenderConfig()
    depth_left = rasterize_depth(mesh, rig, "left", pose, config).to_metric()
    depth_right = rasterize_depth(mesh, rig, "right", pose, config).to_metric()
    disparity = depthmap_to_disparity(rig, depth_left)
    mask = compute_occlusions(rig, depth_left, depth_right, disparity, margin)
    return ReferenceBundle(depth_left, depth_right, disparity, mask)


def depthmap_to_disparity(rig: RectifiedRig, depth_left: np.ndarray) -> np.ndarray:
    """Per-pixel disparity from a left depth map; NaN propagates."""
    z = np.asarray(depth_left, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        d = rig.tx * rig.f / z - rig.cx_offset
    return np.where(np.isfinite(z), d, np.nan)


def _partner_columns(rig: RectifiedRig, disparity: np.ndarray, direction: int):
    """Continuous partner x coordinate and nearest pixel column.

    direction +1 maps left pixels into the right image
    (x - d + (cx2 - cx1)); -1 maps right pixels back into the left image.
    """
    h, w = disparity.shape
    xs = np.arange(w, dtype=float) + 0.5
    x_partner = xs[None, :] - direction * (disparity - (rig.cx2 - rig.cx1))
    cols = np.floor(np.where(np.isfinite(x_partner), x_partner, -1.0)).astype(np.int64)
    return x_partner, cols


def compute_occlusions(
    rig: RectifiedRig,
    depth_left: np.ndarray,
    depth_right: np.ndarray,
    disparity: np.ndarray,
    margin: float,
) -> np.ndarray:
    """Classify every left-image pixel.

    A valid left pixel whose nearest partner pixel in the right depth map
    disagrees by more than ``margin`` mm is occluded in the right view;
    the symmetric pass maps right-only-visible pixels back into the left
    frame as OCCLUDED_RIGHT.  Partners outside the image are NON_OVERLAP
    and back-plane pixels are OUTSIDE_MODEL.  Precedence when tests
    overlap: OUTSIDE_MODEL > NON_OVERLAP > occluded > VALID.
    """
    if depth_left.shape != depth_right.shape or depth_left.shape != disparity.shape:
        raise ValueError("depth and disparity maps must share dimensions")
    if not (margin > 0.0):
        raise ValueError(f"occlusion margin must be positive, got {margin}")
    h, w = depth_left.shape
    labels = np.full((h, w), int(MaskLabel.OUTSIDE_MODEL), dtype=np.uint8)

    ok_l = np.isfinite(depth_left)
    _, cols = _partner_columns(rig, disparity, direction=+1)
    inb = ok_l & (cols >= 0) & (cols < w)
    labels[ok_l & ~inb] = MaskLabel.NON_OVERLAP

    rows = np.broadcast_to(np.arange(h)[:, None], (h, w))
    z_r = np.where(np.isfinite(depth_right), depth_right, np.inf)
    partner_z = np.full((h, w), np.inf)
    partner_z[inb] = z_r[rows[inb], np.clip(cols, 0, w - 1)[inb]]
    with np.errstate(invalid="ignore"):
        mismatch = np.abs(depth_left - partner_z) > margin
    labels[inb & mismatch] = MaskLabel.OCCLUDED_LEFT
    labels[inb & ~mismatch] = MaskLabel.VALID

    # symmetric pass: right-image pixels invisible from the left eye are
    # recorded at their left-frame position
    ok_r = np.isfinite(depth_right)
    disp_right = depthmap_to_disparity(rig, depth_right)
    _, cols_l = _partner_columns(rig, disp_right, direction=-1)
    inb_r = ok_r & (cols_l >= 0) & (cols_l < w)
    z_l = np.where(np.isfinite(depth_left), depth_left, np.inf)
    back_z = np.full((h, w), np.inf)
    back_z[inb_r] = z_l[rows[inb_r], np.clip(cols_l, 0, w - 1)[inb_r]]
    with np.errstate(invalid="ignore"):
        occluded_r = inb_r & (np.abs(depth_right - back_z) > margin)
    if np.any(occluded_r):
        target_rows = rows[occluded_r]
        target_cols = cols_l[occluded_r]
        hit = np.zeros((h, w), dtype=bool)
        hit[target_rows, target_cols] = True
        labels[hit & (labels == MaskLabel.VALID)] = MaskLabel.OCCLUDED_RIGHT
    return labels


def resample_and_diff(
    rig: RectifiedRig,
    right_image: np.ndarray,
    left_image: np.ndarray,
    disparity: np.ndarray,
    gain: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Warp the right image into the left view with the reference
    disparity and return (resampled, amplified absolute difference).

    Pixels with invalid disparity or a partner outside the right image
    are zeroed in both outputs.
    """
    right_image = np.asarray(right_image)
    left_image = np.asarray(left_image)
    if right_image.shape != left_image.shape:
        raise ValueError("left and right images must share dimensions")
    if right_image.shape[:2] != disparity.shape:
        raise ValueError("images and disparity map must share dimensions")
    h, w = disparity.shape
    x_partner, _ = _partner_columns(rig, disparity, direction=+1)
    ok = np.isfinite(disparity) & (x_partner >= 0.0) & (x_partner < w)
    ys = np.broadcast_to((np.arange(h, dtype=float) + 0.5)[:, None], (h, w))
    sampled = sample_bilinear(right_image, np.where(ok, x_partner, 0.5), ys)
    resampled = np.where(ok[..., None], sampled, 0.0)
    diff = np.clip(gain * np.abs(left_image.astype(float) - resampled), 0.0, 255.0)
    diff = np.where(ok[..., None], diff, 0.0)
    return np.rint(resampled).astype(np.uint8), np.rint(diff).astype(np.uint8)


def range_stats(map_array: np.ndarray, mask: np.ndarray | None = None) -> RangeStats:
    """Statistics over valid, non-occluded pixels of a depth or
    disparity map."""
    values = np.asarray(map_array, dtype=float)
    eligible = np.isfinite(values)
    if mask is not None:
        eligible &= np.asarray(mask) == MaskLabel.VALID
    if not np.any(eligible):
        raise ValueError("no valid pixels to derive range statistics from")
    vals = values[eligible]
    return RangeStats(
        minimum=float(vals.min()),
        maximum=float(vals.max()),
        mean=float(vals.mean()),
        percentile_1=float(np.percentile(vals, 1)),
        percentile_99=float(np.percentile(vals, 99)),
    )
