"""Bit-exact readers and writers for the simplified distribution format.

Per-record layout under a dataset root::

    Left_rectified/<id>.png    8-bit RGB
    Right_rectified/<id>.png   8-bit RGB
    DepthL/<id>.png            16-bit grayscale, mm * 256
    DepthR/<id>.png            16-bit grayscale, mm * 256
    Disparity/<id>.png         16-bit grayscale, px * 256
    Mask/<id>.png              8-bit paletted label image
    calibration.json           {"<id>": {"P1": .., "P2": .., "Q": ..,
                                         "quantization": 256}}

Depth and disparity use fixed-point x256 with raw value 0 reserved for
invalid pixels; finite values that would round to 0 clamp to raw 1.  A
``channels.cfg`` file of ``key = value`` lines in the dataset root remaps
channel directory names.  Writers stage to a temp name and rename so
readers never observe partial files.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
import warnings

import numpy as np
from PIL import Image

from .reference import MaskLabel
from .rig import RectifiedRig, build_matrices, rig_from_matrices

__all__ = [
    "DatasetRecord",
    "DatasetError",
    "MissingChannelError",
    "DimensionMismatchError",
    "CalibrationError",
    "CalibrationConsistencyWarning",
    "QUANTIZATION",
    "CHANNEL_DIRS",
    "MASK_PALETTE",
    "encode_q16",
    "decode_q16",
    "encode_mask",
    "decode_mask",
    "write_map_png",
    "read_map_png",
    "write_image_png",
    "read_image_png",
    "write_mask_png",
    "read_mask_png",
    "write_record",
    "read_record",
    "list_record_ids",
    "record_rig",
    "read_rig_file",
    "write_rig_file",
]

QUANTIZATION = 256

CHANNEL_DIRS = {
    "left": "Left_rectified",
    "right": "Right_rectified",
    "depth_left": "DepthL",
    "depth_right": "DepthR",
    "disparity": "Disparity",
    "mask": "Mask",
}

CHANNEL_MANIFEST = "channels.cfg"
CALIBRATION_FILE = "calibration.json"

# label -> palette RGB
MASK_PALETTE = {
    int(MaskLabel.VALID): (0, 0, 0),
    int(MaskLabel.OCCLUDED_LEFT): (0, 255, 0),
    int(MaskLabel.OCCLUDED_RIGHT): (255, 0, 0),
    int(MaskLabel.NON_OVERLAP): (255, 255, 0),
    int(MaskLabel.OUTSIDE_MODEL): (0, 0, 255),
}


class DatasetError(Exception):
    """Base class for dataset I/O failures; carries the offending path."""

    def __init__(self, message: str, path=None):
        super().__init__(message if path is None else f"{message}: {path}")
        self.path = None if path is None else str(path)


class MissingChannelError(DatasetError):
    pass


class DimensionMismatchError(DatasetError):
    pass


class CalibrationError(DatasetError):
    pass


class CalibrationConsistencyWarning(UserWarning):
    """The stored Q matrix disagrees with the one derived from P1/P2."""


@dataclass(frozen=True)
class DatasetRecord:
    record_id: str
    left: np.ndarray
    right: np.ndarray
    depth_left: np.ndarray
    depth_right: np.ndarray
    disparity: np.ndarray
    mask: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    q: np.ndarray


def _check_record_id(record_id: str) -> str:
    if len(record_id) != 3 or not record_id.isdigit():
        raise ValueError(f"record id must be a zero-padded 3-digit string, got {record_id!r}")
    return record_id


def encode_q16(map_array: np.ndarray) -> np.ndarray:
    """Fixed-point x256 encoding to uint16; NaN becomes the invalid 0."""
    values = np.asarray(map_array, dtype=float)
    finite = np.isfinite(values)
    bad = finite & ((values < 0.0) | (values * QUANTIZATION > 65535.0))
    if np.any(bad):
        row, col = np.argwhere(bad)[0]
        raise ValueError(
            f"value {values[row, col]} at pixel (row={row}, col={col}) is outside "
            f"the encodable range [0, {65535 / QUANTIZATION}]"
        )
    raw = np.zeros(values.shape, dtype=np.uint16)
    scaled = np.rint(values[finite] * QUANTIZATION)
    scaled[scaled < 1.0] = 1.0  # 0 is reserved for invalid
    raw[finite] = scaled.astype(np.uint16)
    return raw


def decode_q16(raw: np.ndarray) -> np.ndarray:
    """Invert :func:`encode_q16`; raw 0 becomes NaN."""
    raw = np.asarray(raw)
    out = raw.astype(float) / QUANTIZATION
    return np.where(raw == 0, np.nan, out)


def encode_mask(mask: np.ndarray) -> np.ndarray:
    """Mask labels to palette indices (identity mapping, validated)."""
    mask = np.asarray(mask)
    if mask.size and (mask.min() < 0 or mask.max() > max(MASK_PALETTE)):
        raise ValueError(f"unknown mask label {int(mask.max())}")
    return mask.astype(np.uint8)


def decode_mask(raw: np.ndarray) -> np.ndarray:
    raw = np.asarray(raw)
    if raw.size and raw.max() > max(MASK_PALETTE):
        raise ValueError(f"unknown mask palette index {int(raw.max())}")
    return raw.astype(np.uint8)


def _atomic_write(path: Path, write_fn) -> None:
    tmp = path.with_name(path.name + ".tmp")
    write_fn(tmp)
    os.replace(tmp, path)


def write_map_png(path, map_array: np.ndarray) -> None:
    """16-bit grayscale PNG of a quantised depth/disparity map."""
    raw = encode_q16(map_array)
    path = Path(path)
    # uint16 input maps to Pillow's 16-bit grayscale "I;16" mode
    _atomic_write(path, lambda p: Image.fromarray(raw).save(p, format="PNG"))


def read_map_png(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingChannelError("missing map file", path)
    with Image.open(path) as img:
        raw = np.asarray(img, dtype=np.uint16)
    return decode_q16(raw)


def write_image_png(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.uint8)
    path = Path(path)
    _atomic_write(path, lambda p: Image.fromarray(image, mode="RGB").save(p, format="PNG"))


def read_image_png(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingChannelError("missing image file", path)
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def write_mask_png(path, mask: np.ndarray) -> None:
    indices = encode_mask(mask)
    img = Image.fromarray(indices, mode="P")
    palette = [0] * (256 * 3)
    for idx, rgb in MASK_PALETTE.items():
        palette[idx * 3 : idx * 3 + 3] = rgb
    img.putpalette(palette)
    path = Path(path)
    _atomic_write(path, lambda p: img.save(p, format="PNG"))


def read_mask_png(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingChannelError("missing mask file", path)
    with Image.open(path) as img:
        if img.mode != "P":
            raise DatasetError(f"mask image must be paletted, found mode {img.mode}", path)
        raw = np.asarray(img, dtype=np.uint8)
    return decode_mask(raw)


def _channel_dirs(root: Path) -> dict[str, str]:
    """Channel directory names, optionally remapped by channels.cfg."""
    dirs = dict(CHANNEL_DIRS)
    manifest = root / CHANNEL_MANIFEST
    if manifest.exists():
        for lineno, line in enumerate(manifest.read_text().splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DatasetError(
                    f"malformed channel manifest line {lineno}: {line!r}", manifest
                )
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in dirs:
                raise DatasetError(f"unknown channel {key!r} in manifest", manifest)
            dirs[key] = value.strip("\"'")
    return dirs


def _matrix(entry, key: str, shape: tuple[int, int], path: Path) -> np.ndarray:
    try:
        m = np.asarray(entry[key], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise CalibrationError(f"calibration entry lacks a numeric {key!r}", path) from exc
    if m.shape != shape:
        raise CalibrationError(f"{key} must be {shape[0]}x{shape[1]}", path)
    return m


def _load_calibration(root: Path) -> dict:
    cal_path = root / CALIBRATION_FILE
    if not cal_path.exists():
        raise MissingChannelError("missing calibration file", cal_path)
    try:
        data = json.loads(cal_path.read_text())
    except json.JSONDecodeError as exc:
        raise CalibrationError(f"malformed calibration JSON ({exc})", cal_path) from exc
    if not isinstance(data, dict):
        raise CalibrationError("calibration root must be an id-keyed object", cal_path)
    return data


def write_record(root, record: DatasetRecord) -> None:
    """Write every channel plus the calibration entry for one record."""
    root = Path(root)
    _check_record_id(record.record_id)
    shapes = {
        "left": record.left.shape[:2],
        "right": record.right.shape[:2],
        "depth_left": record.depth_left.shape,
        "depth_right": record.depth_right.shape,
        "disparity": record.disparity.shape,
        "mask": record.mask.shape,
    }
    if len(set(shapes.values())) != 1:
        raise DimensionMismatchError(f"channel dimensions disagree: {shapes}")

    dirs = _channel_dirs(root)
    for channel in CHANNEL_DIRS:
        (root / dirs[channel]).mkdir(parents=True, exist_ok=True)
    name = f"{record.record_id}.png"
    write_image_png(root / dirs["left"] / name, record.left)
    write_image_png(root / dirs["right"] / name, record.right)
    write_map_png(root / dirs["depth_left"] / name, record.depth_left)
    write_map_png(root / dirs["depth_right"] / name, record.depth_right)
    write_map_png(root / dirs["disparity"] / name, record.disparity)
    write_mask_png(root / dirs["mask"] / name, record.mask)

    cal_path = root / CALIBRATION_FILE
    calibration = _load_calibration(root) if cal_path.exists() else {}
    calibration[record.record_id] = {
        "P1": record.p1.tolist(),
        "P2": record.p2.tolist(),
        "Q": record.q.tolist(),
        "quantization": QUANTIZATION,
    }
    payload = json.dumps(calibration, indent=2, sort_keys=True)
    _atomic_write(cal_path, lambda p: p.write_text(payload + "\n"))


def read_record(root, record_id: str) -> DatasetRecord:
    """Load one record; inverse of :func:`write_record`."""
    root = Path(root)
    _check_record_id(record_id)
    dirs = _channel_dirs(root)
    name = f"{record_id}.png"

    calibration = _load_calibration(root)
    if record_id not in calibration:
        raise CalibrationError(
            f"calibration holds no entry for id {record_id!r}", root / CALIBRATION_FILE
        )
    entry = calibration[record_id]
    p1 = _matrix(entry, "P1", (3, 4), root / CALIBRATION_FILE)
    p2 = _matrix(entry, "P2", (3, 4), root / CALIBRATION_FILE)
    q = _matrix(entry, "Q", (4, 4), root / CALIBRATION_FILE)

    record = DatasetRecord(
        record_id=record_id,
        left=read_image_png(root / dirs["left"] / name),
        right=read_image_png(root / dirs["right"] / name),
        depth_left=read_map_png(root / dirs["depth_left"] / name),
        depth_right=read_map_png(root / dirs["depth_right"] / name),
        disparity=read_map_png(root / dirs["disparity"] / name),
        mask=read_mask_png(root / dirs["mask"] / name),
        p1=p1,
        p2=p2,
        q=q,
    )
    shapes = {
        "left": record.left.shape[:2],
        "right": record.right.shape[:2],
        "depth_left": record.depth_left.shape,
        "depth_right": record.depth_right.shape,
        "disparity": record.disparity.shape,
        "mask": record.mask.shape,
    }
    if len(set(shapes.values())) != 1:
        raise DimensionMismatchError(f"channel dimensions disagree for id {record_id}: {shapes}")

    h, w = record.disparity.shape
    rig = rig_from_matrices(p1, p2, w, h)
    _, _, q_expected = build_matrices(rig)
    if np.max(np.abs(q - q_expected)) > 1e-6:
        warnings.warn(
            f"record {record_id}: stored Q is inconsistent with P1/P2 "
            f"(max deviation {np.max(np.abs(q - q_expected)):.3g})",
            CalibrationConsistencyWarning,
            stacklevel=2,
        )
    return record


def list_record_ids(root) -> list[str]:
    """Sorted record ids present in the calibration file."""
    return sorted(_load_calibration(Path(root)).keys())


def record_rig(record: DatasetRecord) -> RectifiedRig:
    h, w = record.disparity.shape
    return rig_from_matrices(record.p1, record.p2, w, h)


def read_rig_file(path) -> RectifiedRig:
    """Read a standalone rig description.

    The file is JSON with "P1", "P2" (3x4 row-major), "width" and
    "height".  An id-keyed calibration mapping is also accepted when its
    entries carry width/height; the lowest id is used.
    """
    path = Path(path)
    if not path.exists():
        raise MissingChannelError("missing rig file", path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CalibrationError(f"malformed rig JSON ({exc})", path) from exc
    entry = data
    if isinstance(data, dict) and "P1" not in data:
        if not data:
            raise CalibrationError("rig file holds no entries", path)
        entry = data[sorted(data.keys())[0]]
    p1 = _matrix(entry, "P1", (3, 4), path)
    p2 = _matrix(entry, "P2", (3, 4), path)
    width = entry.get("width")
    height = entry.get("height")
    if width is None or height is None:
        raise CalibrationError("rig file must carry width and height", path)
    return rig_from_matrices(p1, p2, int(width), int(height))


def write_rig_file(path, rig: RectifiedRig) -> None:
    p1, p2, q = build_matrices(rig)
    payload = {
        "P1": p1.tolist(),
        "P2": p2.tolist(),
        "Q": q.tolist(),
        "width": rig.width,
        "height": rig.height,
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
