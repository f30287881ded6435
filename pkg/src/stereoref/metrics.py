"""Disparity and depth error metrics, outlier rejection of repeated
alignments, per-image scores and report aggregation.

Estimated maps follow the same NaN-invalid convention as reference maps.
Invalid estimated pixels count as bad in the bad-pixel percentage but are
excluded from (and reported next to) the RMS metrics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .reference import MaskLabel
from .rig import RectifiedRig, triangulate_pixel

__all__ = [
    "EvalConfig",
    "VariantScore",
    "ImageScore",
    "EvalReport",
    "bad_pixel_percent",
    "rmse_disparity",
    "rmse_depth",
    "signed_error_image",
    "reject_outlier_alignments",
    "evaluate_image",
    "aggregate",
    "report_csv",
    "report_table",
]

DEFAULT_OUTLIER_THRESHOLD = 20.0  # percent bad pixels vs every probe

# symmetric diverging colormap: stops at normalised error -1 .. +1
_COLOR_STOPS = np.array([-1.0, -0.5, 0.0, 0.5, 1.0])
_COLOR_TABLE = np.array(
    [
        [0, 255, 255],  # -1.0 cyan
        [0, 0, 255],    # -0.5 blue
        [0, 0, 0],      #  0.0 black
        [255, 0, 0],    # +0.5 red
        [255, 255, 0],  # +1.0 yellow
    ],
    dtype=float,
)
_NEUTRAL_GRAY = np.array([128, 128, 128], dtype=np.uint8)


@dataclass(frozen=True)
class EvalConfig:
    bad_threshold: float = 3.0
    include_occluded: bool = False
    clip: float = 10.0
    depth_metric: str = "z"  # "z" or "euclidean"

    def __post_init__(self) -> None:
        if self.bad_threshold <= 0 or self.clip <= 0:
            raise ValueError("thresholds must be positive")
        if self.depth_metric not in ("z", "euclidean"):
            raise ValueError(f"unknown depth metric {self.depth_metric!r}")


@dataclass(frozen=True)
class VariantScore:
    """Scores over one eligibility variant of a single image."""

    bad_percent: float
    rmse_disparity: float
    rmse_depth: float
    eligible_count: int
    est_invalid_count: int


@dataclass(frozen=True)
class ImageScore:
    image_id: str
    excluded: VariantScore  # occlusions not eligible
    included: VariantScore  # occlusions eligible


@dataclass(frozen=True)
class VariantAggregate:
    bad_percent: tuple[float, float]  # (mean, population std)
    rmse_disparity: tuple[float, float]
    rmse_depth: tuple[float, float]


@dataclass(frozen=True)
class EvalReport:
    scores: tuple[ImageScore, ...]
    excluded: VariantAggregate
    included: VariantAggregate


def _eligible(mask: np.ndarray, include_occluded: bool) -> np.ndarray:
    mask = np.asarray(mask)
    elig = mask == MaskLabel.VALID
    if include_occluded:
        elig |= (mask == MaskLabel.OCCLUDED_LEFT) | (mask == MaskLabel.OCCLUDED_RIGHT)
    return elig


def _check_dims(est: np.ndarray, ref: np.ndarray, mask: np.ndarray) -> None:
    if est.shape != ref.shape or est.shape != np.asarray(mask).shape:
        raise ValueError("estimate, reference and mask must share dimensions")


def bad_pixel_percent(
    est: np.ndarray, ref: np.ndarray, mask: np.ndarray, cfg: EvalConfig = EvalConfig()
) -> float:
    """Percentage of eligible pixels with disparity error above the
    threshold; invalid estimated pixels count as bad."""
    est = np.asarray(est, dtype=float)
    ref = np.asarray(ref, dtype=float)
    _check_dims(est, ref, mask)
    elig = _eligible(mask, cfg.include_occluded) & np.isfinite(ref)
    n = int(np.count_nonzero(elig))
    if n == 0:
        raise ValueError("no eligible pixels")
    with np.errstate(invalid="ignore"):
        err = np.abs(est - ref) > cfg.bad_threshold
    bad = elig & (~np.isfinite(est) | err)
    return 100.0 * int(np.count_nonzero(bad)) / n


def rmse_disparity(
    est: np.ndarray, ref: np.ndarray, mask: np.ndarray, cfg: EvalConfig = EvalConfig()
) -> float:
    """RMS disparity error in px over eligible pixels where the estimate
    is defined; NaN when the estimate covers none of them."""
    est = np.asarray(est, dtype=float)
    ref = np.asarray(ref, dtype=float)
    _check_dims(est, ref, mask)
    elig = _eligible(mask, cfg.include_occluded) & np.isfinite(ref)
    if not np.any(elig):
        raise ValueError("no eligible pixels")
    use = elig & np.isfinite(est)
    if not np.any(use):
        return float("nan")
    return float(np.sqrt(np.mean((est[use] - ref[use]) ** 2)))


def rmse_depth(
    rig: RectifiedRig,
    est: np.ndarray,
    ref: np.ndarray,
    mask: np.ndarray,
    cfg: EvalConfig = EvalConfig(),
) -> float:
    """RMS depth error in mm after reprojecting both disparity maps.

    With ``depth_metric="euclidean"`` the full 3D point distance is used
    instead of the Z difference.  Estimated pixels whose disparity maps
    behind the camera are excluded like invalid ones.
    """
    est = np.asarray(est, dtype=float)
    ref = np.asarray(ref, dtype=float)
    _check_dims(est, ref, mask)
    elig = _eligible(mask, cfg.include_occluded) & np.isfinite(ref)
    if not np.any(elig):
        raise ValueError("no eligible pixels")
    offset = rig.cx_offset
    with np.errstate(invalid="ignore"):
        use = (
            elig
            & np.isfinite(est)
            & (est + offset > 0.0)
            & (ref + offset > 0.0)
        )
    if not np.any(use):
        return float("nan")
    if cfg.depth_metric == "z":
        z_est = rig.tx * rig.f / (est[use] + offset)
        z_ref = rig.tx * rig.f / (ref[use] + offset)
        return float(np.sqrt(np.mean((z_est - z_ref) ** 2)))
    h, w = est.shape
    uu, vv = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    p_est = triangulate_pixel(rig, uu[use], vv[use], est[use])
    p_ref = triangulate_pixel(rig, uu[use], vv[use], ref[use])
    return float(np.sqrt(np.mean(np.sum((p_est - p_ref) ** 2, axis=-1))))


def signed_error_image(
    est: np.ndarray, ref: np.ndarray, mask: np.ndarray, cfg: EvalConfig = EvalConfig()
) -> np.ndarray:
    """Signed disparity error rendered through the diverging colormap.

    Errors are clamped to [-clip, +clip] and mapped over the documented
    cyan/blue/black/red/yellow table; ineligible or undefined pixels are
    neutral gray.
    """
    est = np.asarray(est, dtype=float)
    ref = np.asarray(ref, dtype=float)
    _check_dims(est, ref, mask)
    elig = _eligible(mask, cfg.include_occluded) & np.isfinite(ref) & np.isfinite(est)
    err = np.where(elig, est - ref, 0.0)
    norm = np.clip(err / cfg.clip, -1.0, 1.0)
    out = np.empty(est.shape + (3,), dtype=np.uint8)
    for c in range(3):
        out[..., c] = np.rint(
            np.interp(norm, _COLOR_STOPS, _COLOR_TABLE[:, c])
        ).astype(np.uint8)
    out[~elig] = _NEUTRAL_GRAY
    return out


def reject_outlier_alignments(
    candidates: list[np.ndarray],
    probes: list[np.ndarray],
    masks: list[np.ndarray],
    threshold: float = DEFAULT_OUTLIER_THRESHOLD,
    cfg: EvalConfig = EvalConfig(),
) -> list[bool]:
    """Inlier flags for repeated-alignment reference disparities.

    A candidate is an outlier only when its bad-pixel percentage against
    every probe exceeds ``threshold``; disagreement with a single probe
    is attributed to that probe, not the alignment.
    """
    if not probes:
        raise ValueError("at least one probe disparity map is required")
    if not (0.0 < threshold <= 100.0):
        raise ValueError(f"threshold must lie in (0, 100], got {threshold}")
    if len(candidates) != len(masks):
        raise ValueError("one mask per candidate required")
    flags = []
    for cand, mask in zip(candidates, masks):
        over = [
            bad_pixel_percent(probe, cand, mask, cfg) > threshold for probe in probes
        ]
        flags.append(not all(over))
    return flags


def evaluate_image(
    rig: RectifiedRig,
    image_id: str,
    est: np.ndarray,
    ref: np.ndarray,
    mask: np.ndarray,
    cfg: EvalConfig = EvalConfig(),
) -> ImageScore:
    """Score one image in both occlusion variants."""
    variants = {}
    for name, include in (("excluded", False), ("included", True)):
        vcfg = EvalConfig(
            bad_threshold=cfg.bad_threshold,
            include_occluded=include,
            clip=cfg.clip,
            depth_metric=cfg.depth_metric,
        )
        elig = _eligible(mask, include) & np.isfinite(ref)
        variants[name] = VariantScore(
            bad_percent=bad_pixel_percent(est, ref, mask, vcfg),
            rmse_disparity=rmse_disparity(est, ref, mask, vcfg),
            rmse_depth=rmse_depth(rig, est, ref, mask, vcfg),
            eligible_count=int(np.count_nonzero(elig)),
            est_invalid_count=int(np.count_nonzero(elig & ~np.isfinite(est))),
        )
    return ImageScore(image_id=image_id, excluded=variants["excluded"], included=variants["included"])


def _aggregate_variant(scores: list[VariantScore]) -> VariantAggregate:
    def stats(values: list[float]) -> tuple[float, float]:
        arr = np.asarray(values, dtype=float)
        return float(arr.mean()), float(arr.std())  # population std

    return VariantAggregate(
        bad_percent=stats([s.bad_percent for s in scores]),
        rmse_disparity=stats([s.rmse_disparity for s in scores]),
        rmse_depth=stats([s.rmse_depth for s in scores]),
    )


def aggregate(scores: list[ImageScore]) -> EvalReport:
    """Unweighted per-image mean and population standard deviation."""
    if not scores:
        raise ValueError("cannot aggregate an empty score list")
    return EvalReport(
        scores=tuple(scores),
        excluded=_aggregate_variant([s.excluded for s in scores]),
        included=_aggregate_variant([s.included for s in scores]),
    )


def report_csv(report: EvalReport, variants: tuple[str, ...] = ("excluded", "included")) -> str:
    """Per-image rows plus mean/std footer rows."""
    short = {"excluded": "excl", "included": "incl"}
    header = ["id"]
    for metric in ("bad3", "rmse_depth", "rmse_disparity"):
        header += [f"{metric}_{short[v]}" for v in variants]
    for extra in ("eligible", "est_invalid"):
        header += [f"{extra}_{short[v]}" for v in variants]
    lines = [",".join(header)]
    for s in report.scores:
        cells = [s.image_id]
        per_variant = [getattr(s, v) for v in variants]
        for metric in ("bad_percent", "rmse_depth", "rmse_disparity"):
            cells += [repr(getattr(v, metric)) for v in per_variant]
        for extra in ("eligible_count", "est_invalid_count"):
            cells += [str(getattr(v, extra)) for v in per_variant]
        lines.append(",".join(cells))
    for row_name, pick in (("mean", 0), ("std", 1)):
        cells = [row_name]
        per_variant = [getattr(report, v) for v in variants]
        for metric in ("bad_percent", "rmse_depth", "rmse_disparity"):
            cells += [repr(getattr(v, metric)[pick]) for v in per_variant]
        cells += [""] * (2 * len(variants))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def report_table(
    report: EvalReport,
    method: str,
    variants: tuple[str, ...] = ("excluded", "included"),
) -> str:
    """Fixed-width summary table: Bad3 %, RMSE 3D (mm) and RMSE disparity
    (px) per occlusion variant, as mean (+-std)."""

    def cell(pair: tuple[float, float]) -> str:
        return f"{pair[0]:.2f} (+-{pair[1]:.2f})"

    short = {"excluded": "excl", "included": "incl"}
    headers = ["Method"]
    row = [method]
    for label, metric in (
        ("Bad3 %", "bad_percent"),
        ("RMSE 3D", "rmse_depth"),
        ("RMSE disp", "rmse_disparity"),
    ):
        for v in variants:
            headers.append(f"{label} {short[v]}")
            row.append(cell(getattr(getattr(report, v), metric)))
    widths = [max(len(h), len(r)) for h, r in zip(headers, row)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    return fmt.format(*headers) + "\n" + fmt.format(*row) + "\n"
