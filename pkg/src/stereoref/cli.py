"""Command-line entry point.

Subcommands wire the pipeline end to end: initial pose construction,
reference generation, pose averaging with outlier rejection, disparity
evaluation, range statistics and the alignment HTTP service.

Exit codes: 0 success, 1 environment failure, 2 invalid input,
3 data inconsistency.
"""

from __future__ import annotations

import argparse
import json
import socket
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (
    DatasetError,
    DatasetRecord,
    MissingChannelError,
    QUANTIZATION,
    list_record_ids,
    read_map_png,
    read_record,
    read_rig_file,
    record_rig,
    write_record,
)
from .mesh import load_mesh
from .metrics import (
    DEFAULT_OUTLIER_THRESHOLD,
    EvalConfig,
    aggregate,
    evaluate_image,
    reject_outlier_alignments,
    report_csv,
    report_table,
    signed_error_image,
)
from .reference import DEFAULT_OCCLUSION_MARGIN, generate_reference
from .render import RenderConfig, render_overlay
from .rig import build_matrices
from .se3 import AlignmentSet, average_transforms
from .service.sessions import (
    initial_pose_from_markers,
    read_marker_file,
    read_pose_file,
    write_pose_file,
)

EXIT_OK = 0
EXIT_ENVIRONMENT = 1
EXIT_INVALID_INPUT = 2
EXIT_DATA_INCONSISTENCY = 3


class DataInconsistencyError(Exception):
    """Inputs are individually readable but disagree with each other."""


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stereoref",
        description="Stereo reference generation and disparity evaluation.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init-pose", help="initial pose from three marked points")
    p.add_argument("--markers", required=True, help="file of `label x y z` lines (left/right/target)")
    p.add_argument("--out", required=True, help="pose output (4x4 row-major text)")
    p.set_defaults(func=cmd_init_pose)

    p = sub.add_parser("gen-reference", help="render a reference record from a mesh and pose")
    p.add_argument("--mesh", required=True, help="surface model (.ply or .stl)")
    p.add_argument("--calib", required=True, help="rig JSON (P1/P2/width/height)")
    p.add_argument("--pose", required=True, help="pose file (4x4 row-major text)")
    p.add_argument("--near", type=float, default=1.0, help="near clipping plane, mm")
    p.add_argument("--far", type=float, default=1000.0, help="far clipping plane, mm")
    p.add_argument(
        "--margin", type=float, default=DEFAULT_OCCLUSION_MARGIN,
        help="occlusion depth margin, mm",
    )
    p.add_argument("--out", required=True, help="dataset root directory")
    p.add_argument("--id", required=True, help="zero-padded 3-digit record id")
    p.set_defaults(func=cmd_gen_reference)

    p = sub.add_parser("average-poses", help="average repeated alignments, rejecting outliers")
    p.add_argument("--poses", nargs="+", required=True, help="pose files to average")
    p.add_argument("--center", required=True, help="rotation centre `x,y,z` in model mm")
    p.add_argument("--probes", nargs="*", default=[], help="probe disparity dirs for outlier rejection")
    p.add_argument("--threshold", type=float, default=DEFAULT_OUTLIER_THRESHOLD,
                   help="bad-pixel %% above which a probe votes outlier")
    p.add_argument("--mesh", help="surface model (required with --probes)")
    p.add_argument("--calib", help="rig JSON (required with --probes)")
    p.add_argument("--id", help="record id of the probe maps (required with --probes)")
    p.add_argument("--near", type=float, default=1.0)
    p.add_argument("--far", type=float, default=1000.0)
    p.add_argument("--margin", type=float, default=DEFAULT_OCCLUSION_MARGIN)
    p.add_argument("--out", required=True, help="mean pose output file")
    p.set_defaults(func=cmd_average_poses)

    p = sub.add_parser("evaluate", help="score estimated disparity maps against a reference dataset")
    p.add_argument("--ref", required=True, help="reference dataset root")
    p.add_argument("--est", required=True, help="directory of estimated 16-bit disparity PNGs")
    p.add_argument("--include-occluded", choices=["both", "only-excl"], default="both",
                   help="report both occlusion variants or only the excluded one")
    p.add_argument("--bad-threshold", type=float, default=3.0, help="bad-pixel threshold, px")
    p.add_argument("--clip", type=float, default=10.0, help="error image clip, px")
    p.add_argument("--report", required=True, help="CSV output path")
    p.add_argument("--error-images", help="directory for signed error images")
    p.add_argument("--method-name", help="label in the summary table (default: est dir name)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("range-stats", help="per-record depth and disparity ranges")
    p.add_argument("--ref", required=True, help="reference dataset root")
    p.add_argument("--out", required=True, help="CSV output path")
    p.set_defaults(func=cmd_range_stats)

    p = sub.add_parser("serve", help="run the alignment HTTP service")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--data", help="directory for per-session committed poses")
    p.add_argument("--ui", help="static UI directory to mount at /ui")
    p.set_defaults(func=cmd_serve)

    return parser


def cmd_init_pose(args) -> int:
    markers = read_marker_file(args.markers)
    pose = initial_pose_from_markers(markers)
    write_pose_file(args.out, pose)
    print(f"wrote initial pose to {args.out}")
    return EXIT_OK


def _black_background(rig) -> np.ndarray:
    return np.zeros((rig.height, rig.width, 3), dtype=np.uint8)


def cmd_gen_reference(args) -> int:
    mesh = load_mesh(args.mesh)
    rig = read_rig_file(args.calib)
    pose = read_pose_file(args.pose)
    config = RenderConfig(z_near=args.near, z_far=args.far)
    bundle = generate_reference(mesh, rig, pose, config, margin=args.margin)
    solid = RenderConfig(z_near=args.near, z_far=args.far, mode="solid", alpha=1.0)
    left = render_overlay(mesh, rig, "left", pose, solid, _black_background(rig))
    right = render_overlay(mesh, rig, "right", pose, solid, _black_background(rig))
    p1, p2, q = build_matrices(rig)
    record = DatasetRecord(
        record_id=args.id,
        left=left,
        right=right,
        depth_left=bundle.depth_left,
        depth_right=bundle.depth_right,
        disparity=bundle.disparity,
        mask=bundle.mask,
        p1=p1,
        p2=p2,
        q=q,
    )
    write_record(args.out, record)
    print(f"wrote record {args.id} to {args.out} (quantization {QUANTIZATION})")
    return EXIT_OK


def _load_probe_map(probe_dir: Path, record_id: str) -> np.ndarray:
    for candidate in (probe_dir / f"{record_id}.png", probe_dir / "Disparity" / f"{record_id}.png"):
        if candidate.exists():
            return read_map_png(candidate)
    raise MissingChannelError("probe disparity map not found", probe_dir / f"{record_id}.png")


def cmd_average_poses(args) -> int:
    poses = [read_pose_file(p) for p in args.poses]
    center = np.array([float(x) for x in args.center.split(",")])
    if center.shape != (3,):
        raise ValueError("--center must be `x,y,z`")

    flags = [True] * len(poses)
    if args.probes:
        if not (args.mesh and args.calib and args.id):
            raise ValueError("--probes needs --mesh, --calib and --id")
        mesh = load_mesh(args.mesh)
        rig = read_rig_file(args.calib)
        config = RenderConfig(z_near=args.near, z_far=args.far)
        candidates, masks = [], []
        for pose in poses:
            bundle = generate_reference(mesh, rig, pose, config, margin=args.margin)
            candidates.append(bundle.disparity)
            masks.append(bundle.mask)
        probes = [_load_probe_map(Path(p), args.id) for p in args.probes]
        flags = reject_outlier_alignments(candidates, probes, masks, threshold=args.threshold)
        if not any(flags):
            raise DataInconsistencyError("every alignment is an outlier against the probes")

    aset = AlignmentSet(transforms=tuple(poses), c_ct=center, inlier_flags=tuple(flags))
    mean_pose = average_transforms(aset)
    write_pose_file(args.out, mean_pose)
    flags_path = Path(args.out).with_suffix(Path(args.out).suffix + ".flags.json")
    flags_path.write_text(json.dumps({"inliers": flags}, indent=2) + "\n")
    print(f"averaged {sum(flags)}/{len(flags)} alignments into {args.out}")
    return EXIT_OK


def _find_est_map(est_dir: Path, record_id: str) -> Path | None:
    for candidate in (est_dir / f"{record_id}.png", est_dir / "Disparity" / f"{record_id}.png"):
        if candidate.exists():
            return candidate
    return None


def cmd_evaluate(args) -> int:
    ref_root = Path(args.ref)
    est_dir = Path(args.est)
    ids = list_record_ids(ref_root)
    if not ids:
        raise ValueError(f"reference dataset at {ref_root} holds no records")

    missing = [i for i in ids if _find_est_map(est_dir, i) is None]
    if missing:
        print(f"estimate directory {est_dir} lacks ids: {', '.join(missing)}", file=sys.stderr)
        raise DataInconsistencyError(f"{len(missing)} record id(s) missing from {est_dir}")

    cfg = EvalConfig(bad_threshold=args.bad_threshold, clip=args.clip)

    def score_one(record_id: str):
        record = read_record(ref_root, record_id)
        est = read_map_png(_find_est_map(est_dir, record_id))
        if est.shape != record.disparity.shape:
            raise DataInconsistencyError(
                f"estimate {record_id} is {est.shape[1]}x{est.shape[0]}, "
                f"reference is {record.disparity.shape[1]}x{record.disparity.shape[0]}"
            )
        rig = record_rig(record)
        score = evaluate_image(rig, record_id, est, record.disparity, record.mask, cfg)
        error_img = signed_error_image(est, record.disparity, record.mask, cfg)
        return score, error_img

    with ThreadPoolExecutor() as pool:
        results = list(pool.map(score_one, ids))

    report = aggregate([score for score, _ in results])
    variants = ("excluded",) if args.include_occluded == "only-excl" else ("excluded", "included")
    Path(args.report).write_text(report_csv(report, variants=variants))
    method = args.method_name or est_dir.name
    print(report_table(report, method, variants=variants), end="")

    if args.error_images:
        out_dir = Path(args.error_images)
        out_dir.mkdir(parents=True, exist_ok=True)
        from .dataset import write_image_png

        for record_id, (_, error_img) in zip(ids, results):
            write_image_png(out_dir / f"{record_id}.png", error_img)
    return EXIT_OK


def cmd_range_stats(args) -> int:
    from .reference import range_stats

    ref_root = Path(args.ref)
    ids = list_record_ids(ref_root)
    lines = [
        "id,depth_min,depth_max,depth_mean,depth_p1,depth_p99,"
        "disparity_min,disparity_max,disparity_mean,disparity_p1,disparity_p99"
    ]
    for record_id in ids:
        record = read_record(ref_root, record_id)
        ds = range_stats(record.depth_left, record.mask)
        ps = range_stats(record.disparity, record.mask)
        lines.append(
            f"{record_id},"
            f"{ds.minimum!r},{ds.maximum!r},{ds.mean!r},{ds.percentile_1!r},{ds.percentile_99!r},"
            f"{ps.minimum!r},{ps.maximum!r},{ps.mean!r},{ps.percentile_1!r},{ps.percentile_99!r}"
        )
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"wrote range statistics for {len(ids)} record(s) to {args.out}")
    return EXIT_OK


def cmd_serve(args) -> int:
    try:
        probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        try:
            probe.bind((args.host, args.port))
        finally:
            probe.close()
    except (OSError, OverflowError, ValueError) as exc:
        print(f"cannot bind {args.host}:{args.port}: {exc}", file=sys.stderr)
        return EXIT_ENVIRONMENT

    import uvicorn

    from .service import create_app

    app = create_app(data_dir=args.data, ui_dir=args.ui)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataInconsistencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA_INCONSISTENCY
    except (ValueError, DatasetError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID_INPUT
    except OSError as exc:
        print(f"environment error: {exc}", file=sys.stderr)
        return EXIT_ENVIRONMENT


if __name__ == "__main__":
    sys.exit(main())
