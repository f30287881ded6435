"""Acceptance suite: one test per release criterion, each printing a
PASS line (run with ``pytest tests/test_acceptance.py -v -s``).

Expected values are frozen from independent oracles: closed-form
geometry, ray casting, derivative-free optimisation and hand arithmetic;
none are produced by the code paths under test.
"""

import shutil
import time

import numpy as np
import pytest

from stereoref import (
    AlignmentSet,
    RectifiedRig,
    RenderConfig,
    RigidTransform,
    TriangleMesh,
    average_rotations,
    average_transforms,
    bad_pixel_percent,
    build_matrices,
    depth_to_disparity,
    disparity_to_depth,
    generate_reference,
    linearize_depth,
    reject_outlier_alignments,
    rmse_depth,
    rmse_disparity,
    save_ply,
    triangulate_pixel,
)
from stereoref.cli import main
from stereoref.dataset import decode_q16, encode_q16, read_map_png, read_record, write_map_png, write_rig_file
from stereoref.metrics import EvalConfig
from stereoref.reference import MaskLabel
from stereoref.se3 import constrained_adjust, rot_z
from stereoref.service.sessions import write_pose_file

from conftest import make_plane_mesh, make_strip_scene
from test_rig import random_rig
from _oracles import (
    brute_force_rotation_mean,
    geodesic_distance,
    random_rotation,
    rodrigues,
    strip_scene_expected_bands,
)

IDENTITY = RigidTransform.identity()


def ok(name: str) -> None:
    print(f"ACCEPTANCE {name}: PASS")


def test_rig_round_trip_and_q_path():
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    pairs = 0
    for _ in range(100):
        rig = random_rig(rng)
        z = rng.uniform(1.0, 1e4, size=100)
        pairs += z.size
        back = disparity_to_depth(rig, depth_to_disparity(rig, z))
        assert np.max(np.abs(back - z) / z) <= 1e-9
        _, _, q = build_matrices(rig)
        u = rng.uniform(0, rig.width, size=100)
        v = rng.uniform(0, rig.height, size=100)
        d = depth_to_disparity(rig, z)
        hom = (q @ np.stack([u, v, d, np.ones_like(u)])).T
        pts = hom[:, :3] / hom[:, 3:4]
        assert np.max(np.abs(pts - triangulate_pixel(rig, u, v, d))) <= 1e-9
    elapsed = time.perf_counter() - start
    assert pairs == 10_000
    assert elapsed < 1.0, f"round-trip suite took {elapsed:.3f}s"
    ok(f"rig round-trip 1e4 pairs + Q path ({elapsed * 1e3:.0f} ms)")


def test_depth_linearization_endpoints():
    assert linearize_depth(0.0, 1.0, 1000.0) == 1.0
    assert linearize_depth(1.0, 1.0, 1000.0) == 1000.0
    assert abs(linearize_depth(0.5, 1.0, 1000.0) - 2000.0 / 1001.0) <= 1e-12
    ok("depth linearization endpoints and midpoint")


def test_plane_scene_reference():
    rig = RectifiedRig(f=500, cx1=320, cy1=256, cx2=320, cy2=256, tx=5, width=640, height=512)
    mesh = make_plane_mesh(100.0, 90.0, 70.0)
    start = time.perf_counter()
    bundle = generate_reference(mesh, rig, IDENTITY, RenderConfig())
    elapsed = time.perf_counter() - start
    covered = np.isfinite(bundle.depth_left)
    assert np.all(covered)
    within = np.abs(bundle.disparity[covered] - 25.0) <= 0.05
    assert np.mean(within) >= 0.999
    occluded = np.isin(bundle.mask, [MaskLabel.OCCLUDED_LEFT, MaskLabel.OCCLUDED_RIGHT])
    assert np.count_nonzero(occluded) == 0
    assert elapsed < 2.0, f"generation took {elapsed:.3f}s"
    ok(f"plane-scene reference 640x512 ({elapsed:.2f} s)")


def test_occlusion_band_width_against_oracle():
    rig = RectifiedRig(f=500, cx1=80, cy1=60, cx2=80, cy2=60, tx=5, width=160, height=120)
    z_fg, z_bg, x0, x1 = 50.0, 100.0, -2.0, 2.0
    bundle = generate_reference(make_strip_scene(z_fg, z_bg, x0, x1), rig, IDENTITY)
    expected_width = abs(
        depth_to_disparity(rig, z_fg) - depth_to_disparity(rig, z_bg)
    )
    (l_lo, l_hi), _ = strip_scene_expected_bands(rig, z_fg, z_bg, x0, x1)
    for row in range(10, 110, 20):
        occl = np.nonzero(bundle.mask[row] == MaskLabel.OCCLUDED_LEFT)[0]
        assert abs(len(occl) - expected_width) <= 1
        assert abs(occl.min() + 0.5 - l_lo) <= 1
        assert abs(occl.max() + 0.5 - l_hi) <= 1
    ok(f"occlusion band width {expected_width:.0f} px +-1 vs analytic oracle")


def test_rotation_averaging_against_brute_force():
    rng = np.random.default_rng(202)
    for _ in range(100):
        base = random_rotation(rng)
        rots = []
        for _ in range(5):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            rots.append(rodrigues(axis * rng.uniform(0, np.deg2rad(15))) @ base)
        mean = average_rotations(rots)
        oracle = brute_force_rotation_mean(rots)
        assert geodesic_distance(mean, oracle) <= 1e-3
    for theta in (np.deg2rad(10), np.deg2rad(45)):
        mean = average_rotations([rot_z(theta), rot_z(-theta)])
        assert geodesic_distance(mean, np.eye(3)) <= 1e-9
    ok("rotation averaging vs brute-force geodesic minimizer (100 sets)")


def test_translation_mean_property():
    rng = np.random.default_rng(303)
    for _ in range(100):
        n = int(rng.integers(1, 8))
        transforms = tuple(
            RigidTransform(random_rotation(rng), rng.uniform(-100, 100, 3)) for _ in range(n)
        )
        c = rng.uniform(-100, 100, 3)
        mean = average_transforms(AlignmentSet(transforms, c))
        expected = np.mean([t.R @ c + t.T for t in transforms], axis=0)
        assert np.max(np.abs(mean.R @ c + mean.T - expected)) <= 1e-9
    ok("translation mean maps the rotation centre to the mean image (100 sets)")


def test_outlier_rejection_flags_only_the_perturbed_pose():
    rig = RectifiedRig(f=500, cx1=80, cy1=60, cx2=80, cy2=60, tx=5, width=160, height=120)
    mesh = make_strip_scene()
    rng = np.random.default_rng(404)

    def disparity_at(pose):
        bundle = generate_reference(mesh, rig, pose)
        return bundle.disparity, bundle.mask

    probe_a, _ = disparity_at(IDENTITY)
    probe_b, _ = disparity_at(constrained_adjust(IDENTITY, 0.0, 0.0, 5e-4, 0.0))

    poses = []
    perturbed_index = 3
    for i in range(6):
        if i == perturbed_index:
            poses.append(constrained_adjust(IDENTITY, 0.0, np.deg2rad(5.0), 0.0, 0.0))
        else:
            poses.append(
                constrained_adjust(
                    IDENTITY,
                    rng.normal(scale=np.deg2rad(0.05)),
                    rng.normal(scale=np.deg2rad(0.05)),
                    rng.normal(scale=np.deg2rad(0.05)),
                    0.0,
                )
            )
    candidates, masks = zip(*(disparity_at(p) for p in poses))
    flags = reject_outlier_alignments(list(candidates), [probe_a, probe_b], list(masks), 20.0)
    assert flags == [i != perturbed_index for i in range(6)]
    ok("outlier rejection flags exactly the 5-degree alignment")


def test_metric_unit_values():
    mask = np.full((1, 4), MaskLabel.VALID, dtype=np.uint8)
    ref = np.zeros((1, 4))
    est = np.array([[0.0, 1.0, 4.0, 5.0]])
    assert bad_pixel_percent(est, ref, mask) == 50.0

    mask2 = np.full((1, 2), MaskLabel.VALID, dtype=np.uint8)
    assert rmse_disparity(np.array([[3.0, 4.0]]), np.zeros((1, 2)), mask2) == pytest.approx(
        np.sqrt(12.5), abs=1e-12
    )

    rig = RectifiedRig(f=1000, cx1=320, cy1=240, cx2=320, cy2=240, tx=5, width=640, height=480)
    ref_d = np.full((2, 2), 50.0)
    est_d = np.full((2, 2), 49.0)
    mask3 = np.full((2, 2), MaskLabel.VALID, dtype=np.uint8)
    expected = 5000.0 / 49.0 - 100.0  # 2.0408... mm
    assert rmse_depth(rig, est_d, ref_d, mask3) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(2.041, abs=5e-4)
    ok("metric unit values (Bad3 50%, RMSE sqrt(12.5), depth 2.041 mm)")


def test_codec_round_trip_and_byte_stability(tmp_path):
    rng = np.random.default_rng(505)
    values = rng.uniform(1.0 / 512.0, 255.99, size=(100, 100))
    back = decode_q16(encode_q16(values))
    assert np.max(np.abs(back - values)) <= 1.0 / 512.0

    path_a, path_b = tmp_path / "a.png", tmp_path / "b.png"
    write_map_png(path_a, values)
    write_map_png(path_b, values)
    assert path_a.read_bytes() == path_b.read_bytes()
    again = read_map_png(path_a)
    assert np.array_equal(again, back)
    ok("16-bit codec round trip (1e4 values) and byte stability")


class TestMiniBenchmark:
    """Two synthetic records, three synthetic methods, hand-computed table."""

    RIG = RectifiedRig(f=64, cx1=16, cy1=12, cx2=16, cy2=12, tx=5, width=32, height=24)

    # per-record plane depths chosen so disparity sits on the 1/256 grid
    DISPARITIES = {"001": 3.25, "002": 4.0625}

    def _expected(self):
        f_tx = 320.0
        exp = {}
        for rid, d in self.DISPARITIES.items():
            non_overlap_cols = int(np.ceil(d - 0.5))  # pixel centres left of d
            eligible_cols = 32 - non_overlap_cols
            bad_cols = len([u for u in range(non_overlap_cols, 16)])
            frac = bad_cols / eligible_cols
            dz = f_tx / d - f_tx / (d + 4.0)
            exp[rid] = {
                "eligible": eligible_cols * 24,
                "B": {"bad": 100.0, "rmse_d": 4.0, "rmse_z": dz},
                "C": {
                    "bad": 100.0 * frac,
                    "rmse_d": 4.0 * np.sqrt(frac),
                    "rmse_z": dz * np.sqrt(frac),
                },
                "A": {"bad": 0.0, "rmse_d": 0.0, "rmse_z": 0.0},
            }
        return exp

    @staticmethod
    def _parse_csv(path):
        lines = path.read_text().splitlines()
        header = lines[0].split(",")
        rows = {}
        for line in lines[1:]:
            cells = line.split(",")
            rows[cells[0]] = dict(zip(header[1:], cells[1:]))
        return rows

    def test_end_to_end_tables(self, tmp_path):
        ref_dir = tmp_path / "ref"
        for rid, d in self.DISPARITIES.items():
            z = 320.0 / d
            mesh_path = tmp_path / f"plane_{rid}.ply"
            save_ply(mesh_path, make_plane_mesh(z, 40.0, 30.0))
            calib_path = tmp_path / "rig.json"
            write_rig_file(calib_path, self.RIG)
            pose_path = tmp_path / "pose.txt"
            write_pose_file(pose_path, IDENTITY)
            assert (
                main(
                    [
                        "gen-reference",
                        "--mesh", str(mesh_path),
                        "--calib", str(calib_path),
                        "--pose", str(pose_path),
                        "--out", str(ref_dir),
                        "--id", rid,
                    ]
                )
                == 0
            )

        # synthetic methods: A copies the reference, B adds 4 px
        # everywhere, C adds 4 px on the left half (u < 16)
        methods = {}
        for name in ("A", "B", "C"):
            mdir = tmp_path / f"method{name}"
            mdir.mkdir()
            methods[name] = mdir
        for rid in self.DISPARITIES:
            ref_map = read_map_png(ref_dir / "Disparity" / f"{rid}.png")
            assert not np.any(np.isnan(ref_map))
            write_map_png(methods["A"] / f"{rid}.png", ref_map)
            write_map_png(methods["B"] / f"{rid}.png", ref_map + 4.0)
            half = ref_map.copy()
            half[:, :16] += 4.0
            write_map_png(methods["C"] / f"{rid}.png", half)

        exp = self._expected()
        for name, mdir in methods.items():
            report = tmp_path / f"report_{name}.csv"
            assert (
                main(
                    ["evaluate", "--ref", str(ref_dir), "--est", str(mdir), "--report", str(report)]
                )
                == 0
            )
            rows = self._parse_csv(report)
            per_image = []
            for rid in self.DISPARITIES:
                e = exp[rid][name]
                row = rows[rid]
                assert float(row["bad3_excl"]) == pytest.approx(e["bad"], abs=1e-9)
                assert float(row["bad3_incl"]) == pytest.approx(e["bad"], abs=1e-9)
                assert float(row["rmse_disparity_excl"]) == pytest.approx(e["rmse_d"], abs=1e-9)
                assert float(row["rmse_depth_excl"]) == pytest.approx(e["rmse_z"], abs=1e-9)
                assert int(row["eligible_excl"]) == exp[rid]["eligible"]
                per_image.append(e)
            for metric, col in (("bad", "bad3_excl"), ("rmse_d", "rmse_disparity_excl"), ("rmse_z", "rmse_depth_excl")):
                vals = [e[metric] for e in per_image]
                assert float(rows["mean"][col]) == pytest.approx(np.mean(vals), abs=1e-9)
                assert float(rows["std"][col]) == pytest.approx(np.std(vals), abs=1e-9)
        ok("mini-benchmark tables match hand-computed values")


def test_simulated_repeat_alignment_study(tmp_path):
    """Desk-scale stand-in for the repeated manual-alignment accuracy
    study: the physical dataset and human operators are out of reach, so
    rotational noise about the left camera substitutes for operator
    error and the averaged pose must beat the individual alignments."""
    rig = RectifiedRig(f=200, cx1=40, cy1=30, cx2=40, cy2=30, tx=5, width=80, height=60)
    surface = TriangleMesh(
        np.array(
            [[-50, -40, 90], [50, -40, 100], [50, 40, 110], [-50, 40, 120]], dtype=float
        ),
        np.array([[0, 1, 2], [0, 2, 3]]),
    )
    reference = generate_reference(surface, rig, IDENTITY).disparity

    def disparity_rmse(pose) -> float:
        disp = generate_reference(surface, rig, pose).disparity
        both = np.isfinite(disp) & np.isfinite(reference)
        return float(np.sqrt(np.mean((disp[both] - reference[both]) ** 2)))

    rng = np.random.default_rng(606)
    alignments = [
        constrained_adjust(
            IDENTITY,
            rng.normal(scale=np.deg2rad(0.6)),
            rng.normal(scale=np.deg2rad(0.6)),
            rng.normal(scale=np.deg2rad(0.6)),
            rng.normal(scale=0.5),
        )
        for _ in range(6)
    ]
    individual = [disparity_rmse(p) for p in alignments]
    c_ct = np.array([0.0, 0.0, 105.0])  # central surface point, average depth

    rmse_by_n = {}
    for n in (2, 4, 6):
        mean_pose = average_transforms(AlignmentSet(tuple(alignments[:n]), c_ct))
        rmse_by_n[n] = disparity_rmse(mean_pose)

    assert rmse_by_n[6] < np.mean(individual)
    assert rmse_by_n[6] < rmse_by_n[4] < rmse_by_n[2]
    ok(
        "repeat-alignment study: mean-pose RMSE "
        f"{rmse_by_n[6]:.3f} px < individual mean {np.mean(individual):.3f} px, "
        f"decreasing over N (2: {rmse_by_n[2]:.3f}, 4: {rmse_by_n[4]:.3f}, 6: {rmse_by_n[6]:.3f})"
    )
