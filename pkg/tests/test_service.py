import io
import threading

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from stereoref import RectifiedRig, save_ply
from stereoref.dataset import write_image_png, write_rig_file
from stereoref.se3 import RigidTransform
from stereoref.service import create_app
from stereoref.service.sessions import SessionStore

from conftest import make_plane_mesh


RIG = RectifiedRig(f=64, cx1=16, cy1=12, cx2=16, cy2=12, tx=5, width=32, height=24)
PLANE_Z = 100.0


@pytest.fixture
def scene_files(tmp_path):
    mesh_path = tmp_path / "plane.ply"
    save_ply(mesh_path, make_plane_mesh(PLANE_Z, 40.0, 30.0))
    calib_path = tmp_path / "rig.json"
    write_rig_file(calib_path, RIG)
    rng = np.random.default_rng(7)
    left = rng.integers(0, 256, size=(RIG.height, RIG.width, 3), dtype=np.uint8)
    right = rng.integers(0, 256, size=(RIG.height, RIG.width, 3), dtype=np.uint8)
    left_path = tmp_path / "left.png"
    right_path = tmp_path / "right.png"
    write_image_png(left_path, left)
    write_image_png(right_path, right)
    markers_path = tmp_path / "markers.txt"
    markers_path.write_text("left 0 0 0\nright 1 0 0\ntarget 0 0 10\n")
    return {
        "mesh_path": str(mesh_path),
        "calib_path": str(calib_path),
        "left_image_path": str(left_path),
        "right_image_path": str(right_path),
        "markers_path": str(markers_path),
        "left": left,
        "right": right,
    }


@pytest.fixture
def client(tmp_path):
    app = create_app(data_dir=tmp_path / "data")
    with TestClient(app) as c:
        yield c


def create_session(client, scene_files, **overrides):
    body = {
        "mesh_path": scene_files["mesh_path"],
        "calib_path": scene_files["calib_path"],
        "left_image_path": scene_files["left_image_path"],
        "right_image_path": scene_files["right_image_path"],
        "markers_path": scene_files["markers_path"],
    }
    body.update(overrides)
    resp = client.post("/sessions", json=body)
    assert resp.status_code == 201, resp.text
    return resp.json()


def png_pixels(content: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(content)) as img:
        return np.asarray(img.convert("RGB"))


class TestLifecycle:
    def test_health_reports_version(self, client):
        resp = client.get("/healthz")
        assert resp.status_code == 200
        body = resp.json()
        assert body["status"] == "ok"
        import stereoref

        assert body["version"] == stereoref.__version__

    def test_create_returns_id_and_marker_pose(self, client, scene_files):
        info = create_session(client, scene_files)
        assert info["session_id"]
        # axis-aligned markers give the identity pose
        assert np.allclose(info["pose"], np.eye(4), atol=1e-12)
        assert info["dz_accumulated"] == 0.0

    def test_create_with_inline_pose(self, client, scene_files):
        pose = np.eye(4)
        info = create_session(
            client, scene_files, markers_path=None, pose=pose.tolist()
        )
        assert np.allclose(info["pose"], pose)

    def test_missing_mesh_rejected_422(self, client, scene_files, tmp_path):
        body = {
            "mesh_path": str(tmp_path / "absent.ply"),
            "calib_path": scene_files["calib_path"],
            "left_image_path": scene_files["left_image_path"],
            "right_image_path": scene_files["right_image_path"],
            "markers_path": scene_files["markers_path"],
        }
        resp = client.post("/sessions", json=body)
        assert resp.status_code == 422

    def test_both_pose_sources_rejected(self, client, scene_files):
        body = {
            "mesh_path": scene_files["mesh_path"],
            "calib_path": scene_files["calib_path"],
            "left_image_path": scene_files["left_image_path"],
            "right_image_path": scene_files["right_image_path"],
            "markers_path": scene_files["markers_path"],
            "pose": np.eye(4).tolist(),
        }
        assert client.post("/sessions", json=body).status_code == 422

    def test_unknown_session_404(self, client):
        assert client.get("/sessions/deadbeef").status_code == 404
        assert client.post("/sessions/deadbeef/delta", json={}).status_code == 404
        assert client.get("/sessions/deadbeef/render").status_code == 404


class TestDelta:
    def test_zero_delta_keeps_pose(self, client, scene_files):
        info = create_session(client, scene_files)
        resp = client.post(f"/sessions/{info['session_id']}/delta", json={})
        assert resp.status_code == 200
        assert np.allclose(resp.json()["pose"], info["pose"], atol=1e-15)

    def test_sequence_then_inverse_restores_pose(self, client, scene_files):
        info = create_session(client, scene_files)
        sid = info["session_id"]
        rng = np.random.default_rng(3)
        deltas = []
        for _ in range(10):
            field = rng.choice(["rx", "ry", "rz", "dz"])
            value = float(rng.uniform(-0.05, 0.05)) if field != "dz" else float(rng.uniform(-1, 1))
            deltas.append({field: value})
        for d in deltas:
            assert client.post(f"/sessions/{sid}/delta", json=d).status_code == 200
        for d in reversed(deltas):
            inverse = {k: -v for k, v in d.items()}
            assert client.post(f"/sessions/{sid}/delta", json=inverse).status_code == 200
        final = client.get(f"/sessions/{sid}").json()
        assert np.max(np.abs(np.asarray(final["pose"]) - np.asarray(info["pose"]))) < 1e-9

    def test_dz_bound_409_leaves_state(self, client, scene_files):
        info = create_session(client, scene_files)
        sid = info["session_id"]
        assert client.post(f"/sessions/{sid}/delta", json={"dz": 15.0}).status_code == 200
        before = client.get(f"/sessions/{sid}").json()
        resp = client.post(f"/sessions/{sid}/delta", json={"dz": 10.0})
        assert resp.status_code == 409
        after = client.get(f"/sessions/{sid}").json()
        assert after["pose"] == before["pose"]
        assert after["dz_accumulated"] == 15.0

    def test_center_stays_on_view_axis(self, client, scene_files):
        info = create_session(client, scene_files)
        sid = info["session_id"]
        rng = np.random.default_rng(4)
        prev = RigidTransform.from_matrix(np.asarray(info["pose"]))
        for _ in range(15):
            body = {
                "rx": float(rng.normal(scale=0.05)),
                "ry": float(rng.normal(scale=0.05)),
                "rz": float(rng.normal(scale=0.05)),
                "dz": float(rng.uniform(-1.0, 1.0)),
            }
            resp = client.post(f"/sessions/{sid}/delta", json=body)
            if resp.status_code == 409:
                continue
            cur = RigidTransform.from_matrix(np.asarray(resp.json()["pose"]))
            motion = cur.camera_center() - prev.camera_center()
            axis = cur.view_axis()
            lateral = motion - (motion @ axis) * axis
            assert np.linalg.norm(lateral) < 1e-9
            prev = cur


class TestRender:
    def test_alpha_zero_decodes_to_background(self, client, scene_files):
        info = create_session(client, scene_files)
        resp = client.get(
            f"/sessions/{info['session_id']}/render",
            params={"eye": "left", "alpha": 0.0},
        )
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/png"
        assert np.array_equal(png_pixels(resp.content), scene_files["left"])

    def test_alpha_one_solid_hides_background(self, client, scene_files):
        info = create_session(client, scene_files)
        resp = client.get(
            f"/sessions/{info['session_id']}/render",
            params={"eye": "left", "alpha": 1.0, "mode": "solid"},
        )
        pixels = png_pixels(resp.content)
        assert not np.array_equal(pixels, scene_files["left"])
        assert np.unique(pixels).size <= 2  # flat color fill

    def test_pair_swap_exchanges_halves(self, client, scene_files):
        info = create_session(client, scene_files)
        sid = info["session_id"]
        plain = png_pixels(
            client.get(f"/sessions/{sid}/render", params={"eye": "pair", "alpha": 0.0}).content
        )
        swapped = png_pixels(
            client.get(
                f"/sessions/{sid}/render", params={"eye": "pair", "alpha": 0.0, "swap": True}
            ).content
        )
        w = RIG.width
        assert np.array_equal(plain[:, :w], scene_files["left"])
        assert np.array_equal(plain[:, w:], scene_files["right"])
        assert np.array_equal(swapped[:, :w], scene_files["right"])
        assert np.array_equal(swapped[:, w:], scene_files["left"])

    def test_invalid_mode_rejected(self, client, scene_files):
        info = create_session(client, scene_files)
        resp = client.get(
            f"/sessions/{info['session_id']}/render", params={"mode": "sparkle"}
        )
        assert resp.status_code == 422


class TestCommits:
    def test_commit_appends_history(self, client, scene_files, tmp_path):
        info = create_session(client, scene_files)
        sid = info["session_id"]
        r1 = client.post(f"/sessions/{sid}/commit", json={"operator": "op-a"})
        assert r1.status_code == 200
        r2 = client.post(f"/sessions/{sid}/commit", json={"operator": "op-b"})
        entries = client.get(f"/sessions/{sid}/commits").json()
        assert [e["index"] for e in entries] == [0, 1]
        assert [e["operator"] for e in entries] == ["op-a", "op-b"]

    def test_committed_pose_matches_current(self, client, scene_files):
        info = create_session(client, scene_files)
        sid = info["session_id"]
        client.post(f"/sessions/{sid}/delta", json={"rz": 0.01})
        current = client.get(f"/sessions/{sid}").json()["pose"]
        entry = client.post(f"/sessions/{sid}/commit", json={"operator": "op"}).json()
        assert entry["pose"] == current

    def test_commits_persisted_to_data_dir(self, tmp_path, scene_files):
        data = tmp_path / "store"
        app = create_app(data_dir=data)
        with TestClient(app) as client:
            info = create_session(client, scene_files)
            client.post(f"/sessions/{info['session_id']}/commit", json={"operator": "op"})
        files = list(data.rglob("commits.jsonl"))
        assert len(files) == 1
        assert '"operator": "op"' in files[0].read_text()

    def test_symmetric_commits_average_back_to_start(self, client, scene_files):
        from stereoref.se3 import AlignmentSet, average_transforms

        info = create_session(client, scene_files)
        sid = info["session_id"]
        theta = 0.02
        client.post(f"/sessions/{sid}/delta", json={"rz": theta})
        client.post(f"/sessions/{sid}/commit", json={"operator": "op"})
        client.post(f"/sessions/{sid}/delta", json={"rz": -2 * theta})
        client.post(f"/sessions/{sid}/commit", json={"operator": "op"})
        entries = client.get(f"/sessions/{sid}/commits").json()
        poses = tuple(
            RigidTransform.from_matrix(np.asarray(e["pose"])) for e in entries
        )
        mean = average_transforms(AlignmentSet(poses, np.array([0.0, 0.0, PLANE_Z])))
        assert np.allclose(mean.as_matrix(), np.asarray(info["pose"]), atol=1e-9)


class TestPreview:
    def test_plane_scene_no_occlusion(self, client, scene_files):
        info = create_session(client, scene_files)
        resp = client.get(f"/sessions/{info['session_id']}/preview")
        assert resp.status_code == 200
        body = resp.json()
        assert body["occluded_percent"] == 0.0
        assert body["valid_percent"] > 90.0
        d = body["disparity"]
        assert d["minimum"] == pytest.approx(RIG.f * RIG.tx / PLANE_Z, abs=1e-6)
        assert d["maximum"] == pytest.approx(d["minimum"], abs=1e-6)

    def test_empty_mesh_everything_outside(self, client, scene_files, tmp_path):
        empty = tmp_path / "empty.ply"
        empty.write_text(
            "ply\nformat ascii 1.0\nelement vertex 0\n"
            "property float x\nproperty float y\nproperty float z\n"
            "element face 0\nproperty list uchar int vertex_indices\nend_header\n"
        )
        info = create_session(client, scene_files, mesh_path=str(empty))
        body = client.get(f"/sessions/{info['session_id']}/preview").json()
        assert body["outside_percent"] == 100.0
        assert body["disparity"] is None


class TestConcurrency:
    def test_store_level_deltas_linearize(self, scene_files):
        store = SessionStore()
        session = store.create(
            mesh_path=scene_files["mesh_path"],
            calib_path=scene_files["calib_path"],
            left_image_path=scene_files["left_image_path"],
            right_image_path=scene_files["right_image_path"],
            pose=np.eye(4),
        )
        n_threads, n_deltas, step = 8, 50, 0.001

        def worker():
            for _ in range(n_deltas):
                store.apply_delta(session.session_id, 0.0, 0.0, step, 0.0)

        threads = [threading.Thread(target=worker) for _ in range(n_threads)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        total = n_threads * n_deltas * step
        expected = RigidTransform.identity()
        from stereoref.se3 import constrained_adjust

        expected = constrained_adjust(expected, 0.0, 0.0, total, 0.0)
        assert np.allclose(session.pose.as_matrix(), expected.as_matrix(), atol=1e-9)

    def test_interleaved_clients_observe_serial_order(self, client, scene_files):
        info = create_session(client, scene_files)
        sid = info["session_id"]
        # two "clients" alternating z-rotations; commutative, so the end
        # state must equal the serial sum regardless of interleaving
        a_total = b_total = 0.0
        for i in range(10):
            client.post(f"/sessions/{sid}/delta", json={"rz": 0.002})
            a_total += 0.002
            client.post(f"/sessions/{sid}/delta", json={"rz": -0.001})
            b_total += -0.001
        from stereoref.se3 import constrained_adjust

        expected = constrained_adjust(
            RigidTransform.from_matrix(np.asarray(info["pose"])), 0, 0, a_total + b_total, 0
        )
        final = client.get(f"/sessions/{sid}").json()["pose"]
        assert np.allclose(final, expected.as_matrix(), atol=1e-12)
