"""In-memory alignment sessions.

A session holds the scene (mesh, rig, stereo background pair) and the
current constrained pose.  Mutations on one session are serialised by a
per-session lock; renders read a consistent pose snapshot and run
outside the lock.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..mesh import TriangleMesh, load_mesh
from ..dataset import read_image_png, read_rig_file
from ..reference import MaskLabel, generate_reference, range_stats
from ..render import RenderConfig, render_overlay
from ..rig import RectifiedRig
from ..se3 import (
    MarkerTriple,
    RigidTransform,
    constrained_adjust,
    initial_pose_from_markers,
)

DZ_BOUND = 20.0  # mm, accumulated over the session


class UnknownSessionError(KeyError):
    pass


class DzBoundError(ValueError):
    pass


@dataclass
class CommitEntry:
    index: int
    operator: str
    timestamp: float
    pose: np.ndarray  # 4x4


@dataclass
class AlignmentSession:
    session_id: str
    mesh: TriangleMesh
    rig: RectifiedRig
    left_image: np.ndarray
    right_image: np.ndarray
    pose: RigidTransform
    config: RenderConfig
    dz_total: float = 0.0
    commits: list[CommitEntry] = field(default_factory=list)
    lock: threading.RLock = field(default_factory=threading.RLock)


def read_pose_file(path) -> RigidTransform:
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line:
            rows.append([float(x) for x in line.split()])
    return RigidTransform.from_matrix(np.asarray(rows, dtype=float))


def write_pose_file(path, pose: RigidTransform) -> None:
    m = pose.as_matrix()
    text = "\n".join(" ".join(repr(float(v)) for v in row) for row in m)
    Path(path).write_text(text + "\n")


def read_marker_file(path) -> MarkerTriple:
    """Three `label x y z` lines with labels left, right and target."""
    points = {}
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 4:
            raise ValueError(f"malformed marker line {line!r}")
        points[parts[0].lower()] = [float(x) for x in parts[1:]]
    missing = {"left", "right", "target"} - set(points)
    if missing:
        raise ValueError(f"marker file lacks labels: {sorted(missing)}")
    return MarkerTriple(
        left_cam=np.array(points["left"]),
        right_cam=np.array(points["right"]),
        target=np.array(points["target"]),
    )


class SessionStore:
    """Thread-safe session registry."""

    def __init__(self, data_dir=None):
        self._sessions: dict[str, AlignmentSession] = {}
        self._registry_lock = threading.Lock()
        self.data_dir = Path(data_dir) if data_dir else None

    def create(
        self,
        mesh_path: str,
        calib_path: str,
        left_image_path: str,
        right_image_path: str,
        markers_path: str | None = None,
        pose: np.ndarray | None = None,
        z_near: float = 1.0,
        z_far: float = 1000.0,
    ) -> AlignmentSession:
        mesh = load_mesh(mesh_path)
        rig = read_rig_file(calib_path)
        left = read_image_png(left_image_path)
        right = read_image_png(right_image_path)
        for name, img in (("left", left), ("right", right)):
            if img.shape[:2] != (rig.height, rig.width):
                raise ValueError(
                    f"{name} image is {img.shape[1]}x{img.shape[0]}, "
                    f"rig expects {rig.width}x{rig.height}"
                )
        if (markers_path is None) == (pose is None):
            raise ValueError("provide exactly one of markers or an initial pose")
        if markers_path is not None:
            initial = initial_pose_from_markers(read_marker_file(markers_path))
        else:
            initial = RigidTransform.from_matrix(np.asarray(pose, dtype=float))
        session = AlignmentSession(
            session_id=uuid.uuid4().hex,
            mesh=mesh,
            rig=rig,
            left_image=left,
            right_image=right,
            pose=initial,
            config=RenderConfig(z_near=z_near, z_far=z_far),
        )
        with self._registry_lock:
            self._sessions[session.session_id] = session
        return session

    def get(self, session_id: str) -> AlignmentSession:
        with self._registry_lock:
            try:
                return self._sessions[session_id]
            except KeyError:
                raise UnknownSessionError(session_id) from None

    def apply_delta(
        self, session_id: str, rx: float, ry: float, rz: float, dz: float
    ) -> RigidTransform:
        session = self.get(session_id)
        with session.lock:
            new_total = session.dz_total + dz
            if abs(new_total) > DZ_BOUND:
                raise DzBoundError(
                    f"accumulated axial translation {new_total:.3f} mm would "
                    f"exceed the +-{DZ_BOUND} mm bound"
                )
            session.pose = constrained_adjust(
                session.pose, rx, ry, rz, dz, max_dz=DZ_BOUND
            )
            session.dz_total = new_total
            return session.pose

    def commit(self, session_id: str, operator: str) -> CommitEntry:
        session = self.get(session_id)
        with session.lock:
            entry = CommitEntry(
                index=len(session.commits),
                operator=operator,
                timestamp=time.time(),
                pose=session.pose.as_matrix(),
            )
            session.commits.append(entry)
        if self.data_dir is not None:
            session_dir = self.data_dir / "sessions" / session_id
            session_dir.mkdir(parents=True, exist_ok=True)
            with open(session_dir / "commits.jsonl", "a") as fh:
                fh.write(
                    json.dumps(
                        {
                            "index": entry.index,
                            "operator": entry.operator,
                            "timestamp": entry.timestamp,
                            "pose": entry.pose.tolist(),
                        }
                    )
                    + "\n"
                )
        return entry

    def render(
        self,
        session_id: str,
        eye: str = "pair",
        mode: str = "solid",
        alpha: float | None = None,
        swap: bool = False,
    ) -> np.ndarray:
        session = self.get(session_id)
        with session.lock:
            pose = session.pose
            base = session.config
        alpha = base.alpha if alpha is None else alpha
        config = RenderConfig(z_near=base.z_near, z_far=base.z_far, mode=mode, alpha=alpha)

        def one(which: str) -> np.ndarray:
            background = session.left_image if which == "left" else session.right_image
            return render_overlay(session.mesh, session.rig, which, pose, config, background)

        if eye in ("left", "right"):
            return one(eye)
        if eye == "pair":
            left, right = one("left"), one("right")
            halves = (right, left) if swap else (left, right)
            return np.concatenate(halves, axis=1)
        raise ValueError(f"unknown eye {eye!r}")

    def preview(self, session_id: str) -> dict:
        session = self.get(session_id)
        with session.lock:
            pose = session.pose
            config = session.config
        bundle = generate_reference(session.mesh, session.rig, pose, config)
        total = bundle.mask.size
        counts = {label: int(np.count_nonzero(bundle.mask == label)) for label in MaskLabel}
        out = {
            "valid_percent": 100.0 * counts[MaskLabel.VALID] / total,
            "occluded_percent": 100.0
            * (counts[MaskLabel.OCCLUDED_LEFT] + counts[MaskLabel.OCCLUDED_RIGHT])
            / total,
            "non_overlap_percent": 100.0 * counts[MaskLabel.NON_OVERLAP] / total,
            "outside_percent": 100.0 * counts[MaskLabel.OUTSIDE_MODEL] / total,
            "disparity": None,
            "depth": None,
        }
        if counts[MaskLabel.VALID]:
            out["disparity"] = range_stats(bundle.disparity, bundle.mask)
            out["depth"] = range_stats(bundle.depth_left, bundle.mask)
        return out
