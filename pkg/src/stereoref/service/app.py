"""HTTP interface for interactive alignment sessions.

All endpoints are JSON except the render endpoint, which returns PNG
bytes.  Angles are radians, lengths mm.  Scripted clients can drive the
whole alignment loop without the browser UI.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Query, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field
from PIL import Image

from .. import __version__
from .sessions import DZ_BOUND, DzBoundError, SessionStore, UnknownSessionError

Pose = list[list[float]]


class CreateSessionRequest(BaseModel):
    mesh_path: str
    calib_path: str
    left_image_path: str
    right_image_path: str
    markers_path: str | None = None
    pose: Pose | None = None
    z_near: float = 1.0
    z_far: float = 1000.0


class SessionInfo(BaseModel):
    session_id: str
    pose: Pose
    dz_accumulated: float
    dz_bound: float = DZ_BOUND
    width: int
    height: int
    commit_count: int


class DeltaRequest(BaseModel):
    rx: float = 0.0
    ry: float = 0.0
    rz: float = 0.0
    dz: float = 0.0


class PoseResponse(BaseModel):
    pose: Pose
    dz_accumulated: float


class CommitRequest(BaseModel):
    operator: str = Field(min_length=1)


class CommitEntryModel(BaseModel):
    index: int
    operator: str
    timestamp: float
    pose: Pose


class RangeStatsModel(BaseModel):
    minimum: float
    maximum: float
    mean: float
    percentile_1: float
    percentile_99: float


class PreviewResponse(BaseModel):
    valid_percent: float
    occluded_percent: float
    non_overlap_percent: float
    outside_percent: float
    disparity: RangeStatsModel | None
    depth: RangeStatsModel | None


class HealthResponse(BaseModel):
    status: str
    version: str


def _pose_list(matrix: np.ndarray) -> Pose:
    return [[float(v) for v in row] for row in matrix]


def create_app(data_dir=None, ui_dir=None) -> FastAPI:
    app = FastAPI(title="stereoref alignment service", version=__version__)
    store = SessionStore(data_dir=data_dir)
    app.state.store = store

    def _get(session_id: str):
        try:
            return store.get(session_id)
        except UnknownSessionError:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")

    @app.get("/healthz", response_model=HealthResponse)
    def healthz():
        return HealthResponse(status="ok", version=__version__)

    @app.post("/sessions", response_model=SessionInfo, status_code=201)
    def create_session(req: CreateSessionRequest):
        try:
            session = store.create(
                mesh_path=req.mesh_path,
                calib_path=req.calib_path,
                left_image_path=req.left_image_path,
                right_image_path=req.right_image_path,
                markers_path=req.markers_path,
                pose=req.pose,
                z_near=req.z_near,
                z_far=req.z_far,
            )
        except (ValueError, OSError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return _session_info(session)

    def _session_info(session) -> SessionInfo:
        return SessionInfo(
            session_id=session.session_id,
            pose=_pose_list(session.pose.as_matrix()),
            dz_accumulated=session.dz_total,
            width=session.rig.width,
            height=session.rig.height,
            commit_count=len(session.commits),
        )

    @app.get("/sessions/{session_id}", response_model=SessionInfo)
    def get_session(session_id: str):
        return _session_info(_get(session_id))

    @app.post("/sessions/{session_id}/delta", response_model=PoseResponse)
    def apply_delta(session_id: str, req: DeltaRequest):
        _get(session_id)
        try:
            pose = store.apply_delta(session_id, req.rx, req.ry, req.rz, req.dz)
        except DzBoundError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        session = store.get(session_id)
        return PoseResponse(pose=_pose_list(pose.as_matrix()), dz_accumulated=session.dz_total)

    @app.get("/sessions/{session_id}/render")
    def get_render(
        session_id: str,
        eye: str = Query("pair", pattern="^(left|right|pair)$"),
        mode: str = Query("solid", pattern="^(solid|wireframe|points)$"),
        alpha: float = Query(0.5, ge=0.0, le=1.0),
        swap: bool = False,
    ):
        _get(session_id)
        image = store.render(session_id, eye=eye, mode=mode, alpha=alpha, swap=swap)
        buf = io.BytesIO()
        Image.fromarray(image, mode="RGB").save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    @app.post("/sessions/{session_id}/commit", response_model=CommitEntryModel)
    def commit(session_id: str, req: CommitRequest):
        _get(session_id)
        entry = store.commit(session_id, req.operator)
        return CommitEntryModel(
            index=entry.index,
            operator=entry.operator,
            timestamp=entry.timestamp,
            pose=_pose_list(entry.pose),
        )

    @app.get("/sessions/{session_id}/commits", response_model=list[CommitEntryModel])
    def list_commits(session_id: str):
        session = _get(session_id)
        with session.lock:
            entries = list(session.commits)
        return [
            CommitEntryModel(
                index=e.index,
                operator=e.operator,
                timestamp=e.timestamp,
                pose=_pose_list(e.pose),
            )
            for e in entries
        ]

    @app.get("/sessions/{session_id}/preview", response_model=PreviewResponse)
    def preview(session_id: str):
        _get(session_id)
        stats = store.preview(session_id)

        def model(rs):
            if rs is None:
                return None
            return RangeStatsModel(
                minimum=rs.minimum,
                maximum=rs.maximum,
                mean=rs.mean,
                percentile_1=rs.percentile_1,
                percentile_99=rs.percentile_99,
            )

        return PreviewResponse(
            valid_percent=stats["valid_percent"],
            occluded_percent=stats["occluded_percent"],
            non_overlap_percent=stats["non_overlap_percent"],
            outside_percent=stats["outside_percent"],
            disparity=model(stats["disparity"]),
            depth=model(stats["depth"]),
        )

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
