"""HTTP render service for the navigation viewer.

One process serves one trained block. Renders run against the immutable
loaded field, so concurrent requests are safe; there is deliberately no
reload endpoint. Every response names the block and the deterministic
seed (JSON fields, or X-Block-Id / X-Seed headers on image responses).
"""

from __future__ import annotations

import dataclasses
import time

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from .dataset import ImageRecord
from .field import RadianceField, UnknownSequence
from .geometry import CameraIntrinsics, Pose, camera_pose, camera_rig_extrinsics
from .manifest import encode_png
from .markers import render_navigation_view, trajectory_to_markers, GuidanceTrajectory
from .render import render_image


class PoseSpec(BaseModel):
    position: list[float] = Field(min_length=3, max_length=3)
    yaw: float = 0.0  # degrees
    pitch: float = 0.0
    roll: float = 0.0


class IntrinsicsSpec(BaseModel):
    fx: float
    fy: float
    cx: float
    cy: float


class RenderRequest(BaseModel):
    pose: PoseSpec
    width: int = Field(default=80, ge=8, le=1024)
    height: int = Field(default=60, ge=8, le=1024)
    intrinsics: IntrinsicsSpec | None = None
    camera: str | None = None  # vehicle-pose mode: use this camera's rig
    appearance_key: list[str] | str | None = None  # [trip, cam] or "average"
    markers_on: bool = False
    trajectory_id: str | None = None
    n_samples: int = Field(default=96, ge=2, le=512)
    seed: int = 0


def free_camera_pose(spec: PoseSpec) -> Pose:
    """Camera at `position` looking along yaw/pitch (rig convention)."""
    veh = Pose.from_yaw_pitch_roll(
        spec.position, yaw=np.deg2rad(spec.yaw),
        pitch=0.0, roll=np.deg2rad(spec.roll))
    extr = camera_rig_extrinsics((0.0, 0.0, 0.0),
                                 pitch=np.deg2rad(spec.pitch))
    return camera_pose(veh, extr)


def create_app(field: RadianceField, block_id: str = "b000_000", seed: int = 0,
               trajectories: dict[str, np.ndarray] | None = None,
               records: list[ImageRecord] | None = None,
               marker_width: float = 1.0, marker_alpha: float = 0.3,
               marker_lift: float = 0.1, t_near: float = 0.2,
               t_far: float = 80.0) -> FastAPI:
    app = FastAPI(title="roadfield render service")
    # desk tool: the viewer is typically served from another local port
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"],
                       expose_headers=["X-Render-Ms", "X-Block-Id", "X-Seed"])
    trajectories = trajectories or {}
    records = records or []
    cameras = {}
    for r in records:
        cameras.setdefault(r.camera_id, (r.intrinsics, r.extrinsics))

    def resolve_key(raw):
        if field.config.embed_dim == 0:
            return None
        if raw is None:
            raise HTTPException(422, "appearance_key required (or 'average')")
        if isinstance(raw, str):
            if raw != "average":
                raise HTTPException(422, "string key must be 'average'")
            cam_ids = {k[1] for k in field.sequence_keys}
            if len(cam_ids) != 1:
                raise HTTPException(422, "'average' is ambiguous; pass [trip, camera]")
            return ("average", next(iter(cam_ids)))
        if len(raw) == 2:
            return (raw[0], raw[1])
        raise HTTPException(422, "appearance_key must be [trip, camera] or 'average'")

    def markers_for(trajectory_id: str | None):
        if trajectory_id is None:
            if len(trajectories) != 1:
                raise HTTPException(422, "trajectory_id required")
            trajectory_id = next(iter(trajectories))
        if trajectory_id not in trajectories:
            raise HTTPException(404, f"unknown trajectory {trajectory_id!r}")
        rows = trajectories[trajectory_id]
        traj = GuidanceTrajectory(rows[:, 1:3], rows[:, 0], trajectory_id)
        return trajectory_to_markers(traj, width=marker_width,
                                     alpha=marker_alpha, z=marker_lift)

    @app.get("/info")
    def info():
        cfg = dataclasses.asdict(field.config)
        cx, cy, cz = field.config.scene_center
        r = field.config.scene_radius
        return {
            "block_id": block_id,
            "seed": seed,
            "config": cfg,
            "sequences": [list(k) for k in field.sequence_keys],
            "cameras": sorted(cameras),
            "block_bounds": {
                "x": [cx - r, cx + r], "y": [cy - r, cy + r],
                "z": [cz - r, cz + r],
            },
        }

    @app.get("/trajectories")
    def list_trajectories():
        return {
            "block_id": block_id,
            "seed": seed,
            "trajectories": [
                {"id": tid, "points": rows.tolist()}
                for tid, rows in sorted(trajectories.items())
            ],
        }

    @app.post("/render")
    def render(req: RenderRequest):
        start = time.perf_counter()
        if req.camera is not None:
            if req.camera not in cameras:
                raise HTTPException(404, f"unknown camera {req.camera!r}")
            base_intr, extr = cameras[req.camera]
            veh = Pose.from_yaw_pitch_roll(
                req.pose.position, yaw=np.deg2rad(req.pose.yaw),
                pitch=np.deg2rad(req.pose.pitch), roll=np.deg2rad(req.pose.roll))
            cam = camera_pose(veh, extr)
            sx = req.width / base_intr.width
            sy = req.height / base_intr.height
            intr = CameraIntrinsics(
                fx=base_intr.fx * sx, fy=base_intr.fy * sy,
                cx=base_intr.cx * sx, cy=base_intr.cy * sy,
                width=req.width, height=req.height)
        else:
            cam = free_camera_pose(req.pose)
            ispec = req.intrinsics
            if ispec is None:
                f = 0.9 * req.width
                ispec = IntrinsicsSpec(fx=f, fy=f, cx=(req.width - 1) / 2,
                                       cy=(req.height - 1) / 2)
            intr = CameraIntrinsics(fx=ispec.fx, fy=ispec.fy, cx=ispec.cx,
                                    cy=ispec.cy, width=req.width,
                                    height=req.height)
        key = resolve_key(req.appearance_key)
        try:
            if req.markers_on:
                rgb = render_navigation_view(
                    field, cam, intr, markers_for(req.trajectory_id), key=key,
                    n_samples=req.n_samples, t_near=t_near, t_far=t_far,
                    rng=req.seed, alpha=marker_alpha)
            else:
                rgb = render_image(field, cam, intr, key=key,
                                   n_samples=req.n_samples, t_near=t_near,
                                   t_far=t_far, rng=req.seed).color
        except UnknownSequence as exc:
            raise HTTPException(404, str(exc)) from exc
        ms = (time.perf_counter() - start) * 1000.0
        return Response(
            content=encode_png(rgb),
            media_type="image/png",
            headers={
                "X-Render-Ms": f"{ms:.1f}",
                "X-Block-Id": block_id,
                "X-Seed": str(req.seed),
            },
        )

    return app
