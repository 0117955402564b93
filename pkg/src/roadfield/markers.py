"""Guidance markers: trajectory-derived ground quads composited into views.

A driven trajectory becomes a strip of planar quads (one per segment,
mitered at joins). At render time each pixel ray is tested against the
strip; if the nearest marker intersection is closer than the rendered
scene depth, the pixel is alpha-blended toward the marker color,
otherwise the scene occludes the marker and the pixel keeps its color.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraIntrinsics, Pose, Ray, pixel_rays
from .render import RenderOutput, render_image

DEFAULT_MARKER_COLOR = (1.0, 1.0, 0.0)  # guide-line yellow
DEFAULT_MARKER_ALPHA = 0.3  # scene share; the marker contributes 1 - alpha
DEFAULT_MARKER_WIDTH = 1.0  # meters
MITER_LIMIT_FACTOR = 4.0  # join spike cap, falls back to bevel


class DegenerateSegment(ValueError):
    pass


@dataclass(frozen=True)
class GuidanceTrajectory:
    """Ordered ground-plane waypoints of one source drive."""

    points: np.ndarray  # (T, 2) world xy, meters
    timestamps: np.ndarray  # (T,) seconds
    trip_id: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        ts = np.asarray(self.timestamps, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError("trajectory needs >= 2 xy points")
        if ts.shape != (pts.shape[0],):
            raise ValueError("one timestamp per point required")
        if np.any(np.linalg.norm(np.diff(pts, axis=0), axis=1) < 1e-9):
            raise DegenerateSegment("consecutive trajectory points coincide")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "timestamps", ts)

    def to_text(self) -> str:
        rows = [f"{t:.6g} {x:.6g} {y:.6g}"
                for t, (x, y) in zip(self.timestamps, self.points)]
        return "\n".join(rows) + "\n"

    @staticmethod
    def from_text(text: str, trip_id: str = "") -> "GuidanceTrajectory":
        ts, xy = [], []
        for line in text.strip().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            t, x, y = (float(v) for v in line.split())
            ts.append(t)
            xy.append((x, y))
        return GuidanceTrajectory(np.array(xy), np.array(ts), trip_id)


@dataclass(frozen=True)
class MarkerPolygon:
    corners: np.ndarray  # (4, 3), planar quad at a constant z
    color: tuple[float, float, float] = DEFAULT_MARKER_COLOR
    alpha: float = DEFAULT_MARKER_ALPHA

    def __post_init__(self):
        c = np.asarray(self.corners, dtype=np.float64)
        if c.shape != (4, 3):
            raise ValueError("quad needs exactly 4 corners")
        if np.ptp(c[:, 2]) > 1e-9:
            raise ValueError("quad must be planar in z")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must lie in (0, 1)")
        object.__setattr__(self, "corners", c)

    @property
    def z(self) -> float:
        return float(self.corners[0, 2])


def trajectory_to_markers(traj: GuidanceTrajectory,
                          width: float = DEFAULT_MARKER_WIDTH,
                          color=DEFAULT_MARKER_COLOR,
                          alpha: float = DEFAULT_MARKER_ALPHA,
                          z: float = 0.0) -> list[MarkerPolygon]:
    """One quad per trajectory segment, offset ±width/2, mitered at joins.

    Joins whose miter spike would exceed MITER_LIMIT_FACTOR * width fall
    back to a bevel (per-segment corners, no shared edge).
    """
    if width <= 0:
        raise ValueError("width must be positive")
    pts = traj.points
    n_seg = pts.shape[0] - 1
    seg_dir = np.diff(pts, axis=0)
    lengths = np.linalg.norm(seg_dir, axis=1)
    if np.any(lengths < 1e-9):
        raise DegenerateSegment("zero-length trajectory segment")
    seg_dir = seg_dir / lengths[:, None]
    normals = np.stack([-seg_dir[:, 1], seg_dir[:, 0]], axis=1)  # left of travel
    half = width / 2

    # per-vertex left/right offset points, per adjacent segment
    starts_l = pts[:-1] + half * normals
    starts_r = pts[:-1] - half * normals
    ends_l = pts[1:] + half * normals
    ends_r = pts[1:] - half * normals
    for j in range(1, n_seg):  # interior joins
        m = normals[j - 1] + normals[j]
        norm_m = np.linalg.norm(m)
        if norm_m < 1e-9:  # U-turn: no sensible miter
            continue
        m = m / norm_m
        cos_half = float(np.dot(m, normals[j]))
        if cos_half < 1e-9:
            continue
        miter_len = half / cos_half
        if miter_len > MITER_LIMIT_FACTOR * width:
            continue  # bevel: keep per-segment corners
        ends_l[j - 1] = starts_l[j] = pts[j] + miter_len * m
        ends_r[j - 1] = starts_r[j] = pts[j] - miter_len * m

    markers = []
    for i in range(n_seg):
        quad = np.array([
            [starts_l[i][0], starts_l[i][1], z],
            [ends_l[i][0], ends_l[i][1], z],
            [ends_r[i][0], ends_r[i][1], z],
            [starts_r[i][0], starts_r[i][1], z],
        ])
        markers.append(MarkerPolygon(quad, tuple(color), alpha))
    return markers


def _quad_hit_depths(origins: np.ndarray, dirs: np.ndarray,
                     quad: MarkerPolygon) -> np.ndarray:
    """Per-ray intersection distance with one quad (inf where missed)."""
    dz = dirs[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (quad.z - origins[:, 2]) / dz
    ok = np.isfinite(t) & (t > 0)
    t_safe = np.where(ok, t, 0.0)
    px = origins[:, 0] + t_safe * dirs[:, 0]
    py = origins[:, 1] + t_safe * dirs[:, 1]
    inside = np.zeros(origins.shape[0], dtype=bool)
    corners = quad.corners[:, :2]
    for e in range(4):  # even-odd crossing test
        ax, ay = corners[e]
        bx, by = corners[(e + 1) % 4]
        crosses = (ay > py) != (by > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = (bx - ax) * (py - ay) / (by - ay) + ax
        inside ^= crosses & (px < x_at)
    return np.where(ok & inside, t, np.inf)


def marker_depth_for_rays(origins: np.ndarray, dirs: np.ndarray,
                          markers: list[MarkerPolygon]) -> np.ndarray:
    """Nearest marker intersection per ray; inf where no marker is hit."""
    origins = np.atleast_2d(origins)
    dirs = np.atleast_2d(dirs)
    if origins.shape[0] == 1 and dirs.shape[0] > 1:
        origins = np.broadcast_to(origins, dirs.shape)
    best = np.full(dirs.shape[0], np.inf)
    for quad in markers:
        best = np.minimum(best, _quad_hit_depths(origins, dirs, quad))
    return best


def ray_marker_depth(ray: Ray, markers: list[MarkerPolygon]) -> float | None:
    """Min positive intersection distance of one ray with the strip."""
    d = marker_depth_for_rays(ray.origin[None, :], ray.direction[None, :], markers)[0]
    return None if np.isinf(d) else float(d)


def compose_navigation_pixel(scene_color: np.ndarray, scene_depth: float,
                             marker_depth: float | None,
                             marker_color=DEFAULT_MARKER_COLOR,
                             alpha: float = DEFAULT_MARKER_ALPHA) -> np.ndarray:
    """Blend in the marker when it is strictly in front of the scene.

    Visible marker: alpha * scene + (1 - alpha) * marker color. An
    occluded or absent marker leaves the scene color untouched; alpha = 1
    degenerates to the plain render.
    """
    scene_color = np.asarray(scene_color, dtype=np.float64)
    if marker_depth is None or not marker_depth < scene_depth:
        return scene_color
    return alpha * scene_color + (1.0 - alpha) * np.asarray(marker_color)


def compose_navigation_image(scene: RenderOutput, marker_depth: np.ndarray,
                             marker_color=DEFAULT_MARKER_COLOR,
                             alpha: float = DEFAULT_MARKER_ALPHA) -> np.ndarray:
    visible = marker_depth < scene.depth
    blended = alpha * scene.color + (1.0 - alpha) * np.asarray(marker_color)
    return np.where(visible[..., None], blended, scene.color)


def render_navigation_view(field, cam_pose: Pose, intrinsics: CameraIntrinsics,
                           markers: list[MarkerPolygon], key=None,
                           n_samples: int = 96, t_near: float = 0.05,
                           t_far: float = 120.0,
                           rng: np.random.Generator | int | None = None,
                           marker_color=DEFAULT_MARKER_COLOR,
                           alpha: float = DEFAULT_MARKER_ALPHA) -> np.ndarray:
    """Full-frame guided view: render, then depth-tested marker blending."""
    scene = render_image(field, cam_pose, intrinsics, key=key,
                         n_samples=n_samples, t_near=t_near, t_far=t_far,
                         rng=rng)
    if not markers:
        return scene.color
    origin, dirs = pixel_rays(cam_pose, intrinsics, t_near, t_far)
    md = marker_depth_for_rays(origin[None, :], dirs.reshape(-1, 3), markers)
    return compose_navigation_image(scene, md.reshape(scene.depth.shape),
                                    marker_color, alpha)
