"""Procedural desk-scale dataset with exact ray-traced ground truth.

An analytic scene is a checkered ground plane plus axis-aligned boxes;
every ray has a closed-form color, depth and semantic label, which makes
the generator double as the test oracle for rendering, depth supervision
and navigation compositing. Trips drive through the scene on straight
paths at varying headings, each with its own appearance tint and its own
parked movers, mimicking captures by different vehicles at different
times.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import DEFAULT_LABELS, ImageRecord, LabelTable, SemanticMask
from .geometry import (
    CameraIntrinsics,
    ExtrinsicCalibration,
    Pose,
    camera_pose,
    camera_rig_extrinsics,
    pixel_rays,
)

_FACE_SHADE = np.array([0.85, 0.7, 1.0])  # entry-axis shading: x, y, z(top)


@dataclass(frozen=True)
class BoxSpec:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    color: tuple[float, float, float]
    label: str = "building"
    trips: tuple[str, ...] | None = None  # None: present in every trip

    def present_in(self, trip_id: str | None) -> bool:
        return self.trips is None or trip_id in self.trips


@dataclass(frozen=True)
class SceneSpec:
    checker_size: float = 4.0
    ground_color_a: tuple[float, float, float] = (0.45, 0.42, 0.40)
    ground_color_b: tuple[float, float, float] = (0.22, 0.22, 0.25)
    sky_color: tuple[float, float, float] = (0.55, 0.70, 0.90)
    boxes: tuple[BoxSpec, ...] = ()
    extent: float = 40.0  # informative bound of the layout, meters


class AnalyticScene:
    """Exact ray intersection oracle over a SceneSpec."""

    def __init__(self, spec: SceneSpec, labels: LabelTable | None = None):
        self.spec = spec
        self.labels = labels or LabelTable()

    def ground_color(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        c = self.spec.checker_size
        parity = (np.floor(x / c) + np.floor(y / c)) % 2
        a = np.asarray(self.spec.ground_color_a)
        b = np.asarray(self.spec.ground_color_b)
        return np.where(parity[..., None] == 0, a, b)

    def trace(self, origins: np.ndarray, directions: np.ndarray,
              trip_id: str | None = None, include_dynamic: bool = True,
              t_min: float = 1e-6):
        """Nearest-hit colors, depths and labels for a batch of rays.

        Sky rays get infinite depth. `include_dynamic=False` traces the
        static world only (the ground truth underneath movers).
        """
        o = np.atleast_2d(np.asarray(origins, dtype=np.float64))
        d = np.atleast_2d(np.asarray(directions, dtype=np.float64))
        if o.shape[0] == 1 and d.shape[0] > 1:
            o = np.broadcast_to(o, d.shape)
        n = d.shape[0]
        best_t = np.full(n, np.inf)
        color = np.tile(np.asarray(self.spec.sky_color), (n, 1))
        label = np.full(n, self.labels.id_of("sky"), dtype=np.int32)

        # ground plane z = 0
        dz = d[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            tg = -o[:, 2] / dz
        hit = np.isfinite(tg) & (tg > t_min)
        tg_safe = np.where(hit, tg, 0.0)
        best_t = np.where(hit, tg, best_t)
        gx = o[:, 0] + tg_safe * d[:, 0]
        gy = o[:, 1] + tg_safe * d[:, 1]
        gcol = self.ground_color(gx, gy)
        color = np.where(hit[:, None], gcol, color)
        label = np.where(hit, self.labels.id_of("road"), label)

        for box in self.spec.boxes:
            if not box.present_in(trip_id):
                continue
            if not include_dynamic and self.labels.is_dynamic(
                    self.labels.id_of(box.label)):
                continue
            t_entry, axis = self._box_entry(o, d, box, t_min)
            closer = np.isfinite(t_entry) & (t_entry < best_t)
            best_t = np.where(closer, t_entry, best_t)
            face_color = np.asarray(box.color)[None, :] * _FACE_SHADE[axis][:, None]
            color = np.where(closer[:, None], face_color, color)
            label = np.where(closer, self.labels.id_of(box.label), label)
        return color, best_t, label

    @staticmethod
    def _box_entry(o, d, box: BoxSpec, t_min: float):
        """Slab-test entry distance and entry-face axis per ray."""
        lo = np.asarray(box.lo)
        hi = np.asarray(box.hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo[None, :] - o) / d
            t2 = (hi[None, :] - o) / d
        t_lo = np.minimum(t1, t2)
        t_hi = np.maximum(t1, t2)
        # rays parallel to a slab: inside -> -inf/+inf, outside -> miss
        inside = (o >= lo[None, :]) & (o <= hi[None, :])
        parallel = d == 0.0
        t_lo = np.where(parallel, np.where(inside, -np.inf, np.inf), t_lo)
        t_hi = np.where(parallel, np.where(inside, np.inf, -np.inf), t_hi)
        entry_axis = np.argmax(t_lo, axis=1)
        t_entry = t_lo[np.arange(o.shape[0]), entry_axis]
        t_exit = t_hi.min(axis=1)
        miss = (t_entry > t_exit) | (t_exit < t_min)
        t_entry = np.where(miss | (t_entry <= t_min), np.inf, t_entry)
        return t_entry, entry_axis


def make_scene(spec: SceneSpec | None = None,
               labels: LabelTable | None = None) -> AnalyticScene:
    return AnalyticScene(spec or SceneSpec(), labels)


def demo_scene(n_trips: int = 4, movers_per_trip: int = 1,
               seed: int = 0, extent: float = 40.0) -> AnalyticScene:
    """Layout used across tests: corner buildings plus per-trip parked movers.

    Movers sit offset from their own trip's centerline (trip k heads along
    angle pi*k/n_trips through the origin), so cameras never drive through
    the boxes they are supposed to observe.
    """
    rng = np.random.default_rng(seed)
    boxes = [
        BoxSpec((-17, -17, 0), (-11, -12, 6), (0.75, 0.45, 0.30)),
        BoxSpec((11, 12, 0), (18, 17, 8), (0.35, 0.55, 0.75)),
        BoxSpec((12, -16, 0), (16, -12, 4), (0.55, 0.65, 0.35)),
    ]
    for k in range(n_trips):
        heading = np.pi * k / max(n_trips, 1)
        direction = np.array([np.cos(heading), np.sin(heading)])
        normal = np.array([-np.sin(heading), np.cos(heading)])
        for m in range(movers_per_trip):
            along = float(rng.uniform(-8, 8))
            off = float(rng.uniform(4.5, 8.0)) * (-1 if (k + m) % 2 else 1)
            cx, cy = along * direction + off * normal
            boxes.append(BoxSpec(
                (cx - 2.2, cy - 1.0, 0.0), (cx + 2.2, cy + 1.0, 1.6),
                (0.8, 0.78, 0.75), label="vehicle", trips=(f"trip{k:02d}",),
            ))
    return make_scene(SceneSpec(boxes=tuple(boxes), extent=extent))


@dataclass(frozen=True)
class RigSpec:
    width: int = 80
    height: int = 60
    focal: float = 70.0
    camera_id: str = "front"
    mount: tuple[float, float, float] = (0.5, 0.0, 1.6)
    pitch_deg: float = 12.0

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(fx=self.focal, fy=self.focal,
                                cx=(self.width - 1) / 2, cy=(self.height - 1) / 2,
                                width=self.width, height=self.height)

    def extrinsics(self) -> ExtrinsicCalibration:
        return camera_rig_extrinsics(self.mount, pitch=np.deg2rad(self.pitch_deg))


def render_view(scene: AnalyticScene, cam: Pose, intr: CameraIntrinsics,
                trip_id: str | None = None, include_dynamic: bool = True):
    """Oracle full-frame render: rgb (H,W,3), depth z-buffer (H,W), labels."""
    origin, dirs = pixel_rays(cam, intr)
    flat = dirs.reshape(-1, 3)
    color, depth, label = scene.trace(origin[None, :], flat, trip_id,
                                      include_dynamic)
    h, w = intr.height, intr.width
    return (color.reshape(h, w, 3), depth.reshape(h, w),
            label.reshape(h, w).astype(np.int32))


def trip_tints(n_trips: int, strength: float, rng: np.random.Generator
               ) -> np.ndarray:
    """Multiplicative per-trip RGB tints in [1-strength, 1+strength]."""
    if strength == 0.0:
        return np.ones((n_trips, 3))
    return rng.uniform(1.0 - strength, 1.0 + strength, size=(n_trips, 3))


def make_trips(scene: AnalyticScene, n_trips: int, images_per_trip: int,
               tint_strength: float = 0.2, seed: int = 0,
               rig: RigSpec | None = None, span: float = 0.8,
               prior_noise_m: float = 1.5, prior_noise_deg: float = 1.0,
               start_time: float = 0.0, heading_span: float = np.pi):
    """Synthesize drive-through captures with analytic masks and poses.

    Returns (records, trajectories); trajectories maps trip id to an
    (T, 3) array of (timestamp, x, y) waypoints of the drive. Trips cross
    the scene center at headings spread over [0, heading_span); zero span
    makes parallel same-road passes. Refined poses are exact; prior poses
    carry bounded noise. Each trip applies one multiplicative color tint,
    standing in for different vehicles and lighting.
    """
    if n_trips < 0:
        raise ValueError("n_trips must be >= 0")
    rig = rig or RigSpec()
    rng = np.random.default_rng(seed)
    tints = trip_tints(n_trips, tint_strength, rng)
    intr = rig.intrinsics()
    extr = rig.extrinsics()
    half = scene.spec.extent * span / 2
    records: list[ImageRecord] = []
    trajectories: dict[str, np.ndarray] = {}
    for k in range(n_trips):
        trip_id = f"trip{k:02d}"
        heading = heading_span * k / max(n_trips, 1)
        lateral = float(rng.uniform(-2.0, 2.0))
        direction = np.array([np.cos(heading), np.sin(heading)])
        normal = np.array([-np.sin(heading), np.cos(heading)])
        t0 = start_time + 1000.0 * k
        waypoints = []
        for i in range(images_per_trip):
            s = -half + (2 * half) * (i / max(images_per_trip - 1, 1))
            xy = s * direction + lateral * normal
            stamp = t0 + 0.5 * i
            waypoints.append((stamp, xy[0], xy[1]))
            true_pose = Pose.from_yaw_pitch_roll((xy[0], xy[1], 0.0), yaw=heading)
            # meter-level prior: bounded offset and yaw wobble
            ang = rng.uniform(0, 2 * np.pi)
            mag = rng.uniform(0, prior_noise_m)
            dyaw = rng.uniform(-1, 1) * np.deg2rad(prior_noise_deg)
            prior = Pose.from_yaw_pitch_roll(
                (xy[0] + mag * np.cos(ang), xy[1] + mag * np.sin(ang), 0.0),
                yaw=heading + dyaw)
            cam = camera_pose(true_pose, extr)
            rgb, _, label = render_view(scene, cam, intr, trip_id)
            pixels = np.clip(rgb * tints[k], 0.0, 1.0)
            records.append(ImageRecord(
                image_id=f"{trip_id}_f{i:03d}",
                trip_id=trip_id,
                camera_id=rig.camera_id,
                timestamp=stamp,
                pixels=pixels,
                mask=SemanticMask(label, scene.labels),
                prior_pose=prior,
                refined_pose=true_pose,
                intrinsics=intr,
                extrinsics=extr,
            ))
        trajectories[trip_id] = np.array(waypoints)
    return records, trajectories
