"""Dataset domain types: semantic masks, image records, label tables."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, ExtrinsicCalibration, Pose

# Default label vocabulary. Dynamic labels mark movers that are masked out of
# photometric supervision and SfM features.
DEFAULT_LABELS = {
    0: ("other", False),
    1: ("road", False),
    2: ("lane", False),
    3: ("crosswalk", False),
    4: ("stop_line", False),
    5: ("vehicle", True),
    6: ("pedestrian", True),
    7: ("bicycle", True),
    8: ("building", False),
    9: ("tree", False),
    10: ("sky", False),
}

GROUND_LABEL_NAMES = frozenset({"road", "lane", "crosswalk", "stop_line"})


@dataclass(frozen=True)
class LabelTable:
    """id -> (name, is_dynamic)."""

    entries: dict[int, tuple[str, bool]] = field(
        default_factory=lambda: dict(DEFAULT_LABELS)
    )

    def name(self, label_id: int) -> str:
        return self.entries[label_id][0]

    def is_dynamic(self, label_id: int) -> bool:
        return self.entries[label_id][1]

    def id_of(self, name: str) -> int:
        for lid, (n, _) in self.entries.items():
            if n == name:
                return lid
        raise KeyError(name)

    def dynamic_ids(self) -> frozenset[int]:
        return frozenset(lid for lid, (_, dyn) in self.entries.items() if dyn)

    def ground_ids(self) -> frozenset[int]:
        return frozenset(
            lid for lid, (n, _) in self.entries.items() if n in GROUND_LABEL_NAMES
        )


@dataclass(frozen=True)
class SemanticMask:
    labels: np.ndarray  # (H, W) integer label ids
    table: LabelTable = field(default_factory=LabelTable)

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2:
            raise ValueError("mask must be 2-D")
        object.__setattr__(self, "labels", lab.astype(np.int32))
        known = set(self.table.entries)
        present = set(np.unique(self.labels).tolist())
        if not present <= known:
            raise ValueError(f"mask contains unknown label ids {sorted(present - known)}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def dynamic_pixels(self) -> np.ndarray:
        """Boolean (H, W) map of dynamic-flagged pixels."""
        out = np.zeros(self.labels.shape, dtype=bool)
        for lid in self.table.dynamic_ids():
            out |= self.labels == lid
        return out

    def dynamic_fraction(self) -> float:
        return float(self.dynamic_pixels().mean())

    def ground_pixels(self) -> np.ndarray:
        out = np.zeros(self.labels.shape, dtype=bool)
        for lid in self.table.ground_ids():
            out |= self.labels == lid
        return out


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    trip_id: str
    camera_id: str
    timestamp: float  # seconds
    pixels: np.ndarray  # (H, W, 3) linear RGB in [0, 1]
    mask: SemanticMask
    prior_pose: Pose  # world->vehicle, meter-level
    intrinsics: CameraIntrinsics
    extrinsics: ExtrinsicCalibration
    refined_pose: Pose | None = None  # world->vehicle, centimeter-level

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError("pixels must be (H, W, 3)")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        if px.shape[:2] != self.mask.shape:
            raise ValueError("mask dimensions differ from image")
        if not np.isfinite(self.timestamp):
            raise ValueError("timestamp must be finite")
        object.__setattr__(self, "pixels", px)

    @property
    def sequence_key(self) -> tuple[str, str]:
        """All images of one (trip, camera) pair share an appearance style."""
        return (self.trip_id, self.camera_id)

    @property
    def best_pose(self) -> Pose:
        return self.refined_pose if self.refined_pose is not None else self.prior_pose

    @property
    def position(self) -> np.ndarray:
        """Vehicle position in world coordinates (refined when available)."""
        return self.best_pose.position

    def view_direction(self) -> np.ndarray:
        """Unit optical-axis direction of the camera in world coordinates."""
        from .geometry import camera_pose

        cam = camera_pose(self.best_pose, self.extrinsics)
        d = cam.rotation.T @ np.array([0.0, 0.0, 1.0])
        return d / np.linalg.norm(d)
