"""Ground-surface depth from inverse projection onto the z = 0 plane.

The vehicle frame has its origin on the road, so every road pixel's depth
follows analytically from the camera calibration: cast the pixel ray in
the vehicle frame and intersect the z = 0 plane. Dynamic-object pixels can
be filled the same way (the plane continues underneath a parked car),
which is what supervises the field behind occluders.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import ImageRecord, SemanticMask
from .geometry import CameraIntrinsics, ExtrinsicCalibration

SOURCE_INVALID = 0
SOURCE_OBSERVED = 1
SOURCE_FILLED = 2

MIN_RAY_PARAM = 1e-6
DEFAULT_MAX_DEPTH = 200.0  # meters; guards near-horizon blow-ups


@dataclass(frozen=True)
class GroundDepthMap:
    """Per-pixel ground depth with validity and provenance.

    depth is camera-center-to-ground-point distance in meters (nan where
    invalid); source distinguishes directly observed road pixels from
    occlusion-filled ones. plane_depth caches the analytic plane
    intersection for every pixel regardless of semantics, so filling can
    run without re-deriving calibration.
    """

    depth: np.ndarray  # (H, W) float, nan when invalid
    source: np.ndarray  # (H, W) uint8
    plane_depth: np.ndarray  # (H, W) float, nan when ray misses the plane

    def __post_init__(self):
        valid = self.source > 0
        d = self.depth[valid]
        if d.size and (not np.all(np.isfinite(d)) or np.any(d <= 0)):
            raise ValueError("valid depths must be positive and finite")

    @property
    def valid(self) -> np.ndarray:
        return self.source > 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape


def plane_intersection_grid(intr: CameraIntrinsics, extr: ExtrinsicCalibration,
                            max_depth: float = DEFAULT_MAX_DEPTH) -> np.ndarray:
    """Analytic z=0 plane depth for every pixel center; nan where the ray
    is parallel to or points away from the plane, or beyond max_depth."""
    u = np.arange(intr.width, dtype=float)
    v = np.arange(intr.height, dtype=float)
    uu, vv = np.meshgrid(u, v)
    d_cam = np.stack(
        [(uu - intr.cx) / intr.fx, (vv - intr.cy) / intr.fy, np.ones_like(uu)], axis=-1
    )
    d_veh = d_cam @ extr.rotation  # R^T applied to each direction
    d_veh /= np.linalg.norm(d_veh, axis=-1, keepdims=True)
    center = extr.camera_center()
    dz = d_veh[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -center[2] / dz
    bad = ~np.isfinite(t) | (t <= MIN_RAY_PARAM) | (t > max_depth)
    t = np.where(bad, np.nan, t)
    return t


def inverse_project_ground(intr: CameraIntrinsics, extr: ExtrinsicCalibration,
                           u: float, v: float,
                           max_depth: float = DEFAULT_MAX_DEPTH
                           ) -> tuple[float, np.ndarray] | None:
    """Depth and vehicle-frame ground point for one pixel, or None.

    None signals a sky/horizon pixel whose ray never reaches the plane —
    an expected outcome, not an error.
    """
    d_cam = np.array([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0])
    d_veh = extr.rotation.T @ d_cam
    d_veh /= np.linalg.norm(d_veh)
    center = extr.camera_center()
    if abs(d_veh[2]) < 1e-15:
        return None
    t = -center[2] / d_veh[2]
    if t <= MIN_RAY_PARAM or t > max_depth:
        return None
    point = center + t * d_veh
    point[2] = 0.0
    return float(t), point


def build_ground_depth_map(image: ImageRecord,
                           max_depth: float = DEFAULT_MAX_DEPTH) -> GroundDepthMap:
    """Depth for every road-surface pixel whose ray reaches the plane."""
    plane = plane_intersection_grid(image.intrinsics, image.extrinsics, max_depth)
    ground = image.mask.ground_pixels()
    observed = ground & np.isfinite(plane)
    depth = np.where(observed, plane, np.nan)
    source = np.where(observed, SOURCE_OBSERVED, SOURCE_INVALID).astype(np.uint8)
    return GroundDepthMap(depth=depth, source=source, plane_depth=plane)


def complete_occlusions(depth_map: GroundDepthMap,
                        mask: SemanticMask) -> GroundDepthMap:
    """Fill dynamic-object pixels with the analytic plane depth.

    The flat-plane assumption makes the fill exact: the road continues
    underneath a mover, so its depth is the plane intersection of the
    same pixel ray. Observed pixels are never altered.
    """
    if mask.shape != depth_map.shape:
        raise ValueError("mask dimensions differ from depth map")
    fillable = (mask.dynamic_pixels()
                & np.isfinite(depth_map.plane_depth)
                & (depth_map.source == SOURCE_INVALID))
    depth = np.where(fillable, depth_map.plane_depth, depth_map.depth)
    source = np.where(fillable, SOURCE_FILLED, depth_map.source).astype(np.uint8)
    return GroundDepthMap(depth=depth, source=source,
                          plane_depth=depth_map.plane_depth)


def save_ground_depth(depth_map: GroundDepthMap, base_path) -> None:
    """float32 depth raster plus a validity/source sidecar."""
    base = str(base_path)
    np.save(base + ".depth.npy", depth_map.depth.astype(np.float32))
    np.save(base + ".source.npy", depth_map.source)


def load_ground_depth(base_path) -> GroundDepthMap:
    """Reload a serialized map. The all-pixel plane cache is not part of
    the interchange format; only valid pixels carry depth after a reload."""
    base = str(base_path)
    depth = np.load(base + ".depth.npy").astype(np.float64)
    source = np.load(base + ".source.npy")
    plane = np.where(np.isfinite(depth), depth, np.nan)
    return GroundDepthMap(depth=depth, source=source, plane_depth=plane)
