"""Camera models, rigid transforms and pixel/ray projection math.

Conventions used throughout the package:
  - world frame is z-up; the local road surface is the plane z = 0,
  - vehicle frames have their origin on the ground under the rear axle,
  - pixel coordinates (u, v) address pixel centers, u along width,
  - colors are linear floats in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ORTHONORMAL_TOL = 1e-9


class BehindCamera(ValueError):
    """Point has non-positive depth in the camera frame."""


def _as_rotation(m) -> np.ndarray:
    r = np.asarray(m, dtype=float)
    if r.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {r.shape}")
    if not np.allclose(r.T @ r, np.eye(3), atol=1e-8):
        raise ValueError("rotation is not orthonormal")
    if np.linalg.det(r) < 0:
        raise ValueError("rotation has negative determinant")
    return r


def _as_vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(3)
    if not np.all(np.isfinite(a)):
        raise ValueError("vector has non-finite entries")
    return a


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class ExtrinsicCalibration:
    """Vehicle frame -> camera frame rigid transform."""

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,) meters

    def __post_init__(self):
        object.__setattr__(self, "rotation", _as_rotation(self.rotation))
        object.__setattr__(self, "translation", _as_vec3(self.translation))

    def apply(self, p_vehicle: np.ndarray) -> np.ndarray:
        return p_vehicle @ self.rotation.T + self.translation

    def camera_center(self) -> np.ndarray:
        """Camera center expressed in the vehicle frame."""
        return -self.rotation.T @ self.translation


@dataclass(frozen=True)
class Pose:
    """Rigid transform x_target = R @ x_source + t.

    `frame` tags what the transform maps, e.g. "world->vehicle" or
    "world->camera"; composition checks are left to the caller.
    """

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,) meters
    frame: str = "world->vehicle"

    def __post_init__(self):
        object.__setattr__(self, "rotation", _as_rotation(self.rotation))
        object.__setattr__(self, "translation", _as_vec3(self.translation))

    def apply(self, p: np.ndarray) -> np.ndarray:
        return np.asarray(p, dtype=float) @ self.rotation.T + self.translation

    def compose(self, inner: "Pose", frame: str | None = None) -> "Pose":
        """self ∘ inner: apply `inner` first, then `self`."""
        return Pose(
            self.rotation @ inner.rotation,
            self.rotation @ inner.translation + self.translation,
            frame if frame is not None else inner.frame,
        )

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        a, b = self.frame.split("->") if "->" in self.frame else (self.frame, self.frame)
        return Pose(rt, -rt @ self.translation, f"{b}->{a}")

    @property
    def position(self) -> np.ndarray:
        """Origin of the target frame expressed in source-frame coordinates."""
        return -self.rotation.T @ self.translation

    @staticmethod
    def identity(frame: str = "world->vehicle") -> "Pose":
        return Pose(np.eye(3), np.zeros(3), frame)

    @staticmethod
    def from_yaw_pitch_roll(position, yaw=0.0, pitch=0.0, roll=0.0,
                            frame: str = "world->vehicle") -> "Pose":
        """World->local pose of a body at `position` with z-up Euler angles (radians).

        yaw about world z, then pitch about local y, then roll about local x.
        """
        cy, sy = np.cos(yaw), np.sin(yaw)
        cp, sp = np.cos(pitch), np.sin(pitch)
        cr, sr = np.cos(roll), np.sin(roll)
        rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1.0]])
        ry = np.array([[cp, 0, sp], [0, 1.0, 0], [-sp, 0, cp]])
        rx = np.array([[1.0, 0, 0], [0, cr, -sr], [0, sr, cr]])
        r_local_to_world = rz @ ry @ rx
        r = r_local_to_world.T  # world -> local
        return Pose(r, -r @ _as_vec3(position), frame)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray  # (3,) meters
    direction: np.ndarray  # (3,) unit norm
    t_near: float
    t_far: float

    def __post_init__(self):
        object.__setattr__(self, "origin", _as_vec3(self.origin))
        object.__setattr__(self, "direction", _as_vec3(self.direction))
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit norm")
        if not (0 <= self.t_near < self.t_far):
            raise ValueError("require 0 <= t_near < t_far")

    def at(self, t) -> np.ndarray:
        return self.origin + np.multiply.outer(np.asarray(t, dtype=float), self.direction)


def rotation_angle(ra: np.ndarray, rb: np.ndarray) -> float:
    """Geodesic angle (radians) between two rotation matrices."""
    c = (np.trace(ra.T @ rb) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def project(intr: CameraIntrinsics, extr: ExtrinsicCalibration,
            p_vehicle) -> tuple[float, float, float]:
    """Project a vehicle-frame point to (u, v) plus the homogeneous scale.

    Implements the pinhole projection of K [R|t] applied to the point; the
    returned scale is the factor that normalizes the homogeneous result,
    i.e. 1 / camera-frame depth.

    Raises BehindCamera when the camera-frame z is <= 1e-9.
    """
    p_cam = extr.rotation @ _as_vec3(p_vehicle) + extr.translation
    z = p_cam[2]
    if z <= 1e-9:
        raise BehindCamera(f"camera-frame depth {z:.3g} <= 1e-9")
    u = intr.fx * p_cam[0] / z + intr.cx
    v = intr.fy * p_cam[1] / z + intr.cy
    return float(u), float(v), float(1.0 / z)


def project_world(intr: CameraIntrinsics, cam_pose: Pose,
                  p_world) -> tuple[float, float, float]:
    """Same as `project` but from world coordinates through a world->camera pose."""
    p_cam = cam_pose.apply(_as_vec3(p_world))
    z = p_cam[2]
    if z <= 1e-9:
        raise BehindCamera(f"camera-frame depth {z:.3g} <= 1e-9")
    return (
        float(intr.fx * p_cam[0] / z + intr.cx),
        float(intr.fy * p_cam[1] / z + intr.cy),
        float(1.0 / z),
    )


def pixel_to_ray(cam_pose: Pose, intr: CameraIntrinsics, u: float, v: float,
                 t_near: float = 0.05, t_far: float = 200.0) -> Ray:
    """World-space viewing ray through pixel center (u, v).

    `cam_pose` is the world->camera transform. Points o + t*d (t > 0)
    project back onto (u, v).
    """
    d_cam = np.array([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0])
    d_world = cam_pose.rotation.T @ d_cam
    d_world /= np.linalg.norm(d_world)
    return Ray(cam_pose.position, d_world, t_near, t_far)


def camera_pose(vehicle_pose: Pose, extr: ExtrinsicCalibration) -> Pose:
    """World->camera pose from a world->vehicle pose and mount calibration."""
    return Pose(
        extr.rotation @ vehicle_pose.rotation,
        extr.rotation @ vehicle_pose.translation + extr.translation,
        "world->camera",
    )


def camera_rig_extrinsics(mount_position, yaw: float = 0.0,
                          pitch: float = 0.0) -> ExtrinsicCalibration:
    """Mount calibration for a camera fixed on the vehicle.

    The camera sits at `mount_position` (vehicle frame, meters) and looks
    along the vehicle +x axis rotated by `yaw` about z, then pitched
    `pitch` radians below the horizon. Image x points right, image y
    points down.
    """
    f = np.array([
        np.cos(pitch) * np.cos(yaw),
        np.cos(pitch) * np.sin(yaw),
        -np.sin(pitch),
    ])
    r = np.cross(f, np.array([0.0, 0.0, 1.0]))
    nr = np.linalg.norm(r)
    if nr < 1e-9:  # looking straight up/down
        r = np.array([np.sin(yaw), -np.cos(yaw), 0.0])
    else:
        r = r / nr
    down = np.cross(f, r)
    rot = np.stack([r, down, f])  # rows = camera axes in vehicle coords
    return ExtrinsicCalibration(rot, -rot @ _as_vec3(mount_position))


def pixel_rays(cam_pose: Pose, intr: CameraIntrinsics,
               t_near: float = 0.05, t_far: float = 200.0
               ) -> tuple[np.ndarray, np.ndarray]:
    """Ray origins (3,) and unit directions (H, W, 3) for every pixel center."""
    u = np.arange(intr.width, dtype=float)
    v = np.arange(intr.height, dtype=float)
    uu, vv = np.meshgrid(u, v)
    d_cam = np.stack(
        [(uu - intr.cx) / intr.fx, (vv - intr.cy) / intr.fy, np.ones_like(uu)], axis=-1
    )
    d_world = d_cam @ cam_pose.rotation  # == (R.T @ d_cam.T).T
    d_world /= np.linalg.norm(d_world, axis=-1, keepdims=True)
    return cam_pose.position, d_world
