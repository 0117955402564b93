"""Quadrature volume rendering of color, depth and per-sample weights.

The compositing math is written against the dual-mode helpers in
``autodiff``, so one implementation serves both gradient-carrying
training batches and plain-array inference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .geometry import Ray, CameraIntrinsics, Pose, pixel_rays

DEPTH_EPS = 1e-6


@dataclass(frozen=True)
class RaySamples:
    """Quadrature nodes for a batch of rays: all arrays (n_rays, n_samples).

    `edges` holds the (n_rays, n_samples + 1) bin boundaries when the
    samples came from binned quadrature; consumers that need to locate a
    metric distance inside a bin (the depth loss) require it.
    """

    t: np.ndarray
    delta: np.ndarray
    edges: np.ndarray | None = None

    def __post_init__(self):
        if np.any(self.delta <= 0):
            raise ValueError("bin widths must be positive")
        if np.any(np.diff(self.t, axis=-1) <= 0):
            raise ValueError("sample distances must be strictly increasing")


@dataclass(frozen=True)
class RenderOutput:
    color: np.ndarray  # (..., 3) in [0, 1]
    depth: np.ndarray  # weight-expected distance, meters
    opacity: np.ndarray  # sum of quadrature weights
    weights: np.ndarray | None = None  # (..., n_samples); Tensor in train mode
    samples: RaySamples | None = None


def sample_bins(t_near, t_far, n_samples: int, n_rays: int = 1,
                stratified: bool = False,
                rng: np.random.Generator | int | None = None) -> RaySamples:
    """Uniform bins over [t_near, t_far]; midpoints, or jittered within bins.

    Deterministic given the rng seed. Bin widths sum exactly to the ray
    extent.
    """
    if n_samples < 2:
        raise ValueError("need at least 2 samples")
    t_near = np.broadcast_to(np.asarray(t_near, dtype=np.float64), (n_rays,))
    t_far = np.broadcast_to(np.asarray(t_far, dtype=np.float64), (n_rays,))
    length = (t_far - t_near)[:, None]
    unit_edges = np.linspace(0.0, 1.0, n_samples + 1)[None, :]
    edges = t_near[:, None] + unit_edges * length
    lo, hi = edges[:, :-1], edges[:, 1:]
    if stratified:
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        u = rng.random((n_rays, n_samples))
    else:
        u = 0.5
    t = lo + (hi - lo) * u
    return RaySamples(t=t, delta=hi - lo, edges=edges)


def sample_ray(ray: Ray, n_samples: int, stratified: bool = False,
               rng: np.random.Generator | int | None = None) -> RaySamples:
    return sample_bins(ray.t_near, ray.t_far, n_samples, n_rays=1,
                       stratified=stratified, rng=rng)


def composite(sigma, color, samples: RaySamples,
              keep_weights: bool = True) -> RenderOutput:
    """Alpha-composite quadrature samples along each ray.

    sigma: (R, S); color: (R, S, 3). Discrete weights are
    w_i = T_i * (1 - exp(-sigma_i * delta_i)) with
    T_i = exp(-sum_{j<i} sigma_j delta_j), the exact piecewise-constant
    form of the continuous transmittance-times-density weight. Depth is
    the weight expectation of distance, guarded against empty rays.
    """
    delta = samples.delta
    sdt = sigma * delta
    inclusive = ad.cumsum(sdt, axis=-1)
    exclusive = inclusive - sdt
    transmittance = ad.exp(-exclusive)
    alpha = 1.0 - ad.exp(-sdt)
    weights = transmittance * alpha
    r, s = delta.shape
    w3 = ad.reshape(weights, (r, s, 1))
    out_color = ad.sum_(w3 * color, axis=-2)
    opacity = ad.sum_(weights, axis=-1)

    w_np = ad.value(weights)
    op_np = ad.value(opacity)
    depth = (w_np * samples.t).sum(axis=-1) / np.maximum(op_np, DEPTH_EPS)
    return RenderOutput(
        color=out_color,
        depth=depth,
        opacity=opacity,
        weights=weights if keep_weights else None,
        samples=samples,
    )


def render_rays(field, origins: np.ndarray, directions: np.ndarray,
                t_near, t_far, key=None, n_samples: int = 96,
                stratified: bool = False,
                rng: np.random.Generator | int | None = None,
                train: bool = False) -> RenderOutput:
    """Sample, query the field, composite. origins/directions are (R, 3)."""
    origins = np.atleast_2d(origins)
    directions = np.atleast_2d(directions)
    n_rays = directions.shape[0]
    if origins.shape[0] == 1 and n_rays > 1:
        origins = np.broadcast_to(origins, directions.shape)
    samples = sample_bins(t_near, t_far, n_samples, n_rays=n_rays,
                          stratified=stratified, rng=rng)
    pts = origins[:, None, :] + samples.t[:, :, None] * directions[:, None, :]
    flat_pts = pts.reshape(-1, 3)
    flat_dirs = np.repeat(directions, n_samples, axis=0)
    if isinstance(key, np.ndarray):
        key = np.repeat(key, n_samples)
    sigma, color = field.query(flat_pts, flat_dirs, key=key, train=train)
    sigma = ad.reshape(sigma, (n_rays, n_samples))
    color = ad.reshape(color, (n_rays, n_samples, 3))
    return composite(sigma, color, samples)


def render_pixel(field, ray: Ray, key=None, n_samples: int = 96,
                 stratified: bool = False,
                 rng: np.random.Generator | int | None = None) -> RenderOutput:
    out = render_rays(field, ray.origin, ray.direction, ray.t_near, ray.t_far,
                      key=key, n_samples=n_samples, stratified=stratified, rng=rng)
    return RenderOutput(
        color=out.color[0], depth=out.depth[0], opacity=out.opacity[0],
        weights=out.weights[0] if out.weights is not None else None,
        samples=out.samples,
    )


def render_image(field, cam_pose: Pose, intrinsics: CameraIntrinsics,
                 key=None, n_samples: int = 96, t_near: float = 0.05,
                 t_far: float = 120.0, stratified: bool = False,
                 rng: np.random.Generator | int | None = None,
                 chunk: int = 16384) -> RenderOutput:
    """Full-frame render; returns (H, W, ...) arrays in one RenderOutput."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    origin, dirs = pixel_rays(cam_pose, intrinsics, t_near, t_far)
    h, w = dirs.shape[:2]
    flat = dirs.reshape(-1, 3)
    colors = np.empty((h * w, 3))
    depth = np.empty(h * w)
    opacity = np.empty(h * w)
    for start in range(0, flat.shape[0], chunk):
        sl = slice(start, min(start + chunk, flat.shape[0]))
        out = render_rays(field, origin[None, :], flat[sl], t_near, t_far,
                          key=key, n_samples=n_samples,
                          stratified=stratified, rng=rng)
        colors[sl] = ad.value(out.color)
        depth[sl] = out.depth
        opacity[sl] = ad.value(out.opacity)
    return RenderOutput(
        color=colors.reshape(h, w, 3),
        depth=depth.reshape(h, w),
        opacity=opacity.reshape(h, w),
    )
