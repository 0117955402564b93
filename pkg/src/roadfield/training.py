"""Loss assembly and the optimization loop.

Photometric supervision runs on rays through static pixels; depth
supervision runs on a separate slice of each batch drawn from rays with a
known ground-plane distance, pushing each such ray's weight distribution
toward a unit impulse at that distance. Occlusion-filled pixels only ever
join the depth slice, so toggling completion never changes photometric
supervision. RNG streams for the two slices are independent: disabling
the depth term reproduces a depth-free build bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dataset import ImageRecord
from .field import RadianceField
from .geometry import camera_pose, pixel_rays
from .ground import build_ground_depth_map, complete_occlusions
from .metrics import depth_rmse, psnr
from .render import RaySamples, RenderOutput, render_rays


class Diverged(RuntimeError):
    """Loss became non-finite during training."""


class DepthOutOfRange(ValueError):
    """Depth target outside the sampled ray extent."""


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 600
    batch_rays: int = 512
    n_samples: int = 96
    t_near: float = 0.2
    t_far: float = 80.0
    lr_grids: float = 1e-2
    lr_heads: float = 5e-3
    lr_embeddings: float = 5e-3
    lambda_depth: float = 0.05
    depth_ray_fraction: float = 0.25  # share of each batch carrying depth targets
    depth_target_blur: float = 0.0  # in bins; 0 = single-bin impulse target
    occlusion_fill: bool = True
    stratified: bool = True
    cosine_decay: bool = True
    seed: int = 0
    eval_every: int = 0  # 0 disables the in-loop metric trace
    eval_stride: int = 2  # pixel subsampling for in-loop evaluation

    def __post_init__(self):
        if self.iterations < 1 or self.batch_rays < 1 or self.n_samples < 2:
            raise ValueError("iterations, batch_rays, n_samples must be positive")
        if self.lambda_depth < 0:
            raise ValueError("lambda_depth must be >= 0")
        if not (0 <= self.depth_ray_fraction < 1):
            raise ValueError("depth_ray_fraction must be in [0, 1)")


# -- losses -------------------------------------------------------------------

def loss_rgb(pred, target):
    """Squared-error photometric loss, summed over channels and rays."""
    diff = pred - np.asarray(target, dtype=np.float64)
    return (diff * diff).sum()


def depth_target_bins(samples: RaySamples, depths: np.ndarray,
                      blur_bins: float = 0.0) -> np.ndarray:
    """Per-bin target weight density for an impulse at each ray's depth.

    The target integrates to one along the ray: a single bin carries
    density 1/width, or a discrete Gaussian over bin indices when blurred.
    """
    if samples.edges is None:
        raise ValueError("samples lack bin edges; use binned quadrature")
    edges = samples.edges
    depths = np.asarray(depths, dtype=np.float64)
    if np.any(depths <= edges[:, 0]) or np.any(depths >= edges[:, -1]):
        raise DepthOutOfRange("depth target outside [t_near, t_far]")
    k = np.sum(depths[:, None] >= edges[:, 1:], axis=1)
    n_rays, n_bins = samples.delta.shape
    if blur_bins <= 0.0:
        target = np.zeros((n_rays, n_bins))
        rows = np.arange(n_rays)
        target[rows, k] = 1.0 / samples.delta[rows, k]
        return target
    idx = np.arange(n_bins)[None, :]
    g = np.exp(-0.5 * ((idx - k[:, None]) / blur_bins) ** 2)
    mass = (g * samples.delta).sum(axis=1, keepdims=True)
    return g / mass


def loss_depth(weights, samples: RaySamples, depths, blur_bins: float = 0.0):
    """Penalize each ray's weight density for deviating from the impulse target.

    Discretizes the squared-difference between the ray's termination
    density and a unit impulse at the known surface distance:
    sum_i delta_i * (w_i / delta_i - target_i)^2.
    """
    target = depth_target_bins(samples, depths, blur_bins)
    density = weights * (1.0 / samples.delta)
    diff = density - target
    return (diff * diff * samples.delta).sum()


def loss_total(rgb_pred, rgb_target, lambda_depth: float = 0.05,
               depth_weights=None, depth_samples: RaySamples | None = None,
               depth_targets=None, blur_bins: float = 0.0):
    """Photometric sum plus weighted depth sum over the supervised slice."""
    total = loss_rgb(rgb_pred, rgb_target)
    if lambda_depth > 0 and depth_weights is not None and depth_targets is not None:
        if len(np.asarray(depth_targets)) > 0:
            total = total + lambda_depth * loss_depth(
                depth_weights, depth_samples, depth_targets, blur_bins)
    return total


# -- optimizer ----------------------------------------------------------------

class Adam:
    """Per-parameter adaptive first-order updates with bias correction."""

    def __init__(self, params: dict[str, Tensor], lr: dict[str, float],
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    @staticmethod
    def group_of(name: str) -> str:
        if name.startswith("grid"):
            return "grids"
        if name == "embeddings":
            return "embeddings"
        return "heads"

    def step(self, lr_scale: float = 1.0):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * (g * g)
            step = (self.lr[self.group_of(name)] * lr_scale) * (m / c1) \
                / (np.sqrt(v / c2) + self.eps)
            p.data -= step


def cosine_lr_scale(iteration: int, total: int) -> float:
    if total <= 1:
        return 1.0
    return 0.5 * (1.0 + math.cos(math.pi * iteration / (total - 1)))


# -- ray dataset --------------------------------------------------------------

@dataclass
class RayDataset:
    """Flattened supervision rays for one block.

    Photometric rays cover every non-dynamic pixel of every kept image;
    depth rays cover pixels with a ground-plane distance inside the
    sampled extent (observed road, plus occlusion-filled mover pixels
    when completion is on).
    """

    rgb_origins: np.ndarray
    rgb_dirs: np.ndarray
    rgb_colors: np.ndarray
    rgb_rows: np.ndarray  # embedding-table row per ray
    rgb_image_spans: list[tuple[int, int]]  # per-image [start, stop) slices
    depth_origins: np.ndarray
    depth_dirs: np.ndarray
    depth_values: np.ndarray
    depth_rows: np.ndarray

    @property
    def n_rgb(self) -> int:
        return self.rgb_dirs.shape[0]

    @property
    def n_depth(self) -> int:
        return self.depth_dirs.shape[0]


def build_ray_dataset(records: list[ImageRecord],
                      sequence_index: dict[tuple[str, str], int],
                      t_near: float, t_far: float,
                      occlusion_fill: bool = True,
                      with_depth: bool = True) -> RayDataset:
    rgb_o, rgb_d, rgb_c, rgb_r = [], [], [], []
    dep_o, dep_d, dep_v, dep_r = [], [], [], []
    spans = []
    cursor = 0
    for rec in records:
        cam = camera_pose(rec.best_pose, rec.extrinsics)
        origin, dirs = pixel_rays(cam, rec.intrinsics, t_near, t_far)
        flat_dirs = dirs.reshape(-1, 3)
        row = sequence_index.get(rec.sequence_key, 0)
        static = ~rec.mask.dynamic_pixels().reshape(-1)
        n_static = int(static.sum())
        rgb_o.append(np.broadcast_to(origin, (n_static, 3)))
        rgb_d.append(flat_dirs[static])
        rgb_c.append(rec.pixels.reshape(-1, 3)[static])
        rgb_r.append(np.full(n_static, row, dtype=np.intp))
        spans.append((cursor, cursor + n_static))
        cursor += n_static
        if with_depth:
            dm = build_ground_depth_map(rec, max_depth=t_far * 0.999)
            if occlusion_fill:
                dm = complete_occlusions(dm, rec.mask)
            usable = dm.valid & (dm.depth > t_near)
            flat_use = usable.reshape(-1)
            k = int(flat_use.sum())
            if k:
                dep_o.append(np.broadcast_to(origin, (k, 3)))
                dep_d.append(flat_dirs[flat_use])
                dep_v.append(dm.depth.reshape(-1)[flat_use])
                dep_r.append(np.full(k, row, dtype=np.intp))

    def cat(parts, width=None):
        if parts:
            return np.concatenate(parts, axis=0)
        return np.zeros((0, width) if width else (0,))

    return RayDataset(
        rgb_origins=cat(rgb_o, 3), rgb_dirs=cat(rgb_d, 3),
        rgb_colors=cat(rgb_c, 3),
        rgb_rows=cat(rgb_r).astype(np.intp),
        rgb_image_spans=spans,
        depth_origins=cat(dep_o, 3), depth_dirs=cat(dep_d, 3),
        depth_values=cat(dep_v),
        depth_rows=cat(dep_r).astype(np.intp),
    )


def _draw_two_stage(rng: np.random.Generator, spans: list[tuple[int, int]],
                    n: int) -> np.ndarray:
    """Uniform over images, then uniform over that image's rays."""
    nonempty = [s for s in spans if s[1] > s[0]]
    imgs = rng.integers(0, len(nonempty), size=n)
    starts = np.array([nonempty[i][0] for i in imgs])
    sizes = np.array([nonempty[i][1] - nonempty[i][0] for i in imgs])
    return starts + (rng.random(n) * sizes).astype(np.intp)


# -- metric trace -------------------------------------------------------------

@dataclass
class MetricTrace:
    rows: list[tuple[int, float, float, float]] = dc_field(default_factory=list)
    losses: list[float] = dc_field(default_factory=list)  # one per iteration

    def add(self, iteration: int, loss: float, psnr_db: float, rmse: float):
        self.rows.append((iteration, loss, psnr_db, rmse))

    def loss_trend_ok(self, fraction: float = 0.1) -> bool:
        """Median loss over the last `fraction` of iterations must not
        exceed the median over the first `fraction`."""
        k = max(1, int(len(self.losses) * fraction))
        return bool(np.median(self.losses[-k:]) <= np.median(self.losses[:k]))

    def to_text(self) -> str:
        lines = ["iteration loss psnr depth_rmse"]
        for it, lo, ps, rm in self.rows:
            lines.append(f"{it} {lo:.6g} {ps:.4f} {rm:.4f}")
        return "\n".join(lines) + "\n"

    def append_to(self, path):
        with open(path, "a") as fh:
            fh.write(self.to_text())


def render_record(field: RadianceField, rec: ImageRecord, n_samples: int = 96,
                  t_near: float = 0.2, t_far: float = 80.0, stride: int = 1,
                  key=None) -> RenderOutput:
    """Render the pixels of a dataset image (optionally strided) with the
    record's own appearance; falls back to the camera average."""
    cam = camera_pose(rec.best_pose, rec.extrinsics)
    origin, dirs = pixel_rays(cam, rec.intrinsics, t_near, t_far)
    dirs = dirs[::stride, ::stride]
    h, w = dirs.shape[:2]
    if key is None:
        key = rec.sequence_key
        if field.config.embed_dim > 0 and key not in field.sequence_index:
            key = ("average", rec.camera_id)
    if field.config.embed_dim == 0:
        key = None
    out = render_rays(field, origin[None, :], dirs.reshape(-1, 3),
                      t_near, t_far, key=key, n_samples=n_samples)
    return RenderOutput(
        color=np.asarray(out.color).reshape(h, w, 3),
        depth=out.depth.reshape(h, w),
        opacity=np.asarray(out.opacity).reshape(h, w),
    )


def evaluate_on_records(field: RadianceField, records: list[ImageRecord],
                        cfg: TrainConfig) -> tuple[float, float]:
    """(mean PSNR, depth RMSE vs ground-plane maps) over eval images."""
    psnrs = []
    preds, gts, valids = [], [], []
    s = cfg.eval_stride
    for rec in records:
        out = render_record(field, rec, cfg.n_samples, cfg.t_near, cfg.t_far,
                            stride=s)
        psnrs.append(psnr(out.color, rec.pixels[::s, ::s]))
        dm = build_ground_depth_map(rec, max_depth=cfg.t_far * 0.999)
        preds.append(out.depth)
        gts.append(np.nan_to_num(dm.depth[::s, ::s], nan=0.0))
        valids.append(dm.valid[::s, ::s])
    rmse = depth_rmse(np.stack(preds), np.stack(gts), np.stack(valids))
    return float(np.mean(psnrs)), rmse


# -- training loop ------------------------------------------------------------

def train(records: list[ImageRecord], field: RadianceField, cfg: TrainConfig,
          eval_records: list[ImageRecord] | None = None
          ) -> tuple[RadianceField, MetricTrace]:
    """Optimize the field on the given images; deterministic per seed.

    Returns the trained field (mutated in place) and the metric trace.
    Raises Diverged if the loss leaves the finite range.
    """
    streams = np.random.SeedSequence(cfg.seed).spawn(4)
    rng_rgb = np.random.default_rng(streams[0])
    rng_rgb_jitter = np.random.default_rng(streams[1])
    rng_depth = np.random.default_rng(streams[2])
    rng_depth_jitter = np.random.default_rng(streams[3])

    depth_enabled = cfg.lambda_depth > 0
    data = build_ray_dataset(records, field.sequence_index,
                             cfg.t_near, cfg.t_far,
                             occlusion_fill=cfg.occlusion_fill,
                             with_depth=depth_enabled)
    if data.n_rgb == 0:
        raise ValueError("no photometric rays in dataset")
    depth_enabled = depth_enabled and data.n_depth > 0
    n_depth = int(round(cfg.batch_rays * cfg.depth_ray_fraction)) \
        if depth_enabled else 0
    n_rgb = cfg.batch_rays - n_depth

    optim = Adam(field.params, lr={
        "grids": cfg.lr_grids, "heads": cfg.lr_heads,
        "embeddings": cfg.lr_embeddings,
    })
    trace = MetricTrace()
    for it in range(cfg.iterations):
        idx = _draw_two_stage(rng_rgb, data.rgb_image_spans, n_rgb)
        out = render_rays(
            field, data.rgb_origins[idx], data.rgb_dirs[idx],
            cfg.t_near, cfg.t_far, key=data.rgb_rows[idx],
            n_samples=cfg.n_samples, stratified=cfg.stratified,
            rng=rng_rgb_jitter, train=True,
        )
        total = loss_rgb(out.color, data.rgb_colors[idx])
        if depth_enabled:
            didx = (rng_depth.random(n_depth) * data.n_depth).astype(np.intp)
            dout = render_rays(
                field, data.depth_origins[didx], data.depth_dirs[didx],
                cfg.t_near, cfg.t_far, key=data.depth_rows[didx],
                n_samples=cfg.n_samples, stratified=cfg.stratified,
                rng=rng_depth_jitter, train=True,
            )
            total = total + cfg.lambda_depth * loss_depth(
                dout.weights, dout.samples, data.depth_values[didx],
                cfg.depth_target_blur)
        loss_value = float(ad.value(total))
        if not math.isfinite(loss_value):
            raise Diverged(f"loss {loss_value} at iteration {it}")
        trace.losses.append(loss_value)
        total.backward()
        scale = cosine_lr_scale(it, cfg.iterations) if cfg.cosine_decay else 1.0
        optim.step(scale)
        field.zero_grad()

        if cfg.eval_every and eval_records and (
                (it + 1) % cfg.eval_every == 0 or it + 1 == cfg.iterations):
            ps, rm = evaluate_on_records(field, eval_records, cfg)
            trace.add(it + 1, loss_value, ps, rm)
        elif it + 1 == cfg.iterations:
            trace.add(it + 1, loss_value, float("nan"), float("nan"))
    return field, trace
