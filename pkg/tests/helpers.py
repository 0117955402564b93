"""Shared test utilities: small fields, batches, finite-difference probes."""

from __future__ import annotations

import numpy as np

from roadfield import autodiff as ad
from roadfield.field import FieldConfig, RadianceField
from roadfield.render import render_rays
from roadfield.training import loss_depth, loss_rgb


def small_field(seed=0, embed_dim=4, keys=(("t0", "cam"), ("t1", "cam"))):
    cfg = FieldConfig(grid_levels=(8, 16), grid_features=2, pos_freqs=2,
                      dir_freqs=2, embed_dim=embed_dim, hidden_width=12,
                      hidden_depth=2, geo_features=6, scene_radius=12.0,
                      density_bias=-2.0)
    return RadianceField(cfg, sequence_keys=list(keys) if embed_dim else None,
                         seed=seed)


def random_ray_batch(rng, n_rays=6, with_rows=True, n_seq=2):
    origins = rng.uniform(-2, 2, (n_rays, 3)) + np.array([0, 0, 1.6])
    dirs = rng.normal(size=(n_rays, 3))
    dirs[:, 2] = -np.abs(dirs[:, 2]) - 0.3  # look downward
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    colors = rng.random((n_rays, 3))
    rows = rng.integers(0, n_seq, n_rays) if with_rows else None
    return origins, dirs, colors, rows


def batch_loss(field, origins, dirs, colors, rows, depths=None,
               lambda_depth=0.05, n_samples=16, t_near=0.3, t_far=25.0):
    """Deterministic (unjittered) forward pass returning the total loss Tensor."""
    key = rows if rows is not None else None
    out = render_rays(field, origins, dirs, t_near, t_far, key=key,
                      n_samples=n_samples, stratified=False, train=True)
    total = loss_rgb(out.color, colors)
    if depths is not None and lambda_depth > 0:
        total = total + lambda_depth * loss_depth(out.weights, out.samples, depths)
    return total


def probe_gradients(field, loss_fn, n_probes=64, h=1e-4, rng=None):
    """Compare tape gradients against central differences.

    Returns the worst relative error over `n_probes` parameter entries
    drawn across every parameter array (favoring entries the batch
    actually touched, with a couple of untouched ones as zero checks).
    """
    rng = rng or np.random.default_rng(0)
    loss = loss_fn()
    loss.backward()
    grads = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
             for k, p in field.params.items()}
    field.zero_grad()

    entries = []
    pool = []
    for name in field.params:
        g = grads[name].reshape(-1)
        touched = np.nonzero(np.abs(g) > 1e-12)[0]
        take = touched if touched.size else np.arange(g.size)
        entries.append((name, int(rng.choice(take))))  # cover every tensor
        pool.extend((name, int(i)) for i in touched)
    short = n_probes - len(entries)
    if short > 0 and pool:
        picks = rng.choice(len(pool), size=min(short, len(pool)), replace=False)
        entries.extend(pool[i] for i in picks)

    worst = 0.0
    for name, i in entries:
        flat = field.params[name].data.reshape(-1)
        keep = flat[i]
        flat[i] = keep + h
        up = float(ad.value(loss_fn()))
        flat[i] = keep - h
        dn = float(ad.value(loss_fn()))
        flat[i] = keep
        numeric = (up - dn) / (2 * h)
        analytic = grads[name].reshape(-1)[i]
        rel = abs(analytic - numeric) / max(1.0, abs(analytic))
        worst = max(worst, rel)
    return worst, len(entries)
