"""Trainable scene representation.

Multi-resolution dense feature grids over a contracted coordinate ball,
a density head that is blind to view direction and appearance, and a
color head conditioned on encoded view direction plus a per-sequence
appearance embedding. All parameters live in one ordered table so the
optimizer and the checkpoint writer see a single declared order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field as dc_field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_MAGIC = b"RFLD"
CHECKPOINT_VERSION = 1


class UnknownSequence(KeyError):
    """Appearance key not present in the embedding table."""


def positional_encode(x, freqs: int):
    """Sinusoidal encoding [sin(x), cos(x), sin(2x), cos(2x), ...] per coordinate.

    Input (..., C) maps to (..., 2*freqs*C); for a 3-vector and L
    frequencies the output length is 6L. Frequency k scales the input by
    2**k, k = 0..freqs-1.
    """
    x = np.asarray(x, dtype=np.float64)
    parts = []
    for k in range(freqs):
        s = x * (2.0 ** k)
        parts.append(np.sin(s))
        parts.append(np.cos(s))
    return np.concatenate(parts, axis=-1)


def contract(x) -> np.ndarray:
    """Map unbounded points into the open ball of radius 2.

    Identity inside the unit ball; outside, a point at distance n moves
    to distance 2 - 1/n along the same direction. Continuous, injective,
    and norm-bounded by 2.
    """
    x = np.asarray(x, dtype=np.float64)
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    safe = np.maximum(n, 1e-12)
    squashed = (2.0 - 1.0 / safe) * (x / safe)
    return np.where(n <= 1.0, x, squashed)


def contract_inverse(y) -> np.ndarray:
    """Inverse of `contract` on its image (norms < 2)."""
    y = np.asarray(y, dtype=np.float64)
    n = np.linalg.norm(y, axis=-1, keepdims=True)
    safe = np.maximum(n, 1e-12)
    orig = 1.0 / (2.0 - safe)
    return np.where(n <= 1.0, y, y / safe * orig)


@dataclass(frozen=True)
class FieldConfig:
    grid_levels: tuple[int, ...] = (16, 32, 64, 128)  # vertices per axis
    grid_features: int = 2
    pos_freqs: int = 4  # frequencies appended to grid features
    dir_freqs: int = 4
    embed_dim: int = 8
    hidden_width: int = 64
    hidden_depth: int = 2
    geo_features: int = 15
    contraction: bool = True
    scene_center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    scene_radius: float = 20.0  # meters mapped onto the unit ball
    density_bias: float = -8.0  # pre-softplus shift, keeps an untrained field empty

    def __post_init__(self):
        if len(self.grid_levels) < 1 or any(r < 2 for r in self.grid_levels):
            raise ValueError("need at least one grid level with >= 2 vertices")
        if any(a >= b for a, b in zip(self.grid_levels, self.grid_levels[1:])):
            raise ValueError("grid resolutions must be strictly increasing")
        for name in ("grid_features", "dir_freqs", "hidden_width",
                     "hidden_depth", "geo_features"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.pos_freqs < 0 or self.embed_dim < 0:
            raise ValueError("pos_freqs and embed_dim must be >= 0")
        if self.scene_radius <= 0:
            raise ValueError("scene_radius must be positive")

    @property
    def feature_width(self) -> int:
        return len(self.grid_levels) * self.grid_features + 6 * self.pos_freqs


_CORNERS = np.array(
    [[dx, dy, dz] for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)], dtype=np.intp
)


class RadianceField:
    """Density + color field with per-sequence appearance embeddings.

    `sequence_keys` fixes the embedding table rows; the order given at
    construction is the declared parameter order for checkpoints.
    """

    def __init__(self, config: FieldConfig,
                 sequence_keys: list[tuple[str, str]] | None = None,
                 seed: int = 0):
        self.config = config
        self.sequence_keys = [tuple(k) for k in (sequence_keys or [])]
        if len(set(self.sequence_keys)) != len(self.sequence_keys):
            raise ValueError("duplicate sequence keys")
        self.sequence_index = {k: i for i, k in enumerate(self.sequence_keys)}
        self.params: dict[str, Tensor] = {}
        self._init_params(seed)

    def _init_params(self, seed: int):
        rng = np.random.default_rng(seed)
        cfg = self.config
        for li, res in enumerate(cfg.grid_levels):
            shape = (res ** 3, cfg.grid_features)
            self.params[f"grid{li}"] = ad.parameter(rng.uniform(-1e-4, 1e-4, shape))

        def linear(name: str, fan_in: int, fan_out: int):
            bound = np.sqrt(6.0 / fan_in)
            self.params[f"{name}_w"] = ad.parameter(
                rng.uniform(-bound, bound, (fan_in, fan_out)))
            self.params[f"{name}_b"] = ad.parameter(np.zeros(fan_out))

        width = cfg.hidden_width
        fan = cfg.feature_width
        for d in range(cfg.hidden_depth):
            linear(f"density{d}", fan, width)
            fan = width
        linear("density_out", fan, 1 + cfg.geo_features)

        fan = cfg.geo_features + 6 * cfg.dir_freqs + cfg.embed_dim
        for d in range(cfg.hidden_depth):
            linear(f"color{d}", fan, width)
            fan = width
        linear("color_out", fan, 3)

        if cfg.embed_dim > 0:
            self.params["embeddings"] = ad.parameter(
                np.zeros((len(self.sequence_keys), cfg.embed_dim)))

    # -- coordinate handling --------------------------------------------------

    def normalize(self, x_world: np.ndarray) -> np.ndarray:
        """World meters -> contracted grid coordinates in the radius-2 ball."""
        xn = (np.asarray(x_world, dtype=np.float64)
              - np.asarray(self.config.scene_center)) / self.config.scene_radius
        if self.config.contraction:
            return contract(xn)
        return np.clip(xn, -1.999, 1.999)

    def _interp_indices(self, xc: np.ndarray, res: int):
        u = (xc + 2.0) * ((res - 1) / 4.0)
        i0 = np.clip(np.floor(u).astype(np.intp), 0, res - 2)
        f = np.clip(u - i0, 0.0, 1.0)
        ic = i0[:, None, :] + _CORNERS[None, :, :]  # (N, 8, 3)
        idx = (ic[..., 0] * res + ic[..., 1]) * res + ic[..., 2]
        one_m = 1.0 - f
        w = np.ones((xc.shape[0], 8))
        for axis in range(3):
            pick = np.where(_CORNERS[None, :, axis] == 1, f[:, None, axis],
                            one_m[:, None, axis])
            w = w * pick
        return idx, w

    def grid_features(self, x_world: np.ndarray, train: bool = False):
        """Concatenated multi-resolution features (+ positional encoding)."""
        xc = self.normalize(np.atleast_2d(x_world))
        parts = []
        for li, res in enumerate(self.config.grid_levels):
            idx, w = self._interp_indices(xc, res)
            table = self.params[f"grid{li}"]
            if train:
                parts.append(ad.indexed_weighted_sum(table, idx, w))
            else:
                parts.append(np.einsum("ncf,nc->nf", table.data[idx], w))
        if self.config.pos_freqs > 0:
            parts.append(positional_encode(xc, self.config.pos_freqs))
        if train:
            parts = [p if isinstance(p, Tensor) else Tensor(p) for p in parts]
            return ad.concat(parts, axis=-1)
        return np.concatenate(parts, axis=-1)

    # -- appearance -------------------------------------------------------

    def resolve_embedding_rows(self, key, n: int) -> np.ndarray | None:
        """Rows of the embedding table for a query of n points.

        `key` may be a (trip, camera) tuple, the string "average" paired
        with a camera id as ("average", camera_id), or an integer array of
        per-point rows. Returns None when the field carries no embeddings.
        """
        if self.config.embed_dim == 0:
            return None
        if isinstance(key, np.ndarray):
            return key.astype(np.intp)
        if isinstance(key, tuple) and len(key) == 2 and key[0] == "average":
            rows = [i for k, i in self.sequence_index.items() if k[1] == key[1]]
            if not rows:
                raise UnknownSequence(f"no sequences for camera {key[1]!r}")
            return np.asarray(rows, dtype=np.intp)  # caller averages
        if isinstance(key, tuple) and len(key) == 2:
            if tuple(key) not in self.sequence_index:
                raise UnknownSequence(f"unknown sequence key {key!r}")
            return np.full(n, self.sequence_index[tuple(key)], dtype=np.intp)
        raise UnknownSequence(f"unresolvable appearance key {key!r}")

    def _embedding_block(self, key, n: int, train: bool):
        if self.config.embed_dim == 0:
            return None
        emb = self.params["embeddings"]
        averaged = isinstance(key, tuple) and len(key) == 2 and key[0] == "average"
        rows = self.resolve_embedding_rows(key, n)
        if averaged:
            if train:
                mean = ad.take_rows(emb, rows).sum(axis=0, keepdims=True) * (1.0 / len(rows))
                return mean * np.ones((n, 1))
            return np.broadcast_to(emb.data[rows].mean(axis=0), (n, self.config.embed_dim))
        if train:
            return ad.take_rows(emb, rows)
        return emb.data[rows]

    # -- query ------------------------------------------------------------

    def _head(self, name: str, h, train: bool):
        cfg = self.config
        for d in range(cfg.hidden_depth):
            w = self.params[f"{name}{d}_w"]
            b = self.params[f"{name}{d}_b"]
            h = ad.relu(h @ w + b if train else h @ w.data + b.data)
        w = self.params[f"{name}_out_w"]
        b = self.params[f"{name}_out_b"]
        return h @ w + b if train else h @ w.data + b.data

    def query(self, x_world, directions, key=None, train: bool = False):
        """Density and color at world points along view directions.

        Returns (sigma, color): shapes (N,) and (N, 3). Density never
        depends on direction or appearance key. In train mode the returns
        are Tensors wired to the parameter table.
        """
        x = np.atleast_2d(np.asarray(x_world, dtype=np.float64))
        d = np.atleast_2d(np.asarray(directions, dtype=np.float64))
        if d.shape[0] == 1 and x.shape[0] > 1:
            d = np.broadcast_to(d, x.shape)
        n = x.shape[0]
        if self.config.embed_dim > 0 and key is None:
            raise UnknownSequence("appearance key required (or 'average')")

        feats = self.grid_features(x, train=train)
        density_out = self._head("density", feats, train)
        sigma = ad.softplus(density_out[:, 0] + self.config.density_bias)
        geo = density_out[:, 1:]

        dir_enc = positional_encode(d, self.config.dir_freqs)
        color_in = [geo, dir_enc]
        emb = self._embedding_block(key, n, train)
        if emb is not None:
            color_in.append(emb)
        if train:
            color_in = [p if isinstance(p, Tensor) else Tensor(p) for p in color_in]
            color = ad.sigmoid(self._head("color", ad.concat(color_in, -1), train))
        else:
            color = ad.sigmoid(self._head("color", np.concatenate(color_in, -1), train))
        return sigma, color

    # -- parameter plumbing -------------------------------------------------

    def parameter_names(self) -> list[str]:
        return list(self.params.keys())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())


# -- checkpoint I/O ----------------------------------------------------------

def save_checkpoint(field: RadianceField, path) -> None:
    """Self-describing binary: magic, version, JSON header, float32 LE blobs."""
    header = {
        "config": asdict(field.config),
        "sequence_keys": [list(k) for k in field.sequence_keys],
        "parameters": [[name, list(p.data.shape)]
                       for name, p in field.params.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for p in field.params.values():
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def load_checkpoint(path) -> RadianceField:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a field checkpoint (magic {magic!r})")
        version, blob_len = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(blob_len).decode("utf-8"))
        cfg_dict = dict(header["config"])
        cfg_dict["grid_levels"] = tuple(cfg_dict["grid_levels"])
        cfg_dict["scene_center"] = tuple(cfg_dict["scene_center"])
        config = FieldConfig(**cfg_dict)
        keys = [tuple(k) for k in header["sequence_keys"]]
        field = RadianceField(config, sequence_keys=keys, seed=0)
        for name, shape in header["parameters"]:
            count = int(np.prod(shape))
            raw = fh.read(count * 4)
            arr = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)
            if name not in field.params or field.params[name].data.shape != tuple(shape):
                raise ValueError(f"checkpoint parameter {name} does not fit config")
            field.params[name] = ad.parameter(arr)
    return field
