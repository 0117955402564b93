"""Crowd-capture reduction: block partitioning and image filtering.

Filtering applies three rules in order — too many movers in frame,
unstable pose refinement, and spatial/temporal redundancy — and reports
one decision per input image so counts always reconcile.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from collections import Counter

import numpy as np

from .dataset import ImageRecord
from .geometry import rotation_angle

REASON_DYNAMIC = "dynamic_proportion"
REASON_POSE = "pose_instability"
REASON_REDUNDANT = "redundancy"

DEFAULT_OVERLAP = 0.2  # fraction shared between adjacent blocks


class EmptyDataset(ValueError):
    pass


@dataclass(frozen=True)
class SelectionConfig:
    dynamic_threshold: float = 0.40
    max_translation: float = 5.0  # meters of prior-vs-refined drift
    max_rotation: float = math.radians(5.0)
    pos_radius: float = 2.0  # clustering: link distance, meters
    time_window: float = 2.0  # clustering: link window, seconds
    view_angle: float = math.radians(10.0)
    keep_per_cluster: int = 1

    def __post_init__(self):
        if not (0 < self.dynamic_threshold <= 1):
            raise ValueError("dynamic_threshold must be in (0, 1]")
        if self.keep_per_cluster < 1:
            raise ValueError("keep_per_cluster must be >= 1")


@dataclass(frozen=True)
class Decision:
    image_id: str
    kept: bool
    reason: str | None = None  # exactly one reason on every rejection

    def __post_init__(self):
        if self.kept and self.reason is not None:
            raise ValueError("kept images carry no reason")
        if not self.kept and self.reason not in (
            REASON_DYNAMIC, REASON_POSE, REASON_REDUNDANT
        ):
            raise ValueError(f"invalid rejection reason {self.reason!r}")


@dataclass(frozen=True)
class FilterReport:
    decisions: tuple[Decision, ...]
    unjudged_ids: tuple[str, ...] = ()  # passed pose check without a refined pose

    @property
    def kept_ids(self) -> list[str]:
        return [d.image_id for d in self.decisions if d.kept]

    @property
    def rejected_ids(self) -> list[str]:
        return [d.image_id for d in self.decisions if not d.kept]

    def counts(self) -> dict[str, int]:
        c = Counter(d.reason for d in self.decisions if not d.kept)
        return {
            "input": len(self.decisions),
            "kept": len(self.kept_ids),
            REASON_DYNAMIC: c.get(REASON_DYNAMIC, 0),
            REASON_POSE: c.get(REASON_POSE, 0),
            REASON_REDUNDANT: c.get(REASON_REDUNDANT, 0),
        }

    def to_text(self) -> str:
        lines = [
            f"{d.image_id} {'kept' if d.kept else 'rejected'} {d.reason or '-'}"
            for d in self.decisions
        ]
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "FilterReport":
        decisions = []
        for line in text.strip().splitlines():
            image_id, verdict, reason = line.split()
            decisions.append(Decision(
                image_id, verdict == "kept", None if reason == "-" else reason))
        return FilterReport(tuple(decisions))


@dataclass(frozen=True)
class Block:
    block_id: str
    center: tuple[float, float]  # world xy, meters
    side: float
    image_ids: tuple[str, ...] = field(default_factory=tuple)

    def contains(self, xy) -> bool:
        x, y = float(xy[0]), float(xy[1])
        half = self.side / 2 + 1e-9
        return abs(x - self.center[0]) <= half and abs(y - self.center[1]) <= half


def partition_blocks(images: list[ImageRecord], block_side: float,
                     overlap_fraction: float = DEFAULT_OVERLAP) -> list[Block]:
    """Tile the bounding region of all image positions with overlapping squares.

    Grid stride is block_side * (1 - overlap_fraction); every image joins
    every block whose square contains its (refined, else prior) position.
    """
    if not images:
        raise EmptyDataset("no images to partition")
    if block_side <= 0:
        raise ValueError("block_side must be positive")
    if not (0 <= overlap_fraction < 1):
        raise ValueError("overlap_fraction must be in [0, 1)")
    pos = np.array([img.position[:2] for img in images])
    lo = pos.min(axis=0)
    hi = pos.max(axis=0)
    stride = block_side * (1.0 - overlap_fraction)

    def count(extent: float) -> int:
        if extent <= block_side:
            return 1
        return int(math.ceil((extent - block_side) / stride - 1e-12)) + 1

    nx, ny = count(hi[0] - lo[0]), count(hi[1] - lo[1])
    # center the tiling on the data so single blocks sit on the centroid
    span = (block_side + (np.array([nx, ny]) - 1) * stride)
    start = (lo + hi - span) / 2
    blocks = []
    for i in range(nx):
        for j in range(ny):
            center = (start[0] + i * stride + block_side / 2,
                      start[1] + j * stride + block_side / 2)
            blk = Block(f"b{i:03d}_{j:03d}", center, block_side)
            members = tuple(
                img.image_id for img, p in zip(images, pos) if blk.contains(p)
            )
            blocks.append(Block(blk.block_id, center, block_side, members))
    assigned = set()
    for b in blocks:
        assigned.update(b.image_ids)
    missing = {img.image_id for img in images} - assigned
    if missing:  # guards float-edge drop-outs; should be unreachable
        raise AssertionError(f"images not covered by any block: {sorted(missing)}")
    return blocks


def filter_dynamic_proportion(img: ImageRecord, threshold: float = 0.40) -> bool:
    """True = kept. Rejects frames whose mover coverage exceeds the threshold."""
    if not (0 < threshold <= 1):
        raise ValueError("threshold must be in (0, 1]")
    return img.mask.dynamic_fraction() <= threshold


def filter_pose_stability(img: ImageRecord, max_translation: float = 5.0,
                          max_rotation: float = math.radians(5.0)
                          ) -> tuple[bool, bool]:
    """(kept, judged). Images without a refined pose pass unjudged."""
    if img.refined_pose is None:
        return True, False
    dt = np.linalg.norm(img.prior_pose.position - img.refined_pose.position)
    dr = rotation_angle(img.prior_pose.rotation, img.refined_pose.rotation)
    return bool(dt <= max_translation and dr <= max_rotation), True


def _cluster_links(images: list[ImageRecord], cfg: SelectionConfig) -> list[int]:
    """Union-find roots for the similarity relation."""
    n = len(images)
    parent = list(range(n))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    pos = np.array([img.position for img in images]) if n else np.zeros((0, 3))
    times = np.array([img.timestamp for img in images])
    views = np.array([img.view_direction() for img in images]) if n else np.zeros((0, 3))
    for i in range(n):
        for j in range(i + 1, n):
            if abs(times[i] - times[j]) > cfg.time_window:
                continue
            if np.linalg.norm(pos[i] - pos[j]) > cfg.pos_radius:
                continue
            cosang = np.clip(np.dot(views[i], views[j]), -1.0, 1.0)
            if math.acos(cosang) > cfg.view_angle:
                continue
            ra, rb = find(i), find(j)
            if ra != rb:
                parent[rb] = ra
    return [find(i) for i in range(n)]


def filter_diversity(images: list[ImageRecord],
                     cfg: SelectionConfig | None = None) -> FilterReport:
    """Cluster near-duplicates and keep few representatives per cluster.

    Two images link when they are close in position AND time AND view
    direction; clusters are the connected components of that relation.
    Representatives are chosen by earliest timestamp, then lowest dynamic
    fraction, then image id (for determinism).
    """
    cfg = cfg or SelectionConfig()
    roots = _cluster_links(images, cfg)
    groups: dict[int, list[int]] = {}
    for i, r in enumerate(roots):
        groups.setdefault(r, []).append(i)
    keep: set[str] = set()
    for members in groups.values():
        ranked = sorted(
            members,
            key=lambda i: (images[i].timestamp,
                           images[i].mask.dynamic_fraction(),
                           images[i].image_id),
        )
        keep.update(images[i].image_id for i in ranked[:cfg.keep_per_cluster])
    decisions = tuple(
        Decision(img.image_id, True) if img.image_id in keep
        else Decision(img.image_id, False, REASON_REDUNDANT)
        for img in images
    )
    return FilterReport(decisions)


def run_selection(images: list[ImageRecord],
                  cfg: SelectionConfig | None = None
                  ) -> tuple[FilterReport, list[ImageRecord]]:
    """Dynamic-proportion, then pose-stability, then diversity."""
    cfg = cfg or SelectionConfig()
    decisions: dict[str, Decision] = {}
    unjudged: list[str] = []
    survivors = []
    for img in images:
        if not filter_dynamic_proportion(img, cfg.dynamic_threshold):
            decisions[img.image_id] = Decision(img.image_id, False, REASON_DYNAMIC)
            continue
        kept, judged = filter_pose_stability(
            img, cfg.max_translation, cfg.max_rotation)
        if not judged:
            unjudged.append(img.image_id)
        if not kept:
            decisions[img.image_id] = Decision(img.image_id, False, REASON_POSE)
            continue
        survivors.append(img)
    diversity = filter_diversity(survivors, cfg)
    for d in diversity.decisions:
        decisions[d.image_id] = d
    ordered = tuple(decisions[img.image_id] for img in images)
    report = FilterReport(ordered, tuple(unjudged))
    kept_set = set(report.kept_ids)
    return report, [img for img in images if img.image_id in kept_set]
