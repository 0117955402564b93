"""Feature and match filters that wrap an external SfM tool.

These operate purely on exported features/matches: drop features sitting
on movers, gate matches to same-label pairs, and restrict the match
schedule to image pairs whose prior positions are near each other. The
reconstruction itself (triangulation, bundle adjustment) stays external.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import ImageRecord, LabelTable, SemanticMask


class UnknownLabel(KeyError):
    pass


@dataclass(frozen=True)
class Feature:
    image_id: str
    u: float
    v: float
    label_id: int
    descriptor: bytes = b""


@dataclass(frozen=True)
class MatchPair:
    image_a: str
    index_a: int
    image_b: str
    index_b: int
    score: float = 0.0

    def __post_init__(self):
        if self.image_a == self.image_b:
            raise ValueError("match must join two different images")


def feature_label(mask: SemanticMask, u: float, v: float) -> int:
    """Label under a feature: the mask value at the rounded pixel."""
    h, w = mask.shape
    col = min(max(int(round(u)), 0), w - 1)
    row = min(max(int(round(v)), 0), h - 1)
    return int(mask.labels[row, col])


def drop_dynamic_features(features: list[Feature],
                          table: LabelTable) -> list[Feature]:
    """Remove features whose label carries the dynamic flag."""
    out = []
    for f in features:
        if f.label_id not in table.entries:
            raise UnknownLabel(f"feature label {f.label_id} not in table")
        if not table.is_dynamic(f.label_id):
            out.append(f)
    return out


def gate_matches_by_semantics(matches: list[MatchPair],
                              features: dict[str, list[Feature]],
                              merge: dict[int, int] | None = None
                              ) -> list[MatchPair]:
    """Keep only matches whose two features share a semantic label.

    `merge` optionally maps fine label ids onto coarser group ids before
    comparing (e.g. lane markings onto road).
    """
    def resolved(image_id: str, index: int) -> int:
        try:
            label = features[image_id][index].label_id
        except (KeyError, IndexError) as exc:
            raise UnknownLabel(f"unresolvable feature {image_id}[{index}]") from exc
        return merge.get(label, label) if merge else label

    return [
        m for m in matches
        if resolved(m.image_a, m.index_a) == resolved(m.image_b, m.index_b)
    ]


def candidate_pairs_by_prior(images: list[ImageRecord],
                             radius: float = 50.0) -> list[tuple[str, str]]:
    """Unordered image pairs whose prior positions lie within `radius`."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    pos = np.array([img.prior_pose.position for img in images])
    ids = [img.image_id for img in images]
    pairs = []
    for i in range(len(images)):
        d = np.linalg.norm(pos[i + 1:] - pos[i], axis=-1)
        for off in np.nonzero(d <= radius)[0]:
            pairs.append((ids[i], ids[i + 1 + off]))
    return pairs


def write_matches(matches: list[MatchPair], path) -> None:
    """Plain-text exchange format: `imageA imageB idxA idxB score` per line."""
    with open(path, "w") as fh:
        for m in matches:
            fh.write(f"{m.image_a} {m.image_b} {m.index_a} {m.index_b} {m.score:.6g}\n")


def read_matches(path) -> list[MatchPair]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            a, b, ia, ib, score = line.split()
            out.append(MatchPair(a, int(ia), b, int(ib), float(score)))
    return out


def write_features(features: list[Feature], path) -> None:
    """Text exchange: `image_id u v label_id` per line (descriptors stay
    with the external tool; only the filterable fields travel)."""
    with open(path, "w") as fh:
        for f in features:
            fh.write(f"{f.image_id} {f.u:.6g} {f.v:.6g} {f.label_id}\n")


def read_features(path) -> list[Feature]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            img, u, v, lab = line.split()
            out.append(Feature(img, float(u), float(v), int(lab)))
    return out


def write_pairs(pairs: list[tuple[str, str]], path) -> None:
    with open(path, "w") as fh:
        for a, b in pairs:
            fh.write(f"{a} {b}\n")
