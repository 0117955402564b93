#!/usr/bin/env python3
"""Data reduction and ground-plane depth, step by step.

Plants redundancy and mover-heavy frames into a synthetic capture set,
runs the three-stage filter, partitions blocks, then derives analytic
road depth for one image and fills the patch hidden behind a parked car.

Run:  python3 demos/02_selection_and_ground_depth.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from roadfield.ground import build_ground_depth_map, complete_occlusions
from roadfield.manifest import encode_png
from roadfield.selection import SelectionConfig, partition_blocks, run_selection
from roadfield.synthetic import demo_scene, make_trips

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/02_selection")
out.mkdir(parents=True, exist_ok=True)

scene = demo_scene(n_trips=3, movers_per_trip=1, seed=0)
records, _ = make_trips(scene, 3, 8, seed=0, tint_strength=0.15)

# plant near-duplicates: re-capture trip00's frames moments later
dupes = []
for rec in records[:8]:
    import dataclasses

    dupes.append(dataclasses.replace(rec, image_id=rec.image_id + "_dup",
                                     timestamp=rec.timestamp + 0.05))
crowd = records + dupes
print(f"{len(crowd)} raw frames ({len(dupes)} planted duplicates)")

report, kept = run_selection(crowd, SelectionConfig())
counts = report.counts()
print(f"kept {counts['kept']}  "
      f"rejected: dynamic={counts['dynamic_proportion']} "
      f"pose={counts['pose_instability']} redundant={counts['redundancy']}")

blocks = partition_blocks(kept, block_side=60.0, overlap_fraction=0.2)
for b in blocks:
    print(f"  block {b.block_id}: {len(b.image_ids)} images "
          f"around ({b.center[0]:.0f}, {b.center[1]:.0f})")

# ground depth for a frame that looks at its trip's parked mover
rec = max(kept, key=lambda r: r.mask.dynamic_fraction())
print(f"frame {rec.image_id}: {rec.mask.dynamic_fraction():.1%} mover pixels")
dm = build_ground_depth_map(rec)
filled = complete_occlusions(dm, rec.mask)
print(f"observed road pixels: {int((dm.source == 1).sum())}, "
      f"occlusion-filled: {int((filled.source == 2).sum())}")


def depth_png(m):
    vis = np.where(m.valid, m.depth, np.nan)
    vis = 1.0 - np.clip(np.nan_to_num(vis, nan=60.0) / 60.0, 0, 1)
    return encode_png(np.stack([vis] * 3, -1))


(out / "depth_observed.png").write_bytes(depth_png(dm))
(out / "depth_filled.png").write_bytes(depth_png(filled))
(out / "frame.png").write_bytes(encode_png(rec.pixels))
print(f"depth visualizations written to {out}/")
