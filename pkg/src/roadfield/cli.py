"""Command-line pipeline driver.

Subcommands cover the full flow: synthesize a dataset, filter and
partition it, generate ground depth, train per block, render and
navigate, evaluate, and serve renders over HTTP. A JSON config file
mirrors every selection/field/train field; explicit flags override file
values.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np
from PIL import Image

from .dataset import ImageRecord
from .field import RadianceField, load_checkpoint, save_checkpoint
from .geometry import Pose, camera_pose, camera_rig_extrinsics, CameraIntrinsics
from .manifest import load_dataset, write_dataset
from .markers import (
    GuidanceTrajectory,
    render_navigation_view,
    trajectory_to_markers,
)
from .pipeline import (
    PipelineConfig,
    load_config,
    run_pipeline,
    save_config,
    stage_depth,
    stage_eval_block,
    stage_partition,
    stage_select,
    stage_train_block,
)
from .render import render_image
from .selection import partition_blocks
from .sfm import (
    candidate_pairs_by_prior,
    drop_dynamic_features,
    gate_matches_by_semantics,
    read_features,
    read_matches,
    write_features,
    write_matches,
    write_pairs,
)
from .synthetic import demo_scene, make_trips
from .training import TrainConfig, train


def desk_config() -> PipelineConfig:
    """Defaults sized for the synthetic desk-scale scene."""
    from .field import FieldConfig

    return PipelineConfig(
        block_side=60.0,
        holdout_stride=8,
        field=FieldConfig(
            grid_levels=(16, 32, 64, 128), grid_features=2, pos_freqs=3,
            dir_freqs=3, embed_dim=8, hidden_width=32, hidden_depth=2,
            geo_features=15, scene_radius=22.0, density_bias=-2.0,
        ),
        train=TrainConfig(
            iterations=500, batch_rays=512, n_samples=64, t_near=0.3,
            t_far=60.0, lr_grids=2e-2, lr_heads=1e-2, lambda_depth=0.05,
        ),
    )


def _load_cfg(args) -> PipelineConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else desk_config()
    train_kw = {}
    for flag, attr in [("iters", "iterations"), ("lambda_depth", "lambda_depth"),
                       ("seed", "seed")]:
        v = getattr(args, flag, None)
        if v is not None:
            train_kw[attr] = v
    if getattr(args, "no_occlusion_fill", False):
        train_kw["occlusion_fill"] = False
    if train_kw:
        cfg = cfg.replace(train=dataclasses.replace(cfg.train, **train_kw))
    if getattr(args, "no_embeddings", False):
        cfg = cfg.replace(field=dataclasses.replace(cfg.field, embed_dim=0))
    if getattr(args, "block_side", None) is not None:
        cfg = cfg.replace(block_side=args.block_side)
    if getattr(args, "overlap", None) is not None:
        cfg = cfg.replace(overlap_fraction=args.overlap)
    return cfg


def _save_png(rgb: np.ndarray, path) -> None:
    from .manifest import encode_png

    Path(path).write_bytes(encode_png(rgb))


def parse_pose(text: str) -> Pose:
    """`x,y,z,yaw,pitch,roll` (degrees) -> world->vehicle pose."""
    vals = [float(v) for v in text.split(",")]
    if len(vals) != 6:
        raise ValueError("pose must be x,y,z,yaw,pitch,roll")
    x, y, z, yaw, pitch, roll = vals
    return Pose.from_yaw_pitch_roll((x, y, z), yaw=np.deg2rad(yaw),
                                    pitch=np.deg2rad(pitch),
                                    roll=np.deg2rad(roll))


def parse_key(text: str | None):
    if text in (None, ""):
        return None
    if text.startswith("average:"):
        return ("average", text.split(":", 1)[1])
    if "," in text:
        trip, cam = text.split(",", 1)
        return (trip, cam)
    raise ValueError("appearance key is 'trip,camera' or 'average:camera'")


def camera_for(records: list[ImageRecord], camera_id: str):
    for r in records:
        if r.camera_id == camera_id:
            return r.intrinsics, r.extrinsics
    raise SystemExit(f"camera {camera_id!r} not in manifest")


def render_frame(field: RadianceField, vehicle_pose: Pose, intr, extr,
                 key, n_samples: int, seed: int) -> np.ndarray:
    cam = camera_pose(vehicle_pose, extr)
    out = render_image(field, cam, intr, key=key, n_samples=n_samples,
                       t_near=0.2, t_far=80.0, rng=seed)
    return out.color


# -- subcommands ---------------------------------------------------------------

def cmd_synth(args):
    scene = demo_scene(n_trips=args.trips, movers_per_trip=args.movers,
                       seed=args.seed)
    records, trajectories = make_trips(
        scene, args.trips, args.images_per_trip,
        tint_strength=args.tint, seed=args.seed)
    manifest = write_dataset(records, trajectories, args.out)
    save_config(desk_config(), Path(args.out) / "config.json")
    print(f"wrote {len(records)} images from {args.trips} trips to {manifest}")


def cmd_select(args):
    cfg = _load_cfg(args)
    records, _ = load_dataset(args.manifest)
    out = Path(args.out)
    report, kept = stage_select(records, cfg, out)
    c = report.counts()
    print(f"kept {c['kept']}/{c['input']} "
          f"(dynamic {c['dynamic_proportion']}, pose {c['pose_instability']}, "
          f"redundant {c['redundancy']}) -> {out / 'selection' / 'report.txt'}")


def _kept_records(args, cfg) -> list[ImageRecord]:
    records, _ = load_dataset(args.manifest)
    report_path = Path(args.out) / "selection" / "report.txt"
    if report_path.exists():
        from .selection import FilterReport

        kept_ids = set(FilterReport.from_text(report_path.read_text()).kept_ids)
        return [r for r in records if r.image_id in kept_ids]
    return records


def cmd_partition(args):
    cfg = _load_cfg(args)
    kept = _kept_records(args, cfg)
    blocks = stage_partition(kept, cfg, Path(args.out))
    for b in blocks:
        print(f"{b.block_id} center=({b.center[0]:.1f},{b.center[1]:.1f}) "
              f"side={b.side:.0f} images={len(b.image_ids)}")


def cmd_sfm_filter(args):
    records, _ = load_dataset(args.manifest)
    if args.candidates:
        pairs = candidate_pairs_by_prior(records, radius=args.radius)
        write_pairs(pairs, args.out_file)
        print(f"{len(pairs)} candidate pairs -> {args.out_file}")
        return
    if not (args.features and args.matches):
        raise SystemExit("need --features and --matches (or --candidates)")
    table = records[0].mask.table
    features = read_features(args.features)
    static = drop_dynamic_features(features, table)
    static_by_img: dict[str, list] = {}
    for f in features:  # keep original indexing for match resolution
        static_by_img.setdefault(f.image_id, []).append(f)
    matches = read_matches(args.matches)
    static_ids = {(f.image_id, i)
                  for img, fs in static_by_img.items()
                  for i, f in enumerate(fs) if not table.is_dynamic(f.label_id)}
    matches = [m for m in matches
               if (m.image_a, m.index_a) in static_ids
               and (m.image_b, m.index_b) in static_ids]
    gated = gate_matches_by_semantics(matches, static_by_img)
    write_matches(gated, args.out_file)
    print(f"{len(gated)}/{len(read_matches(args.matches))} matches kept "
          f"({len(static)}/{len(features)} features static) -> {args.out_file}")


def cmd_depth(args):
    cfg = _load_cfg(args)
    kept = _kept_records(args, cfg)
    stage_depth(kept, cfg, Path(args.out))
    print(f"ground depth maps for {len(kept)} images -> {Path(args.out) / 'depth'}")


def cmd_train(args):
    cfg = _load_cfg(args)
    out = Path(args.out)
    if args.block is None:
        summary = run_pipeline(args.manifest, out, cfg)
        print(json.dumps({k: v for k, v in summary.items() if k != "metrics"},
                         indent=1))
        print((out / "eval" / "metrics.txt").read_text())
        return
    kept = _kept_records(args, cfg)
    blocks = stage_partition(kept, cfg, out)
    match = [b for b in blocks if b.block_id == args.block]
    if not match:
        raise SystemExit(f"block {args.block!r} not found "
                         f"(have {[b.block_id for b in blocks]})")
    field = stage_train_block(match[0], kept, cfg, out)
    if field is None:
        raise SystemExit(f"block {args.block!r} has no images")
    row = stage_eval_block(match[0], field, kept, cfg)
    print(json.dumps(row, indent=1))


def cmd_render(args):
    field = load_checkpoint(args.checkpoint)
    records, _ = load_dataset(args.manifest)
    intr, extr = camera_for(records, args.camera)
    rgb = render_frame(field, parse_pose(args.pose), intr, extr,
                       parse_key(args.key), args.samples, args.seed)
    _save_png(rgb, args.out_file)
    print(f"rendered {intr.width}x{intr.height} -> {args.out_file}")


def cmd_navigate(args):
    field = load_checkpoint(args.checkpoint)
    records, trajectories = load_dataset(args.manifest)
    intr, extr = camera_for(records, args.camera)
    if args.trajectory in trajectories:
        rows = trajectories[args.trajectory]
        traj = GuidanceTrajectory(rows[:, 1:3], rows[:, 0], args.trajectory)
    else:
        traj = GuidanceTrajectory.from_text(Path(args.trajectory).read_text())
    markers = trajectory_to_markers(traj, width=args.marker_width,
                                    alpha=args.alpha, z=args.marker_lift)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    pts = traj.points
    n = min(args.frames, len(pts) - 1)
    key = parse_key(args.key)
    for i in range(n):
        seg = pts[min(i + 1, len(pts) - 1)] - pts[i]
        yaw = float(np.arctan2(seg[1], seg[0]))
        veh = Pose.from_yaw_pitch_roll((pts[i][0], pts[i][1], 0.0), yaw=yaw)
        cam = camera_pose(veh, extr)
        rgb = render_navigation_view(field, cam, intr, markers, key=key,
                                     n_samples=args.samples, t_near=0.2,
                                     t_far=80.0, rng=args.seed,
                                     alpha=args.alpha)
        _save_png(rgb, out_dir / f"frame_{i:04d}.png")
    print(f"{n} navigation frames -> {out_dir}")


def cmd_eval(args):
    cfg = _load_cfg(args)
    out = Path(args.out)
    kept = _kept_records(args, cfg)
    blocks = stage_partition(kept, cfg, out)
    rows = []
    for block in blocks:
        ckpt = out / "blocks" / block.block_id / "field.rfld"
        if not ckpt.exists():
            continue
        rows.append(stage_eval_block(block, load_checkpoint(ckpt), kept, cfg))
    from .metrics import metrics_table

    text = metrics_table(rows)
    (out / "eval").mkdir(exist_ok=True)
    (out / "eval" / "metrics.txt").write_text(text)
    print(text)


def cmd_serve(args):
    import uvicorn

    from .service import create_app

    field = load_checkpoint(args.checkpoint)
    trajectories = {}
    records = []
    if args.manifest:
        records, trajectories = load_dataset(args.manifest)
    app = create_app(field, block_id=args.block_id, seed=args.seed,
                     trajectories=trajectories, records=records)
    uvicorn.run(app, host=args.host, port=args.port)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="roadfield",
                                description="street-scale radiance field pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    def common_out(sp, manifest=True):
        if manifest:
            sp.add_argument("--manifest", required=True, help="dataset manifest.json or its directory")
        sp.add_argument("--out", required=True, help="pipeline output directory")
        sp.add_argument("--config", help="JSON config file")

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--trips", type=int, default=4)
    sp.add_argument("--images-per-trip", type=int, default=16)
    sp.add_argument("--movers", type=int, default=1)
    sp.add_argument("--tint", type=float, default=0.2)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_synth)

    sp = sub.add_parser("select", help="filter images, write the report")
    common_out(sp)
    sp.set_defaults(fn=cmd_select)

    sp = sub.add_parser("partition", help="partition kept images into blocks")
    common_out(sp)
    sp.add_argument("--block-side", type=float)
    sp.add_argument("--overlap", type=float)
    sp.set_defaults(fn=cmd_partition)

    sp = sub.add_parser("sfm-filter", help="filter feature/match files")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--features")
    sp.add_argument("--matches")
    sp.add_argument("--candidates", action="store_true",
                    help="emit candidate image pairs from prior poses")
    sp.add_argument("--radius", type=float, default=50.0)
    sp.add_argument("--out-file", required=True)
    sp.set_defaults(fn=cmd_sfm_filter)

    sp = sub.add_parser("depth", help="ground depth maps for kept images")
    common_out(sp)
    sp.set_defaults(fn=cmd_depth)

    sp = sub.add_parser("train", help="train one block (or all, without --block)")
    common_out(sp)
    sp.add_argument("--block")
    sp.add_argument("--iters", type=int)
    sp.add_argument("--lambda-depth", type=float, dest="lambda_depth")
    sp.add_argument("--no-embeddings", action="store_true")
    sp.add_argument("--no-occlusion-fill", action="store_true")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("render", help="render one pose to an image file")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--pose", required=True, help="x,y,z,yaw,pitch,roll (deg)")
    sp.add_argument("--camera", default="front")
    sp.add_argument("--key", help="'trip,camera' or 'average:camera'")
    sp.add_argument("--samples", type=int, default=96)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out-file", required=True)
    sp.set_defaults(fn=cmd_render)

    sp = sub.add_parser("navigate", help="render a guided first-view sequence")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--trajectory", required=True,
                    help="trip id from the manifest, or a `t x y` file")
    sp.add_argument("--camera", default="front")
    sp.add_argument("--key", help="'trip,camera' or 'average:camera'")
    sp.add_argument("--frames", type=int, default=16)
    sp.add_argument("--samples", type=int, default=96)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--alpha", type=float, default=0.3)
    sp.add_argument("--marker-width", type=float, default=1.0)
    sp.add_argument("--marker-lift", type=float, default=0.1,
                    help="float markers above the road for robust visibility")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_navigate)

    sp = sub.add_parser("eval", help="metrics table over trained blocks")
    common_out(sp)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("serve", help="HTTP render service")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--manifest")
    sp.add_argument("--block-id", default="b000_000")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8600)
    sp.set_defaults(fn=cmd_serve)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    args.fn(args)


if __name__ == "__main__":
    main()
