"""End-to-end pipeline: select, partition, depth, per-block training, eval.

Every stage writes deterministic artifacts under the output directory,
addressable by block id; rerunning a stage over identical inputs and seed
reproduces its files byte for byte.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import ImageRecord
from .field import FieldConfig, RadianceField, save_checkpoint
from .ground import build_ground_depth_map, complete_occlusions, save_ground_depth
from .manifest import load_dataset
from .metrics import depth_rmse_summary, metrics_table, psnr, ssim
from .selection import (
    Block,
    FilterReport,
    SelectionConfig,
    partition_blocks,
    run_selection,
)
from .training import TrainConfig, render_record, train


@dataclass(frozen=True)
class PipelineConfig:
    block_side: float = 150.0
    overlap_fraction: float = 0.2
    holdout_stride: int = 8  # every k-th kept image per block becomes eval
    selection: SelectionConfig = SelectionConfig()
    field: FieldConfig = FieldConfig()
    train: TrainConfig = TrainConfig()

    def replace(self, **kw) -> "PipelineConfig":
        return dataclasses.replace(self, **kw)


def config_to_dict(cfg: PipelineConfig) -> dict:
    return {
        "pipeline": {
            "block_side": cfg.block_side,
            "overlap_fraction": cfg.overlap_fraction,
            "holdout_stride": cfg.holdout_stride,
        },
        "selection": dataclasses.asdict(cfg.selection),
        "field": dataclasses.asdict(cfg.field),
        "train": dataclasses.asdict(cfg.train),
    }


def config_from_dict(doc: dict) -> PipelineConfig:
    pipe = doc.get("pipeline", {})
    fld = dict(doc.get("field", {}))
    if "grid_levels" in fld:
        fld["grid_levels"] = tuple(fld["grid_levels"])
    if "scene_center" in fld:
        fld["scene_center"] = tuple(fld["scene_center"])
    return PipelineConfig(
        block_side=pipe.get("block_side", 150.0),
        overlap_fraction=pipe.get("overlap_fraction", 0.2),
        holdout_stride=pipe.get("holdout_stride", 8),
        selection=SelectionConfig(**doc.get("selection", {})),
        field=FieldConfig(**fld),
        train=TrainConfig(**doc.get("train", {})),
    )


def load_config(path) -> PipelineConfig:
    return config_from_dict(json.loads(Path(path).read_text()))


def save_config(cfg: PipelineConfig, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), sort_keys=True,
                                     indent=1) + "\n")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def _block_field_config(cfg: PipelineConfig, block: Block) -> FieldConfig:
    return dataclasses.replace(
        cfg.field, scene_center=(block.center[0], block.center[1], 0.0))


def stage_select(records: list[ImageRecord], cfg: PipelineConfig,
                 out_dir: Path) -> tuple[FilterReport, list[ImageRecord]]:
    report, kept = run_selection(records, cfg.selection)
    sel_dir = out_dir / "selection"
    sel_dir.mkdir(parents=True, exist_ok=True)
    (sel_dir / "report.txt").write_text(report.to_text())
    counts = report.counts()
    (sel_dir / "counts.json").write_text(
        json.dumps(counts, sort_keys=True, indent=1) + "\n")
    return report, kept


def stage_partition(kept: list[ImageRecord], cfg: PipelineConfig,
                    out_dir: Path) -> list[Block]:
    blocks = partition_blocks(kept, cfg.block_side, cfg.overlap_fraction)
    doc = [
        {"id": b.block_id, "center": list(b.center), "side": b.side,
         "images": list(b.image_ids)}
        for b in blocks
    ]
    bdir = out_dir / "blocks"
    bdir.mkdir(parents=True, exist_ok=True)
    (bdir / "blocks.json").write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    return blocks


def stage_depth(kept: list[ImageRecord], cfg: PipelineConfig,
                out_dir: Path) -> None:
    ddir = out_dir / "depth"
    ddir.mkdir(parents=True, exist_ok=True)
    for rec in kept:
        dm = build_ground_depth_map(rec, max_depth=cfg.train.t_far * 0.999)
        if cfg.train.occlusion_fill:
            dm = complete_occlusions(dm, rec.mask)
        save_ground_depth(dm, ddir / rec.image_id)


def split_holdout(images: list[ImageRecord], stride: int
                  ) -> tuple[list[ImageRecord], list[ImageRecord]]:
    if stride <= 0 or len(images) < 2:
        return list(images), []
    eval_set = images[::stride]
    if len(eval_set) == len(images):
        eval_set = images[:1]
    train_set = [r for r in images if r not in eval_set]
    return train_set, eval_set


def stage_train_block(block: Block, kept: list[ImageRecord],
                      cfg: PipelineConfig, out_dir: Path
                      ) -> RadianceField | None:
    members = [r for r in kept if r.image_id in set(block.image_ids)]
    if not members:
        return None
    train_set, eval_set = split_holdout(members, cfg.holdout_stride)
    keys = sorted({r.sequence_key for r in train_set})
    field = RadianceField(_block_field_config(cfg, block),
                          sequence_keys=keys, seed=cfg.train.seed)
    field, trace = train(train_set, field, cfg.train, eval_records=eval_set)
    bdir = out_dir / "blocks" / block.block_id
    bdir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(field, bdir / "field.rfld")
    (bdir / "trace.txt").write_text(trace.to_text())
    return field


def stage_eval_block(block: Block, field: RadianceField,
                     kept: list[ImageRecord], cfg: PipelineConfig) -> dict:
    members = [r for r in kept if r.image_id in set(block.image_ids)]
    _, eval_set = split_holdout(members, cfg.holdout_stride)
    if not eval_set:
        eval_set = members[:1]
    psnrs, ssims = [], []
    preds, gts, valids = [], [], []
    for rec in eval_set:
        out = render_record(field, rec, cfg.train.n_samples,
                            cfg.train.t_near, cfg.train.t_far)
        psnrs.append(psnr(out.color, rec.pixels))
        ssims.append(ssim(out.color, rec.pixels))
        dm = build_ground_depth_map(rec, max_depth=cfg.train.t_far * 0.999)
        preds.append(out.depth)
        gts.append(np.nan_to_num(dm.depth, nan=0.0))
        valids.append(dm.valid)
    summary = depth_rmse_summary(np.stack(preds), np.stack(gts), np.stack(valids))
    row = {"name": block.block_id, "psnr": float(np.mean(psnrs)),
           "ssim": float(np.mean(ssims)), **summary}
    return row


def run_pipeline(manifest_path, out_dir, cfg: PipelineConfig) -> dict:
    """select -> partition -> depth -> train per block -> eval."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        records, trajectories = load_dataset(manifest_path)
    except Exception as exc:
        raise StageError("ingest", exc) from exc

    try:
        report, kept = stage_select(records, cfg, out_dir)
    except Exception as exc:
        raise StageError("select", exc) from exc
    try:
        blocks = stage_partition(kept, cfg, out_dir)
    except Exception as exc:
        raise StageError("partition", exc) from exc
    try:
        stage_depth(kept, cfg, out_dir)
    except Exception as exc:
        raise StageError("depth", exc) from exc

    rows = []
    trained = []
    for block in blocks:
        try:
            field = stage_train_block(block, kept, cfg, out_dir)
        except Exception as exc:
            raise StageError(f"train[{block.block_id}]", exc) from exc
        if field is None:
            continue
        trained.append(block.block_id)
        try:
            rows.append(stage_eval_block(block, field, kept, cfg))
        except Exception as exc:
            raise StageError(f"eval[{block.block_id}]", exc) from exc

    eval_dir = out_dir / "eval"
    eval_dir.mkdir(exist_ok=True)
    (eval_dir / "metrics.txt").write_text(metrics_table(rows))
    (eval_dir / "metrics.json").write_text(
        json.dumps(rows, sort_keys=True, indent=1) + "\n")
    return {
        "images_in": len(records),
        "images_kept": len(kept),
        "blocks": [b.block_id for b in blocks],
        "blocks_trained": trained,
        "metrics": rows,
    }
