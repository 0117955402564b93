"""Dataset manifest: one JSON document plus PNG rasters and trajectory text.

Layout under a dataset root:
    manifest.json
    images/<image_id>.png        8-bit RGB
    masks/<image_id>.png         8-bit label indices
    trajectories/<trip_id>.txt   `t x y` rows

Pixels are stored 8-bit on disk and linear floats in memory; writes are
deterministic (sorted keys, fixed float formatting, no PNG metadata) so
re-exporting identical data is byte-identical.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .dataset import ImageRecord, LabelTable, SemanticMask
from .geometry import CameraIntrinsics, ExtrinsicCalibration, Pose


class ManifestError(ValueError):
    pass


def to_uint8(rgb: np.ndarray) -> np.ndarray:
    return np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_png(rgb: np.ndarray) -> bytes:
    """Deterministic PNG bytes for a linear [0,1] RGB array."""
    import io

    buf = io.BytesIO()
    Image.fromarray(to_uint8(rgb), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def _pose_to_json(p: Pose | None):
    if p is None:
        return None
    return {
        "rotation": p.rotation.tolist(),
        "translation": p.translation.tolist(),
        "frame": p.frame,
    }


def _pose_from_json(d) -> Pose | None:
    if d is None:
        return None
    return Pose(np.array(d["rotation"]), np.array(d["translation"]),
                d.get("frame", "world->vehicle"))


def write_dataset(records: list[ImageRecord],
                  trajectories: dict[str, np.ndarray],
                  root) -> Path:
    """Write records + trajectories under `root`; returns the manifest path."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(exist_ok=True)
    (root / "trajectories").mkdir(exist_ok=True)

    cameras: dict[str, dict] = {}
    images = []
    label_table: LabelTable | None = None
    for rec in records:
        if rec.camera_id not in cameras:
            intr = rec.intrinsics
            cameras[rec.camera_id] = {
                "id": rec.camera_id,
                "intrinsics": {
                    "fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
                    "width": intr.width, "height": intr.height,
                },
                "extrinsics": {
                    "rotation": rec.extrinsics.rotation.tolist(),
                    "translation": rec.extrinsics.translation.tolist(),
                },
            }
        label_table = rec.mask.table
        img_path = f"images/{rec.image_id}.png"
        mask_path = f"masks/{rec.image_id}.png"
        Image.fromarray(
            np.round(rec.pixels * 255.0).astype(np.uint8), mode="RGB"
        ).save(root / img_path)
        Image.fromarray(
            rec.mask.labels.astype(np.uint8), mode="L"
        ).save(root / mask_path)
        images.append({
            "id": rec.image_id,
            "trip": rec.trip_id,
            "camera": rec.camera_id,
            "timestamp": rec.timestamp,
            "file": img_path,
            "mask_file": mask_path,
            "prior_pose": _pose_to_json(rec.prior_pose),
            "refined_pose": _pose_to_json(rec.refined_pose),
        })

    traj_entries = []
    for trip_id in sorted(trajectories):
        rows = np.asarray(trajectories[trip_id])
        rel = f"trajectories/{trip_id}.txt"
        lines = [f"{t:.6g} {x:.6g} {y:.6g}" for t, x, y in rows]
        (root / rel).write_text("\n".join(lines) + "\n")
        traj_entries.append({"trip": trip_id, "file": rel})

    table = label_table or LabelTable()
    doc = {
        "cameras": sorted(cameras.values(), key=lambda c: c["id"]),
        "images": images,
        "trajectories": traj_entries,
        "labels": {
            str(lid): [name, dyn] for lid, (name, dyn) in table.entries.items()
        },
    }
    manifest = root / "manifest.json"
    manifest.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    return manifest


def load_dataset(path) -> tuple[list[ImageRecord], dict[str, np.ndarray]]:
    """Read a dataset back; `path` is the manifest file or its directory."""
    path = Path(path)
    manifest = path / "manifest.json" if path.is_dir() else path
    if not manifest.exists():
        raise ManifestError(f"no manifest at {manifest}")
    root = manifest.parent
    doc = json.loads(manifest.read_text())

    table = LabelTable({
        int(lid): (name, bool(dyn))
        for lid, (name, dyn) in doc.get("labels", {}).items()
    }) if doc.get("labels") else LabelTable()

    cameras = {}
    for cam in doc["cameras"]:
        ci = cam["intrinsics"]
        cameras[cam["id"]] = (
            CameraIntrinsics(fx=ci["fx"], fy=ci["fy"], cx=ci["cx"], cy=ci["cy"],
                             width=ci["width"], height=ci["height"]),
            ExtrinsicCalibration(np.array(cam["extrinsics"]["rotation"]),
                                 np.array(cam["extrinsics"]["translation"])),
        )

    records = []
    for entry in doc["images"]:
        if entry["camera"] not in cameras:
            raise ManifestError(f"image {entry['id']} references unknown camera")
        img_file = root / entry["file"]
        mask_file = root / entry["mask_file"]
        if not img_file.exists():
            raise ManifestError(f"missing image file for {entry['id']}: {img_file}")
        if not mask_file.exists():
            raise ManifestError(f"missing mask file for {entry['id']}: {mask_file}")
        pixels = np.asarray(Image.open(img_file), dtype=np.float64) / 255.0
        labels = np.asarray(Image.open(mask_file), dtype=np.int32)
        intr, extr = cameras[entry["camera"]]
        records.append(ImageRecord(
            image_id=entry["id"],
            trip_id=entry["trip"],
            camera_id=entry["camera"],
            timestamp=float(entry["timestamp"]),
            pixels=pixels,
            mask=SemanticMask(labels, table),
            prior_pose=_pose_from_json(entry["prior_pose"]),
            refined_pose=_pose_from_json(entry["refined_pose"]),
            intrinsics=intr,
            extrinsics=extr,
        ))

    trajectories = {}
    for tr in doc.get("trajectories", []):
        rows = []
        for line in (root / tr["file"]).read_text().strip().splitlines():
            t, x, y = (float(v) for v in line.split())
            rows.append((t, x, y))
        trajectories[tr["trip"]] = np.array(rows)
    return records, trajectories
