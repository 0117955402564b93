from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from roadfield.dataset import ImageRecord, LabelTable, SemanticMask
from roadfield.geometry import CameraIntrinsics, Pose, camera_rig_extrinsics
from roadfield.selection import (
    REASON_DYNAMIC,
    REASON_POSE,
    REASON_REDUNDANT,
    Block,
    EmptyDataset,
    FilterReport,
    SelectionConfig,
    filter_diversity,
    filter_dynamic_proportion,
    filter_pose_stability,
    partition_blocks,
    run_selection,
)

LABELS = LabelTable()
ROAD = LABELS.id_of("road")
VEHICLE = LABELS.id_of("vehicle")

INTR = CameraIntrinsics(fx=10.0, fy=10.0, cx=4.5, cy=4.5, width=10, height=10)
EXTR = camera_rig_extrinsics((0.0, 0.0, 1.5))


def make_img(image_id, *, pos=(0.0, 0.0), yaw=0.0, t=0.0, dyn=0.0,
             refined_offset=(0.0, 0.0, 0.0), refined_yaw=None,
             refined=True, trip="t0", cam="c0") -> ImageRecord:
    labels = np.full((10, 10), ROAD)
    n_dyn = int(round(dyn * 100))
    if n_dyn:
        labels.reshape(-1)[:n_dyn] = VEHICLE
    prior = Pose.from_yaw_pitch_roll((pos[0], pos[1], 0.0), yaw=yaw)
    refined_pose = None
    if refined:
        ry = yaw if refined_yaw is None else refined_yaw
        refined_pose = Pose.from_yaw_pitch_roll(
            (pos[0] + refined_offset[0], pos[1] + refined_offset[1],
             refined_offset[2]), yaw=ry)
    return ImageRecord(
        image_id=image_id, trip_id=trip, camera_id=cam, timestamp=t,
        pixels=np.zeros((10, 10, 3)), mask=SemanticMask(labels, LABELS),
        prior_pose=prior, refined_pose=refined_pose,
        intrinsics=INTR, extrinsics=EXTR,
    )


class TestPartition:
    def test_single_image_single_block(self):
        blocks = partition_blocks([make_img("a")], block_side=150.0)
        assert len(blocks) == 1
        assert blocks[0].image_ids == ("a",)
        assert blocks[0].contains((0.0, 0.0))

    def test_empty_dataset_raises(self):
        with pytest.raises(EmptyDataset):
            partition_blocks([], block_side=150.0)

    def test_default_overlap_is_twenty_percent(self):
        import inspect

        sig = inspect.signature(partition_blocks)
        assert sig.parameters["overlap_fraction"].default == 0.2

    def test_grid_coverage_and_overlap_strips(self):
        # 10x10 positions over 300m x 300m; side 150, stride 120
        imgs = [
            make_img(f"i{i}_{j}", pos=(i * 300 / 9, j * 300 / 9))
            for i in range(10) for j in range(10)
        ]
        blocks = partition_blocks(imgs, block_side=150.0, overlap_fraction=0.2)
        membership = {img.image_id: 0 for img in imgs}
        for b in blocks:
            for iid in b.image_ids:
                membership[iid] += 1
        assert all(n >= 1 for n in membership.values())
        # brute-force point-in-square oracle
        for img in imgs:
            xy = img.position[:2]
            oracle = sum(b.contains(xy) for b in blocks)
            assert membership[img.image_id] == oracle
        # points in the 30m overlap strip between x-adjacent blocks join >= 2
        xs = sorted({b.center[0] for b in blocks})
        strips = [(hi - 75.0, lo + 75.0) for lo, hi in zip(xs, xs[1:])]
        assert all(hi - lo == pytest.approx(30.0) for lo, hi in strips)
        strip = [
            img for img in imgs
            if any(lo <= img.position[0] <= hi for lo, hi in strips)
        ]
        assert strip, "test data should populate an overlap strip"
        assert all(membership[img.image_id] >= 2 for img in strip)

    def test_stride_formula(self):
        imgs = [make_img("a", pos=(0, 0)), make_img("b", pos=(260, 0))]
        blocks = partition_blocks(imgs, block_side=150.0, overlap_fraction=0.2)
        xs = sorted({b.center[0] for b in blocks})
        assert xs[1] - xs[0] == pytest.approx(150.0 * 0.8)


class TestDynamicFilter:
    def test_just_over_threshold_rejected(self):
        assert filter_dynamic_proportion(make_img("a", dyn=0.41), 0.40) is False

    def test_no_movers_kept(self):
        assert filter_dynamic_proportion(make_img("a", dyn=0.0), 0.40) is True

    def test_exactly_at_threshold_kept(self):
        # "greater than" is strict
        assert filter_dynamic_proportion(make_img("a", dyn=0.40), 0.40) is True

    def test_half_dynamic_rejected_by_counting_oracle(self):
        labels = np.full((100, 100), ROAD)
        labels.reshape(-1)[:5000] = VEHICLE
        img = ImageRecord(
            image_id="big", trip_id="t", camera_id="c", timestamp=0.0,
            pixels=np.zeros((100, 100, 3)), mask=SemanticMask(labels, LABELS),
            prior_pose=Pose.identity(), intrinsics=CameraIntrinsics(
                fx=10, fy=10, cx=49.5, cy=49.5, width=100, height=100),
            extrinsics=EXTR,
        )
        fraction = (labels == VEHICLE).sum() / labels.size  # counting oracle
        assert fraction == 0.5
        assert filter_dynamic_proportion(img, 0.40) is False


class TestPoseStability:
    def test_identical_poses_kept(self):
        kept, judged = filter_pose_stability(make_img("a"))
        assert kept and judged

    def test_translation_drift_rejected(self):
        img = make_img("a", refined_offset=(12.0, 0.0, 0.0))
        kept, judged = filter_pose_stability(img, max_translation=5.0)
        assert judged and not kept

    def test_rotation_drift_rejected_vs_quaternion_oracle(self):
        img = make_img("a", yaw=0.0, refined_yaw=0.3)
        qa = Rotation.from_matrix(img.prior_pose.rotation)
        qb = Rotation.from_matrix(img.refined_pose.rotation)
        oracle = (qa.inv() * qb).magnitude()
        assert oracle == pytest.approx(0.3, abs=1e-12)
        kept, judged = filter_pose_stability(img, max_rotation=0.1)
        assert judged and not kept
        kept, _ = filter_pose_stability(img, max_rotation=0.4)
        assert kept

    def test_missing_refined_pose_passes_unjudged(self):
        kept, judged = filter_pose_stability(make_img("a", refined=False))
        assert kept and not judged


class TestDiversity:
    def test_pairwise_dissimilar_all_kept(self):
        imgs = [make_img(f"i{k}", pos=(50.0 * k, 0.0), t=100.0 * k) for k in range(6)]
        report = filter_diversity(imgs)
        assert len(report.kept_ids) == 6

    def test_identical_cluster_keeps_n(self):
        imgs = [make_img(f"i{k}") for k in range(10)]
        report = filter_diversity(imgs, SelectionConfig(keep_per_cluster=2))
        assert len(report.kept_ids) == 2
        assert len(report.rejected_ids) == 8
        assert all(
            d.reason == REASON_REDUNDANT for d in report.decisions if not d.kept
        )

    def test_two_clusters_keep_one_each(self):
        near = [make_img(f"a{k}") for k in range(5)]
        far = [make_img(f"b{k}", pos=(100.0, 0.0)) for k in range(5)]
        report = filter_diversity(near + far, SelectionConfig(keep_per_cluster=1))
        kept = set(report.kept_ids)
        assert len(kept) == 2
        assert any(k.startswith("a") for k in kept)
        assert any(k.startswith("b") for k in kept)

    def test_representative_is_earliest_then_cleanest(self):
        imgs = [
            make_img("late", t=2.5),
            make_img("early_dirty", t=1.0, dyn=0.2),
            make_img("early_clean", t=1.0, dyn=0.0),
        ]
        report = filter_diversity(imgs, SelectionConfig(keep_per_cluster=1))
        assert report.kept_ids == ["early_clean"]

    def test_chained_links_form_one_cluster(self):
        # a-b close, b-c close, a-c not: still one component
        cfg = SelectionConfig(pos_radius=2.0, keep_per_cluster=1)
        imgs = [
            make_img("a", pos=(0.0, 0.0)),
            make_img("b", pos=(1.5, 0.0)),
            make_img("c", pos=(3.0, 0.0)),
        ]
        report = filter_diversity(imgs, cfg)
        assert len(report.kept_ids) == 1


class TestRunSelection:
    def test_empty_input_empty_report(self):
        report, kept = run_selection([])
        assert report.decisions == ()
        assert kept == []

    def test_filter_order_reason_attribution(self):
        imgs = [
            make_img("dyn", dyn=0.9, refined_offset=(50.0, 0, 0)),  # dynamic wins
            make_img("pose", refined_offset=(50.0, 0, 0)),
            make_img("dup0"),
            make_img("dup1"),
        ]
        report, kept = run_selection(imgs)
        by_id = {d.image_id: d for d in report.decisions}
        assert by_id["dyn"].reason == REASON_DYNAMIC
        assert by_id["pose"].reason == REASON_POSE
        assert {by_id["dup0"].kept, by_id["dup1"].kept} == {True, False}
        assert len(kept) == 1

    def test_planted_duplicates_match_oracle(self):
        rng = np.random.default_rng(0)
        imgs = []
        n_unique = 20
        for k in range(n_unique):
            pos = (rng.uniform(0, 500), rng.uniform(0, 500))
            t0 = float(rng.uniform(0, 1e4))
            for c in range(10):  # 10 near-identical copies each
                imgs.append(make_img(f"u{k}_c{c}", pos=pos, t=t0 + 0.01 * c))
        report, kept = run_selection(imgs)
        assert len(kept) == n_unique
        counts = report.counts()
        assert counts["kept"] == n_unique
        assert counts[REASON_REDUNDANT] == len(imgs) - n_unique
        assert counts["input"] == len(imgs)

    def test_report_round_trips_text(self):
        imgs = [make_img("a", dyn=0.9), make_img("b")]
        report, _ = run_selection(imgs)
        back = FilterReport.from_text(report.to_text())
        assert back.decisions == report.decisions


coords = st.floats(min_value=-200, max_value=200, allow_nan=False)
dynfrac = st.sampled_from([0.0, 0.1, 0.3, 0.5, 0.9])


@st.composite
def image_sets(draw, max_size=10):
    specs = draw(st.lists(st.tuples(coords, coords, coords, dynfrac),
                          min_size=1, max_size=max_size))
    return [
        make_img(f"g{k}", pos=(x, y), t=t, dyn=d)
        for k, (x, y, t, d) in enumerate(specs)
    ]


@settings(max_examples=30, deadline=None)
@given(image_sets())
def test_selection_idempotent(imgs):
    _, kept = run_selection(imgs)
    report2, kept2 = run_selection(kept)
    assert [i.image_id for i in kept2] == [i.image_id for i in kept]
    assert report2.counts()["kept"] == len(kept)


@settings(max_examples=30, deadline=None)
@given(image_sets(), st.sampled_from([(0.2, 0.4), (0.1, 0.9), (0.05, 0.3)]))
def test_dynamic_threshold_monotone(imgs, thresholds):
    low, high = thresholds
    kept_low = run_selection(imgs, SelectionConfig(dynamic_threshold=low))[1]
    kept_high = run_selection(imgs, SelectionConfig(dynamic_threshold=high))[1]
    assert len(kept_low) <= len(kept_high)


@settings(max_examples=30, deadline=None)
@given(image_sets(), st.sampled_from([40.0, 150.0]))
def test_every_image_in_at_least_one_block(imgs, side):
    blocks = partition_blocks(imgs, block_side=side)
    assigned = set()
    for b in blocks:
        assigned.update(b.image_ids)
    assert assigned == {img.image_id for img in imgs}
