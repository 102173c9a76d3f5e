"""Dataset layout contract, synthetic generator determinism, and batching."""

import hashlib
import shutil
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from gazemae.data import (
    AnnotationParseError,
    ClipParams,
    ClipRef,
    DatasetError,
    PHASES,
    SyntheticSpec,
    _PALETTE,
    build_clip_index,
    generate_synthetic_dataset,
    iter_batches,
    load_manifest,
    plan_epoch,
    sample_clip,
    synthetic_placements,
)


def tree_digest(root: Path) -> dict[str, str]:
    out = {}
    for path in sorted(root.rglob("*")):
        if path.is_file():
            out[str(path.relative_to(root))] = hashlib.sha256(path.read_bytes()).hexdigest()
    return out


class TestGenerator:
    def test_byte_identical_for_fixed_seed(self, tmp_path):
        spec = SyntheticSpec(
            n_train=1, n_val=1, n_test=1, frames_per_video=6, frame_hw=(32, 32), n_classes=2
        )
        generate_synthetic_dataset(spec, tmp_path / "a", seed=5)
        generate_synthetic_dataset(spec, tmp_path / "b", seed=5)
        assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")

    def test_seed_changes_output(self, tmp_path):
        spec = SyntheticSpec(
            n_train=1, n_val=1, n_test=1, frames_per_video=6, frame_hw=(32, 32), n_classes=2
        )
        generate_synthetic_dataset(spec, tmp_path / "a", seed=5)
        generate_synthetic_dataset(spec, tmp_path / "b", seed=6)
        assert tree_digest(tmp_path / "a") != tree_digest(tmp_path / "b")

    def test_layout(self, small_dataset):
        root, spec, _ = small_dataset
        assert (root / "splits.txt").is_file()
        assert (root / "videos" / "v01" / "frames" / "000000.jpg").is_file()
        assert (root / "annotations" / "phase" / "v01.csv").is_file()
        assert (root / "annotations" / "gaze" / "v01.csv").is_file()
        phase_text = (root / "annotations" / "phase" / "v01.csv").read_text()
        assert phase_text.startswith("frame_idx,phase_id\n")
        gaze_text = (root / "annotations" / "gaze" / "v01.csv").read_text()
        assert gaze_text.startswith("frame_idx,x_norm,y_norm,valid\n")
        assert "\r" not in phase_text and "\r" not in gaze_text

    def test_split_sizes(self, small_dataset):
        root, spec, train = small_dataset
        assert len(train.video_ids) == spec.n_train
        assert len(load_manifest(root, "val").video_ids) == spec.n_val
        assert len(load_manifest(root, "test").video_ids) == spec.n_test

    def test_phases_are_contiguous_and_cover_all_classes(self, small_dataset):
        _, spec, train = small_dataset
        for vid in train.video_ids:
            labels = [r.phase_id for r in train.records[vid]]
            assert sorted(set(labels)) == list(range(spec.n_classes))
            assert labels == sorted(labels)  # one contiguous segment per class

    def test_placements_match_files(self, small_dataset):
        root, spec, train = small_dataset
        placements = {
            (p.video_id, p.frame_idx): p for p in synthetic_placements(spec, seed=11)
        }
        for vid in train.video_ids:
            for rec in train.records[vid]:
                p = placements[(vid, rec.frame_idx)]
                assert rec.phase_id == p.class_id
                assert rec.gaze[0] == pytest.approx(p.gaze_x_norm, abs=1e-6)
                assert rec.gaze[1] == pytest.approx(p.gaze_y_norm, abs=1e-6)
                assert rec.gaze[2] is True

    def test_gaze_sits_on_the_class_pattern(self, small_dataset):
        _, spec, train = small_dataset
        height, width = spec.frame_hw
        size = spec.effective_pattern_size
        placements = {
            (p.video_id, p.frame_idx): p for p in synthetic_placements(spec, seed=11)
        }
        for vid in train.video_ids:
            for rec in train.records[vid]:
                p = placements[(vid, rec.frame_idx)]
                x_px = rec.gaze[0] * width
                y_px = rec.gaze[1] * height
                pad = spec.gaze_noise_px + 1.0
                assert p.left - pad <= x_px <= p.left + size + pad
                assert p.top - pad <= y_px <= p.top + size + pad

    def test_frame_shows_palette_color_at_placement(self, small_dataset):
        root, spec, train = small_dataset
        p = next(
            q for q in synthetic_placements(spec, seed=11) if q.video_id == "v01"
        )
        with Image.open(root / "videos" / "v01" / "frames" / f"{p.frame_idx:06d}.jpg") as im:
            frame = np.asarray(im.convert("RGB"), dtype=np.int16)
        center = frame[p.top + p.size // 2, p.left + p.size // 2]
        # JPEG shifts colors a little; the palette entry must still be closest
        assert np.abs(center - _PALETTE[p.class_id].astype(np.int16)).max() < 40

    def test_phase_mix_controls_segment_lengths(self, tmp_path):
        spec = SyntheticSpec(
            n_train=1, n_val=1, n_test=1, frames_per_video=20, frame_hw=(32, 32),
            n_classes=2, phase_mix=(3.0, 1.0),
        )
        train = generate_synthetic_dataset(spec, tmp_path, seed=0)
        labels = [r.phase_id for r in train.records["v01"]]
        assert labels.count(0) == 15 and labels.count(1) == 5

    def test_phase_mix_length_validated(self):
        with pytest.raises(ValueError, match="phase_mix"):
            SyntheticSpec(n_classes=3, phase_mix=(1.0, 1.0))

    def test_n_classes_validated(self):
        with pytest.raises(ValueError, match="n_classes"):
            SyntheticSpec(n_classes=len(PHASES) + 1)


class TestLoadManifest:
    def test_basic_fields(self, small_dataset):
        root, spec, train = small_dataset
        assert train.split == "train"
        assert train.fps == 0.5
        assert train.frame_size == spec.frame_hw
        assert train.n_frames("v01") == spec.frames_per_video
        assert train.frame_path("v01", 3).name == "000003.jpg"

    def test_unknown_split_rejected(self, small_dataset):
        root, _, _ = small_dataset
        with pytest.raises(ValueError, match="split"):
            load_manifest(root, "dev")

    def test_missing_splits_file(self, tmp_path):
        with pytest.raises(DatasetError, match="splits"):
            load_manifest(tmp_path, "train")

    def test_malformed_splits_line(self, tmp_path):
        (tmp_path / "splits.txt").write_text("v01 sometsplit\n")
        with pytest.raises(DatasetError, match="line 1"):
            load_manifest(tmp_path, "train")

    def _copy(self, root: Path, tmp_path: Path) -> Path:
        dst = tmp_path / "broken"
        shutil.copytree(root, dst)
        return dst

    def test_missing_frames_dir_names_video(self, small_dataset, tmp_path):
        root, _, _ = small_dataset
        broken = self._copy(root, tmp_path)
        shutil.rmtree(broken / "videos" / "v02" / "frames")
        with pytest.raises(DatasetError, match="v02"):
            load_manifest(broken, "train")

    def test_missing_frame_file_names_video(self, small_dataset, tmp_path):
        root, _, _ = small_dataset
        broken = self._copy(root, tmp_path)
        (broken / "videos" / "v01" / "frames" / "000005.jpg").unlink()
        with pytest.raises(DatasetError, match="v01"):
            load_manifest(broken, "train")

    def test_missing_annotation_names_video(self, small_dataset, tmp_path):
        root, _, _ = small_dataset
        broken = self._copy(root, tmp_path)
        (broken / "annotations" / "gaze" / "v01.csv").unlink()
        with pytest.raises(DatasetError, match="v01"):
            load_manifest(broken, "train")

    def test_wrong_header_rejected(self, small_dataset, tmp_path):
        root, _, _ = small_dataset
        broken = self._copy(root, tmp_path)
        path = broken / "annotations" / "phase" / "v01.csv"
        lines = path.read_text().splitlines()
        lines[0] = "frame,phase"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(AnnotationParseError, match="header"):
            load_manifest(broken, "train")

    def test_malformed_row_reports_line_number(self, small_dataset, tmp_path):
        root, _, _ = small_dataset
        broken = self._copy(root, tmp_path)
        path = broken / "annotations" / "phase" / "v01.csv"
        lines = path.read_text().splitlines()
        lines[3] = "2,notanumber"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(AnnotationParseError, match="line 4"):
            load_manifest(broken, "train")

    def test_mismatched_frame_coverage_rejected(self, small_dataset, tmp_path):
        root, _, _ = small_dataset
        broken = self._copy(root, tmp_path)
        path = broken / "annotations" / "gaze" / "v01.csv"
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-1]) + "\n")  # drop the last frame's gaze
        with pytest.raises(DatasetError, match="different frames"):
            load_manifest(broken, "train")

    def test_out_of_range_phase_rejected(self, small_dataset, tmp_path):
        root, _, _ = small_dataset
        broken = self._copy(root, tmp_path)
        path = broken / "annotations" / "phase" / "v01.csv"
        lines = path.read_text().splitlines()
        lines[1] = "0,99"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetError, match="out of range"):
            load_manifest(broken, "train")


class TestSampleClip:
    def test_shapes_dtype_range(self, small_dataset):
        _, _, train = small_dataset
        clip = sample_clip(train, "v01", 2, 4, (64, 64))
        assert clip.pixels.shape == (4, 3, 64, 64)
        assert clip.pixels.dtype == np.float32
        assert 0.0 <= clip.pixels.min() and clip.pixels.max() <= 1.0
        assert clip.gaze_points.shape == (4, 3)
        assert clip.video_id == "v01" and clip.start_frame == 2

    def test_label_is_last_frame_phase(self, small_dataset):
        _, _, train = small_dataset
        clip = sample_clip(train, "v01", 3, 4, (64, 64))
        assert clip.label == train.records["v01"][6].phase_id

    def test_resize(self, small_dataset):
        _, _, train = small_dataset
        clip = sample_clip(train, "v01", 0, 2, (32, 48))
        assert clip.pixels.shape == (2, 3, 32, 48)

    def test_gaze_unchanged_by_resize(self, small_dataset):
        _, _, train = small_dataset
        a = sample_clip(train, "v01", 0, 2, (64, 64))
        b = sample_clip(train, "v01", 0, 2, (16, 16))
        np.testing.assert_array_equal(a.gaze_points, b.gaze_points)

    def test_out_of_range_rejected(self, small_dataset):
        _, _, train = small_dataset
        with pytest.raises(ValueError, match="out of range"):
            sample_clip(train, "v01", 10, 4, (64, 64))
        with pytest.raises(ValueError, match="out of range"):
            sample_clip(train, "v01", -1, 4, (64, 64))

    def test_unknown_video_rejected(self, small_dataset):
        _, _, train = small_dataset
        with pytest.raises(DatasetError, match="v99"):
            sample_clip(train, "v99", 0, 4, (64, 64))


class TestClipIndex:
    def test_stride_one_counts(self, small_dataset):
        _, spec, train = small_dataset
        params = ClipParams(frames_per_clip=4, height=64, width=64, stride=1)
        index = build_clip_index(train, params)
        per_video = spec.frames_per_video - 4 + 1
        assert len(index) == per_video * len(train.video_ids)

    def test_evaluation_windows_do_not_overlap(self, small_dataset):
        _, spec, train = small_dataset
        params = ClipParams.evaluation(4, 64, 64)
        index = build_clip_index(train, params)
        starts = [ref.start_frame for ref in index if ref.video_id == "v01"]
        assert starts == [0, 4, 8]

    def test_labels_match_last_frame(self, small_dataset):
        _, _, train = small_dataset
        params = ClipParams(frames_per_clip=4, height=64, width=64, stride=1)
        for ref in build_clip_index(train, params):
            assert ref.label == train.records[ref.video_id][ref.start_frame + 3].phase_id


class TestPlanEpoch:
    INDEX = [ClipRef("v", i, 0 if i < 18 else 1) for i in range(20)]

    def test_deterministic_per_seed_and_epoch(self):
        a = plan_epoch(self.INDEX, rebalance=False, shuffle=True, seed=1, epoch=3)
        b = plan_epoch(self.INDEX, rebalance=False, shuffle=True, seed=1, epoch=3)
        np.testing.assert_array_equal(a, b)

    def test_epochs_differ(self):
        a = plan_epoch(self.INDEX, rebalance=False, shuffle=True, seed=1, epoch=0)
        b = plan_epoch(self.INDEX, rebalance=False, shuffle=True, seed=1, epoch=1)
        assert not np.array_equal(a, b)

    def test_no_shuffle_is_identity(self):
        order = plan_epoch(self.INDEX, rebalance=False, shuffle=False, seed=0, epoch=0)
        np.testing.assert_array_equal(order, np.arange(20))

    def test_shuffle_is_permutation(self):
        order = plan_epoch(self.INDEX, rebalance=False, shuffle=True, seed=2, epoch=0)
        assert sorted(order) == list(range(20))

    def test_rebalance_equalizes_class_frequencies(self):
        # 18 clips of class 0 vs 2 of class 1; inverse-frequency draws with
        # replacement should emit both classes about equally often
        counts = np.zeros(2)
        for epoch in range(200):
            order = plan_epoch(self.INDEX, rebalance=True, shuffle=True, seed=0, epoch=epoch)
            labels = np.array([self.INDEX[i].label for i in order])
            counts += np.bincount(labels, minlength=2)
        freq = counts / counts.sum()
        assert abs(freq[0] - 0.5) < 0.02

    def test_empty_index_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            plan_epoch([], rebalance=False, shuffle=False, seed=0, epoch=0)


class TestIterBatches:
    def test_training_batches_are_full(self, small_dataset):
        _, _, train = small_dataset
        params = ClipParams(frames_per_clip=4, height=64, width=64, stride=1)
        # 18 clips, batch 4 -> 4 full batches, remainder dropped
        batches = list(
            iter_batches(train, params, 4, shuffle=True, rebalance=False, seed=0)
        )
        assert len(batches) == 4
        assert all(len(b) == 4 for b in batches)

    def test_evaluation_keeps_partial_batch(self, small_dataset):
        _, _, train = small_dataset
        params = ClipParams.evaluation(4, 64, 64)
        # 6 windows, batch 4 -> batches of 4 and 2
        batches = list(
            iter_batches(train, params, 4, shuffle=False, rebalance=False, seed=0)
        )
        assert [len(b) for b in batches] == [4, 2]

    def test_deterministic_content(self, small_dataset):
        _, _, train = small_dataset
        params = ClipParams(frames_per_clip=4, height=64, width=64, stride=1)
        a = next(iter_batches(train, params, 4, shuffle=True, rebalance=False, seed=9, epoch=2))
        b = next(iter_batches(train, params, 4, shuffle=True, rebalance=False, seed=9, epoch=2))
        for ca, cb in zip(a, b, strict=True):
            assert (ca.video_id, ca.start_frame) == (cb.video_id, cb.start_frame)
            np.testing.assert_array_equal(ca.pixels, cb.pixels)

    def test_bad_batch_size_rejected(self, small_dataset):
        _, _, train = small_dataset
        params = ClipParams(frames_per_clip=4, height=64, width=64)
        with pytest.raises(ValueError, match="batch_size"):
            next(iter_batches(train, params, 0, shuffle=False, rebalance=False, seed=0))
