"""Dataset loading, synthetic dataset generation, and clip batching.

On-disk layout (shared, bit-exact contract between loader and generator):

    root/
      splits.txt                  # lines: "<video_id> <train|val|test>"
      videos/<video_id>/frames/<frame_idx as 6-digit zero-padded>.jpg
      annotations/phase/<video_id>.csv   # header: frame_idx,phase_id
      annotations/gaze/<video_id>.csv    # header: frame_idx,x_norm,y_norm,valid

CSV files are comma-separated UTF-8 with LF line endings; valid is 0/1.
Frames are stored at 0.5 fps; clips take consecutive stored frames.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

PHASES = (
    "Disinfection",
    "Design",
    "Anesthesia",
    "Incision",
    "Dissection",
    "Hemostasis",
    "Irrigation",
    "Closure",
    "Dressing",
)
SPLITS = ("train", "val", "test")
STORED_FPS = 0.5


class DatasetError(Exception):
    """A dataset directory violates the on-disk layout contract."""


class AnnotationParseError(DatasetError):
    """A malformed annotation row; message carries file and line number."""


@dataclass(frozen=True)
class FrameRecord:
    video_id: str
    frame_idx: int
    phase_id: int
    gaze: tuple[float, float, bool]  # (x_norm, y_norm, valid)


@dataclass(frozen=True)
class DatasetManifest:
    root_path: Path
    split: str
    video_ids: tuple[str, ...]
    fps: float
    frame_size: tuple[int, int]  # (H, W) of stored frames
    records: dict[str, list[FrameRecord]]

    def n_frames(self, video_id: str) -> int:
        return len(self.records[video_id])

    def frame_path(self, video_id: str, frame_idx: int) -> Path:
        return self.root_path / "videos" / video_id / "frames" / f"{frame_idx:06d}.jpg"


@dataclass(frozen=True)
class VideoClip:
    """T consecutive frames with per-frame gaze and an optional phase label.

    ``pixels`` is float32 (T, C, H, W) in [0, 1]; ``gaze_points`` is
    float64 (T, 3) with columns (x_norm, y_norm, valid). The label, when
    present, is the phase of the clip's last frame.
    """

    pixels: np.ndarray
    gaze_points: np.ndarray
    label: int | None
    video_id: str
    start_frame: int


def _parse_csv(path: Path, columns: tuple[str, ...], cast_row) -> list:
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != list(columns):
            raise AnnotationParseError(f"{path}: expected header {','.join(columns)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append(cast_row(row))
            except (ValueError, IndexError) as exc:
                raise AnnotationParseError(f"{path}: line {lineno}: {exc}") from exc
    return rows


def _read_splits(root: Path) -> list[tuple[str, str]]:
    path = root / "splits.txt"
    if not path.is_file():
        raise DatasetError(f"missing splits file: {path}")
    pairs = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2 or parts[1] not in SPLITS:
            raise DatasetError(f"{path}: line {lineno}: expected '<video_id> <train|val|test>'")
        pairs.append((parts[0], parts[1]))
    return pairs


def load_manifest(root: str | Path, split: str) -> DatasetManifest:
    """Load and validate the manifest for one split of a dataset.

    Raises DatasetError naming the offending video when a frames
    directory or annotation file is missing, and AnnotationParseError
    with a line number for malformed CSV rows.
    """
    root = Path(root)
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
    video_ids = tuple(vid for vid, s in _read_splits(root) if s == split)

    records: dict[str, list[FrameRecord]] = {}
    for vid in video_ids:
        frames_dir = root / "videos" / vid / "frames"
        phase_csv = root / "annotations" / "phase" / f"{vid}.csv"
        gaze_csv = root / "annotations" / "gaze" / f"{vid}.csv"
        if not frames_dir.is_dir():
            raise DatasetError(f"video {vid}: missing frames directory {frames_dir}")
        if not phase_csv.is_file():
            raise DatasetError(f"video {vid}: missing phase annotation file {phase_csv}")
        if not gaze_csv.is_file():
            raise DatasetError(f"video {vid}: missing gaze annotation file {gaze_csv}")

        phase_rows = _parse_csv(
            phase_csv, ("frame_idx", "phase_id"), lambda r: (int(r[0]), int(r[1]))
        )
        gaze_rows = _parse_csv(
            gaze_csv,
            ("frame_idx", "x_norm", "y_norm", "valid"),
            lambda r: (int(r[0]), float(r[1]), float(r[2]), int(r[3])),
        )
        gaze_by_idx = {r[0]: r[1:] for r in gaze_rows}
        if set(gaze_by_idx) != {r[0] for r in phase_rows}:
            raise DatasetError(f"video {vid}: phase and gaze annotations cover different frames")

        vid_records = []
        for frame_idx, phase_id in sorted(phase_rows):
            if not 0 <= phase_id < len(PHASES):
                raise DatasetError(f"video {vid}: frame {frame_idx}: phase_id {phase_id} out of range")
            frame_file = frames_dir / f"{frame_idx:06d}.jpg"
            if not frame_file.is_file():
                raise DatasetError(f"video {vid}: missing frame file {frame_file}")
            x, y, valid = gaze_by_idx[frame_idx]
            vid_records.append(FrameRecord(vid, frame_idx, phase_id, (x, y, bool(valid))))
        records[vid] = vid_records

    frame_size = (0, 0)
    if video_ids:
        first = records[video_ids[0]][0]
        with Image.open(root / "videos" / first.video_id / "frames" / f"{first.frame_idx:06d}.jpg") as im:
            frame_size = (im.height, im.width)
    return DatasetManifest(
        root_path=root,
        split=split,
        video_ids=video_ids,
        fps=STORED_FPS,
        frame_size=frame_size,
        records=records,
    )


def sample_clip(
    manifest: DatasetManifest,
    video_id: str,
    start_frame: int,
    frames_per_clip: int,
    resize: tuple[int, int],
    rng_seed: int = 0,
) -> VideoClip:
    """Load T consecutive frames as a clip resized to (H, W), pixels in [0, 1].

    Gaze coordinates are stored normalized so they carry through the
    resize unchanged. The clip label is the phase of the last frame.
    ``rng_seed`` is reserved for augmentation hooks; loading itself is
    deterministic.
    """
    if video_id not in manifest.records:
        raise DatasetError(f"video {video_id!r} not in manifest ({manifest.split} split)")
    vid_records = manifest.records[video_id]
    if start_frame < 0 or start_frame + frames_per_clip > len(vid_records):
        raise ValueError(
            f"clip [{start_frame}, {start_frame + frames_per_clip}) out of range for "
            f"video {video_id} with {len(vid_records)} frames"
        )
    height, width = resize
    frames = []
    gaze = np.zeros((frames_per_clip, 3), dtype=np.float64)
    for i, rec in enumerate(vid_records[start_frame : start_frame + frames_per_clip]):
        with Image.open(manifest.frame_path(video_id, rec.frame_idx)) as im:
            im = im.convert("RGB")
            if (im.height, im.width) != (height, width):
                im = im.resize((width, height), Image.BILINEAR)
            frames.append(np.asarray(im, dtype=np.float32) / 255.0)
        gaze[i] = (rec.gaze[0], rec.gaze[1], float(rec.gaze[2]))
    pixels = np.stack(frames).transpose(0, 3, 1, 2)  # (T, H, W, C) -> (T, C, H, W)
    label = vid_records[start_frame + frames_per_clip - 1].phase_id
    return VideoClip(
        pixels=pixels, gaze_points=gaze, label=label, video_id=video_id, start_frame=start_frame
    )


# ---------------------------------------------------------------------------
# Synthetic dataset generation
# ---------------------------------------------------------------------------

# Distinct saturated colors, one per phase class.
_PALETTE = np.array(
    [
        (230, 30, 30),
        (60, 180, 75),
        (0, 90, 210),
        (255, 225, 25),
        (145, 30, 180),
        (70, 240, 240),
        (240, 50, 230),
        (245, 130, 48),
        (250, 250, 250),
    ],
    dtype=np.uint8,
)
_BACKGROUND = 90  # mid-gray, well away from the palette and the mask overlay gray


@dataclass(frozen=True)
class SyntheticSpec:
    """Shape of a generated dataset.

    Each frame shows a class-colored square on a noisy gray background;
    the gaze point sits on the square (uniform jitter of at most
    ``gaze_noise_px``), so gaze marks the class-identifying region. Frames
    of a video are split into contiguous phase segments, one per class in
    order, with lengths proportional to ``phase_mix`` (equal when None).
    """

    n_train: int = 14
    n_val: int = 2
    n_test: int = 5
    frames_per_video: int = 40
    frame_hw: tuple[int, int] = (64, 64)
    n_classes: int = 9
    pattern_size: int | None = None  # default: frame height // 4
    gaze_noise_px: float = 2.0
    phase_mix: tuple[float, ...] | None = None
    jpeg_quality: int = 95

    def __post_init__(self):
        if not 1 <= self.n_classes <= len(PHASES):
            raise ValueError(f"n_classes must be in [1, {len(PHASES)}], got {self.n_classes}")
        if self.phase_mix is not None and len(self.phase_mix) != self.n_classes:
            raise ValueError("phase_mix must have one entry per class")

    @property
    def n_videos(self) -> int:
        return self.n_train + self.n_val + self.n_test

    @property
    def effective_pattern_size(self) -> int:
        return self.pattern_size if self.pattern_size is not None else self.frame_hw[0] // 4


@dataclass(frozen=True)
class FramePlacement:
    """Where the generator put the pattern and the gaze for one frame."""

    video_id: str
    frame_idx: int
    class_id: int
    top: int
    left: int
    size: int
    gaze_x_norm: float
    gaze_y_norm: float


def _video_ids(spec: SyntheticSpec) -> list[tuple[str, str]]:
    ids = []
    for i in range(spec.n_videos):
        split = "train" if i < spec.n_train else "val" if i < spec.n_train + spec.n_val else "test"
        ids.append((f"v{i + 1:02d}", split))
    return ids


def _segment_classes(spec: SyntheticSpec) -> np.ndarray:
    """Per-frame class id: contiguous segments, one per class in order."""
    mix = np.asarray(spec.phase_mix if spec.phase_mix is not None else [1.0] * spec.n_classes)
    bounds = np.round(np.cumsum(mix) / mix.sum() * spec.frames_per_video).astype(int)
    classes = np.zeros(spec.frames_per_video, dtype=int)
    start = 0
    for cls, end in enumerate(bounds):
        classes[start:end] = cls
        start = end
    return classes


def _frame_placement(
    spec: SyntheticSpec, seed: int, video_idx: int, frame_idx: int, class_id: int
) -> FramePlacement:
    height, width = spec.frame_hw
    size = spec.effective_pattern_size
    rng = np.random.default_rng(np.random.SeedSequence([seed, video_idx, frame_idx, 0]))
    top = int(rng.integers(0, height - size + 1))
    left = int(rng.integers(0, width - size + 1))
    noise = rng.uniform(-spec.gaze_noise_px, spec.gaze_noise_px, size=2)
    gaze_x = float(np.clip((left + size / 2 + noise[0]) / width, 0.0, 1.0))
    gaze_y = float(np.clip((top + size / 2 + noise[1]) / height, 0.0, 1.0))
    vid = f"v{video_idx + 1:02d}"
    return FramePlacement(
        vid, frame_idx, class_id, top, left, size, round(gaze_x, 6), round(gaze_y, 6)
    )


def synthetic_placements(spec: SyntheticSpec, seed: int) -> list[FramePlacement]:
    """Recompute the generator's placements without touching the disk.

    Pure function of (spec, seed); shares the placement code path with
    generate_synthetic_dataset, so it serves as its placement log.
    """
    classes = _segment_classes(spec)
    out = []
    for video_idx in range(spec.n_videos):
        for frame_idx in range(spec.frames_per_video):
            out.append(_frame_placement(spec, seed, video_idx, frame_idx, int(classes[frame_idx])))
    return out


def _render_frame(spec: SyntheticSpec, seed: int, video_idx: int, placement: FramePlacement) -> np.ndarray:
    height, width = spec.frame_hw
    rng = np.random.default_rng(
        np.random.SeedSequence([seed, video_idx, placement.frame_idx, 1])
    )
    frame = np.clip(
        _BACKGROUND + rng.normal(0.0, 8.0, size=(height, width, 1)), 0, 255
    ).astype(np.uint8)
    frame = np.repeat(frame, 3, axis=2)
    t, l, s = placement.top, placement.left, placement.size
    frame[t : t + s, l : l + s] = _PALETTE[placement.class_id]
    return frame


def generate_synthetic_dataset(spec: SyntheticSpec, root: str | Path, seed: int) -> DatasetManifest:
    """Write a synthetic dataset in the standard layout; returns the train manifest.

    Byte-identical output for a fixed (spec, seed). Gaze valid flags are
    all 1; placements are reproducible via synthetic_placements.
    """
    root = Path(root)
    (root / "videos").mkdir(parents=True, exist_ok=True)
    (root / "annotations" / "phase").mkdir(parents=True, exist_ok=True)
    (root / "annotations" / "gaze").mkdir(parents=True, exist_ok=True)

    ids = _video_ids(spec)
    with open(root / "splits.txt", "w", encoding="utf-8", newline="\n") as f:
        for vid, split in ids:
            f.write(f"{vid} {split}\n")

    classes = _segment_classes(spec)
    for video_idx, (vid, _) in enumerate(ids):
        frames_dir = root / "videos" / vid / "frames"
        frames_dir.mkdir(parents=True, exist_ok=True)
        phase_lines = ["frame_idx,phase_id"]
        gaze_lines = ["frame_idx,x_norm,y_norm,valid"]
        for frame_idx in range(spec.frames_per_video):
            placement = _frame_placement(spec, seed, video_idx, frame_idx, int(classes[frame_idx]))
            frame = _render_frame(spec, seed, video_idx, placement)
            Image.fromarray(frame).save(
                frames_dir / f"{frame_idx:06d}.jpg", quality=spec.jpeg_quality
            )
            phase_lines.append(f"{frame_idx},{placement.class_id}")
            gaze_lines.append(
                f"{frame_idx},{placement.gaze_x_norm:.6f},{placement.gaze_y_norm:.6f},1"
            )
        for sub, lines in (("phase", phase_lines), ("gaze", gaze_lines)):
            with open(root / "annotations" / sub / f"{vid}.csv", "w", encoding="utf-8", newline="\n") as f:
                f.write("\n".join(lines) + "\n")
    return load_manifest(root, "train")


# ---------------------------------------------------------------------------
# Clip indexing and batching
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClipParams:
    """How clips are cut from stored frames.

    stride 1 walks every start frame (training); stride == frames_per_clip
    gives non-overlapping consecutive windows (evaluation).
    """

    frames_per_clip: int
    height: int
    width: int
    stride: int = 1

    @classmethod
    def evaluation(cls, frames_per_clip: int, height: int, width: int) -> "ClipParams":
        return cls(frames_per_clip, height, width, stride=frames_per_clip)


@dataclass(frozen=True)
class ClipRef:
    video_id: str
    start_frame: int
    label: int


def build_clip_index(manifest: DatasetManifest, params: ClipParams) -> list[ClipRef]:
    """Enumerate clip windows over every video; label = last frame's phase."""
    index = []
    for vid in manifest.video_ids:
        recs = manifest.records[vid]
        for start in range(0, len(recs) - params.frames_per_clip + 1, params.stride):
            index.append(ClipRef(vid, start, recs[start + params.frames_per_clip - 1].phase_id))
    return index


def plan_epoch(
    index: list[ClipRef], rebalance: bool, shuffle: bool, seed: int, epoch: int
) -> np.ndarray:
    """Deterministic order of clip positions for one epoch.

    With rebalance, clips are drawn with replacement, weighted by inverse
    class frequency, so every present class has equal expected frequency.
    """
    if not index:
        raise ValueError("empty clip index: manifest contains no usable clips")
    rng = np.random.default_rng(np.random.SeedSequence([seed, epoch]))
    n = len(index)
    if rebalance:
        labels = np.array([ref.label for ref in index])
        _, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
        weights = 1.0 / counts[inverse]
        return rng.choice(n, size=n, replace=True, p=weights / weights.sum())
    if shuffle:
        return rng.permutation(n)
    return np.arange(n)


def iter_batches(
    manifest: DatasetManifest,
    params: ClipParams,
    batch_size: int,
    shuffle: bool,
    rebalance: bool,
    seed: int,
    epoch: int = 0,
    drop_last: bool | None = None,
):
    """Yield lists of VideoClip for one epoch, deterministically for a seed.

    Training epochs (shuffle or rebalance) drop a trailing partial batch
    so every step sees a full batch; evaluation keeps it.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    index = build_clip_index(manifest, params)
    order = plan_epoch(index, rebalance=rebalance, shuffle=shuffle, seed=seed, epoch=epoch)
    if drop_last is None:
        drop_last = shuffle or rebalance
    for lo in range(0, len(order), batch_size):
        positions = order[lo : lo + batch_size]
        if drop_last and len(positions) < batch_size:
            return
        yield [
            sample_clip(
                manifest,
                index[pos].video_id,
                index[pos].start_frame,
                params.frames_per_clip,
                (params.height, params.width),
            )
            for pos in positions
        ]
