"""DoTA-style video ingestion, two-frame clip windowing and synthetic data.

On-disk layout::

    <root>/<split>/<video_id>/frames/000000.jpg ...
    <root>/<split>/annotations.jsonl

Each annotation line is ``{"video_id", "anomaly_start", "anomaly_end",
"category", "ego_involved"}`` with nulls for normal videos.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from torch.utils.data import Dataset

from .errors import DatasetError, EmptyVideoError, FormatError, ValidationError
from .prompt_bank import ANOMALY_CATEGORIES, CATEGORIES, map_category

log = logging.getLogger(__name__)

INPUT_SIZE = 224
CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)
SYNTHETIC_MEAN = (0.5, 0.5, 0.5)
SYNTHETIC_STD = (0.5, 0.5, 0.5)

SPLITS = ("train", "test")
IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png")


class LazyFrames(Sequence):
    """Frame files decoded on access."""

    def __init__(self, paths: Sequence[Path]):
        self.paths = list(paths)

    def __len__(self) -> int:
        return len(self.paths)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return LazyFrames(self.paths[idx])
        with Image.open(self.paths[idx]) as im:
            return np.asarray(im.convert("RGB"))


@dataclass(frozen=True)
class VideoRecord:
    video_id: str
    frames: Sequence  # of HxWx3 uint8 arrays
    anomaly_interval: tuple[int, int] | None = None
    category: str = "NORMAL"
    ego_involved: bool = False

    def __post_init__(self):
        n = len(self.frames)
        if n < 2:
            raise EmptyVideoError(f"video {self.video_id!r} has {n} frame(s); need at least 2")
        if self.category not in CATEGORIES:
            raise ValidationError(f"video {self.video_id!r}: unknown category {self.category!r}")
        if self.anomaly_interval is not None:
            start, end = self.anomaly_interval
            if start > end:
                raise ValidationError(f"video {self.video_id!r}: anomaly start {start} > end {end}")
            if start < 0 or end >= n:
                raise ValidationError(
                    f"video {self.video_id!r}: anomaly interval ({start}, {end}) outside [0, {n - 1}]"
                )

    @property
    def frame_count(self) -> int:
        return len(self.frames)

    def frame_labels(self) -> np.ndarray:
        labels = np.zeros(self.frame_count, dtype=np.int64)
        if self.anomaly_interval is not None:
            start, end = self.anomaly_interval
            labels[start : end + 1] = 1
        return labels


@dataclass
class ClipSample:
    video_id: str
    t: int
    prev_frame: np.ndarray
    cur_frame: np.ndarray
    label: int
    fine_prompt_index: int
    general_prompt_index: int


@dataclass
class DatasetManifest:
    records: list[VideoRecord]
    split: str
    source: str
    mean: tuple[float, float, float] = CLIP_MEAN
    std: tuple[float, float, float] = CLIP_STD

    def __post_init__(self):
        ids = [r.video_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate video ids in {self.split} manifest")

    def __len__(self) -> int:
        return len(self.records)


# ---------------------------------------------------------------------------
# preprocessing


def to_float_image(image) -> torch.Tensor:
    if isinstance(image, Image.Image):
        if image.mode != "RGB":
            raise FormatError(f"expected an RGB image, got PIL mode {image.mode!r}")
        image = np.asarray(image)
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise FormatError(f"expected HxWx3 RGB array, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise FormatError("image has an empty dimension")
    t = torch.from_numpy(np.array(arr))
    if arr.dtype == np.uint8:
        return t.to(torch.float32) / 255.0
    return t.to(torch.float32)


def preprocess_batch(images: torch.Tensor, mean=CLIP_MEAN, std=CLIP_STD, size: int = INPUT_SIZE) -> torch.Tensor:
    """``(N, H, W, 3)`` float images in [0, 1] -> normalized ``(N, 3, size, size)``."""
    x = images.permute(0, 3, 1, 2)
    if x.shape[-2:] != (size, size):
        x = F.interpolate(x, size=(size, size), mode="bilinear", align_corners=False, antialias=True)
    m = torch.tensor(mean, dtype=x.dtype).view(1, 3, 1, 1)
    s = torch.tensor(std, dtype=x.dtype).view(1, 3, 1, 1)
    return (x - m) / s


def preprocess_frame(image, mean=CLIP_MEAN, std=CLIP_STD) -> np.ndarray:
    """Bilinear resize to 224x224 then per-channel normalization.

    Accepts a PIL RGB image or an ``HxWx3`` array (uint8 in [0, 255] or float
    in [0, 1]). Returns a float32 ``3x224x224`` array.
    """
    x = to_float_image(image)
    return preprocess_batch(x[None], mean, std)[0].numpy()


# ---------------------------------------------------------------------------
# windowing


def clip_labels(record: VideoRecord) -> list[tuple[int, int, int, int]]:
    """``(t, label, fine_index, general_index)`` for every clip ``t = 1..n-1``.

    A clip is labelled by its later frame.
    """
    if record.frame_count < 2:
        raise EmptyVideoError(f"video {record.video_id!r} has fewer than 2 frames")
    anomalous_idx = map_category(record.category, record.ego_involved)
    normal_idx = map_category("NORMAL", False)
    frame_labels = record.frame_labels()
    out = []
    for t in range(1, record.frame_count):
        label = int(frame_labels[t])
        fine, general = anomalous_idx if label else normal_idx
        out.append((t, label, fine, general))
    return out


def window_clips(record: VideoRecord, mean=CLIP_MEAN, std=CLIP_STD) -> list[ClipSample]:
    frames = [preprocess_frame(record.frames[i], mean, std) for i in range(record.frame_count)]
    return [
        ClipSample(record.video_id, t, frames[t - 1], frames[t], label, fine, general)
        for t, label, fine, general in clip_labels(record)
    ]


class ClipDataset(Dataset):
    """Flat index over every clip of a manifest.

    Items are ``(prev, cur, label, fine_index, general_index)`` with frames
    already preprocessed to ``3x224x224`` tensors.
    """

    def __init__(self, manifest: DatasetManifest, use_normal_clips_from_anomalous_videos: bool = True):
        self.manifest = manifest
        self.index: list[tuple[int, int, int, int, int]] = []
        for r_idx, record in enumerate(manifest.records):
            for t, label, fine, general in clip_labels(record):
                if (
                    not use_normal_clips_from_anomalous_videos
                    and record.anomaly_interval is not None
                    and label == 0
                ):
                    continue
                self.index.append((r_idx, t, label, fine, general))

    def __len__(self) -> int:
        return len(self.index)

    def __getitem__(self, i):
        r_idx, t, label, fine, general = self.index[i]
        record = self.manifest.records[r_idx]
        pair = torch.stack([to_float_image(record.frames[t - 1]), to_float_image(record.frames[t])])
        pre = preprocess_batch(pair, self.manifest.mean, self.manifest.std)
        return pre[0], pre[1], label, fine, general

    def labels(self) -> np.ndarray:
        return np.array([entry[2] for entry in self.index], dtype=np.int64)


# ---------------------------------------------------------------------------
# on-disk manifests


def _parse_annotation(obj: dict, line_no: int) -> tuple[str, tuple[int, int] | None, str, bool]:
    try:
        video_id = str(obj["video_id"])
        start, end = obj["anomaly_start"], obj["anomaly_end"]
        category = obj["category"]
        ego = obj["ego_involved"]
    except KeyError as exc:
        raise ValidationError(f"annotations line {line_no}: missing field {exc}") from None
    if isinstance(start, (list, tuple)) or isinstance(end, (list, tuple)):
        raise ValidationError(f"video {video_id!r}: multiple anomaly intervals are not supported")
    if (start is None) != (end is None):
        raise ValidationError(f"video {video_id!r}: anomaly_start and anomaly_end must both be set or both null")
    interval = None if start is None else (int(start), int(end))
    if category is None:
        category = "NORMAL"
    if interval is None and category != "NORMAL":
        raise ValidationError(f"video {video_id!r}: category {category} without an anomaly interval")
    if interval is not None and category not in ANOMALY_CATEGORIES:
        raise ValidationError(f"video {video_id!r}: anomalous video with category {category!r}")
    return video_id, interval, category, bool(ego) if ego is not None else False


def _frame_paths(video_dir: Path) -> list[Path]:
    frames_dir = video_dir / "frames"
    if not frames_dir.is_dir():
        raise DatasetError(f"missing frames directory {frames_dir}")
    return sorted(p for p in frames_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_manifest(root_path: str | Path, split: str) -> DatasetManifest:
    """Read ``<root>/<split>/annotations.jsonl`` and index the frame files.

    Frames are decoded lazily. An empty split directory gives an empty
    manifest.
    """
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
    root = Path(root_path)
    split_dir = root / split
    if not split_dir.is_dir():
        raise DatasetError(f"split directory {split_dir} does not exist")
    ann_path = split_dir / "annotations.jsonl"
    if not ann_path.is_file():
        if any(p.is_dir() for p in split_dir.iterdir()):
            raise DatasetError(f"missing annotation file {ann_path}")
        return DatasetManifest([], split, "dota")

    records = []
    with ann_path.open() as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{ann_path}:{line_no}: {exc}") from None
            video_id, interval, category, ego = _parse_annotation(obj, line_no)
            frames = LazyFrames(_frame_paths(split_dir / video_id))
            records.append(VideoRecord(video_id, frames, interval, category, ego))
    source = "synthetic" if (split_dir / ".synthetic").exists() else "dota"
    mean, std = (SYNTHETIC_MEAN, SYNTHETIC_STD) if source == "synthetic" else (CLIP_MEAN, CLIP_STD)
    return DatasetManifest(records, split, source, mean, std)


def write_manifest(manifest: DatasetManifest, root_path: str | Path) -> Path:
    """Write a manifest to the on-disk layout read by :func:`load_manifest`."""
    split_dir = Path(root_path) / manifest.split
    split_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for record in manifest.records:
        frames_dir = split_dir / record.video_id / "frames"
        frames_dir.mkdir(parents=True, exist_ok=True)
        for i in range(record.frame_count):
            Image.fromarray(np.asarray(record.frames[i])).save(frames_dir / f"{i:06d}.jpg", quality=95)
        start, end = record.anomaly_interval if record.anomaly_interval else (None, None)
        lines.append(
            json.dumps(
                {
                    "video_id": record.video_id,
                    "anomaly_start": start,
                    "anomaly_end": end,
                    "category": record.category if start is not None else None,
                    "ego_involved": record.ego_involved if start is not None else None,
                }
            )
        )
    (split_dir / "annotations.jsonl").write_text("\n".join(lines) + ("\n" if lines else ""))
    if manifest.source == "synthetic":
        (split_dir / ".synthetic").touch()
    return split_dir


# ---------------------------------------------------------------------------
# synthetic data

_OBJECT_COLORS = np.array(
    [[230, 40, 40], [40, 200, 60], [240, 220, 30], [30, 90, 230], [220, 60, 220]], dtype=np.float32
)


@dataclass
class _Actor:
    size: int
    color: np.ndarray
    pos: np.ndarray
    vel: np.ndarray = field(default_factory=lambda: np.zeros(2))


def _smooth_texture(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    coarse = rng.uniform(60, 190, size=(max(2, height // 12), max(2, width // 12), 3)).astype(np.uint8)
    tex = np.asarray(Image.fromarray(coarse).resize((width, height), Image.BILINEAR), dtype=np.float32)
    # horizon band and road surface give every frame a fixed layout
    tex[height // 2 :, :, :] = 0.55 * tex[height // 2 :, :, :] + 0.45 * 90.0
    return tex


def _paint(frame: np.ndarray, actor: _Actor) -> None:
    s = actor.size
    y, x = int(round(actor.pos[0])), int(round(actor.pos[1]))
    h, w = frame.shape[:2]
    y0, y1 = max(0, y), min(h, y + s)
    x0, x1 = max(0, x), min(w, x + s)
    if y0 < y1 and x0 < x1:
        frame[y0:y1, x0:x1] = actor.color


def _render_video(
    rng: np.random.Generator, n_frames: int, size: int, interval: tuple[int, int] | None, ego: bool
) -> np.ndarray:
    pad = size // 2
    canvas_h, canvas_w = size + 2 * pad, size * 3 + n_frames * 3
    texture = _smooth_texture(rng, canvas_h, canvas_w)
    speed = rng.uniform(1.0, 2.0)
    origin = np.array([pad, pad], dtype=np.float64)

    actors = []
    for k in range(3):
        s = max(2, size // 5 if k == 0 else size // 8)
        pos = rng.uniform([size * 0.35, 0], [size * 0.7, size - s])
        vel = rng.uniform([-0.3, -1.0], [0.3, 1.0])
        actors.append(_Actor(s, _OBJECT_COLORS[rng.integers(len(_OBJECT_COLORS))], pos, vel))

    jitter = size / 5.0
    frames = np.empty((n_frames, size, size, 3), dtype=np.uint8)
    for t in range(n_frames):
        inside = interval is not None and interval[0] <= t <= interval[1]
        offset = origin + np.array([0.0, speed * t])
        if inside and ego:
            offset = offset + rng.uniform(-jitter, jitter, size=2)
        oy = int(round(np.clip(offset[0], 0, canvas_h - size)))
        ox = int(round(np.clip(offset[1], 0, canvas_w - size)))
        frame = texture[oy : oy + size, ox : ox + size].copy()
        for k, actor in enumerate(actors):
            if inside and not ego and k == 0:
                actor.pos = rng.uniform([size * 0.2, 0], [size * 0.8, size - actor.size])
            else:
                actor.pos = np.clip(actor.pos + actor.vel, 0, size - actor.size)
            _paint(frame, actor)
        frames[t] = np.clip(frame, 0, 255).astype(np.uint8)
    return frames


def generate_synthetic_dataset(
    seed: int,
    n_videos: int,
    frames_per_video: int,
    image_size: int = 64,
    split: str = "train",
) -> DatasetManifest:
    """Deterministic toy driving videos with injected anomalies.

    Normal videos pan smoothly over a textured scene with a few slowly drifting
    objects. Half the videos carry one anomaly interval: ego categories shake
    the whole view, non-ego categories make one object jump around erratically.
    """
    if n_videos < 2:
        raise ValueError("n_videos must be >= 2")
    if frames_per_video < 4:
        raise ValueError("frames_per_video must be >= 4")
    if image_size < 8:
        raise ValueError("image_size must be >= 8")
    rng = np.random.default_rng(seed)
    n_anomalous = n_videos // 2
    is_anomalous = rng.permutation(np.array([True] * n_anomalous + [False] * (n_videos - n_anomalous)))

    records = []
    for v in range(n_videos):
        vrng = np.random.default_rng([seed, v])
        interval, category, ego = None, "NORMAL", False
        if is_anomalous[v]:
            category = ANOMALY_CATEGORIES[vrng.integers(len(ANOMALY_CATEGORIES))]
            ego = bool(vrng.integers(2))
            start = int(vrng.integers(2, frames_per_video - 2))
            length = int(vrng.integers(3, max(4, frames_per_video // 2 + 1)))
            interval = (start, min(start + length - 1, frames_per_video - 1))
        frames = _render_video(vrng, frames_per_video, image_size, interval, ego)
        records.append(VideoRecord(f"{split}_{v:05d}", frames, interval, category, ego))
    return DatasetManifest(records, split, "synthetic", SYNTHETIC_MEAN, SYNTHETIC_STD)


def iter_clips(manifest: DatasetManifest) -> Iterator[ClipSample]:
    for record in manifest.records:
        yield from window_clips(record, manifest.mean, manifest.std)
