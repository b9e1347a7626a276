import json

import numpy as np
import pytest
from PIL import Image

import oracles
from tthf.dataset import (
    CLIP_MEAN,
    CLIP_STD,
    SYNTHETIC_MEAN,
    SYNTHETIC_STD,
    ClipDataset,
    VideoRecord,
    clip_labels,
    generate_synthetic_dataset,
    iter_clips,
    load_manifest,
    preprocess_frame,
    window_clips,
    write_manifest,
)
from tthf.errors import DatasetError, EmptyVideoError, FormatError, ValidationError


def _frames(n, size=8, seed=0):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=(n, size, size, 3), dtype=np.uint8)


def _write_split(root, split, videos, n_frames=4):
    split_dir = root / split
    split_dir.mkdir(parents=True)
    lines = []
    for vid, start, end, cat, ego in videos:
        fdir = split_dir / vid / "frames"
        fdir.mkdir(parents=True)
        for i in range(n_frames):
            Image.fromarray(np.full((6, 10, 3), 10 * i, np.uint8)).save(fdir / f"{i:06d}.jpg")
        lines.append(json.dumps(dict(video_id=vid, anomaly_start=start, anomaly_end=end, category=cat, ego_involved=ego)))
    (split_dir / "annotations.jsonl").write_text("\n".join(lines) + "\n")


# --- preprocess_frame ---------------------------------------------------------


def test_preprocess_constant_gray_identity():
    img = np.full((224, 224, 3), 128, np.uint8)
    out = preprocess_frame(img)
    assert out.shape == (3, 224, 224)
    for c in range(3):
        np.testing.assert_allclose(out[c], (128 / 255 - CLIP_MEAN[c]) / CLIP_STD[c], atol=1e-6)


def test_preprocess_hd_frame_shape():
    img = Image.new("RGB", (1280, 720), (30, 60, 90))
    assert preprocess_frame(img).shape == (3, 224, 224)


def test_preprocess_checkerboard_matches_scalar_bilinear():
    board = np.array([[0, 255], [255, 0]], dtype=np.uint8)
    img = np.stack([board, 255 - board, board // 2], axis=-1)
    out = preprocess_frame(img, mean=(0, 0, 0), std=(1, 1, 1))
    ref = oracles.bilinear_resize([[[img[y, x, c] / 255 for x in range(2)] for y in range(2)] for c in range(3)], 224, 224)
    np.testing.assert_allclose(out, np.array(ref), atol=1e-6)


def test_preprocess_idempotent_shape():
    img = np.zeros((224, 224, 3), np.uint8)
    assert preprocess_frame(img).shape == (3, 224, 224)


@pytest.mark.parametrize("bad", [np.zeros((5, 5), np.uint8), np.zeros((5, 5, 4), np.uint8), Image.new("L", (4, 4))])
def test_preprocess_rejects_non_rgb(bad):
    with pytest.raises(FormatError):
        preprocess_frame(bad)


# --- window_clips -------------------------------------------------------------


def test_window_five_frames_four_clips():
    rec = VideoRecord("v", _frames(5))
    clips = window_clips(rec)
    assert len(clips) == 4
    assert [c.t for c in clips] == [1, 2, 3, 4]
    assert all(c.prev_frame.shape == c.cur_frame.shape == (3, 224, 224) for c in clips)


def test_window_labels_follow_later_frame():
    rec = VideoRecord("v", np.zeros((25, 2, 2, 3), np.uint8), (10, 20), "OC", True)
    labels = {t: label for t, label, _, _ in clip_labels(rec)}
    assert labels[9] == 0
    assert labels[10] == 1
    for t in range(1, 25):
        assert labels[t] == int(10 <= t <= 20)


def test_window_prompt_indices():
    rec = VideoRecord("v", np.zeros((6, 2, 2, 3), np.uint8), (2, 3), "OO", False)
    for t, label, fine, general in clip_labels(rec):
        assert (label == 1) == (fine != 11) == (general == 1)
        if label:
            assert (fine, general) == (8, 1)


def test_interval_label_sum_invariant():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = int(rng.integers(2, 30))
        start = int(rng.integers(0, n))
        end = int(rng.integers(start, n))
        rec = VideoRecord("v", np.zeros((n, 1, 1, 3), np.uint8), (start, end), "UK", True)
        total = sum(label for _, label, _, _ in clip_labels(rec))
        assert total == len(set(range(start, end + 1)) & set(range(1, n)))


def test_record_needs_two_frames():
    with pytest.raises(EmptyVideoError):
        VideoRecord("v", _frames(1))


def test_record_rejects_interval_past_end():
    with pytest.raises(ValidationError):
        VideoRecord("v", _frames(4), (1, 4), "OC", True)


# --- load_manifest --------------------------------------------------------------


def test_load_manifest_counts(tmp_path):
    _write_split(
        tmp_path,
        "test",
        [("a", 1, 2, "OC", True), ("b", None, None, None, None), ("c", 0, 3, "VP", False)],
    )
    m = load_manifest(tmp_path, "test")
    assert len(m) == 3 and m.split == "test" and m.source == "dota"
    a, b, c = m.records
    assert a.anomaly_interval == (1, 2) and a.ego_involved
    assert b.category == "NORMAL" and b.anomaly_interval is None
    assert c.frame_count == 4
    assert c.frames[0].shape == (6, 10, 3)


def test_load_manifest_end_past_frames(tmp_path):
    _write_split(tmp_path, "test", [("bad", 1, 4, "OC", True)])
    with pytest.raises(ValidationError):
        load_manifest(tmp_path, "test")


def test_load_manifest_start_after_end_names_video(tmp_path):
    _write_split(tmp_path, "test", [("vid42", 3, 1, "OC", True)])
    with pytest.raises(ValidationError, match="vid42"):
        load_manifest(tmp_path, "test")


def test_load_manifest_multi_interval_rejected(tmp_path):
    _write_split(tmp_path, "test", [("m", [1, 3], [2, 3], "OC", True)])
    with pytest.raises(ValidationError, match="multiple"):
        load_manifest(tmp_path, "test")


def test_load_manifest_empty_split(tmp_path):
    (tmp_path / "train").mkdir()
    m = load_manifest(tmp_path, "train")
    assert len(m) == 0


def test_load_manifest_missing_annotations(tmp_path):
    (tmp_path / "train" / "v0" / "frames").mkdir(parents=True)
    with pytest.raises(DatasetError, match="annotation"):
        load_manifest(tmp_path, "train")


def test_write_then_load_roundtrip(tmp_path):
    m = generate_synthetic_dataset(5, 4, 5, 16, split="train")
    write_manifest(m, tmp_path)
    back = load_manifest(tmp_path, "train")
    assert back.source == "synthetic"
    assert back.mean == SYNTHETIC_MEAN and back.std == SYNTHETIC_STD
    assert [r.video_id for r in back.records] == [r.video_id for r in m.records]
    assert [r.anomaly_interval for r in back.records] == [r.anomaly_interval for r in m.records]


# --- synthetic ----------------------------------------------------------------


def test_synthetic_deterministic():
    a = generate_synthetic_dataset(7, 6, 6, 16)
    b = generate_synthetic_dataset(7, 6, 6, 16)
    for ra, rb in zip(a.records, b.records):
        assert ra.video_id == rb.video_id
        assert ra.anomaly_interval == rb.anomaly_interval and ra.category == rb.category
        assert np.asarray(ra.frames).tobytes() == np.asarray(rb.frames).tobytes()


def test_synthetic_has_both_classes():
    m = generate_synthetic_dataset(1, 10, 8, 16)
    kinds = {r.anomaly_interval is None for r in m.records}
    assert kinds == {True, False}


def test_synthetic_anomaly_raises_temporal_difference():
    m = generate_synthetic_dataset(11, 20, 16, 32)
    checked = 0
    for r in m.records:
        if r.anomaly_interval is None:
            continue
        start, end = r.anomaly_interval
        frames = np.asarray(r.frames)
        inside, outside = [], []
        for t in range(1, r.frame_count):
            total = 0.0
            for y in range(frames.shape[1]):
                for x in range(frames.shape[2]):
                    for c in range(3):
                        total += abs(float(frames[t, y, x, c]) - float(frames[t - 1, y, x, c]))
            (inside if start <= t <= end else outside).append(total / frames[0].size)
        assert sum(inside) / len(inside) > sum(outside) / len(outside), r.video_id
        checked += 1
    assert checked == 10


def test_synthetic_clips_fine_index_normal_iff_label0():
    m = generate_synthetic_dataset(2, 6, 5, 16)
    for clip in iter_clips(m):
        assert (clip.fine_prompt_index == 11) == (clip.label == 0)


@pytest.mark.parametrize("kw", [dict(n_videos=1), dict(frames_per_video=3)])
def test_synthetic_preconditions(kw):
    args = dict(seed=0, n_videos=4, frames_per_video=6, image_size=16) | kw
    with pytest.raises(ValueError):
        generate_synthetic_dataset(**args)


def test_clip_dataset_can_drop_normal_clips_of_anomalous_videos():
    m = generate_synthetic_dataset(3, 6, 8, 16)
    full = ClipDataset(m)
    strict = ClipDataset(m, use_normal_clips_from_anomalous_videos=False)
    assert len(full) == 6 * 7
    dropped = sum(
        1 for r in m.records if r.anomaly_interval for t, label, *_ in clip_labels(r) if label == 0
    )
    assert len(strict) == len(full) - dropped
    prev, cur, label, fine, general = full[0]
    assert prev.shape == cur.shape == (3, 224, 224)
