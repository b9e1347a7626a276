"""Per-clip anomaly score and per-video score series."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .dataset import CLIP_MEAN, CLIP_STD, VideoRecord, to_float_image, preprocess_batch
from .prompt_bank import FINE_NORMAL_INDEX, GENERAL_NORMAL_INDEX


@dataclass
class ScoreSeries:
    video_id: str
    scores: np.ndarray  # one per frame, in [0, 1]
    labels: np.ndarray  # one per frame
    category: str = "NORMAL"
    ego_involved: bool = False
    anomaly_interval: tuple[int, int] | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.scores.shape != self.labels.shape:
            raise ValueError("scores and labels differ in length")
        if not np.all(np.isfinite(self.scores)) or self.scores.min(initial=0) < 0 or self.scores.max(initial=0) > 1:
            raise ValueError(f"scores for {self.video_id!r} must be finite and in [0, 1]")


def similarity_softmax(query: torch.Tensor, prompts: torch.Tensor, tau) -> torch.Tensor:
    """Softmax over ``cos(query, prompt_k) / tau``. ``query`` is (C,) or (N, C)."""
    if (query.norm(dim=-1) == 0).any() or (prompts.norm(dim=-1) == 0).any():
        raise ValueError("zero-norm vector in similarity softmax")
    cos = F.normalize(query, dim=-1) @ F.normalize(prompts, dim=-1).T
    return (cos / tau).softmax(dim=-1)


def anomaly_score(fused, enhanced, fine_text, general_text, tau) -> torch.Tensor:
    """One minus the mean probability of the two "normal" prompts."""
    s_fine = similarity_softmax(fused, fine_text, tau)[..., FINE_NORMAL_INDEX - 1]
    s_general = similarity_softmax(enhanced, general_text, tau)[..., GENERAL_NORMAL_INDEX - 1]
    return 1 - (s_fine + s_general) / 2


@torch.no_grad()
def score_frames(model, frames, mean=CLIP_MEAN, std=CLIP_STD, batch_size: int = 64) -> np.ndarray:
    """Score every clip of a frame sequence; frame 0 copies the first clip score."""
    n = len(frames)
    if n < 2:
        raise ValueError("need at least 2 frames to score a video")
    was_training = model.training
    model.eval()
    pre = []
    for i in range(n):
        pre.append(preprocess_batch(to_float_image(frames[i])[None], mean, std)[0])
    pre = torch.stack(pre)
    clip_scores = []
    for start in range(1, n, batch_size):
        stop = min(n, start + batch_size)
        clip_scores.append(model.clip_scores(pre[start - 1 : stop - 1], pre[start:stop]).double().cpu())
    model.train(was_training)
    scores = torch.cat(clip_scores).clamp(0, 1).numpy()
    return np.concatenate([scores[:1], scores])


def score_video(record: VideoRecord, model, mean=CLIP_MEAN, std=CLIP_STD, batch_size: int = 64) -> ScoreSeries:
    scores = score_frames(model, record.frames, mean, std, batch_size)
    return ScoreSeries(
        record.video_id,
        scores,
        record.frame_labels(),
        record.category,
        record.ego_involved,
        record.anomaly_interval,
    )
