"""Bidirectional video-text contrastive losses against fine-grained and general prompts.

Prompt targets are 1-based, matching the prompt bank indices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

INIT_TAU = 0.07
MIN_TAU = 0.01  # 1/tau <= 100


@dataclass
class Batch:
    fused: torch.Tensor  # (N, C)
    enhanced: torch.Tensor  # (N, C)
    fine_targets: torch.Tensor  # (N,) in [1, 11]
    general_targets: torch.Tensor  # (N,) in [1, 2]
    fine_text: torch.Tensor  # (11, C)
    general_text: torch.Tensor  # (2, C)

    def __post_init__(self):
        n = self.fused.shape[0]
        if self.enhanced.shape[0] != n or self.fine_targets.shape[0] != n or self.general_targets.shape[0] != n:
            raise ValueError("batch row counts differ")
        for name, targets, d in (
            ("fine", self.fine_targets, self.fine_text.shape[0]),
            ("general", self.general_targets, self.general_text.shape[0]),
        ):
            if n and (targets.min() < 1 or targets.max() > d):
                raise ValueError(f"{name} targets must lie in [1, {d}]")


class Temperature(nn.Module):
    """Learned contrastive temperature stored as ``log tau``."""

    def __init__(self, init: float = INIT_TAU, min_tau: float = MIN_TAU):
        super().__init__()
        self.log_tau = nn.Parameter(torch.tensor(math.log(init)))
        self.min_tau = min_tau

    def forward(self) -> torch.Tensor:
        return self.log_tau.exp().clamp(min=self.min_tau)


def _logits(x: torch.Tensor, text: torch.Tensor, tau, cosine: bool) -> torch.Tensor:
    if cosine:
        x, text = F.normalize(x, dim=-1), F.normalize(text, dim=-1)
    logits = x @ text.T / tau
    if not torch.isfinite(logits).all():
        raise FloatingPointError("non-finite contrastive logits")
    return logits


def visual_axis_loss(x: torch.Tensor, text: torch.Tensor, targets: torch.Tensor, tau, cosine: bool = False):
    """Mean over clips of the cross-entropy against all D prompts."""
    return F.cross_entropy(_logits(x, text, tau, cosine), targets.long() - 1)


def text_axis_loss(x: torch.Tensor, text: torch.Tensor, targets: torch.Tensor, tau, cosine: bool = False):
    """Mean over represented prompts of ``-log(sum_pos exp / sum_all exp)``.

    Prompts without a positive clip in the batch are skipped.
    """
    logits = _logits(x, text, tau, cosine).T  # (D, N)
    classes = torch.arange(1, text.shape[0] + 1, device=targets.device)
    positive = classes[:, None] == targets[None, :]  # (D, N)
    present = positive.any(dim=1)
    if not present.any():
        raise ValueError("no prompt class is represented in the batch")
    logits = logits[present]
    pos_lse = logits.masked_fill(~positive[present], float("-inf")).logsumexp(dim=1)
    return (logits.logsumexp(dim=1) - pos_lse).mean()


def loss_visual_fine(batch: Batch, tau, cosine: bool = False):
    return visual_axis_loss(batch.fused, batch.fine_text, batch.fine_targets, tau, cosine)


def loss_text_fine(batch: Batch, tau, cosine: bool = False):
    return text_axis_loss(batch.fused, batch.fine_text, batch.fine_targets, tau, cosine)


def loss_general(batch: Batch, tau, cosine: bool = False):
    """``(visual-axis, text-axis)`` losses of the enhanced clips against the 2 general prompts."""
    return (
        visual_axis_loss(batch.enhanced, batch.general_text, batch.general_targets, tau, cosine),
        text_axis_loss(batch.enhanced, batch.general_text, batch.general_targets, tau, cosine),
    )


def loss_components(batch: Batch, tau, cosine: bool = False) -> dict[str, torch.Tensor]:
    vg, tg = loss_general(batch, tau, cosine)
    parts = {
        "L_vf": loss_visual_fine(batch, tau, cosine),
        "L_tf": loss_text_fine(batch, tau, cosine),
        "L_vg": vg,
        "L_tg": tg,
    }
    parts["total"] = combine(parts["L_vf"], parts["L_tf"], parts["L_vg"], parts["L_tg"])
    return parts


def combine(l_vf, l_tf, l_vg, l_tg):
    return ((l_vf + l_tf) + (l_vg + l_tg)) / 2


def total_loss(batch: Batch, tau, cosine: bool = False) -> torch.Tensor:
    return loss_components(batch, tau, cosine)["total"]
