"""Attentive anomaly focusing: visually and linguistically queried cross-attention
over the clip's spatial feature map, fused with the clip representation."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


class CrossAttentionHead(nn.Module):
    """Single-head cross-attention from one query vector onto ``h*w`` keys."""

    def __init__(self, dim: int):
        super().__init__()
        self.query_proj = nn.Linear(dim, dim)
        self.key_proj = nn.Linear(dim, dim)
        self.value_proj = nn.Linear(dim, dim)
        self.scale = math.sqrt(dim)

    def forward(self, query: torch.Tensor, fmap: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """``query`` (N, C), ``fmap`` (N, L, C) -> output (N, C), weights (N, L)."""
        if fmap.shape[-2] == 0:
            raise ValueError("feature map has no rows")
        if query.shape[-1] != fmap.shape[-1]:
            raise ValueError(f"query width {query.shape[-1]} != feature width {fmap.shape[-1]}")
        q = self.query_proj(query).unsqueeze(1)  # (N, 1, C)
        k = self.key_proj(fmap)
        v = self.value_proj(fmap)
        logits = (q @ k.transpose(1, 2)).squeeze(1) / self.scale
        weights = logits.softmax(dim=-1)
        return (weights.unsqueeze(1) @ v).squeeze(1), weights


def cross_attend(query: torch.Tensor, fmap: torch.Tensor, head: CrossAttentionHead) -> torch.Tensor:
    return head(query, fmap)[0]


def soft_text_representation(fused: torch.Tensor, fine_text: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Cosine-weighted sum of the fine-grained prompt embeddings.

    ``fused`` (N, C), ``fine_text`` (M, C). Weights are raw cosines (no
    softmax), so they can be negative. Returns ``(weights (N, M), T_soft (N, C))``.
    """
    if (fused.norm(dim=-1) == 0).any() or (fine_text.norm(dim=-1) == 0).any():
        raise ValueError("zero-norm vector in soft text weighting")
    weights = F.normalize(fused, dim=-1) @ F.normalize(fine_text, dim=-1).T
    return weights, weights @ fine_text


class FusionLayer(nn.Module):
    """Two-layer MLP ``3C -> C -> C`` over ``[VFR, LFR, F]``."""

    def __init__(self, dim: int):
        super().__init__()
        self.fc1 = nn.Linear(3 * dim, dim)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(dim, dim)

    def forward(self, vfr: torch.Tensor, lfr: torch.Tensor, fused: torch.Tensor) -> torch.Tensor:
        if not (vfr.shape[-1] == lfr.shape[-1] == fused.shape[-1]):
            raise ValueError("fusion inputs have different widths")
        return self.fc2(self.act(self.fc1(torch.cat([vfr, lfr, fused], dim=-1))))


def fuse_enhanced(vfr, lfr, fused, layer: FusionLayer) -> torch.Tensor:
    return layer(vfr, lfr, fused)


class AAFM(nn.Module):
    """Both focusing strategies plus the fusion layer."""

    def __init__(self, dim: int, share_ca_heads: bool = False):
        super().__init__()
        self.vfs_head = CrossAttentionHead(dim)
        self.lfs_head = self.vfs_head if share_ca_heads else CrossAttentionHead(dim)
        self.fusion = FusionLayer(dim)

    def visually_focused(self, visual_context: torch.Tensor, fmap: torch.Tensor):
        return self.vfs_head(visual_context, fmap)

    def linguistically_focused(self, t_soft: torch.Tensor, fmap: torch.Tensor):
        return self.lfs_head(t_soft, fmap)

    def forward(self, fused, visual_context, fmap, fine_text) -> dict[str, torch.Tensor]:
        vfr, vfs_weights = self.visually_focused(visual_context, fmap)
        soft_weights, t_soft = soft_text_representation(fused, fine_text)
        lfr, lfs_weights = self.linguistically_focused(t_soft, fmap)
        return {
            "enhanced": self.fusion(vfr, lfr, fused),
            "vfr": vfr,
            "lfr": lfr,
            "soft_weights": soft_weights,
            "vfs_attention": vfs_weights,
            "lfs_attention": lfs_weights,
        }
