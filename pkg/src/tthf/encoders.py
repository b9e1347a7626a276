"""Visual, temporal high-frequency and text encoders.

Two backbone families share one contract. The visual and high-frequency
encoders map a ``(N, 3, 224, 224)`` batch to a pooled ``(N, C)`` embedding
plus a ``(N, h*w, C)`` spatial feature map. The text encoder maps a list of
prompt strings to ``(K, C)``.
"""

from __future__ import annotations

import re

import torch
from torch import nn

from .prompt_bank import fine_texts, general_texts

BACKBONES = ("toy-conv", "pretrained-clip")


# ---------------------------------------------------------------------------
# functional pieces of the temporal high-frequency branch


def extract_temporal_high_frequency(prev_frame: torch.Tensor, cur_frame: torch.Tensor) -> torch.Tensor:
    """Signed per-pixel difference ``cur - prev`` of normalized frames."""
    if prev_frame.shape != cur_frame.shape:
        raise ValueError(f"frame shapes differ: {tuple(prev_frame.shape)} vs {tuple(cur_frame.shape)}")
    return cur_frame - prev_frame


def fuse_visual(i_prev: torch.Tensor, i_cur: torch.Tensor, high_freq: torch.Tensor) -> torch.Tensor:
    """Average-pool the two frame embeddings and add the high-frequency one."""
    if not (i_prev.shape[-1] == i_cur.shape[-1] == high_freq.shape[-1]):
        raise ValueError("embedding lengths differ")
    return (i_prev + i_cur) / 2 + high_freq


# ---------------------------------------------------------------------------
# toy backbone


class ToyConvBackbone(nn.Module):
    """Three strided conv blocks pooled to a ``spatial x spatial`` grid."""

    def __init__(self, embed_dim: int = 32, spatial: int = 2, zero_bias: bool = False):
        super().__init__()
        self.embed_dim = embed_dim
        self.spatial = (spatial, spatial)
        self.body = nn.Sequential(
            nn.Conv2d(3, 16, kernel_size=8, stride=8),
            nn.ReLU(),
            nn.Conv2d(16, 32, kernel_size=4, stride=4),
            nn.ReLU(),
            nn.Conv2d(32, embed_dim, kernel_size=3, padding=1),
        )
        self.pool = nn.AdaptiveAvgPool2d(spatial)
        if zero_bias:
            for m in self.body:
                if isinstance(m, nn.Conv2d):
                    nn.init.zeros_(m.bias)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        fmap = self.pool(self.body(x)).flatten(2).transpose(1, 2)  # (N, h*w, C)
        return fmap.mean(dim=1), fmap


_TOKEN_RE = re.compile(r"[a-z]+(?:-[a-z]+)*|[^\sa-z]")


def _tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class ToyTextEncoder(nn.Module):
    """Token embedding, mean pooling and a linear projection."""

    def __init__(self, embed_dim: int = 32, vocab: list[str] | None = None):
        super().__init__()
        if vocab is None:
            words = {w for t in general_texts() + fine_texts() for w in _tokenize(t)}
            vocab = sorted(words)
        self.vocab = {w: i + 1 for i, w in enumerate(vocab)}  # 0 = unknown
        self.embed = nn.Embedding(len(self.vocab) + 1, embed_dim)
        self.proj = nn.Linear(embed_dim, embed_dim)
        self.embed_dim = embed_dim

    def forward(self, texts: list[str]) -> torch.Tensor:
        pooled = []
        for text in texts:
            ids = torch.tensor([self.vocab.get(w, 0) for w in _tokenize(text)], dtype=torch.long)
            pooled.append(self.embed(ids.to(self.embed.weight.device)).mean(dim=0))
        return self.proj(torch.stack(pooled))


# ---------------------------------------------------------------------------
# CLIP backbone (optional dependency)


def _import_open_clip():
    try:
        import open_clip
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise ImportError(
            "backbone 'pretrained-clip' needs the open_clip_torch package (pip install 'tthf[clip]')"
        ) from exc
    return open_clip


class ClipVisual(nn.Module):
    """Wrap an open_clip image tower to also return spatial tokens.

    ResNet towers: pooled output of the attention pool; spatial tokens are the
    final map passed through the pool's value and output projections.
    ViT towers: class token and projected patch tokens.
    """

    def __init__(self, visual: nn.Module):
        super().__init__()
        self.visual = visual
        self.is_resnet = hasattr(visual, "attnpool")
        self.embed_dim = visual.output_dim

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        v = self.visual
        if self.is_resnet:
            x = v.stem(x.type(v.conv1.weight.dtype))
            x = v.layer4(v.layer3(v.layer2(v.layer1(x))))
            pooled = v.attnpool(x)
            tokens = x.flatten(2).transpose(1, 2)
            ap = v.attnpool
            tokens = ap.c_proj(ap.v_proj(tokens))
            return pooled, tokens
        prev = getattr(v, "output_tokens", False)
        v.output_tokens = True
        try:
            pooled, tokens = v(x)
        finally:
            v.output_tokens = prev
        if tokens.shape[-1] != pooled.shape[-1] and getattr(v, "proj", None) is not None:
            tokens = tokens @ v.proj
        return pooled, tokens


class ClipText(nn.Module):
    def __init__(self, model: nn.Module, tokenizer):
        super().__init__()
        self.model = model
        self.tokenizer = tokenizer

    def forward(self, texts: list[str]) -> torch.Tensor:
        device = next(self.model.parameters()).device
        return self.model.encode_text(self.tokenizer(texts).to(device))


def build_clip_towers(model_name: str = "RN50", pretrained: str | None = "openai"):
    """Return ``(visual, high_freq, text, embed_dim)`` built from one CLIP checkpoint.

    Both image towers start from the same weights; the text tower keeps the
    rest of the CLIP model (token embedding, transformer, projection).
    """
    import copy

    open_clip = _import_open_clip()
    model, _, _ = open_clip.create_model_and_transforms(model_name, pretrained=pretrained)
    tokenizer = open_clip.get_tokenizer(model_name)
    visual = ClipVisual(model.visual)
    high_freq = ClipVisual(copy.deepcopy(model.visual))
    model.visual = None
    text = ClipText(model, tokenizer)
    return visual, high_freq, text, visual.embed_dim


# ---------------------------------------------------------------------------


class EncoderStack(nn.Module):
    """Frozen visual encoder, trainable high-frequency encoder, text encoder."""

    def __init__(
        self,
        backbone_kind: str = "toy-conv",
        embed_dim: int = 32,
        train_text_encoder: bool = True,
        clip_model: str = "RN50",
        clip_pretrained: str | None = "openai",
        zero_bias: bool = False,
        freeze_visual: bool = True,
    ):
        super().__init__()
        if backbone_kind not in BACKBONES:
            raise ValueError(f"backbone_kind must be one of {BACKBONES}, got {backbone_kind!r}")
        self.backbone_kind = backbone_kind
        if backbone_kind == "toy-conv":
            self.visual = ToyConvBackbone(embed_dim, zero_bias=zero_bias)
            self.high_freq = ToyConvBackbone(embed_dim, zero_bias=zero_bias)
            self.text = ToyTextEncoder(embed_dim)
        else:
            self.visual, self.high_freq, self.text, embed_dim = build_clip_towers(clip_model, clip_pretrained)
        self.embed_dim = embed_dim
        self.freeze_visual = freeze_visual
        if freeze_visual:
            self.visual.requires_grad_(False)
            self.visual.eval()
        self.text.requires_grad_(train_text_encoder)

    def train(self, mode: bool = True):
        super().train(mode)
        if self.freeze_visual:
            self.visual.eval()
        return self

    def encode_high_frequency(self, diff: torch.Tensor) -> torch.Tensor:
        if not torch.isfinite(diff).all():
            raise ValueError("high-frequency input contains non-finite values")
        pooled, _ = self.high_freq(diff)
        return pooled

    def encode_frames(self, prev_frame: torch.Tensor, cur_frame: torch.Tensor):
        """Return ``(I_prev, I_cur, P)``; P is the mean of both frames' spatial maps."""
        if prev_frame.shape != cur_frame.shape:
            raise ValueError("frame shapes differ")
        n = prev_frame.shape[0]
        with torch.set_grad_enabled(torch.is_grad_enabled() and not self.freeze_visual):
            pooled, fmap = self.visual(torch.cat([prev_frame, cur_frame]))
        return pooled[:n], pooled[n:], (fmap[:n] + fmap[n:]) / 2

    def encode_text(self, prompt_texts: list[str]) -> torch.Tensor:
        if not prompt_texts or any(not t for t in prompt_texts):
            raise ValueError("prompt texts must be non-empty strings")
        return self.text(prompt_texts)
