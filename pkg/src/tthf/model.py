"""Full detector wiring (encoders -> THFM -> AAFM -> scores) and a linear-probe baseline."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .aafm import AAFM
from .encoders import EncoderStack, extract_temporal_high_frequency, fuse_visual
from .objective import Batch, Temperature, loss_components
from .prompt_bank import fine_texts, general_texts
from .scoring import anomaly_score


class TTHF(nn.Module):
    """Text-driven detector with temporal high-frequency modelling.

    ``use_thfm=False`` zeroes the high-frequency embedding and
    ``use_aafm=False`` uses the fused representation in place of the enhanced
    one; both exist for ablations.
    """

    def __init__(
        self,
        backbone_kind: str = "toy-conv",
        embed_dim: int = 32,
        train_text_encoder: bool = True,
        share_ca_heads: bool = False,
        cosine_in_loss: bool = False,
        use_thfm: bool = True,
        use_aafm: bool = True,
        clip_model: str = "RN50",
        clip_pretrained: str | None = "openai",
        inference_tau: float | None = None,
        finetune_visual: bool = False,
    ):
        super().__init__()
        self.encoders = EncoderStack(
            backbone_kind,
            embed_dim,
            train_text_encoder,
            clip_model,
            clip_pretrained,
            freeze_visual=not finetune_visual,
        )
        self.embed_dim = self.encoders.embed_dim
        self.aafm = AAFM(self.embed_dim, share_ca_heads)
        self.temperature = Temperature()
        self.cosine_in_loss = cosine_in_loss
        self.use_thfm = use_thfm
        self.use_aafm = use_aafm
        self.inference_tau = inference_tau
        self.fine_prompts = fine_texts()
        self.general_prompts = general_texts()

    def prompt_embeddings(self) -> tuple[torch.Tensor, torch.Tensor]:
        texts = self.encoders.encode_text(self.fine_prompts + self.general_prompts)
        return texts[: len(self.fine_prompts)], texts[len(self.fine_prompts) :]

    def forward(self, prev_frame: torch.Tensor, cur_frame: torch.Tensor) -> dict[str, torch.Tensor]:
        i_prev, i_cur, fmap = self.encoders.encode_frames(prev_frame, cur_frame)
        if self.use_thfm:
            high_freq = self.encoders.encode_high_frequency(extract_temporal_high_frequency(prev_frame, cur_frame))
        else:
            high_freq = torch.zeros_like(i_cur)
        fused = fuse_visual(i_prev, i_cur, high_freq)
        fine_text, general_text = self.prompt_embeddings()
        out = {"fused": fused, "high_freq": high_freq, "fine_text": fine_text, "general_text": general_text}
        if self.use_aafm:
            visual_context = (i_prev + i_cur) / 2
            out.update(self.aafm(fused, visual_context, fmap, fine_text))
        else:
            out["enhanced"] = fused
        return out

    def tau(self) -> torch.Tensor:
        return self.temperature()

    def loss(self, prev_frame, cur_frame, labels, fine_targets, general_targets) -> dict[str, torch.Tensor]:
        out = self(prev_frame, cur_frame)
        batch = Batch(out["fused"], out["enhanced"], fine_targets, general_targets, out["fine_text"], out["general_text"])
        parts = loss_components(batch, self.tau(), self.cosine_in_loss)
        parts["tau"] = self.tau().detach()
        return parts

    def clip_scores(self, prev_frame: torch.Tensor, cur_frame: torch.Tensor) -> torch.Tensor:
        out = self(prev_frame, cur_frame)
        tau = self.inference_tau if self.inference_tau is not None else self.tau()
        return anomaly_score(out["fused"], out["enhanced"], out["fine_text"], out["general_text"], tau)


class LinearProbe(nn.Module):
    """Visual encoder plus a two-way linear head on the pooled clip embedding."""

    def __init__(
        self,
        backbone_kind: str = "toy-conv",
        embed_dim: int = 32,
        finetune_visual: bool = True,
        clip_model: str = "RN50",
        clip_pretrained: str | None = "openai",
    ):
        super().__init__()
        self.encoders = EncoderStack(
            backbone_kind,
            embed_dim,
            train_text_encoder=False,
            clip_model=clip_model,
            clip_pretrained=clip_pretrained,
            freeze_visual=not finetune_visual,
        )
        self.embed_dim = self.encoders.embed_dim
        self.head = nn.Linear(self.embed_dim, 2)

    def forward(self, prev_frame, cur_frame) -> torch.Tensor:
        i_prev, i_cur, _ = self.encoders.encode_frames(prev_frame, cur_frame)
        return self.head((i_prev + i_cur) / 2)

    def loss(self, prev_frame, cur_frame, labels, fine_targets, general_targets) -> dict[str, torch.Tensor]:
        return {"total": F.cross_entropy(self(prev_frame, cur_frame), labels.long())}

    def clip_scores(self, prev_frame, cur_frame) -> torch.Tensor:
        return self(prev_frame, cur_frame).softmax(dim=-1)[:, 1]
