"""Training loop, model construction and checkpoints."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import torch
from torch.utils.data import DataLoader

from .config import TrainConfig, from_dict
from .dataset import CLIP_MEAN, CLIP_STD, ClipDataset, DatasetManifest, load_manifest
from .errors import CheckpointError, TrainingDivergedError
from .model import TTHF, LinearProbe

log = logging.getLogger(__name__)

LOSS_KEYS = ("L_vf", "L_tf", "L_vg", "L_tg", "total", "tau")


def seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)


def build_model(config: TrainConfig, pretrained: bool = True):
    """Instantiate the model described by ``config``.

    ``pretrained=False`` skips downloading CLIP weights, for when a checkpoint
    is about to overwrite every parameter anyway.
    """
    clip_pretrained = config.clip_pretrained if pretrained else None
    if config.model_kind == "linear-probe":
        return LinearProbe(
            config.backbone_kind,
            config.embed_dim,
            finetune_visual=config.finetune_visual,
            clip_model=config.clip_model,
            clip_pretrained=clip_pretrained,
        )
    return TTHF(
        backbone_kind=config.backbone_kind,
        embed_dim=config.embed_dim,
        train_text_encoder=config.train_text_encoder,
        share_ca_heads=config.share_ca_heads,
        cosine_in_loss=config.cosine_in_loss,
        use_thfm=config.use_thfm,
        use_aafm=config.use_aafm,
        clip_model=config.clip_model,
        clip_pretrained=clip_pretrained,
        inference_tau=config.inference_tau,
        finetune_visual=config.finetune_visual,
    )


def save_checkpoint(model, config: TrainConfig, path: str | Path, epoch: int) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "config": config.to_dict(),
            "fingerprint": config.fingerprint(),
            "embed_dim": model.embed_dim,
            "backbone_kind": config.backbone_kind,
            "epoch": epoch,
            "state_dict": model.state_dict(),
        },
        path,
    )
    return path


def load_checkpoint(path: str | Path, expected: TrainConfig | None = None):
    """Rebuild the model stored at ``path``; returns ``(model, config)``.

    With ``expected`` given, the architecture fingerprint must match.
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    config = from_dict(payload["config"])
    if payload.get("fingerprint") != config.fingerprint():
        raise CheckpointError(f"{path}: stored fingerprint does not match its config")
    if expected is not None and expected.fingerprint() != config.fingerprint():
        raise CheckpointError(
            f"{path}: incompatible checkpoint (backbone {config.backbone_kind}, C={config.embed_dim}) "
            f"for requested config (backbone {expected.backbone_kind}, C={expected.embed_dim})"
        )
    model = build_model(config, pretrained=False)
    if model.embed_dim != payload["embed_dim"] or config.backbone_kind != payload["backbone_kind"]:
        raise CheckpointError(f"{path}: embedding width or backbone mismatch")
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, config


@dataclass
class TrainResult:
    model: torch.nn.Module
    checkpoint: Path
    metrics_path: Path
    history: list[dict] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)
    config: TrainConfig | None = None


def _trainable(model) -> list[torch.nn.Parameter]:
    return [p for p in model.parameters() if p.requires_grad]


def train(config: TrainConfig, manifest: DatasetManifest | None = None) -> TrainResult:
    """Adam on every trainable parameter against the model's loss.

    Writes ``checkpoint_epochNNN.pt`` after each epoch, ``checkpoint.pt`` for
    the final state and one JSON line per optimizer step to ``metrics.jsonl``.
    """
    if manifest is None:
        if not config.data_root:
            raise ValueError("config.data_root is required when no manifest is given")
        manifest = load_manifest(config.data_root, "train")
    if config.norm_mean is None or config.norm_std is None:
        config = replace(config, norm_mean=list(manifest.mean), norm_std=list(manifest.std))
    out_dir = config.resolved_out_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    config.save(out_dir / "config.yaml")

    seed_everything(config.seed)
    model = build_model(config)
    dataset = ClipDataset(manifest, config.use_normal_clips_from_anomalous_videos)
    loader = DataLoader(
        dataset,
        batch_size=config.batch_size,
        shuffle=True,
        num_workers=config.num_workers,
        generator=torch.Generator().manual_seed(config.seed),
        drop_last=False,
    )
    params = _trainable(model)
    optimizer = torch.optim.Adam(params, lr=config.learning_rate, weight_decay=config.weight_decay)

    metrics_path = out_dir / "metrics.jsonl"
    history: list[dict] = []
    epoch_losses: list[float] = []
    step = 0
    with metrics_path.open("w") as metrics:
        for epoch in range(1, config.epochs + 1):
            model.train()
            running, count = 0.0, 0
            for prev, cur, labels, fine, general in loader:
                parts = model.loss(prev, cur, labels, fine, general)
                total = parts["total"]
                if not torch.isfinite(total):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch} step {step}: "
                        + ", ".join(f"{k}={v.item():.4g}" for k, v in parts.items())
                    )
                optimizer.zero_grad(set_to_none=True)
                total.backward()
                optimizer.step()
                record = {"step": step, "epoch": epoch}
                record.update({k: parts[k].item() for k in LOSS_KEYS if k in parts})
                metrics.write(json.dumps(record) + "\n")
                history.append(record)
                running += total.item() * len(labels)
                count += len(labels)
                step += 1
            epoch_losses.append(running / max(count, 1))
            log.info("epoch %d mean loss %.4f", epoch, epoch_losses[-1])
            save_checkpoint(model, config, out_dir / f"checkpoint_epoch{epoch:03d}.pt", epoch)
    checkpoint = save_checkpoint(model, config, out_dir / "checkpoint.pt", config.epochs)
    model.eval()
    return TrainResult(model, checkpoint, metrics_path, history, epoch_losses, config)


def normalization(config: TrainConfig):
    mean = tuple(config.norm_mean) if config.norm_mean else CLIP_MEAN
    std = tuple(config.norm_std) if config.norm_std else CLIP_STD
    return mean, std


@torch.no_grad()
def mean_loss(model, manifest: DatasetManifest, batch_size: int = 64) -> float:
    """Dataset-mean training loss without updating anything."""
    was_training = model.training
    model.eval()
    loader = DataLoader(ClipDataset(manifest), batch_size=batch_size, shuffle=False)
    total, count = 0.0, 0
    for prev, cur, labels, fine, general in loader:
        value = float(model.loss(prev, cur, labels, fine, general)["total"])
        if not math.isfinite(value):
            raise TrainingDivergedError("non-finite loss during evaluation")
        total += value * len(labels)
        count += len(labels)
    model.train(was_training)
    return total / max(count, 1)
