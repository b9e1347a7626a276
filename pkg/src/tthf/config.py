"""Training configuration, profiles and YAML round-tripping."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import yaml

HOME_ENV = "TTHF_HOME"

# keys that change parameter shapes or the forward graph
_ARCH_KEYS = (
    "model_kind",
    "backbone_kind",
    "embed_dim",
    "clip_model",
    "share_ca_heads",
    "use_thfm",
    "use_aafm",
)


@dataclass
class TrainConfig:
    profile: str = "toy"
    model_kind: str = "tthf"  # or "linear-probe"
    backbone_kind: str = "toy-conv"
    embed_dim: int = 32
    clip_model: str = "RN50"
    clip_pretrained: str | None = "openai"
    batch_size: int = 32
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    epochs: int = 5
    seed: int = 0
    data_root: str | None = None
    out_dir: str | None = None
    num_workers: int = 0
    train_text_encoder: bool = True
    share_ca_heads: bool = False
    cosine_in_loss: bool = False
    use_normal_clips_from_anomalous_videos: bool = True
    use_thfm: bool = True
    use_aafm: bool = True
    finetune_visual: bool = False
    inference_tau: float | None = None
    eval_batch_size: int = 64
    per_video_auc: bool = False
    # per-channel normalization; filled from the training manifest when unset
    norm_mean: list[float] | None = None
    norm_std: list[float] | None = None

    def __post_init__(self):
        for name in ("batch_size", "learning_rate", "eval_batch_size", "embed_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0 or self.weight_decay < 0:
            raise ValueError("epochs and weight_decay must be non-negative")
        if self.model_kind not in ("tthf", "linear-probe"):
            raise ValueError(f"unknown model_kind {self.model_kind!r}")

    def fingerprint(self) -> str:
        arch = {k: getattr(self, k) for k in _ARCH_KEYS}
        return hashlib.sha256(json.dumps(arch, sort_keys=True).encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    def resolved_out_dir(self) -> Path:
        if self.out_dir:
            return Path(self.out_dir)
        return Path(os.environ.get(HOME_ENV, Path.home() / ".cache" / "tthf")) / "runs" / f"{self.profile}-seed{self.seed}"


PROFILES: dict[str, dict] = {
    "toy": dict(
        profile="toy",
        backbone_kind="toy-conv",
        embed_dim=32,
        batch_size=32,
        learning_rate=1e-3,
        weight_decay=1e-4,
        epochs=5,
    ),
    "paper": dict(
        profile="paper",
        backbone_kind="pretrained-clip",
        clip_model="RN50",
        embed_dim=1024,
        batch_size=128,
        learning_rate=5e-6,
        weight_decay=1e-4,
        epochs=10,
    ),
}


def make_config(profile: str = "toy", config_file: str | Path | None = None, **overrides) -> TrainConfig:
    """Profile defaults, then the YAML file, then explicit overrides (``None`` skipped)."""
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    values = dict(PROFILES[profile])
    if config_file is not None:
        loaded = yaml.safe_load(Path(config_file).read_text()) or {}
        unknown = set(loaded) - {f.name for f in fields(TrainConfig)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        values.update(loaded)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)


def from_dict(values: dict) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    return TrainConfig(**{k: v for k, v in values.items() if k in known})


__all__ = ["TrainConfig", "PROFILES", "make_config", "from_dict", "replace", "HOME_ENV"]
