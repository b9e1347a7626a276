"""Command-line entry point: ``tthf {train,eval,score,synth,prompts,plot}``.

Exit codes: 0 success, 2 usage/config error, 3 dataset error,
4 checkpoint error, 5 diverged training.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import evaluation
from .config import TrainConfig, make_config
from .dataset import IMAGE_SUFFIXES, LazyFrames, generate_synthetic_dataset, load_manifest, write_manifest
from .errors import DatasetError, EmptyVideoError, TTHFError
from .prompt_bank import export_prompts
from .scoring import ScoreSeries, score_frames
from .train import load_checkpoint, normalization, train

log = logging.getLogger("tthf")

USAGE_EXIT = 2


def _add_train_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML config; CLI flags override its keys")
    p.add_argument("--profile", choices=("toy", "paper"), default="toy")
    p.add_argument("--data-root", dest="data_root")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--backbone", dest="backbone_kind", choices=("toy-conv", "pretrained-clip"))
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--clip-model", dest="clip_model")
    p.add_argument("--model-kind", dest="model_kind", choices=("tthf", "linear-probe"))
    p.add_argument("--num-workers", dest="num_workers", type=int)
    for flag, key in (
        ("train-text-encoder", "train_text_encoder"),
        ("share-ca-heads", "share_ca_heads"),
        ("cosine-in-loss", "cosine_in_loss"),
        ("normal-clips-from-anomalous", "use_normal_clips_from_anomalous_videos"),
        ("thfm", "use_thfm"),
        ("aafm", "use_aafm"),
        ("finetune-visual", "finetune_visual"),
    ):
        p.add_argument(f"--{flag}", dest=key, action=argparse.BooleanOptionalAction, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tthf", description="Text-driven traffic anomaly detection")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write checkpoints + metrics")
    _add_train_overrides(p)

    p = sub.add_parser("eval", help="frame-level AUC report on a dataset split")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--data-root", required=True)
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--out-dir", required=True, type=Path)
    p.add_argument("--config", type=Path, help="expected config; checkpoint must match its architecture")
    p.add_argument("--profile", choices=("toy", "paper"))
    p.add_argument("--per-video", action="store_true", help="also report per-video averaged AUC")
    p.add_argument("--dump-attention", action="store_true", help="write per-clip attention weights")
    p.add_argument("--no-plots", action="store_true")

    p = sub.add_parser("score", help="score one directory of frames")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("video", type=Path, help="directory of frame images (or a video dir with frames/)")
    p.add_argument("--out", type=Path, help="CSV path (default: stdout)")

    p = sub.add_parser("synth", help="write a synthetic dataset in the on-disk layout")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-test", type=int, default=50)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--image-size", type=int, default=64)

    p = sub.add_parser("prompts", help="prompt bank utilities")
    psub = p.add_subparsers(dest="prompts_command", required=True)
    pe = psub.add_parser("export", help="write prompts and the category map as JSON")
    pe.add_argument("--out", type=Path, default=Path("prompts.json"))

    p = sub.add_parser("plot", help="render score curves and ROC from an eval output directory")
    p.add_argument("eval_dir", type=Path)
    p.add_argument("--out-dir", type=Path)
    return parser


def _config_from_args(args) -> TrainConfig:
    keys = (
        "data_root", "out_dir", "seed", "epochs", "batch_size", "learning_rate", "weight_decay",
        "backbone_kind", "embed_dim", "clip_model", "model_kind", "num_workers", "train_text_encoder",
        "share_ca_heads", "cosine_in_loss", "use_normal_clips_from_anomalous_videos", "use_thfm",
        "use_aafm", "finetune_visual",
    )
    overrides = {k: getattr(args, k) for k in keys}
    return make_config(args.profile, args.config, **overrides)


def cmd_train(args) -> int:
    config = _config_from_args(args)
    if not config.data_root:
        raise DatasetError("--data-root (or data_root in the config) is required")
    result = train(config)
    print(f"checkpoint: {result.checkpoint}")
    print(f"metrics: {result.metrics_path}")
    return 0


@torch.no_grad()
def dump_attention(manifest, model, path: Path) -> Path:
    """Per clip: VFS and LFS attention over the ``h*w`` grid plus the soft-text weights."""
    from .dataset import ClipDataset

    ds = ClipDataset(manifest)
    with path.open("w") as fh:
        for i, (r_idx, t, *_rest) in enumerate(ds.index):
            prev, cur, *_ = ds[i]
            out = model(prev[None], cur[None])
            if "vfs_attention" not in out:
                raise ValueError("model has no attentive focusing stage to dump")
            fh.write(
                json.dumps(
                    {
                        "video_id": manifest.records[r_idx].video_id,
                        "t": t,
                        "vfs": out["vfs_attention"][0].tolist(),
                        "lfs": out["lfs_attention"][0].tolist(),
                        "soft_text": out["soft_weights"][0].tolist(),
                    }
                )
                + "\n"
            )
    return path


def cmd_eval(args) -> int:
    expected = None
    if args.config is not None or args.profile is not None:
        expected = make_config(args.profile or "toy", args.config)
    model, config = load_checkpoint(args.checkpoint, expected)
    manifest = load_manifest(args.data_root, args.split)
    # manifest normalization follows the data; the checkpoint's wins if it was trained on it
    mean, std = normalization(config) if config.norm_mean else (manifest.mean, manifest.std)
    manifest.mean, manifest.std = mean, std
    report, series = evaluation.evaluate(manifest, model, args.per_video, config.eval_batch_size)
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    for s in series:
        evaluation.write_score_csv(s, out / "scores" / f"{s.video_id}.csv")
    evaluation.write_report(report, out / "report.json")
    if not args.no_plots:
        evaluation.export_plots(series, report, out / "plots")
    if args.dump_attention:
        dump_attention(manifest, model, out / "attention.jsonl")
    print(report.format_tables())
    return 0


def _frame_files(video: Path) -> list[Path]:
    root = video / "frames" if (video / "frames").is_dir() else video
    if not root.is_dir():
        raise DatasetError(f"not a directory: {root}")
    files = []
    for p in sorted(root.iterdir()):
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES:
            files.append(p)
        elif p.is_file():
            log.warning("skipping non-image file %s", p.name)
    return files


def cmd_score(args) -> int:
    model, config = load_checkpoint(args.checkpoint)
    files = _frame_files(args.video)
    if len(files) < 2:
        raise EmptyVideoError(f"{args.video} has {len(files)} frame(s); need at least 2")
    mean, std = normalization(config)
    scores = score_frames(model, LazyFrames(files), mean, std, config.eval_batch_size)
    series = ScoreSeries(args.video.name, scores, np.zeros(len(scores), dtype=np.int64))
    if args.out:
        evaluation.write_score_csv(series, args.out)
    else:
        sys.stdout.write("frame_index,score,label\n")
        for i, s in enumerate(series.scores):
            sys.stdout.write(f"{i},{s:.9f},0\n")
    return 0


def cmd_synth(args) -> int:
    for split, n, offset in (("train", args.n_train, 0), ("test", args.n_test, 1)):
        if n == 0:
            continue
        manifest = generate_synthetic_dataset(args.seed * 2 + offset, n, args.frames, args.image_size, split)
        path = write_manifest(manifest, args.out)
        print(f"{split}: {n} videos -> {path}")
    return 0


def cmd_prompts(args) -> int:
    path = export_prompts(args.out)
    print(f"prompts written to {path}")
    return 0


def _read_score_csv(path: Path) -> ScoreSeries:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    labels = data[:, 2].astype(np.int64)
    interval = None
    if labels.any():
        idx = np.flatnonzero(labels)
        interval = (int(idx[0]), int(idx[-1]))
    return ScoreSeries(path.stem, data[:, 1], labels, anomaly_interval=interval)


def cmd_plot(args) -> int:
    scores_dir = args.eval_dir / "scores"
    series = [_read_score_csv(p) for p in sorted(scores_dir.glob("*.csv"))]
    report_path = args.eval_dir / "report.json"
    report = evaluation.read_report(report_path) if report_path.is_file() else evaluation.report_from_series(series)
    written = evaluation.export_plots(series, report, args.out_dir or args.eval_dir / "plots")
    print(f"wrote {len(written)} files")
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "score": cmd_score,
    "synth": cmd_synth,
    "prompts": cmd_prompts,
    "plot": cmd_plot,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except TTHFError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT


if __name__ == "__main__":
    sys.exit(main())
