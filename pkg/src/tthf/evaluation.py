"""Frame-level AUC, per-category breakdown, ROC export and score-curve plots."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .dataset import DatasetManifest
from .prompt_bank import ANOMALY_CATEGORIES
from .scoring import ScoreSeries, score_video


class UndefinedAUCError(ValueError):
    """Only one class present in the labels."""


def compute_auc(scores, labels) -> float:
    """Rank-based (Mann-Whitney) AUC; tied positive/negative pairs count 0.5."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError("AUC needs both positive and negative labels")
    ranks = rankdata(scores)  # average ranks for ties
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def roc_points(scores, labels) -> list[tuple[float, float]]:
    """``(fpr, tpr)`` at every distinct threshold, from (0, 0) to (1, 1)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels) == 1
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    last_of_group = np.r_[np.diff(s) != 0, True]
    tps = np.cumsum(y)[last_of_group]
    fps = np.cumsum(~y)[last_of_group]
    n_pos, n_neg = max(int(y.sum()), 1), max(int((~y).sum()), 1)
    fpr = np.r_[0.0, fps / n_neg]
    tpr = np.r_[0.0, tps / n_pos]
    return list(zip(fpr.tolist(), tpr.tolist()))


def trapezoid_auc(points) -> float:
    fpr, tpr = np.array(points).T
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))


def class_key(category: str, ego_involved: bool) -> str:
    """DoTA label, starred for non-ego anomalies."""
    return category if ego_involved else f"{category}*"


@dataclass
class EvalReport:
    overall_auc: float
    per_class_auc: dict[str, float]
    n_frames: int
    roc_points: list[tuple[float, float]] = field(default_factory=list)
    per_class_frames: dict[str, int] = field(default_factory=dict)
    per_video_auc: float | None = None

    def summary_row(self, method: str = "TTHF") -> dict:
        return {"method": method, "input": "RGB", "paradigm": "Single-Stage", "auc": self.overall_auc}

    def category_table(self) -> dict[str, dict[str, float | None]]:
        """Two rows (ego-involved, non-ego) over the nine categories plus their average."""
        rows = {}
        for name, ego in (("ego", True), ("non_ego", False)):
            row = {c: self.per_class_auc.get(class_key(c, ego)) for c in ANOMALY_CATEGORIES}
            present = [v for v in row.values() if v is not None]
            row["AVG"] = float(np.mean(present)) if present else None
            rows[name] = row
        return rows

    def to_dict(self) -> dict:
        return {
            "overall_auc": self.overall_auc,
            "per_video_auc": self.per_video_auc,
            "n_frames": self.n_frames,
            "per_class_auc": self.per_class_auc,
            "per_class_frames": self.per_class_frames,
            "summary_row": self.summary_row(),
            "category_table": self.category_table(),
            "roc_points": [list(p) for p in self.roc_points],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            d["overall_auc"],
            dict(d["per_class_auc"]),
            d["n_frames"],
            [tuple(p) for p in d["roc_points"]],
            dict(d.get("per_class_frames", {})),
            d.get("per_video_auc"),
        )

    def format_tables(self) -> str:
        lines = [f"overall frame-level AUC: {100 * self.overall_auc:.1f}  ({self.n_frames} frames)"]
        header = "        " + " ".join(f"{c:>6}" for c in ANOMALY_CATEGORIES) + "    AVG"
        lines.append(header)
        for name, row in self.category_table().items():
            cells = " ".join("   N/A" if row[c] is None else f"{100 * row[c]:6.1f}" for c in ANOMALY_CATEGORIES)
            avg = "   N/A" if row["AVG"] is None else f"{100 * row['AVG']:6.1f}"
            lines.append(f"{name:<8}{cells} {avg}")
        return "\n".join(lines)


def report_from_series(series: list[ScoreSeries], per_video: bool = False) -> EvalReport:
    if not series:
        raise ValueError("no score series to evaluate")
    scores = np.concatenate([s.scores for s in series])
    labels = np.concatenate([s.labels for s in series])
    overall = compute_auc(scores, labels)

    cells: dict[str, list[ScoreSeries]] = {}
    for s in series:
        if s.anomaly_interval is not None:
            cells.setdefault(class_key(s.category, s.ego_involved), []).append(s)
    per_class, per_frames = {}, {}
    for key, members in sorted(cells.items()):
        cs = np.concatenate([m.scores for m in members])
        cl = np.concatenate([m.labels for m in members])
        per_frames[key] = int(cl.size)
        if cl.min() != cl.max():
            per_class[key] = compute_auc(cs, cl)

    per_video_auc = None
    if per_video:
        vals = [compute_auc(s.scores, s.labels) for s in series if s.labels.min() != s.labels.max()]
        per_video_auc = float(np.mean(vals)) if vals else None
    return EvalReport(overall, per_class, int(labels.size), roc_points(scores, labels), per_frames, per_video_auc)


def score_manifest(manifest: DatasetManifest, model, batch_size: int = 64) -> list[ScoreSeries]:
    return [score_video(r, model, manifest.mean, manifest.std, batch_size) for r in manifest.records]


def evaluate(manifest: DatasetManifest, model, per_video: bool = False, batch_size: int = 64):
    """Score every test video and aggregate; returns ``(report, series)``."""
    series = score_manifest(manifest, model, batch_size)
    return report_from_series(series, per_video), series


def write_report(report: EvalReport, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return path


def read_report(path: str | Path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text()))


def write_score_csv(series: ScoreSeries, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = ["frame_index,score,label"]
    rows += [f"{i},{s:.9f},{int(l)}" for i, (s, l) in enumerate(zip(series.scores, series.labels))]
    path.write_text("\n".join(rows) + "\n")
    return path


def export_plots(series: list[ScoreSeries], report: EvalReport, out_dir: str | Path) -> list[Path]:
    """One score curve per video, one ROC image (if any series) and ``report.json``."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for s in series:
        fig, ax = plt.subplots(figsize=(6, 2.5))
        ax.plot(np.arange(len(s.scores)), s.scores, color="tab:red", lw=1.5)
        if s.anomaly_interval is not None:
            ax.axvspan(s.anomaly_interval[0], s.anomaly_interval[1], color="tab:orange", alpha=0.25)
        ax.set_ylim(0, 1)
        ax.set_xlabel("frame")
        ax.set_ylabel("anomaly score")
        ax.set_title(s.video_id)
        fig.tight_layout()
        path = out_dir / f"curve_{s.video_id}.png"
        fig.savefig(path, dpi=80)
        plt.close(fig)
        written.append(path)
    if series:
        fpr, tpr = np.array(report.roc_points).T
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.plot(fpr, tpr, lw=1.5, label=f"AUC = {report.overall_auc:.3f}")
        ax.plot([0, 1], [0, 1], ls="--", color="grey", lw=0.8)
        ax.set_xlabel("FPR")
        ax.set_ylabel("TPR")
        ax.legend(loc="lower right")
        fig.tight_layout()
        path = out_dir / "roc.png"
        fig.savefig(path, dpi=80)
        plt.close(fig)
        written.append(path)
    written.append(write_report(report, out_dir / "report.json"))
    return written
