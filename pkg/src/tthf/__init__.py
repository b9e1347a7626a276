"""Text-driven traffic anomaly detection with temporal high-frequency modelling."""

from .dataset import (
    ClipSample,
    DatasetManifest,
    VideoRecord,
    generate_synthetic_dataset,
    load_manifest,
    preprocess_frame,
    window_clips,
)
from .evaluation import EvalReport, compute_auc, evaluate
from .model import TTHF, LinearProbe
from .scoring import ScoreSeries, anomaly_score, score_video

__version__ = "0.1.0"
