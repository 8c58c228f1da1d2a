"""Knowledge-distillation time series anomaly detection.

A prototype-conditioned student encoder is trained to match a frozen
pretrained teacher on normal windows and pushed apart on synthetic
anomalies; at test time the representation discrepancy is the anomaly
score.
"""

from .augment import AugmentSpec, augment, augment_batch
from .core import (
    Config,
    DataError,
    NumericError,
    Representation,
    TimeSeriesDataset,
    WindowBatch,
    make_rng,
)
from .detect import ScoreTrace, score_series, score_window, threshold
from .evaluate import (
    EventSet,
    affiliation_metrics,
    auroc,
    point_adjust,
    point_metrics,
    ucr_accuracy,
)
from .preprocess import instance_normalize, normalize_with, patch, window
from .student import PrototypePool, StudentEncoder, select_prototype
from .teacher import TeacherEncoder, load_pretrained, make_surrogate_backbone, save_backbone
from .training import (
    ModelState,
    Strategy,
    contrastive_loss,
    hsc_loss,
    kd_loss,
    load_checkpoint,
    save_checkpoint,
    total_loss,
    train,
)

__version__ = "0.1.0"
