"""neolus: lung-ultrasound video scoring against the SF oxygenation marker."""

__version__ = "0.1.0"

from .manifest import (
    Center,
    ClassLabel,
    Disease,
    Manifest,
    ManifestError,
    PatientRecord,
    SessionRecord,
    VideoRecord,
    derive_class_label,
    load_manifest,
    save_manifest,
    summarize,
)
from .metrics import (
    MetricsReport,
    PredictionEntry,
    PredictionSet,
    accuracy,
    aggregate,
    compute_report,
    evaluate,
    mape,
    spearman,
)
from .models import BackboneSpec, HeadSpec, ScoreModel, build_model, load_checkpoint, save_checkpoint
from .phantom import PhantomSpec, generate_dataset, generate_frame, generate_manifest
from .pooling import global_average_pool, position_preserving_pool
from .preprocess import AugmentationConfig, augment, hflip, photometric, preprocess, rotate
from .splitting import SplitPlan, SplitScheme, make_split, partitions
from .training import (
    TrainingConfig,
    build_curriculum,
    classification_loss,
    clip_and_normalize_sf,
    regression_loss,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
