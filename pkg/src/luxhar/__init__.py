"""Cross-modal activity recognition from ambient light and motion."""

from .datasets import ClassTemplate, SynthConfig, generate_recording, \
    generate_study, with_light_depth, write_study
from .estimators import (
    ContrastiveActivityClassifier,
    FusionActivityClassifier,
    InertialActivityClassifier,
    LightActivityClassifier,
    TrainRecord,
    load_classifier,
    make_classifier,
)
from .ingest import (
    CLASS_NAMES,
    LabelTrack,
    RawStream,
    SensorRecording,
    estimate_sync_offset,
    load_study,
    parse_stream_csv,
    resample_30hz,
)
from .losses import (
    GradCheckReport,
    LossReport,
    contrastive_loss,
    cross_entropy,
    grad_check,
    total_loss,
)
from .metrics import (
    EvalReport,
    compare_models,
    confusion_matrix,
    evaluate,
    macro_f1,
    per_class_f1,
)
from .models import EncoderSpec, ModelSpec, default_model_spec, new_model
from .profiling import count_flops, count_params, measure_latency
from .windowing import (
    NormStats,
    SplitSpec,
    WindowNormalizer,
    WindowSet,
    expand_modality_dropout,
    fit_norm_stats,
    make_splits,
    normalize,
    slide_windows,
)

__version__ = "0.1.0"

__all__ = [
    "ClassTemplate",
    "SynthConfig",
    "generate_recording",
    "generate_study",
    "with_light_depth",
    "write_study",
    "ContrastiveActivityClassifier",
    "FusionActivityClassifier",
    "InertialActivityClassifier",
    "LightActivityClassifier",
    "TrainRecord",
    "load_classifier",
    "make_classifier",
    "CLASS_NAMES",
    "LabelTrack",
    "RawStream",
    "SensorRecording",
    "estimate_sync_offset",
    "load_study",
    "parse_stream_csv",
    "resample_30hz",
    "GradCheckReport",
    "LossReport",
    "contrastive_loss",
    "cross_entropy",
    "grad_check",
    "total_loss",
    "EvalReport",
    "compare_models",
    "confusion_matrix",
    "evaluate",
    "macro_f1",
    "per_class_f1",
    "EncoderSpec",
    "ModelSpec",
    "default_model_spec",
    "new_model",
    "count_flops",
    "count_params",
    "measure_latency",
    "NormStats",
    "SplitSpec",
    "WindowNormalizer",
    "WindowSet",
    "expand_modality_dropout",
    "fit_norm_stats",
    "make_splits",
    "normalize",
    "slide_windows",
]
