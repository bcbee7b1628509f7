"""Zero-shot text-to-video retrieval: event decomposition, multi-component
scoring, entropy-weighted rank fusion and retrieval metrics."""

from .fusion import FusionMethod, fuse, fuse_matrix, softmax_over_videos
from .metrics import MetricReport, evaluate_run
from .model import (
    ComponentKind,
    Corpus,
    DescriptionSet,
    EventDecomposition,
    EventKind,
    FusedRanking,
    InvalidInputError,
    QueryRecord,
    RelevanceJudgments,
    ScoreComponentMatrix,
    VideoRecord,
    validate_corpus,
)
from .pipeline import Pipeline, RunConfig, load_config, run_ablation, run_retrieval, sample_frames_uniform

__version__ = "0.1.0"

__all__ = [
    "ComponentKind",
    "Corpus",
    "DescriptionSet",
    "EventDecomposition",
    "EventKind",
    "FusedRanking",
    "FusionMethod",
    "InvalidInputError",
    "MetricReport",
    "Pipeline",
    "QueryRecord",
    "RelevanceJudgments",
    "RunConfig",
    "ScoreComponentMatrix",
    "VideoRecord",
    "evaluate_run",
    "fuse",
    "fuse_matrix",
    "load_config",
    "run_ablation",
    "run_retrieval",
    "sample_frames_uniform",
    "softmax_over_videos",
    "validate_corpus",
]
