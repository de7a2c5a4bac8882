"""Evaluation metrics, run configuration, manifests and the command line."""

from .config import ConfigError, RunConfig, build_config, load_config, parse_config
from .manifest import RunManifest
from .metrics import (
    EvalMetrics,
    collision_hits,
    composite_score,
    crucial_indices,
    evaluate,
    measure_inference,
    metrics_from_predictions,
)

__all__ = [
    "ConfigError",
    "EvalMetrics",
    "RunConfig",
    "RunManifest",
    "build_config",
    "collision_hits",
    "composite_score",
    "crucial_indices",
    "evaluate",
    "load_config",
    "measure_inference",
    "metrics_from_predictions",
    "parse_config",
]
