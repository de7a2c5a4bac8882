"""Distillation training loop and ablation runner."""

from ..report import NumericAbort, StepRecord, TrainReport
from .core import (
    ABLATIONS,
    DistillConfig,
    DistillState,
    LossComponents,
    comparison_table,
    compute_components,
    distill,
    run_ablations,
    total_loss,
)
from .probes import (
    IBProbeResult,
    RankingResult,
    attention_predictions,
    fit_attention_ranking,
    fit_ib_probe,
    rank_agreement,
)
