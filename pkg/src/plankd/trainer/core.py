"""Distillation loop: frozen teacher, student, IB branch and attention branch."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from ..gradkit import Adam, Tensor, backward, graph, make_rng, no_grad, ops, set_requires_grad
from ..ibdistill import IBModule, channel_average, draw_eps, feature_distill_loss, ib_encode, \
    ib_lower_bound
from ..planner import PlannerConfig, PlannerModel, build_planner, forward_batch
from ..planner.train import DatasetArrays, epoch_batches
from ..report import NumericAbort, StepRecord, TrainReport
from ..waypointdistill import (
    AttentionModule,
    attentive_waypoint_loss,
    coord_augment,
    entropy_loss,
    ranking_loss,
    safety_scores,
    uniform_attention,
    waypoint_attention,
)

ABLATIONS = ("full", "no_entropy", "no_safe_att", "no_ib")
WAYPOINT_SOURCES = ("expert", "teacher_output")
IB_BRANCHES = ("both", "teacher", "student")


@dataclass(frozen=True)
class DistillConfig:
    alpha_z: float = 0.5
    alpha_r: float = 0.1
    alpha_e: float = 0.05
    beta: float = 1e-3
    sigma_kernel: float = 3.0
    delta: float = 0.1
    lr: float = 1e-3
    epochs: int = 20
    batch_size: int = 16
    T: int = 4
    data_seed: int = 0
    init_seed: int = 0
    train_seed: int = 0
    ablation: str = "full"
    teacher_waypoint_source: str = "expert"
    ib_branches: str = "both"
    rank_literal: bool = False

    def validate(self) -> None:
        for name in ("alpha_z", "alpha_r", "alpha_e", "beta", "lr"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be a finite value >= 0, got {v}")
        if self.sigma_kernel <= 0:
            raise ValueError("sigma_kernel must be positive")
        if self.batch_size < 1 or self.epochs < 0 or self.T < 1:
            raise ValueError("batch_size and T must be >= 1, epochs >= 0")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.teacher_waypoint_source not in WAYPOINT_SOURCES:
            raise ValueError(f"teacher_waypoint_source must be one of {WAYPOINT_SOURCES}")
        if self.ib_branches not in IB_BRANCHES:
            raise ValueError(f"ib_branches must be one of {IB_BRANCHES}")

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    @property
    def uses_ib(self) -> bool:
        return self.ablation != "no_ib"

    @property
    def uses_attention(self) -> bool:
        return self.ablation != "no_safe_att"

    def coefficients(self) -> dict[str, float]:
        """Weight of each loss component after the ablation is applied."""
        return {
            "L_w": 1.0,
            "L_w_star": 1.0,
            "neg_L_IB": 1.0 if self.uses_ib else 0.0,
            "L_z": self.alpha_z,
            "L_rank": self.alpha_r if self.uses_attention else 0.0,
            "L_e": self.alpha_e if self.uses_attention and self.ablation != "no_entropy" else 0.0,
        }


@dataclass
class LossComponents:
    """Each field is a scalar Tensor or a float; ``L_IB`` is the bound (maximized)."""

    L_w: object = 0.0
    L_w_star: object = 0.0
    L_IB: object = 0.0
    L_z: object = 0.0
    L_rank: object = 0.0
    L_e: object = 0.0
    held: dict = field(default_factory=dict)


def _value(x) -> float:
    return x.item() if isinstance(x, Tensor) else float(x)


def total_loss(components: LossComponents, config: DistillConfig, step: int = -1):
    """L_w + L_w* - L_IB + a_z L_z + a_r L_rank + a_e L_e under the configured ablation."""
    coef = config.coefficients()
    terms = [
        ("L_w", coef["L_w"], components.L_w),
        ("L_w_star", coef["L_w_star"], components.L_w_star),
        ("neg_L_IB", -coef["neg_L_IB"], components.L_IB),
        ("L_z", coef["L_z"], components.L_z),
        ("L_rank", coef["L_rank"], components.L_rank),
        ("L_e", coef["L_e"], components.L_e),
    ]
    values = {name: _value(t) for name, _, t in terms}
    for name, v in values.items():
        if not math.isfinite(v):
            raise NumericAbort(step, values, name)
    total = None
    for _, c, t in terms:
        if c == 0.0:
            continue
        if isinstance(t, Tensor):
            piece = t if c == 1.0 else ops.scale(t, c)
        else:
            piece = c * t
        total = piece if total is None else total + piece
    return 0.0 if total is None else total


@dataclass
class DistillState:
    """The trainable apparatus around the student (absent parts are None)."""

    ib: IBModule | None
    attention: AttentionModule | None

    def parameter_list(self) -> list[Tensor]:
        out = []
        if self.ib is not None:
            out += self.ib.parameter_list()
        if self.attention is not None:
            out += self.attention.parameter_list()
        return out

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for part in (self.ib, self.attention):
            if part is not None:
                out.update({k: t.data.copy() for k, t in part.named_parameters()})
        return out


class DistillBatchData:
    """Per-scene tensors that do not change over training (scores, augmented grids)."""

    def __init__(self, arrays: DatasetArrays, sigma: float, need_aug: bool):
        self.arrays = arrays
        self.psi = safety_scores(arrays.traj, arrays.obstacles, sigma)
        self.bev_aug = coord_augment(arrays.bev) if need_aug else None


def compute_components(idx: np.ndarray, data: DistillBatchData, teacher: PlannerModel,
                       student: PlannerModel, state: DistillState, config: DistillConfig,
                       eps_rng: np.random.Generator | None,
                       held: dict | None = None) -> tuple[LossComponents, Tensor]:
    """Loss components for one batch.

    Values that receive no gradient (the teacher latent in L_z, the attention
    weights inside the waypoint losses) are recorded in ``comp.held``; passing
    them back as ``held`` pins them, which is what a finite-difference check of
    the composite needs.
    """
    held = held or {}
    arr = data.arrays
    bev, speed, cmd = arr.bev[idx], arr.speed[idx], arr.command[idx]
    expert = arr.traj[idx]
    n, t = expert.shape[:2]
    with no_grad():
        h_t, w_t = forward_batch(teacher, bev, speed, cmd)
    h_s, w_s = forward_batch(student, bev, speed, cmd)
    map_t = channel_average(Tensor(h_t.data))
    map_s = channel_average(h_s)
    comp = LossComponents()

    if config.uses_ib:
        ib = state.ib
        eps_t = draw_eps(eps_rng, n, ib.encoder.d_z)
        eps_s = draw_eps(eps_rng, n, ib.encoder.d_z)
        lat_t = ib_encode(ib.encoder, map_t, eps_t, "teacher")
        lat_s = ib_encode(ib.encoder, map_s, eps_s, "student")
        bounds = []
        if config.ib_branches in ("both", "teacher"):
            bounds.append(ib_lower_bound(lat_t, ib.decoder, arr.states[idx], config.beta))
        if config.ib_branches in ("both", "student"):
            bounds.append(ib_lower_bound(lat_s, ib.decoder, arr.states[idx], config.beta))
        comp.L_IB = bounds[0] if len(bounds) == 1 else ops.scale(ops.add(*bounds), 0.5)
        z_t = held.get("z_teacher", lat_t.z.data)
        comp.held["z_teacher"] = z_t
        comp.L_z = feature_distill_loss(z_t, lat_s.z)
    else:
        # raw channel-averaged maps stand in for the latents
        comp.L_z = ops.mean(ops.l1(map_s, Tensor(map_t.data), axis=(1, 2, 3)))
        comp.L_z = ops.scale(comp.L_z, 1.0 / float(np.prod(map_s.shape[1:])))

    if config.uses_attention:
        att = state.attention
        a = waypoint_attention(att.bev_encoder, att.waypoint_encoder, data.bev_aug[idx], expert)
        comp.L_rank = ranking_loss(a, data.psi[idx], literal=config.rank_literal)
        comp.L_e = entropy_loss(a)
        weights = Tensor(held.get("attention", a.data))
        comp.held["attention"] = weights.data
    else:
        weights = Tensor(uniform_attention(n, t))

    target_t = expert if config.teacher_waypoint_source == "expert" else w_t.data
    comp.L_w = attentive_waypoint_loss(weights, w_s, target_t)
    comp.L_w_star = attentive_waypoint_loss(weights, w_s, expert)
    return comp, w_s


def _record(comp: LossComponents, total, config: DistillConfig) -> StepRecord:
    coef = config.coefficients()
    rec = StepRecord(
        L=_value(total),
        L_w=_value(comp.L_w),
        L_w_star=_value(comp.L_w_star),
        neg_L_IB=-_value(comp.L_IB) if coef["neg_L_IB"] else 0.0,
        L_z=_value(comp.L_z),
        L_rank=_value(comp.L_rank) if config.uses_attention else 0.0,
        L_e=_value(comp.L_e) if config.uses_attention else 0.0,
    )
    return rec


def build_state(config: DistillConfig, grid_channels: int, grid: int) -> DistillState:
    return DistillState(
        ib=IBModule(config.init_seed) if config.uses_ib else None,
        attention=AttentionModule(config.init_seed, bev_channels=grid_channels + 2, grid=grid)
        if config.uses_attention else None,
    )


def distill(teacher: PlannerModel, student_config: PlannerConfig, dataset, config: DistillConfig,
            eval_fn=None) -> tuple[PlannerModel, TrainReport, DistillState]:
    """Train a fresh student against a frozen teacher; returns (student, report, apparatus).

    ``eval_fn(student) -> dict`` is called after every epoch when given.
    """
    config.validate()
    arrays = dataset if isinstance(dataset, DatasetArrays) else DatasetArrays(dataset)
    if len(arrays) == 0:
        raise ValueError("distill needs a nonempty dataset")
    if arrays.traj.shape[1] != config.T or student_config.T != config.T:
        raise ValueError(f"T mismatch: data {arrays.traj.shape[1]}, student {student_config.T}, "
                         f"config {config.T}")
    student = build_planner(student_config, config.init_seed)
    state = build_state(config, arrays.bev.shape[1], arrays.bev.shape[2])
    data = DistillBatchData(arrays, config.sigma_kernel, config.uses_attention)

    teacher_params = teacher.parameter_list()
    saved_flags = [p.requires_grad for p in teacher_params]
    set_requires_grad(teacher_params, False)
    params = student.parameter_list() + state.parameter_list()
    opt = Adam(params, lr=config.lr)
    batch_rng = make_rng(config.train_seed, "distill/batches")
    eps_rng = make_rng(config.train_seed, "distill/eps")
    report = TrainReport(config=config.as_dict(),
                         seeds={"data": config.data_seed, "init": config.init_seed,
                                "train": config.train_seed})
    step = 0
    try:
        for _ in range(config.epochs):
            t0 = time.perf_counter()
            first = len(report.steps)
            for idx in epoch_batches(len(arrays), config.batch_size, batch_rng):
                with graph():
                    comp, _ = compute_components(idx, data, teacher, student, state, config,
                                                 eps_rng)
                    total = total_loss(comp, config, step)
                    rec = _record(comp, total, config)
                    rec.check_finite(step)
                    backward(total, wrt=params)
                assert all(p.grad is None for p in teacher_params), "teacher received gradients"
                opt.step()
                report.steps.append(rec)
                step += 1
            report.wall_clock.append(time.perf_counter() - t0)
            epoch = {f"mean_{k}": float(np.mean([getattr(r, k) for r in report.steps[first:]]))
                     for k in ("L", "L_w", "L_z", "L_rank", "L_e", "neg_L_IB")}
            if eval_fn is not None:
                epoch.update(eval_fn(student))
            report.epoch_metrics.append(epoch)
    finally:
        for p, flag in zip(teacher_params, saved_flags):
            p.requires_grad = flag
    return student, report, state


def run_ablations(teacher: PlannerModel, student_config: PlannerConfig, dataset,
                  config: DistillConfig, eval_fn=None,
                  variants=ABLATIONS) -> dict[str, tuple[PlannerModel, TrainReport]]:
    """Every variant with identical data, init and training seeds."""
    arrays = dataset if isinstance(dataset, DatasetArrays) else DatasetArrays(dataset)
    out = {}
    for v in variants:
        student, report, _ = distill(teacher, student_config, arrays, replace(config, ablation=v),
                                     eval_fn=eval_fn)
        out[v] = (student, report)
    return out


def comparison_table(metrics: dict[str, dict[str, float]]) -> str:
    """CSV table, one row per variant."""
    keys = sorted({k for m in metrics.values() for k in m})
    rows = [",".join(["variant"] + keys)]
    for v, m in metrics.items():
        rows.append(",".join([v] + [repr(m.get(k, float("nan"))) for k in keys]))
    return "\n".join(rows) + "\n"


__all__ = [
    "ABLATIONS",
    "DistillConfig",
    "DistillState",
    "LossComponents",
    "comparison_table",
    "compute_components",
    "distill",
    "run_ablations",
    "total_loss",
]
