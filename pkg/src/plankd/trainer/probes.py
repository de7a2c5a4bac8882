"""Standalone training runs that exercise one distillation component at a time."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from ..gradkit import Adam, Tensor, backward, graph, make_rng, no_grad, ops
from ..ibdistill import (
    IBModule,
    channel_average,
    draw_eps,
    ib_encode,
    ib_lower_bound,
    kl_to_standard_normal,
    predict_states,
)
from ..planner import STUDENT_CONFIG, PlannerConfig, build_planner, mid_features
from ..planner.train import epoch_batches
from ..report import NumericAbort
from ..scenario.types import STATE_NAMES, Dataset
from ..waypointdistill import (
    SIGMA,
    AttentionModule,
    coord_augment,
    distinct_values,
    entropy_loss,
    ranking_loss,
    safety_scores,
    waypoint_attention,
)


def _finite(value: float, step: int, name: str) -> float:
    if not np.isfinite(value):
        raise NumericAbort(step, {name: value}, name)
    return value


# attention ranking --------------------------------------------------------

@dataclass
class RankingResult:
    spearman: np.ndarray          # per eligible held-out scene
    losses: list[float] = field(default_factory=list)

    def pass_rate(self, threshold: float = 0.8) -> float:
        if self.spearman.size == 0:
            return 0.0
        return float(np.mean(np.nan_to_num(self.spearman, nan=-1.0) > threshold))


class _AttentionData:
    def __init__(self, ds: Dataset, sigma: float):
        self.bev_aug = coord_augment(ds.bev_array())
        self.traj = ds.traj_array()
        self.psi = safety_scores(self.traj, [s.obstacles for s in ds], sigma)


def attention_predictions(module: AttentionModule, ds: Dataset, batch_size: int = 256) -> np.ndarray:
    data = _AttentionData(ds, SIGMA)
    out = []
    with no_grad():
        for i in range(0, len(ds), batch_size):
            sl = slice(i, i + batch_size)
            out.append(waypoint_attention(module.bev_encoder, module.waypoint_encoder,
                                          data.bev_aug[sl], data.traj[sl]).data)
    return np.concatenate(out) if out else np.zeros((0, ds.T))


def rank_agreement(a: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Spearman correlation per scene, over scenes whose scores take two or more values."""
    keep = [i for i in range(len(psi)) if distinct_values(psi[i]) >= 2]
    return np.array([spearmanr(a[i], psi[i]).statistic for i in keep])


def fit_attention_ranking(train: Dataset, test: Dataset, *, steps: int = 2000,
                          alpha_e: float = 0.05, lr: float = 3e-3, batch_size: int = 48,
                          seed: int = 0, sigma: float = SIGMA) -> tuple[AttentionModule, RankingResult]:
    """Train only the attention encoders on L_rank + alpha_e * L_e over frozen scenes.

    The step size decays linearly to zero: the hinge has no margin, so a
    constant rate keeps flipping pairs that sit on the ordering boundary.
    """
    module = AttentionModule(seed)
    data = _AttentionData(train, sigma)
    opt = Adam(module.parameter_list(), lr=lr)
    rng = make_rng(seed, "ranking/batches")
    losses: list[float] = []
    step = 0
    while step < steps:
        for idx in epoch_batches(len(train), batch_size, rng):
            if step >= steps:
                break
            with graph():
                a = waypoint_attention(module.bev_encoder, module.waypoint_encoder,
                                       data.bev_aug[idx], data.traj[idx])
                loss = ops.add(ranking_loss(a, data.psi[idx]), ops.scale(entropy_loss(a), alpha_e))
                losses.append(_finite(float(loss.data), step, "ranking"))
                backward(loss)
            opt.lr = lr * (1.0 - step / steps)
            opt.step()
            step += 1
    held = _AttentionData(test, sigma)
    a = attention_predictions(module, test)
    return module, RankingResult(rank_agreement(a, held.psi), losses)


# information bottleneck ---------------------------------------------------

@dataclass
class IBProbeResult:
    beta: float
    mean_kl: float
    accuracy: dict[str, float]
    losses: list[float] = field(default_factory=list)

    @property
    def worst_accuracy(self) -> float:
        return min(self.accuracy.values())


def _latent_mean(module: IBModule, model, bev: np.ndarray, batch_size: int = 256):
    mus, kls = [], []
    with no_grad():
        for i in range(0, bev.shape[0], batch_size):
            hbar = channel_average(mid_features(model, bev[i:i + batch_size]))
            zero = np.zeros((hbar.shape[0], module.encoder.d_z))
            lat = ib_encode(module.encoder, hbar, zero, branch="student")
            mus.append(lat.mu.data)
            kls.append(kl_to_standard_normal(lat.mu, lat.logvar).data)
    return np.concatenate(mus), np.concatenate(kls)


def fit_ib_probe(train: Dataset, test: Dataset, beta: float, *, epochs: int = 40,
                 lr: float = 3e-3, batch_size: int = 64, seed: int = 0,
                 backbone: PlannerConfig = STUDENT_CONFIG) -> IBProbeResult:
    """Jointly fit a planner backbone and the bottleneck to predict planning states.

    The backbone's middle activations are channel-averaged and encoded; the
    objective is the negated lower bound. Reports the held-out mean KL of
    the posterior and per-state decoder accuracy from the posterior mean.
    """
    model = build_planner(backbone, seed)
    module = IBModule(seed)
    # only the layers feeding the tapped map are trained; the waypoint head takes no part
    params = [t for name, t in model.named_parameters() if name.startswith("backbone.")
              and int(name.split(".")[1]) < backbone.mid_layer]
    params += [t for name, t in module.named_parameters() if ".teacher." not in name]
    opt = Adam(params, lr=lr)
    bev, states = train.bev_array(), train.states_array()
    rng = make_rng(seed, "ibprobe/batches")
    eps_rng = make_rng(seed, "ibprobe/eps")
    losses: list[float] = []
    step = 0
    for _ in range(epochs):
        for idx in epoch_batches(len(train), batch_size, rng):
            with graph():
                hbar = channel_average(mid_features(model, bev[idx]))
                lat = ib_encode(module.encoder, hbar, draw_eps(eps_rng, len(idx), module.encoder.d_z),
                                branch="student")
                loss = ops.scale(ib_lower_bound(lat, module.decoder, states[idx], beta), -1.0)
                losses.append(_finite(float(loss.data), step, "neg_L_IB"))
                backward(loss)
            opt.step()
            step += 1
    mu, kl = _latent_mean(module, model, test.bev_array())
    with no_grad():
        pred = predict_states(module.decoder, Tensor(mu))
    truth = test.states_array()
    acc = {name: float(np.mean(pred[:, j] == truth[:, j])) for j, name in enumerate(STATE_NAMES)}
    return IBProbeResult(beta, float(np.mean(kl)), acc, losses)
