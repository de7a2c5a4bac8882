"""Desk-scale driving metrics and inference timing."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from ..gradkit import make_rng, no_grad
from ..planner import PlannerModel, forward_batch, predict
from ..waypointdistill import SIGMA, safety_kernel

COLLISION_RADIUS = 1.0
L1_NORMALIZER = 4.0
WARMUP_FRAMES = 10


@dataclass(frozen=True)
class EvalMetrics:
    waypoint_l1: float
    crucial_l1: float
    collision_proxy_rate: float
    composite_score: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def composite_score(waypoint_l1: float, collision_rate: float,
                    normalizer: float = L1_NORMALIZER) -> float:
    return (1.0 - collision_rate) * max(0.0, 1.0 - waypoint_l1 / normalizer)


def crucial_indices(psi: np.ndarray, k: int) -> np.ndarray:
    """The k largest scores, ties broken by lower index."""
    order = sorted(range(len(psi)), key=lambda i: (-psi[i], i))
    return np.array(order[:k], dtype=np.int64)


def collision_hits(pred: np.ndarray, obstacles, radius: float = COLLISION_RADIUS) -> int:
    """Predicted waypoints within ``radius`` of any moving obstacle's current position."""
    pts = np.array([o.position for o in obstacles if o.moving], dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] == 0:
        return 0
    d = np.sqrt(((pred[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    return int((d.min(axis=1) <= radius).sum())


def metrics_from_predictions(pred: np.ndarray, dataset, sigma: float = SIGMA,
                             radius: float = COLLISION_RADIUS,
                             normalizer: float = L1_NORMALIZER) -> EvalMetrics:
    if len(dataset) == 0:
        raise ValueError("evaluate needs a nonempty dataset")
    wp_terms, crucial_terms, hits, total = [], [], 0, 0
    for scene, p in zip(dataset, pred):
        expert = scene.expert_traj
        err = np.abs(p - expert).sum(axis=1)
        t = expert.shape[0]
        psi = safety_kernel(expert, scene.obstacles, sigma)
        top = crucial_indices(psi, math.ceil(t / 4))
        wp_terms.append(math.fsum(err) / t)
        crucial_terms.append(math.fsum(err[top]) / len(top))
        hits += collision_hits(p, scene.obstacles, radius)
        total += t
    # fsum keeps the aggregates independent of scene order
    wl1 = math.fsum(wp_terms) / len(wp_terms)
    cl1 = math.fsum(crucial_terms) / len(crucial_terms)
    rate = hits / total
    return EvalMetrics(wl1, cl1, rate, composite_score(wl1, rate, normalizer))


def evaluate(model: PlannerModel, dataset, sigma_kernel: float = SIGMA,
             radius: float = COLLISION_RADIUS, normalizer: float = L1_NORMALIZER) -> EvalMetrics:
    """Held-out metrics; deterministic and invariant to scene order."""
    if len(dataset) == 0:
        raise ValueError("evaluate needs a nonempty dataset")
    pred = predict(model, dataset.bev_array(), dataset.speed_array(), dataset.command_array())
    return metrics_from_predictions(pred, dataset, sigma_kernel, radius, normalizer)


def measure_inference(model: PlannerModel, n_frames: int, seed: int = 0) -> tuple[float, int]:
    """Mean wall-clock milliseconds per single-frame forward pass, and the parameter count.

    The first ten frames warm up caches and are not timed.
    """
    if n_frames <= WARMUP_FRAMES:
        raise ValueError(f"n_frames must exceed the {WARMUP_FRAMES} warm-up frames, got {n_frames}")
    cfg = model.config
    rng = make_rng(seed, "bench/frames")
    frames = rng.random((n_frames, 1, cfg.in_channels, cfg.grid, cfg.grid))
    speed = np.array([3.0])
    cmd = np.array([3])
    times = []
    with no_grad():
        for i in range(n_frames):
            t0 = time.perf_counter()
            forward_batch(model, frames[i], speed, cmd)
            if i >= WARMUP_FRAMES:
                times.append(time.perf_counter() - t0)
    return 1000.0 * math.fsum(times) / len(times), model.param_count
