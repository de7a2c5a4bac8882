"""Imitation pretraining: mean per-waypoint L1 against the expert."""

from __future__ import annotations

import math
import time

import numpy as np

from ..gradkit import Adam, Tensor, backward, graph, make_rng, ops
from ..report import NumericAbort, StepRecord, TrainReport
from ..scenario.types import Dataset
from .model import PlannerModel, forward_batch


def waypoint_l1(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean over batch and waypoints of |dx| + |dy|."""
    return ops.mean(ops.l1(pred, Tensor(target), axis=2))


def epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


class DatasetArrays:
    """Stacked training arrays, built once per run."""

    def __init__(self, ds: Dataset):
        self.bev = ds.bev_array()
        self.traj = ds.traj_array()
        self.speed = ds.speed_array()
        self.command = ds.command_array()
        self.states = ds.states_array()
        self.obstacles = [s.moving_obstacles() for s in ds]

    def __len__(self) -> int:
        return self.bev.shape[0]


def train_imitation(model: PlannerModel, dataset: Dataset, epochs: int, lr: float,
                    batch_size: int = 16, seed: int = 0,
                    eval_fn=None) -> tuple[PlannerModel, TrainReport]:
    """Fit ``model`` in place to the expert trajectories with Adam."""
    if len(dataset) == 0:
        raise ValueError("train_imitation needs a nonempty dataset")
    arrays = dataset if isinstance(dataset, DatasetArrays) else DatasetArrays(dataset)
    params = model.parameter_list()
    opt = Adam(params, lr=lr)
    rng = make_rng(seed, "imitation/batches")
    report = TrainReport(config={"epochs": epochs, "lr": lr, "batch_size": batch_size,
                                 "widths": list(model.config.widths)},
                         seeds={"init": model.init_seed, "train": seed})
    step = 0
    for _ in range(epochs):
        t0 = time.perf_counter()
        for idx in epoch_batches(len(arrays), batch_size, rng):
            with graph():
                _, pred = forward_batch(model, arrays.bev[idx], arrays.speed[idx],
                                        arrays.command[idx])
                loss = waypoint_l1(pred, arrays.traj[idx])
                value = loss.item()
                if not math.isfinite(value):
                    raise NumericAbort(step, {"L": value}, "L")
                backward(loss, wrt=params)
            opt.step()
            report.steps.append(StepRecord(L=value, L_w_star=value))
            step += 1
        report.wall_clock.append(time.perf_counter() - t0)
        report.epoch_metrics.append(eval_fn(model) if eval_fn else
                                    {"train_l1": float(np.mean(report.series("L")[-max(1, step):]))})
    return model, report
