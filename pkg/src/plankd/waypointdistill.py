"""Safety-aware attention over waypoints and the losses built on it."""

from __future__ import annotations

import math

import numpy as np

from .gradkit import MLP, Conv2d, GradkitError, Layer, Tensor, make_rng, ops
from .scenario.types import CHANNELS, EXTENT, GRID, ObstaclePose

D_K = 64
BEV_WIDTHS = (8, 8, 16, 16, 32, 32)
BEV_STRIDES = (2, 1, 2, 1, 2, 1)
BEV_HIDDEN = 512
WAYPOINT_HIDDEN = 128
WAYPOINT_SCALE = EXTENT  # keys see waypoints in units of the grid half-width
SIGMA = 3.0
TIE_EPS = 1e-9


def coord_augment(bev: np.ndarray) -> np.ndarray:
    """Append normalized row and column cell-centre coordinates as two channels."""
    bev = np.asarray(bev.data if isinstance(bev, Tensor) else bev, dtype=np.float64)
    h, w = bev.shape[-2:]
    rows = 2.0 * (np.arange(h) + 0.5) / h - 1.0
    cols = 2.0 * (np.arange(w) + 0.5) / w - 1.0
    grid = np.stack(np.meshgrid(rows, cols, indexing="ij"))
    grid = np.broadcast_to(grid, bev.shape[:-3] + grid.shape)
    return np.concatenate([bev, grid], axis=-3)


class BEVEncoder(Layer):
    """Six 3x3 convolutions and a two-layer dense head producing one query."""

    def __init__(self, rng: np.random.Generator, in_channels: int = CHANNELS + 2,
                 grid: int = GRID, widths=BEV_WIDTHS, strides=BEV_STRIDES,
                 hidden: int = BEV_HIDDEN, d_k: int = D_K):
        self.convs = []
        c, s = in_channels, grid
        for wd, st in zip(widths, strides):
            self.convs.append(Conv2d(c, wd, rng, kernel=3, stride=st, padding=1))
            c, s = wd, (s - 1) // st + 1
        self.mlp = MLP([c * s * s, hidden, d_k], rng)
        self.d_k = d_k

    def named_parameters(self, prefix: str = ""):
        for i, conv in enumerate(self.convs):
            yield from conv.named_parameters(f"{prefix}conv.{i}.")
        yield from self.mlp.named_parameters(f"{prefix}mlp.")

    def __call__(self, bev_aug: np.ndarray) -> Tensor:
        x = Tensor(bev_aug)
        for conv in self.convs:
            x = ops.leaky_relu(conv(x))
        return self.mlp(ops.reshape(x, (x.shape[0], -1)))


class WaypointEncoder(Layer):
    """Shared two-layer network mapping each (x, y) waypoint to a key."""

    def __init__(self, rng: np.random.Generator, hidden: int = WAYPOINT_HIDDEN, d_k: int = D_K):
        self.mlp = MLP([2, hidden, d_k], rng)
        self.d_k = d_k

    def named_parameters(self, prefix: str = ""):
        yield from self.mlp.named_parameters(f"{prefix}mlp.")

    def __call__(self, waypoints: np.ndarray) -> Tensor:
        wp = np.asarray(waypoints, dtype=np.float64)
        n, t = wp.shape[:2]
        keys = self.mlp(Tensor(wp.reshape(n * t, 2) / WAYPOINT_SCALE))
        return ops.reshape(keys, (n, t, self.d_k))


class AttentionModule:
    def __init__(self, seed: int, bev_channels: int = CHANNELS + 2, grid: int = GRID,
                 widths=BEV_WIDTHS, strides=BEV_STRIDES, hidden: int = BEV_HIDDEN,
                 waypoint_hidden: int = WAYPOINT_HIDDEN, d_k: int = D_K):
        rng = make_rng(seed, "attention/init")
        self.bev_encoder = BEVEncoder(rng, bev_channels, grid, widths, strides, hidden, d_k)
        self.waypoint_encoder = WaypointEncoder(rng, waypoint_hidden, d_k)
        for name, t in self.named_parameters():
            t.name = name

    def named_parameters(self, prefix: str = "att."):
        yield from self.bev_encoder.named_parameters(prefix + "bev.")
        yield from self.waypoint_encoder.named_parameters(prefix + "wp.")

    def parameter_list(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]


def attention_logits(bev_enc: BEVEncoder, wp_enc: WaypointEncoder, bev_aug: np.ndarray,
                     waypoints: np.ndarray) -> Tensor:
    q = bev_enc(bev_aug)                      # (N, d_k)
    k = wp_enc(waypoints)                     # (N, T, d_k)
    n = q.shape[0]
    scores = ops.sum(ops.mul(ops.reshape(q, (n, 1, q.shape[1])), k), axis=-1)
    return ops.scale(scores, 1.0 / math.sqrt(q.shape[1]))


def waypoint_attention(bev_enc: BEVEncoder, wp_enc: WaypointEncoder, bev_aug,
                       waypoints) -> Tensor:
    """Softmax over the T scaled query-key products.

    Accepts one scene, (C+2, H, W) with (T, 2) waypoints, giving shape (T,),
    or a batch, (N, C+2, H, W) with (N, T, 2), giving (N, T).
    """
    bev_aug = np.asarray(bev_aug, dtype=np.float64)
    wp = np.asarray(waypoints, dtype=np.float64)
    single = bev_aug.ndim == 3
    if single:
        bev_aug, wp = bev_aug[None], wp[None]
    if wp.ndim != 3 or wp.shape[1] == 0 or wp.shape[2] != 2:
        raise GradkitError(f"waypoint_attention: need T >= 1 waypoints of (x, y), got {wp.shape}")
    if wp.shape[0] != bev_aug.shape[0]:
        raise GradkitError(f"waypoint_attention: batch {bev_aug.shape[0]} vs {wp.shape[0]}")
    a = ops.softmax(attention_logits(bev_enc, wp_enc, bev_aug, wp), axis=-1)
    return ops.reshape(a, (wp.shape[1],)) if single else a


def _obstacle_positions(obstacles, moving_only: bool) -> np.ndarray:
    if isinstance(obstacles, np.ndarray):
        return obstacles.reshape(-1, 2).astype(np.float64)
    pts = [o.position for o in obstacles
           if not moving_only or not isinstance(o, ObstaclePose) or o.moving]
    return np.asarray(pts, dtype=np.float64).reshape(-1, 2)


def safety_kernel(waypoints, obstacles, sigma: float = SIGMA, moving_only: bool = True) -> np.ndarray:
    """psi_i = sum_j exp(-|w_i - p_j|^2 / (2 sigma^2)) over moving obstacles.

    ``obstacles`` may be ObstaclePose objects (static ones dropped) or an
    (M, 2) array of positions taken as given.
    """
    if sigma <= 0:
        raise ValueError(f"kernel width must be positive, got {sigma}")
    wp = np.asarray(waypoints, dtype=np.float64).reshape(-1, 2)
    pts = _obstacle_positions(obstacles, moving_only)
    if pts.shape[0] == 0:
        return np.zeros(wp.shape[0])
    d2 = ((wp[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
    return np.exp(-d2 / (2.0 * sigma * sigma)).sum(axis=1)


def safety_scores(trajs: np.ndarray, obstacle_sets, sigma: float = SIGMA) -> np.ndarray:
    return np.stack([safety_kernel(w, obs, sigma) for w, obs in zip(trajs, obstacle_sets)]) \
        if len(trajs) else np.zeros((0, 0))


def rank_targets(psi: np.ndarray, literal: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """r_ij (+1 where psi_i > psi_j, else -1) and the mask of pairs that count."""
    psi = np.asarray(psi, dtype=np.float64)
    diff = psi[..., :, None] - psi[..., None, :]
    r = np.where(diff > 0, 1.0, -1.0)
    mask = np.ones_like(diff) if literal else (np.abs(diff) >= TIE_EPS).astype(np.float64)
    return r, mask


def ranking_loss(a: Tensor, psi, literal: bool = False) -> Tensor:
    """Sum over ordered pairs of max(0, -r_ij (a_i - a_j)); batch-averaged.

    Pairs whose scores differ by less than 1e-9 are skipped unless
    ``literal`` is set, in which case ties count with r = -1.
    """
    psi = np.asarray(psi, dtype=np.float64)
    if tuple(a.shape) != psi.shape:
        raise GradkitError(f"ranking_loss: attention {a.shape} vs scores {psi.shape}")
    single = psi.ndim == 1
    a3 = ops.reshape(a, (1,) + a.shape) if single else a
    psi = psi[None] if single else psi
    n, t = psi.shape
    r, mask = rank_targets(psi, literal)
    diff = ops.sub(ops.reshape(a3, (n, t, 1)), ops.reshape(a3, (n, 1, t)))
    hinge = ops.relu(ops.mul(diff, Tensor(-r)))
    return ops.scale(ops.sum(ops.mul(hinge, Tensor(mask))), 1.0 / n)


def _as_const(a) -> Tensor:
    return Tensor(a.data if isinstance(a, Tensor) else np.asarray(a, dtype=np.float64))


def attentive_waypoint_loss(a, pred: Tensor, target) -> Tensor:
    """Batch mean of sum_i a_i (|dx_i| + |dy_i|); ``a`` is treated as a constant."""
    w = _as_const(a)
    tgt = _as_const(target)
    if pred.shape != tgt.shape or w.shape != pred.shape[:-1]:
        raise GradkitError(f"attentive_waypoint_loss: weights {w.shape}, prediction "
                           f"{pred.shape}, target {tgt.shape}")
    per_wp = ops.l1(pred, tgt, axis=-1)
    weighted = ops.sum(ops.mul(per_wp, w), axis=-1)
    return ops.mean(weighted)


def entropy_loss(a: Tensor) -> Tensor:
    """Batch mean of sum_i a_i ln a_i (negative entropy)."""
    per = ops.sum(ops.xlogx(a), axis=-1)
    return ops.mean(per)


def uniform_attention(n: int, t: int) -> np.ndarray:
    return np.full((n, t), 1.0 / t)


def distinct_values(psi: np.ndarray) -> int:
    s = np.sort(np.asarray(psi, dtype=np.float64))
    if s.size == 0:
        return 0
    return 1 + int(np.count_nonzero(np.diff(s) >= TIE_EPS))
