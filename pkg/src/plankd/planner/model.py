"""Two-part planner: conv perception backbone plus a dense motion head."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..gradkit import Conv2d, GradkitError, Linear, Tensor, make_rng, no_grad, ops
from ..gradkit.nn import fan_in_uniform
from ..scenario.types import CHANNELS, COMMANDS, GRID
from .checkpoint import CheckpointError, load_tensors, save_tensors

SPEED_SCALE = 5.0
OUTPUT_SCALE = 4.0  # metres per unit of the raw head output


def default_strides(depth: int) -> tuple[int, ...]:
    # halve resolution on the first two layers and the last one
    return tuple(2 if (i < 2 or i == depth - 1) else 1 for i in range(depth))


@dataclass(frozen=True)
class PlannerConfig:
    widths: tuple[int, ...] = (16, 32, 32, 64)
    head_hidden: tuple[int, ...] = (128,)
    T: int = 4
    command_embed: int = 8
    in_channels: int = CHANNELS
    grid: int = GRID
    strides: tuple[int, ...] | None = None

    @property
    def depth(self) -> int:
        return len(self.widths)

    @property
    def layer_strides(self) -> tuple[int, ...]:
        return tuple(self.strides) if self.strides is not None else default_strides(self.depth)

    @property
    def mid_layer(self) -> int:
        """1-based index of the tapped backbone layer (lower median for even depth)."""
        return math.ceil(self.depth / 2)

    def spatial_sizes(self) -> list[int]:
        sizes, s = [], self.grid
        for st in self.layer_strides:
            s = (s + 2 - 3) // st + 1
            sizes.append(s)
        return sizes

    @property
    def mid_shape(self) -> tuple[int, int, int]:
        s = self.spatial_sizes()[self.mid_layer - 1]
        return (self.widths[self.mid_layer - 1], s, s)

    def validate(self) -> None:
        if self.depth < 2:
            raise GradkitError(f"backbone depth {self.depth} < 2 leaves no middle layer to tap")
        dims = list(self.widths) + list(self.head_hidden) + [self.T, self.command_embed,
                                                             self.in_channels, self.grid]
        if any(int(d) < 1 for d in dims):
            raise GradkitError(f"zero-dimension layer in planner config {self}")
        if len(self.layer_strides) != self.depth:
            raise GradkitError("strides must list one entry per backbone layer")
        if self.spatial_sizes()[-1] < 1:
            raise GradkitError("backbone strides shrink the grid to nothing")


TEACHER_CONFIG = PlannerConfig()
STUDENT_CONFIG = PlannerConfig(widths=(8, 16, 16, 32))


@dataclass(eq=False)
class PlannerModel:
    config: PlannerConfig
    convs: list[Conv2d]
    embed: Tensor
    head: list[Linear]
    init_seed: int = 0
    extra: dict = field(default_factory=dict)

    def named_parameters(self):
        for i, c in enumerate(self.convs):
            yield from c.named_parameters(f"backbone.{i}.")
        yield "command_embed", self.embed
        for i, lin in enumerate(self.head):
            yield from lin.named_parameters(f"head.{i}.")

    @property
    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def parameter_list(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    @property
    def param_count(self) -> int:
        return sum(t.size for _, t in self.named_parameters())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.named_parameters()}


def build_planner(config: PlannerConfig, init_seed: int) -> PlannerModel:
    config.validate()
    rng = make_rng(init_seed, "planner/init")
    convs, c_in = [], config.in_channels
    for w, st in zip(config.widths, config.layer_strides):
        convs.append(Conv2d(c_in, w, rng, kernel=3, stride=st, padding=1))
        c_in = w
    n_cmd = len(COMMANDS)
    embed = Tensor(fan_in_uniform(rng, (n_cmd, config.command_embed), n_cmd, gain=1.0),
                   requires_grad=True)
    s = config.spatial_sizes()[-1]
    sizes = [config.widths[-1] * s * s + 1 + config.command_embed, *config.head_hidden,
             2 * config.T]
    head = [Linear(a, b, rng, gain=math.sqrt(2.0) if i < len(sizes) - 2 else 1.0)
            for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))]
    model = PlannerModel(config, convs, embed, head, init_seed)
    for name, t in model.named_parameters():
        t.name = name
    return model


def _as_batch(bev, speed, command):
    bev = np.asarray(bev.data if isinstance(bev, Tensor) else bev, dtype=np.float64)
    single = bev.ndim == 3
    if single:
        bev = bev[None]
    speed = np.atleast_1d(np.asarray(speed, dtype=np.float64))
    command = np.atleast_1d(np.asarray(
        [COMMANDS.index(c) if isinstance(c, str) else int(c)
         for c in np.atleast_1d(np.asarray(command, dtype=object))], dtype=np.int64))
    return bev, speed, command, single


def forward_batch(model: PlannerModel, bev: np.ndarray, speed: np.ndarray,
                  command: np.ndarray) -> tuple[Tensor, Tensor]:
    """Batched pass: h is (N, C_mid, H_mid, W_mid), waypoints are (N, T, 2)."""
    cfg = model.config
    n = bev.shape[0]
    if bev.shape[1:] != (cfg.in_channels, cfg.grid, cfg.grid):
        raise GradkitError(f"planner_forward: grid {bev.shape[1:]} does not match config "
                           f"{(cfg.in_channels, cfg.grid, cfg.grid)}")
    if speed.shape != (n,) or command.shape != (n,):
        raise GradkitError(f"planner_forward: batch {n} but speed {speed.shape}, "
                           f"command {command.shape}")
    if np.any((command < 0) | (command >= len(COMMANDS))):
        raise GradkitError(f"planner_forward: command index out of range {command}")
    x = Tensor(bev)
    h = None
    for i, conv in enumerate(model.convs):
        x = ops.leaky_relu(conv(x))
        if i + 1 == cfg.mid_layer:
            h = x
    onehot = np.zeros((n, len(COMMANDS)))
    onehot[np.arange(n), command] = 1.0
    feats = ops.concat([ops.reshape(x, (n, -1)), Tensor((speed / SPEED_SCALE)[:, None]),
                        ops.matmul(Tensor(onehot), model.embed)], axis=1)
    for i, lin in enumerate(model.head):
        feats = lin(feats)
        if i < len(model.head) - 1:
            feats = ops.leaky_relu(feats)
    wps = ops.scale(ops.reshape(feats, (n, cfg.T, 2)), OUTPUT_SCALE)
    return h, wps


def mid_features(model: PlannerModel, bev: np.ndarray) -> Tensor:
    """Backbone activations up to and including the middle layer, (N, C_mid, H_mid, W_mid)."""
    x = Tensor(bev)
    for conv in model.convs[:model.config.mid_layer]:
        x = ops.leaky_relu(conv(x))
    return x


def planner_forward(model: PlannerModel, bev, speed, command) -> tuple[Tensor, Tensor]:
    """Run one scene (C, H, W) or a batch (N, C, H, W).

    Returns the middle-layer activation and the waypoints; a single scene gives
    shapes (C_mid, H_mid, W_mid) and (T, 2).
    """
    bev, speed, command, single = _as_batch(bev, speed, command)
    h, wps = forward_batch(model, bev, speed, command)
    if single:
        h = ops.reshape(h, h.shape[1:])
        wps = ops.reshape(wps, wps.shape[1:])
    return h, wps


def predict(model: PlannerModel, bev, speed, command, batch_size: int = 256) -> np.ndarray:
    """Waypoints for many scenes without recording a graph."""
    bev, speed, command, _ = _as_batch(bev, speed, command)
    out = []
    with no_grad():
        for i in range(0, bev.shape[0], batch_size):
            sl = slice(i, i + batch_size)
            out.append(forward_batch(model, bev[sl], speed[sl], command[sl])[1].data)
    return np.concatenate(out) if out else np.zeros((0, model.config.T, 2))


# checkpoints --------------------------------------------------------------

def planner_arrays(model: PlannerModel, prefix: str = "") -> dict[str, np.ndarray]:
    cfg = model.config
    out = {f"{prefix}{k}": v for k, v in model.state_arrays().items()}
    out[f"{prefix}meta.layout"] = np.array([cfg.grid, cfg.in_channels, *cfg.layer_strides],
                                           dtype=np.float64)
    return out


def save_planner(model: PlannerModel, path, extra: dict[str, np.ndarray] | None = None) -> None:
    arrays = planner_arrays(model)
    arrays.update(extra or {})
    save_tensors(arrays, path)


def planner_from_arrays(arrays: dict[str, np.ndarray], prefix: str = "") -> PlannerModel:
    try:
        layout = [int(v) for v in arrays[f"{prefix}meta.layout"]]
        depth = len(layout) - 2
        widths = tuple(arrays[f"{prefix}backbone.{i}.weight"].shape[0] for i in range(depth))
        n_head = 0
        while f"{prefix}head.{n_head}.weight" in arrays:
            n_head += 1
        head_w = [arrays[f"{prefix}head.{i}.weight"] for i in range(n_head)]
        embed = arrays[f"{prefix}command_embed"]
    except KeyError as exc:
        raise CheckpointError(f"checkpoint lacks planner tensor {exc}", 0) from None
    cfg = PlannerConfig(widths=widths, head_hidden=tuple(w.shape[1] for w in head_w[:-1]),
                        T=head_w[-1].shape[1] // 2, command_embed=embed.shape[1],
                        in_channels=layout[1], grid=layout[0], strides=tuple(layout[2:]))
    model = build_planner(cfg, 0)
    for name, t in model.named_parameters():
        src = arrays.get(prefix + name)
        if src is None or src.shape != t.shape:
            raise CheckpointError(f"tensor {prefix + name} missing or misshapen", 0)
        t.data[...] = src
    return model


def load_planner(path) -> PlannerModel:
    return planner_from_arrays(load_tensors(path))
