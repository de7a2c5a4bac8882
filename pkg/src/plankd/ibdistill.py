"""Variational information bottleneck over mid-layer feature maps.

Both planners' middle activations are averaged over channels, resized to a
common 16x16 map and encoded into a shared latent space whose decoder
predicts the eight planning states.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gradkit import GradkitError, Layer, Linear, Tensor, make_rng, ops
from .scenario.types import BINARY_INDICES, TERNARY_INDEX

MAP_SIZE = 16
D_Z = 256
HIDDEN = 512
LOGVAR_BOUND = 10.0
N_BINARY = len(BINARY_INDICES)
N_LOGITS = N_BINARY + 3


def channel_average(h: Tensor, size: int = MAP_SIZE) -> Tensor:
    """Mean over channels then bilinear resize: (C,H,W) -> (1,size,size).

    A leading batch axis is carried through: (N,C,H,W) -> (N,1,size,size).
    """
    h = h if isinstance(h, Tensor) else Tensor(h)
    if len(h.shape) not in (3, 4):
        raise GradkitError(f"channel_average: expected a rank-3 map, got shape {h.shape}")
    return ops.bilinear_resize(ops.channel_mean(h), (size, size))


def flatten_map(m: Tensor) -> Tensor:
    """(N,1,S,S) -> (N, S*S); a single (1,S,S) map becomes (1, S*S)."""
    n = m.shape[0] if len(m.shape) == 4 else 1
    return ops.reshape(m, (n, -1))


@dataclass
class LatentSample:
    z: Tensor
    mu: Tensor
    logvar: Tensor
    eps: np.ndarray


class IBEncoder(Layer):
    """Per-branch input projection, shared trunk, mean and log-variance heads."""

    def __init__(self, rng: np.random.Generator, branches=("teacher", "student"),
                 in_dim: int = MAP_SIZE * MAP_SIZE, hidden: int = HIDDEN, d_z: int = D_Z):
        self.d_z = d_z
        self.in_dim = in_dim
        self.proj = {b: Linear(in_dim, hidden, rng) for b in branches}
        self.trunk = Linear(hidden, hidden, rng)
        self.mu_head = Linear(hidden, d_z, rng, gain=1.0)
        self.logvar_head = Linear(hidden, d_z, rng, gain=1.0)

    def named_parameters(self, prefix: str = ""):
        for b, lin in self.proj.items():
            yield from lin.named_parameters(f"{prefix}proj.{b}.")
        yield from self.trunk.named_parameters(f"{prefix}trunk.")
        yield from self.mu_head.named_parameters(f"{prefix}mu.")
        yield from self.logvar_head.named_parameters(f"{prefix}logvar.")

    def __call__(self, x: Tensor, branch: str) -> tuple[Tensor, Tensor]:
        if branch not in self.proj:
            raise GradkitError(f"IBEncoder: unknown branch {branch!r}")
        if x.shape[-1] != self.in_dim:
            raise GradkitError(f"IBEncoder: input width {x.shape[-1]} != {self.in_dim}")
        hid = ops.leaky_relu(self.trunk(ops.leaky_relu(self.proj[branch](x))))
        logvar = ops.clamp(self.logvar_head(hid), -LOGVAR_BOUND, LOGVAR_BOUND)
        return self.mu_head(hid), logvar


class IBDecoder(Layer):
    """Latent -> 7 binary logits followed by 3 traffic-light logits."""

    def __init__(self, rng: np.random.Generator, d_z: int = D_Z, hidden: int = HIDDEN):
        self.layers = [Linear(d_z, hidden, rng), Linear(hidden, hidden, rng),
                       Linear(hidden, N_LOGITS, rng, gain=1.0)]

    def named_parameters(self, prefix: str = ""):
        for i, lin in enumerate(self.layers):
            yield from lin.named_parameters(f"{prefix}{i}.")

    def __call__(self, z: Tensor) -> Tensor:
        x = z
        for i, lin in enumerate(self.layers):
            x = lin(x)
            if i < len(self.layers) - 1:
                x = ops.leaky_relu(x)
        return x


def ib_encode(enc: IBEncoder, hbar: Tensor, eps: np.ndarray, branch: str = "student") -> LatentSample:
    """One reparameterized draw z = mu + exp(logvar/2) * eps."""
    x = hbar if len(hbar.shape) == 2 else flatten_map(hbar)
    mu, logvar = enc(x, branch)
    eps = np.asarray(eps, dtype=np.float64).reshape(mu.shape)
    return LatentSample(ops.reparameterize(mu, logvar, Tensor(eps)), mu, logvar, eps)


def draw_eps(rng: np.random.Generator, n: int, d_z: int = D_Z) -> np.ndarray:
    return rng.standard_normal((n, d_z))


def kl_to_standard_normal(mu: Tensor, logvar: Tensor) -> Tensor:
    """0.5 * sum(mu^2 + sigma^2 - 1 - logvar) over the last axis."""
    if mu.shape != logvar.shape:
        raise GradkitError(f"kl_to_standard_normal: shapes {mu.shape} and {logvar.shape}")
    inner = ops.sub(ops.add(ops.mul(mu, mu), ops.exp(logvar)), ops.add(logvar, Tensor(np.ones(1))))
    return ops.scale(ops.sum(inner, axis=-1), 0.5)


def _check_states(states: np.ndarray) -> np.ndarray:
    states = np.asarray(states)
    if states.ndim == 1:
        states = states[None]
    if states.shape[-1] != 8:
        raise ValueError(f"expected 8 planning states per datum, got shape {states.shape}")
    binary = states[:, list(BINARY_INDICES)]
    if not np.isin(binary, (0, 1)).all() or not np.isin(states[:, TERNARY_INDEX], (0, 1, 2)).all():
        raise ValueError("planning state values outside their domain")
    return states.astype(np.int64)


def state_log_likelihood(logits: Tensor, states: np.ndarray) -> Tensor:
    """Per-datum sum of log q(y_j | z) over the eight heads, shape (N,)."""
    states = _check_states(states)
    n = states.shape[0]
    yb = states[:, list(BINARY_INDICES)].astype(np.float64)
    lb = ops.take(logits, slice(0, N_BINARY), axis=-1)
    ll_bin = ops.add(ops.mul(ops.log_sigmoid(lb), Tensor(yb)),
                     ops.mul(ops.log_sigmoid(ops.scale(lb, -1.0)), Tensor(1.0 - yb)))
    onehot = np.zeros((n, 3))
    onehot[np.arange(n), states[:, TERNARY_INDEX]] = 1.0
    lt = ops.log_softmax(ops.take(logits, slice(N_BINARY, N_LOGITS), axis=-1), axis=-1)
    ll_ter = ops.mul(lt, Tensor(onehot))
    return ops.add(ops.sum(ll_bin, axis=-1), ops.sum(ll_ter, axis=-1))


def ib_lower_bound(latent: LatentSample, decoder: IBDecoder, states: np.ndarray,
                   beta: float) -> Tensor:
    """Mean log-likelihood of the true states minus beta times mean KL (to be maximized)."""
    ll = ops.mean(state_log_likelihood(decoder(latent.z), states))
    kl = ops.mean(kl_to_standard_normal(latent.mu, latent.logvar))
    return ops.sub(ll, ops.scale(kl, beta))


def feature_distill_loss(z_t: Tensor, z_s: Tensor) -> Tensor:
    """Batch mean of the per-datum mean |z_s - z_t|; the teacher latent is a constant."""
    zt = Tensor(z_t.data if isinstance(z_t, Tensor) else z_t)
    if zt.shape != z_s.shape:
        raise GradkitError(f"feature_distill_loss: shapes {zt.shape} and {z_s.shape}")
    return ops.scale(ops.mean(ops.l1(z_s, zt, axis=-1)), 1.0 / z_s.shape[-1])


def predict_states(decoder: IBDecoder, z: Tensor) -> np.ndarray:
    """Most likely state vector per datum, (N, 8)."""
    logits = decoder(z).data
    if logits.ndim == 1:
        logits = logits[None]
    out = np.zeros((logits.shape[0], 8), dtype=np.int64)
    out[:, list(BINARY_INDICES)] = (logits[:, :N_BINARY] > 0).astype(np.int64)
    out[:, TERNARY_INDEX] = logits[:, N_BINARY:].argmax(axis=1)
    return out


class IBModule:
    """Encoder/decoder pair shared by the teacher and student branches."""

    def __init__(self, seed: int, d_z: int = D_Z, hidden: int = HIDDEN):
        rng = make_rng(seed, "ib/init")
        self.encoder = IBEncoder(rng, d_z=d_z, hidden=hidden)
        self.decoder = IBDecoder(rng, d_z=d_z, hidden=hidden)
        for name, t in self.named_parameters():
            t.name = name

    def named_parameters(self, prefix: str = "ib."):
        yield from self.encoder.named_parameters(prefix + "enc.")
        yield from self.decoder.named_parameters(prefix + "dec.")

    def parameter_list(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]


__all__ = [
    "D_Z",
    "IBDecoder",
    "IBEncoder",
    "IBModule",
    "LatentSample",
    "channel_average",
    "draw_eps",
    "feature_distill_loss",
    "ib_encode",
    "ib_lower_bound",
    "kl_to_standard_normal",
    "predict_states",
    "state_log_likelihood",
]
