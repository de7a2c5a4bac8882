"""Training records shared by imitation pretraining and distillation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

LOSS_FIELDS = ("L", "L_w", "L_w_star", "neg_L_IB", "L_z", "L_rank", "L_e")


class NumericAbort(ArithmeticError):
    """A loss went non-finite; carries the step index and the component values."""

    def __init__(self, step: int, components: dict[str, float], culprit: str | None = None):
        self.step = step
        self.components = dict(components)
        self.culprit = culprit
        dump = ", ".join(f"{k}={v!r}" for k, v in self.components.items())
        what = f" in {culprit}" if culprit else ""
        super().__init__(f"non-finite loss{what} at step {step}: {dump}")


@dataclass
class StepRecord:
    L: float = 0.0
    L_w: float = 0.0
    L_w_star: float = 0.0
    neg_L_IB: float = 0.0
    L_z: float = 0.0
    L_rank: float = 0.0
    L_e: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return asdict(self)

    def check_finite(self, step: int) -> None:
        for f in fields(self):
            if not math.isfinite(getattr(self, f.name)):
                raise NumericAbort(step, self.as_dict(), f.name)


@dataclass
class TrainReport:
    steps: list[StepRecord] = field(default_factory=list)
    epoch_metrics: list[dict[str, float]] = field(default_factory=list)
    wall_clock: list[float] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)

    def __eq__(self, other) -> bool:
        # wall-clock time is the only field allowed to differ between reruns
        if not isinstance(other, TrainReport):
            return NotImplemented
        return (self.steps == other.steps and self.epoch_metrics == other.epoch_metrics
                and self.config == other.config and self.seeds == other.seeds)

    def series(self, name: str) -> list[float]:
        return [getattr(s, name) for s in self.steps]

    def to_csv(self) -> str:
        rows = [",".join(("step",) + LOSS_FIELDS)]
        for i, s in enumerate(self.steps):
            rows.append(",".join([str(i)] + [repr(getattr(s, k)) for k in LOSS_FIELDS]))
        return "\n".join(rows) + "\n"

    def to_text(self) -> str:
        """One ``key = value`` record per line."""
        lines = [f"config.{k} = {v}" for k, v in sorted(self.config.items())]
        lines += [f"seed.{k} = {v}" for k, v in sorted(self.seeds.items())]
        lines.append(f"steps = {len(self.steps)}")
        for e, (m, t) in enumerate(zip(self.epoch_metrics, self.wall_clock)):
            for k, v in sorted(m.items()):
                lines.append(f"epoch.{e}.{k} = {v!r}")
            lines.append(f"epoch.{e}.seconds = {t:.3f}")
        if self.steps:
            for k in LOSS_FIELDS:
                lines.append(f"final.{k} = {getattr(self.steps[-1], k)!r}")
        return "\n".join(lines) + "\n"
