"""Run manifests: what was run, on which bytes, and what came out."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from ..scenario.io import dataset_bytes_hash


@dataclass
class RunManifest:
    command: str
    config: dict = field(default_factory=dict)
    datasets: dict[str, str] = field(default_factory=dict)       # path -> sha256
    checkpoints: dict[str, str] = field(default_factory=dict)    # role -> path
    metrics: dict[str, dict[str, float]] = field(default_factory=dict)
    curves: dict[str, list[float]] = field(default_factory=dict)

    def add_dataset(self, path) -> str:
        digest = dataset_bytes_hash(path)
        self.datasets[os.fspath(path)] = digest
        return digest

    def to_text(self) -> str:
        lines = [f"command = {self.command}"]
        lines += [f"config.{k} = {v}" for k, v in sorted(self.config.items())]
        lines += [f"dataset.{p} = {h}" for p, h in self.datasets.items()]
        lines += [f"checkpoint.{role} = {p}" for role, p in self.checkpoints.items()]
        for row, vals in self.metrics.items():
            lines += [f"metric.{row}.{k} = {v!r}" for k, v in vals.items()]
        for name, ys in self.curves.items():
            lines.append(f"curve.{name} = " + " ".join(repr(y) for y in ys))
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    def verify_datasets(self) -> list[str]:
        """Paths whose current bytes no longer match the recorded hash."""
        return [p for p, h in self.datasets.items() if dataset_bytes_hash(p) != h]


def read_key_values(path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            key, sep, value = line.partition(" = ")
            if sep:
                out[key.strip()] = value.rstrip("\n")
    return out
