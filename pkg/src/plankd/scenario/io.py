"""Little-endian "PKDS" dataset container."""

from __future__ import annotations

import hashlib
import os
import struct

import numpy as np

from .types import COMMANDS, Dataset, ObstaclePose, PlanningStates, Scene

MAGIC = b"PKDS"
VERSION = 1
_HEADER = struct.Struct("<4s6I")
_SCENE_HEAD = struct.Struct("<QfB8BI")
_OBSTACLE = struct.Struct("<4fB")


class DatasetFormatError(ValueError):
    """Base for malformed dataset files; ``offset`` is the byte where reading failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class BadMagicError(DatasetFormatError):
    pass


class VersionError(DatasetFormatError):
    pass


class TruncatedError(DatasetFormatError):
    pass


class DimensionError(DatasetFormatError):
    pass


def encode_dataset(ds: Dataset) -> bytes:
    C, H, W = ds.grid
    parts = [_HEADER.pack(MAGIC, VERSION, len(ds), ds.T, C, H, W)]
    for s in ds:
        parts.append(_SCENE_HEAD.pack(s.scene_seed, s.speed, COMMANDS.index(s.command),
                                      *s.states.as_tuple(), len(s.obstacles)))
        for o in s.obstacles:
            parts.append(_OBSTACLE.pack(o.x, o.y, o.vx, o.vy, o.kind))
        parts.append(np.asarray(s.expert_traj, dtype="<f4").tobytes())
        parts.append(np.asarray(s.bev, dtype="<f4").tobytes())
    return b"".join(parts)


def write_dataset(ds: Dataset, path) -> None:
    data = encode_dataset(ds)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedError(f"truncated file while reading {what}", self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, st: struct.Struct, what: str):
        return st.unpack(self.take(st.size, what))


def decode_dataset(buf: bytes) -> Dataset:
    r = _Reader(buf)
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}", 0)
    magic, version, count, T, C, H, W = r.unpack(_HEADER, "header")
    if version != VERSION:
        raise VersionError(f"unsupported version {version}", 4)
    for off, name, v in ((12, "T", T), (16, "C", C), (20, "H", H), (24, "W", W)):
        if v == 0:
            raise DimensionError(f"zero dimension {name}", off)
    plane = C * H * W
    scenes = []
    for i in range(count):
        start = r.pos
        seed, speed, cmd, *rest = r.unpack(_SCENE_HEAD, f"scene {i} header")
        states, n_obs = rest[:8], rest[8]
        if cmd >= len(COMMANDS):
            raise DimensionError(f"scene {i}: command code {cmd} out of range", start + 12)
        try:
            ps = PlanningStates.from_sequence(states)
        except ValueError as exc:
            raise DimensionError(f"scene {i}: {exc}", start + 13) from None
        obstacles = []
        for _ in range(n_obs):
            x, y, vx, vy, kind = r.unpack(_OBSTACLE, f"scene {i} obstacle")
            if kind > 1:
                raise DimensionError(f"scene {i}: obstacle kind {kind}", r.pos - 1)
            obstacles.append(ObstaclePose(x, y, vx, vy, kind))
        traj = np.frombuffer(r.take(8 * T, f"scene {i} waypoints"), dtype="<f4")
        bev = np.frombuffer(r.take(4 * plane, f"scene {i} grid"), dtype="<f4")
        scenes.append(Scene(
            bev=bev.astype(np.float64).reshape(C, H, W),
            obstacles=tuple(obstacles),
            expert_traj=traj.astype(np.float64).reshape(T, 2),
            states=ps,
            speed=float(speed),
            command=COMMANDS[cmd],
            scene_seed=int(seed),
        ))
    if r.pos != len(buf):
        raise DimensionError(f"{len(buf) - r.pos} trailing bytes after {count} scenes", r.pos)
    return Dataset(scenes, T=T, grid=(C, H, W), version=version)


def read_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        return decode_dataset(fh.read())


def dataset_bytes_hash(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
