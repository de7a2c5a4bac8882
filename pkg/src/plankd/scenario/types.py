from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GRID = 32
CHANNELS = 5
CELL = 1.0
EXTENT = GRID * CELL / 2  # 16 m half-width
DT = 0.5

COMMANDS = ("left", "right", "straight", "follow")
VEHICLE, PEDESTRIAN = 0, 1
KINDS = ("vehicle", "pedestrian")

# BEV channel indices
CH_DRIVABLE, CH_MARKING, CH_OCCUPANCY, CH_EGO, CH_LIGHT = range(5)

LIGHT_ABSENT, LIGHT_RED, LIGHT_GREEN = 0, 1, 2

STATE_NAMES = ("nearby_vehicle", "nearby_pedestrian", "traffic_sign", "junction",
               "traffic_light", "brake", "throttle", "steer")
TERNARY_INDEX = 4
BINARY_INDICES = (0, 1, 2, 3, 5, 6, 7)

MOVING_SPEED = 0.1


@dataclass(frozen=True)
class ObstaclePose:
    x: float
    y: float
    vx: float
    vy: float
    kind: int = VEHICLE

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)

    @property
    def speed(self) -> float:
        return float(np.hypot(self.vx, self.vy))

    @property
    def moving(self) -> bool:
        return self.speed > MOVING_SPEED


@dataclass(frozen=True)
class PlanningStates:
    nearby_vehicle: int = 0
    nearby_pedestrian: int = 0
    traffic_sign: int = 0
    junction: int = 0
    traffic_light: int = 0
    brake: int = 0
    throttle: int = 0
    steer: int = 0

    def __post_init__(self):
        for name in STATE_NAMES:
            v = getattr(self, name)
            allowed = (0, 1, 2) if name == "traffic_light" else (0, 1)
            if v not in allowed:
                raise ValueError(f"planning state {name}={v!r} outside {allowed}")

    def as_tuple(self) -> tuple[int, ...]:
        return tuple(getattr(self, n) for n in STATE_NAMES)

    @classmethod
    def from_sequence(cls, values) -> "PlanningStates":
        values = [int(v) for v in values]
        if len(values) != 8:
            raise ValueError(f"expected 8 planning states, got {len(values)}")
        return cls(*values)


@dataclass(frozen=True)
class GenParams:
    T: int = 4
    min_obstacles: int = 0
    max_obstacles: int = 2
    junction_prob: float = 0.4
    light_prob: float = 0.6
    sign_prob: float = 0.3
    lanes: int = 3
    lane_width: float = 3.5
    speed_limit: float = 7.0
    min_speed: float = 2.5
    max_retries: int = 20

    def validate(self) -> None:
        if self.lanes < 1 or self.lane_width <= 0:
            raise ValueError("generation parameters imply zero drivable area "
                             f"(lanes={self.lanes}, lane_width={self.lane_width})")
        if self.T < 1:
            raise ValueError(f"T must be positive, got {self.T}")
        if not 0 <= self.min_obstacles <= self.max_obstacles:
            raise ValueError("need 0 <= min_obstacles <= max_obstacles")
        for name in ("junction_prob", "light_prob", "sign_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be a probability, got {p}")
        if self.speed_limit <= 0:
            raise ValueError("speed_limit must be positive")

    @property
    def effective_speed_limit(self) -> float:
        # keeps the last waypoint inside the grid
        return min(self.speed_limit, (EXTENT - 0.5) / (self.T * DT))


@dataclass(frozen=True)
class Layout:
    """Scene geometry the expert plans on (everything but the raster)."""

    archetype: str
    command: str
    speed: float
    obstacles: tuple[ObstaclePose, ...] = ()
    junction_x: float | None = None
    light: int = LIGHT_ABSENT
    sign: tuple[float, float] | None = None
    lane_change_to: float | None = None
    lanes: int = 3
    lane_width: float = 3.5

    def mirrored(self) -> "Layout":
        swap = {"left": "right", "right": "left"}
        return Layout(
            archetype=self.archetype,
            command=swap.get(self.command, self.command),
            speed=self.speed,
            obstacles=tuple(ObstaclePose(o.x, -o.y, o.vx, -o.vy, o.kind) for o in self.obstacles),
            junction_x=self.junction_x,
            light=self.light,
            sign=None if self.sign is None else (self.sign[0], -self.sign[1]),
            lane_change_to=None if self.lane_change_to is None else -self.lane_change_to,
            lanes=self.lanes,
            lane_width=self.lane_width,
        )

    @property
    def road_half_width(self) -> float:
        return self.lanes * self.lane_width / 2


@dataclass(eq=False)
class Scene:
    bev: np.ndarray  # (C, H, W) float64, values in [0, 1]
    obstacles: tuple[ObstaclePose, ...]
    expert_traj: np.ndarray  # (T, 2)
    states: PlanningStates
    speed: float
    command: str
    scene_seed: int
    archetype: str = ""
    layout: Layout | None = field(default=None, repr=False)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Scene):
            return NotImplemented
        return (self.scene_seed == other.scene_seed
                and self.speed == other.speed
                and self.command == other.command
                and self.states == other.states
                and self.obstacles == other.obstacles
                and np.array_equal(self.expert_traj, other.expert_traj)
                and np.array_equal(self.bev, other.bev))

    @property
    def T(self) -> int:
        return self.expert_traj.shape[0]

    @property
    def command_index(self) -> int:
        return COMMANDS.index(self.command)

    def moving_obstacles(self) -> list[ObstaclePose]:
        return [o for o in self.obstacles if o.moving]


@dataclass(eq=False)
class Dataset:
    scenes: list[Scene]
    T: int = 4
    grid: tuple[int, int, int] = (CHANNELS, GRID, GRID)
    version: int = 1

    def __post_init__(self):
        for s in self.scenes:
            if s.T != self.T or s.bev.shape != tuple(self.grid):
                raise ValueError(
                    f"scene {s.scene_seed}: T={s.T}, grid={s.bev.shape} disagree with "
                    f"dataset T={self.T}, grid={tuple(self.grid)}")

    def __len__(self) -> int:
        return len(self.scenes)

    def __iter__(self):
        return iter(self.scenes)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return Dataset(self.scenes[i], self.T, self.grid, self.version)
        return self.scenes[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.T == other.T and tuple(self.grid) == tuple(other.grid)
                and len(self) == len(other)
                and all(a == b for a, b in zip(self.scenes, other.scenes)))

    # batched arrays for training --------------------------------------
    def bev_array(self) -> np.ndarray:
        return np.stack([s.bev for s in self.scenes])

    def traj_array(self) -> np.ndarray:
        return np.stack([s.expert_traj for s in self.scenes])

    def speed_array(self) -> np.ndarray:
        return np.array([s.speed for s in self.scenes])

    def command_array(self) -> np.ndarray:
        return np.array([s.command_index for s in self.scenes], dtype=np.int64)

    def states_array(self) -> np.ndarray:
        return np.array([s.states.as_tuple() for s in self.scenes], dtype=np.int64)
