"""Seeded scene generation: archetype layouts, expert plans, planning states."""

from __future__ import annotations

import numpy as np

from ..gradkit.rng import derive_seed, make_rng
from .expert import (
    InfeasibleScene,
    expert_actions,
    expert_policy,
    footprint_half_extents,
    planning_states,
)
from .render import JUNCTION_HALF, occupancy_kinds, read_environment, render_bev
from .types import (
    EXTENT,
    LIGHT_ABSENT,
    LIGHT_GREEN,
    LIGHT_RED,
    PEDESTRIAN,
    VEHICLE,
    GenParams,
    Layout,
    ObstaclePose,
    Dataset,
    PlanningStates,
    Scene,
)

ARCHETYPES = ("follow", "lead", "junction", "lane_change", "cut_in", "red_light")
REQUIRED_OBSTACLES = {"follow": 0, "lead": 1, "junction": 1, "lane_change": 2, "cut_in": 1, "red_light": 0}
MAX_CRUISE = 6.0


def f32(v: float) -> float:
    return float(np.float32(v))


def eligible_archetypes(params: GenParams) -> list[str]:
    out = []
    for a in ARCHETYPES:
        if REQUIRED_OBSTACLES[a] > params.max_obstacles:
            continue
        if a in ("lane_change", "cut_in") and params.lanes < 3:
            continue
        out.append(a)
    return out


def _separated(o: ObstaclePose, others: list[ObstaclePose], gap: float = 1.0) -> bool:
    hx, hy = footprint_half_extents(o)
    for p in others:
        px, py = footprint_half_extents(p)
        if abs(o.x - p.x) < hx + px + gap and abs(o.y - p.y) < hy + py + gap:
            return False
    return True


def _background(rng: np.random.Generator, layout_kw: dict, placed: list[ObstaclePose],
                params: GenParams) -> ObstaclePose:
    half = params.lanes * params.lane_width / 2
    jx = layout_kw.get("junction_x")
    for _ in range(30):
        if rng.random() < 0.5:
            y = rng.choice([-1.0, 1.0]) * rng.uniform(half + 1.25, EXTENT - 2.0)
            x = rng.uniform(-14.0, 14.0)
            vx = rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 1.4) if rng.random() < 0.7 else 0.0
            o = ObstaclePose(x, y, vx, 0.0, PEDESTRIAN)
            if jx is not None and abs(x - jx) < JUNCTION_HALF + 3.0:
                continue
        else:
            lanes = np.arange(params.lanes) - (params.lanes - 1) / 2
            y = float(rng.choice(lanes)) * params.lane_width
            x = rng.uniform(-15.0, -8.0)
            vx = rng.uniform(0.5, 2.0) if rng.random() < 0.7 else 0.0
            o = ObstaclePose(x, y, vx, 0.0, VEHICLE)
        if _separated(o, placed):
            return o
    raise InfeasibleScene("no room for background obstacle")


def sample_layout(rng: np.random.Generator, params: GenParams) -> Layout:
    archetype = str(rng.choice(eligible_archetypes(params)))
    lw = params.lane_width
    v_hi = min(MAX_CRUISE, params.effective_speed_limit)
    speed = rng.uniform(min(params.min_speed, v_hi), v_hi)
    kw: dict = {"command": "follow", "light": LIGHT_ABSENT}
    placed: list[ObstaclePose] = []

    if archetype == "follow":
        if rng.random() < params.junction_prob:
            kw["junction_x"] = rng.uniform(4.0, 12.0)
            kw["command"] = "straight"
            kw["light"] = LIGHT_GREEN if rng.random() < params.light_prob else LIGHT_ABSENT
    elif archetype == "lead":
        # close enough, and the ego fast enough, that the following gap binds
        speed = max(speed, rng.uniform(min(4.0, v_hi), v_hi))
        placed.append(ObstaclePose(rng.uniform(5.0, 9.5), 0.0, rng.uniform(0.8, 1.75), 0.0, VEHICLE))
    elif archetype == "junction":
        jx = rng.uniform(4.0, 8.0)
        kw.update(junction_x=jx, command=str(rng.choice(["left", "right", "straight"])))
        kw["light"] = LIGHT_GREEN if rng.random() < params.light_prob else LIGHT_ABSENT
        side = rng.choice([-1.0, 1.0])
        placed.append(ObstaclePose(jx + rng.uniform(-1.5, 1.5), side * rng.uniform(3.5, 14.0),
                                   0.0, -side * rng.uniform(0.5, 2.0), VEHICLE))
    elif archetype == "lane_change":
        side = rng.choice([-1.0, 1.0])
        placed.append(ObstaclePose(rng.uniform(10.5, 14.0), 0.0, rng.uniform(0.3, 1.5), 0.0, VEHICLE))
        placed.append(ObstaclePose(rng.uniform(-3.0, 1.5), -side * lw, rng.uniform(0.0, 2.0), 0.0,
                                   VEHICLE))
        kw["lane_change_to"] = side * lw
    elif archetype == "cut_in":
        side = rng.choice([-1.0, 1.0])
        placed.append(ObstaclePose(rng.uniform(4.5, 9.0), side * lw, rng.uniform(0.9, 1.6),
                                   -side * rng.uniform(0.3, 0.8), VEHICLE))
    else:  # red_light
        reach = speed * params.T * 0.5
        lo = 0.5
        hi = max(lo, min(reach - 0.5, 8.0))
        kw.update(junction_x=rng.uniform(lo, hi) + 4.0, light=LIGHT_RED,
                  command=str(rng.choice(["left", "right", "straight"])))

    n_lo = max(params.min_obstacles, len(placed))
    n = int(rng.integers(n_lo, params.max_obstacles + 1))
    while len(placed) < n:
        placed.append(_background(rng, kw, placed, params))

    if rng.random() < params.sign_prob:
        s = rng.choice([-1.0, 1.0])
        kw["sign"] = (rng.uniform(2.0, 12.0), s * min(params.lanes * lw / 2 + 1.75, EXTENT - 3.0))

    # round everything stored on disk to float32 so files roundtrip exactly
    obstacles = tuple(ObstaclePose(f32(o.x), f32(o.y), f32(o.vx), f32(o.vy), o.kind)
                      for o in placed)
    for key in ("junction_x", "lane_change_to"):
        if kw.get(key) is not None:
            kw[key] = f32(kw[key])
    if "sign" in kw:
        kw["sign"] = (f32(kw["sign"][0]), f32(kw["sign"][1]))
    return Layout(archetype=archetype, speed=f32(speed), obstacles=obstacles,
                  lanes=params.lanes, lane_width=lw, **kw)


def derive_planning_states(scene: Scene, delta: float = 0.1) -> PlanningStates:
    """Ground-truth planning states read off the scene itself.

    Environment flags come from the listed obstacles and the raster; action
    flags come from the expert trajectory's speed profile and heading.
    """
    env = read_environment(scene.bev)
    near = [o for o in scene.obstacles if max(abs(o.x), abs(o.y)) <= EXTENT]
    actions = expert_actions(scene.expert_traj, scene.speed)
    return planning_states(
        nearby_vehicle=any(o.kind == VEHICLE for o in near),
        nearby_pedestrian=any(o.kind == PEDESTRIAN for o in near),
        traffic_sign=bool(env["traffic_sign"]),
        junction=bool(env["junction"]),
        traffic_light=env["traffic_light"],
        actions=actions,
        delta=delta,
    )


def scene_from_layout(layout: Layout, scene_seed: int, params: GenParams,
                      delta: float = 0.1) -> Scene:
    traj = expert_policy(layout, params.T, params.effective_speed_limit)
    bev = render_bev(layout).astype(np.float32).astype(np.float64)
    scene = Scene(
        bev=bev,
        obstacles=layout.obstacles,
        expert_traj=traj.astype(np.float32).astype(np.float64),
        states=PlanningStates(),
        speed=layout.speed,
        command=layout.command,
        scene_seed=int(scene_seed),
        archetype=layout.archetype,
        layout=layout,
    )
    scene.states = derive_planning_states(scene, delta)
    return scene


def generate_scene(scene_seed: int, params: GenParams | None = None) -> Scene:
    """Deterministic in ``(scene_seed, params)``.

    A layout the expert cannot plan through is redrawn from the next sub-seed,
    at most ``params.max_retries`` times.
    """
    params = params or GenParams()
    params.validate()
    for sub in range(params.max_retries):
        rng = make_rng(scene_seed, f"scene/{sub}")
        try:
            return scene_from_layout(sample_layout(rng, params), scene_seed, params)
        except InfeasibleScene:
            continue
    raise InfeasibleScene(f"scene {scene_seed}: no feasible layout in {params.max_retries} tries")


def generate_dataset(seed: int, n_scenes: int, params: GenParams | None = None) -> Dataset:
    params = params or GenParams()
    scenes = [generate_scene(derive_seed(seed, i), params) for i in range(n_scenes)]
    return Dataset(scenes, T=params.T)


def check_bev_consistency(scene: Scene) -> list[str]:
    """Disagreements between stored states and the raster (empty when consistent)."""
    problems = []
    kinds = occupancy_kinds(scene.bev)
    if scene.states.nearby_vehicle and not kinds["vehicle"]:
        problems.append("nearby_vehicle set but no vehicle cell")
    if scene.states.nearby_pedestrian and not kinds["pedestrian"]:
        problems.append("nearby_pedestrian set but no pedestrian cell")
    env = read_environment(scene.bev)
    for key, val in env.items():
        if getattr(scene.states, key) != val:
            problems.append(f"{key}={getattr(scene.states, key)} but raster says {val}")
    return problems
