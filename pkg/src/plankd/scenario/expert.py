"""Rule-based expert planner and planning-state derivation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .types import (
    DT,
    EXTENT,
    LIGHT_RED,
    PEDESTRIAN,
    VEHICLE,
    Layout,
    ObstaclePose,
    PlanningStates,
)

TURN_RADIUS = 4.0
LANE_CHANGE_LENGTH = 10.0
ACCEL = 2.0
DECEL = 4.0
PATH_STEP = 0.05
PATH_LENGTH = 40.0
EGO_HALF_LENGTH = 2.0
EGO_HALF_WIDTH = 1.0
STANDOFF = 2.5  # ego centre stays this far behind a hit point
COLLISION_MARGIN = 0.6
YIELD_BASE = 5.5
RETRIES = 80
RETRY_STEP = 0.25
LEAD_SLACK = 0.05


class InfeasibleScene(RuntimeError):
    """The expert cannot find a collision-free plan (blocked spawn)."""


def footprint_half_extents(o: ObstaclePose) -> tuple[float, float]:
    """(half extent along x, half extent along y) in metres."""
    if o.kind == PEDESTRIAN:
        return 0.4, 0.4
    if abs(o.vy) > abs(o.vx):
        return EGO_HALF_WIDTH, EGO_HALF_LENGTH
    return EGO_HALF_LENGTH, EGO_HALF_WIDTH


def is_lead(o: ObstaclePose) -> bool:
    return o.kind == VEHICLE and o.vx > 0.1 and abs(o.vy) <= 0.1 and abs(o.y) < 1.75


def obstacle_at(o: ObstaclePose, t: float) -> tuple[float, float]:
    return o.x + o.vx * t, o.y + o.vy * t


# path geometry ------------------------------------------------------------

def stop_line_x(layout: Layout) -> float | None:
    if layout.junction_x is None:
        return None
    return layout.junction_x - TURN_RADIUS


def build_path(layout: Layout) -> np.ndarray:
    """Dense (M, 2) polyline the ego follows, starting at the origin."""
    s = np.arange(0.0, PATH_LENGTH + PATH_STEP, PATH_STEP)
    if layout.lane_change_to is not None:
        x = s.copy()
        frac = np.clip(x / LANE_CHANGE_LENGTH, 0.0, 1.0)
        y = layout.lane_change_to * (1 - np.cos(np.pi * frac)) / 2
        return np.stack([x, y], axis=1)
    if layout.command in ("left", "right") and layout.junction_x is not None:
        side = 1.0 if layout.command == "left" else -1.0
        xs = layout.junction_x - TURN_RADIUS
        arc = TURN_RADIUS * np.pi / 2
        pts = np.empty((s.size, 2))
        straight = s <= xs
        pts[straight, 0] = s[straight]
        pts[straight, 1] = 0.0
        on_arc = (s > xs) & (s <= xs + arc)
        phi = (s[on_arc] - xs) / TURN_RADIUS
        pts[on_arc, 0] = xs + TURN_RADIUS * np.sin(phi)
        pts[on_arc, 1] = side * TURN_RADIUS * (1 - np.cos(phi))
        after = s > xs + arc
        pts[after, 0] = xs + TURN_RADIUS
        pts[after, 1] = side * (TURN_RADIUS + (s[after] - xs - arc))
        return pts
    return np.stack([s, np.zeros_like(s)], axis=1)


def _point_rect_gap(px, py, cx, cy, hx, hy):
    dx = np.maximum(np.abs(px - cx) - hx, 0.0)
    dy = np.maximum(np.abs(py - cy) - hy, 0.0)
    return np.hypot(dx, dy)


def _visible_stop(layout: Layout, path: np.ndarray, T: int) -> float | None:
    """Stop arc-length from rules that read only the current frame."""
    stops = []
    sl = stop_line_x(layout)
    if layout.light == LIGHT_RED and sl is not None:
        stops.append(max(0.0, sl))
    half_road = layout.road_half_width
    for o in layout.obstacles:
        hx, hy = footprint_half_extents(o)
        # anything whose footprint touches the ego corridor along the path
        gap = _point_rect_gap(path[:, 0], path[:, 1], o.x, o.y, hx, hy)
        hit = np.nonzero(gap < EGO_HALF_WIDTH + 0.5)[0]
        # a lead pulling away in the ego lane is handled by the timed check instead
        if hit.size and o.x > 0 and not is_lead(o):
            stops.append(max(0.0, hit[0] * PATH_STEP - STANDOFF))
        if o.kind != VEHICLE:
            continue
        crossing = sl is not None and abs(o.x - layout.junction_x) < 3.5 and abs(o.vy) > abs(o.vx)
        if crossing:
            # yield to crossing traffic approaching the junction
            if o.y * o.vy < 0 and abs(o.y) <= yield_distance(layout, o, T):
                stops.append(max(0.0, sl))
        elif layout.lane_change_to is None and o.x >= EGO_HALF_LENGTH + STANDOFF \
                and 1.75 < abs(o.y) < half_road:
            # vehicle ahead in an adjacent lane may cut in
            stops.append(max(0.0, o.x - hx - STANDOFF))
    return min(stops) if stops else None


def yield_distance(layout: Layout, o: ObstaclePose, T: int, max_speed: float = 2.0) -> float:
    side = {"left": 1.0, "right": -1.0}.get(layout.command, 0.0)
    if side and side * o.y > 0:
        # turning into the lane the vehicle is coming down
        return 2 * EXTENT
    return YIELD_BASE + max_speed * T * DT


def speed_profile(v0: float, v_des: float, T: int, s_stop: float | None,
                  caps: np.ndarray | None = None) -> np.ndarray:
    """Arc-length at each of the T future steps.

    ``caps`` optionally bounds the arc-length step by step (following a lead).
    """
    s, v = 0.0, v0
    out = np.empty(T)
    for k in range(T):
        v_next = min(v_des, v + ACCEL * DT)
        if s_stop is not None:
            room = max(0.0, s_stop - s)
            v_next = min(v_next, math.sqrt(2 * DECEL * room), room / DT)
        if caps is not None:
            v_next = min(v_next, max(0.0, caps[k] - s) / DT)
        v_next = max(v_next, 0.0)
        s = s + v_next * DT
        if s_stop is not None:
            s = min(s, s_stop)
        out[k] = s
        v = v_next
    return out


def lead_caps(layout: Layout, T: int) -> np.ndarray | None:
    """Per-step arc-length limits that keep the ego a fixed gap behind any lead."""
    if layout.lane_change_to is not None or layout.command in ("left", "right"):
        return None
    leads = [o for o in layout.obstacles if is_lead(o) and o.x > 0]
    if not leads:
        return None
    t = DT * np.arange(1, T + 1)
    gap = 2 * EGO_HALF_LENGTH + COLLISION_MARGIN + LEAD_SLACK
    return np.min([o.x + o.vx * t - gap for o in leads], axis=0)


def sample_path(path: np.ndarray, s: np.ndarray) -> np.ndarray:
    seg = np.hypot(*np.diff(path, axis=0).T)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    return np.stack([np.interp(s, arc, path[:, 0]), np.interp(s, arc, path[:, 1])], axis=1)


def first_collision(traj: np.ndarray, obstacles, margin: float = COLLISION_MARGIN) -> int | None:
    """Index of the first waypoint inside an (inflated) obstacle at its timestep."""
    for k, (wx, wy) in enumerate(traj):
        t = (k + 1) * DT
        for o in obstacles:
            cx, cy = obstacle_at(o, t)
            hx, hy = footprint_half_extents(o)
            if is_lead(o):
                hx += EGO_HALF_LENGTH  # keep the whole ego behind a lead, not just its centre
            if abs(wx - cx) <= hx + margin and abs(wy - cy) <= hy + margin:
                return k
    return None


def expert_policy(layout: Layout, T: int, speed_limit: float = 7.0) -> np.ndarray:
    """T waypoints at 0.5 s spacing, (T, 2) in the ego frame."""
    path = build_path(layout)
    v_des = min(max(layout.speed, 0.0), speed_limit)
    s_stop = _visible_stop(layout, path, T)
    caps = lead_caps(layout, T)
    for _ in range(RETRIES):
        s = speed_profile(layout.speed, v_des, T, s_stop, caps)
        traj = sample_path(path, s)
        k = first_collision(traj, layout.obstacles)
        if k is None:
            break
        # pull the stop point back a little at a time until the plan is clear
        s_stop = max(0.0, s[k] - RETRY_STEP)
    else:
        raise InfeasibleScene("no collision-free plan")
    if np.any(np.abs(traj) > EXTENT):
        raise InfeasibleScene("plan leaves the grid")
    return traj


# actions and planning states ---------------------------------------------

@dataclass(frozen=True)
class Actions:
    brake: float
    throttle: float
    steer: float


def expert_actions(traj: np.ndarray, speed: float) -> Actions:
    """Low-level actions implied by the planned speed profile and heading."""
    pts = np.vstack([[0.0, 0.0], np.asarray(traj, dtype=np.float64)])
    d = np.diff(pts, axis=0)
    seg_len = np.hypot(d[:, 0], d[:, 1])
    v = seg_len / DT
    acc = np.diff(np.concatenate([[speed], v])) / DT
    brake = float(np.clip(max(0.0, -acc.min()) / DECEL, 0.0, 1.0))
    throttle = 0.0
    if acc[0] >= -0.5:
        throttle = float(np.clip(0.05 * v[0] + 0.25 * max(acc[0], 0.0), 0.0, 1.0))
    headings = [math.atan2(dy, dx) for (dx, dy), n in zip(d, seg_len) if n > 0.05]
    steer = 0.0
    if headings:
        h = max(headings, key=abs)
        steer = float(np.clip(h / (math.pi / 4), -1.0, 1.0))
    return Actions(brake=brake, throttle=throttle, steer=steer)


def planning_states(*, nearby_vehicle: bool, nearby_pedestrian: bool, traffic_sign: bool,
                    junction: bool, traffic_light: int, actions: Actions,
                    delta: float = 0.1) -> PlanningStates:
    """Assemble the 8 planning states; action states use a strict ``> delta``."""
    return PlanningStates(
        nearby_vehicle=int(nearby_vehicle),
        nearby_pedestrian=int(nearby_pedestrian),
        traffic_sign=int(traffic_sign),
        junction=int(junction),
        traffic_light=int(traffic_light),
        brake=int(abs(actions.brake) > delta),
        throttle=int(abs(actions.throttle) > delta),
        steer=int(abs(actions.steer) > delta),
    )
