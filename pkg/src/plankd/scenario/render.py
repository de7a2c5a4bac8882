"""Rasterize a layout into the 5-channel ego-frame grid, and read it back."""

from __future__ import annotations

import numpy as np

from .expert import EGO_HALF_LENGTH, EGO_HALF_WIDTH, footprint_half_extents, obstacle_at, stop_line_x
from .types import (
    CH_DRIVABLE,
    CH_EGO,
    CH_LIGHT,
    CH_MARKING,
    CH_OCCUPANCY,
    CHANNELS,
    EXTENT,
    GRID,
    LIGHT_ABSENT,
    LIGHT_GREEN,
    LIGHT_RED,
    VEHICLE,
    Layout,
    ObstaclePose,
)

# raster codes; every value is exactly representable in float32
ROAD, JUNCTION_BOX = 1.0, 0.75
LANE_LINE, ARROW, SIGN = 1.0, 0.75, 0.5
# small objects get the brighter codes so they survive downsampling
OCC_MOVING_PEDESTRIAN, OCC_STATIC_PEDESTRIAN = 1.0, 0.75
OCC_MOVING_VEHICLE, OCC_STATIC_VEHICLE = 0.5, 0.25
LIGHT_LEVEL = {LIGHT_ABSENT: 0.0, LIGHT_RED: 1.0, LIGHT_GREEN: 0.5}
JUNCTION_HALF = 3.5

CENTERS = -EXTENT + np.arange(GRID) + 0.5  # metres; row index -> x, column index -> y


def cell_index(v: float) -> int:
    return int(np.clip(np.floor(v + EXTENT), 0, GRID - 1))


def footprint_mask(o: ObstaclePose, t: float = 0.0) -> np.ndarray:
    """Cells whose centre lies inside the obstacle box, plus the cell holding its centre."""
    cx, cy = obstacle_at(o, t)
    hx, hy = footprint_half_extents(o)
    mask = (np.abs(CENTERS[:, None] - cx) <= hx) & (np.abs(CENTERS[None, :] - cy) <= hy)
    if abs(cx) < EXTENT and abs(cy) < EXTENT:
        mask[cell_index(cx), cell_index(cy)] = True
    return mask


def occupancy_value(o: ObstaclePose) -> float:
    if o.kind == VEHICLE:
        return OCC_MOVING_VEHICLE if o.moving else OCC_STATIC_VEHICLE
    return OCC_MOVING_PEDESTRIAN if o.moving else OCC_STATIC_PEDESTRIAN


def lane_boundaries(layout: Layout) -> list[float]:
    half, lw = layout.road_half_width, layout.lane_width
    out, y = [], lw / 2
    while y < half - 1e-9:
        out += [y, -y]
        y += lw
    return out


def render_bev(layout: Layout) -> np.ndarray:
    bev = np.zeros((CHANNELS, GRID, GRID))
    X, Y = np.meshgrid(CENTERS, CENTERS, indexing="ij")
    half = layout.road_half_width

    bev[CH_DRIVABLE][np.abs(Y) <= half] = ROAD
    if layout.junction_x is not None:
        bev[CH_DRIVABLE][np.abs(X - layout.junction_x) <= JUNCTION_HALF] = JUNCTION_BOX

    marks = bev[CH_MARKING]
    dashed = (np.arange(GRID) % 4) < 2
    for y in lane_boundaries(layout):
        marks[dashed, cell_index(y)] = LANE_LINE
    for y in (half, -half):
        if abs(y) < EXTENT:
            marks[:, cell_index(y)] = LANE_LINE
    if layout.junction_x is not None:
        marks[np.abs(CENTERS - layout.junction_x) <= JUNCTION_HALF, :] = 0.0
        sl = stop_line_x(layout)
        marks[cell_index(sl), np.abs(CENTERS) <= half] = LANE_LINE
        if layout.command in ("left", "right", "straight"):
            rows = [cell_index(layout.junction_x - d) for d in (7.0, 6.0, 5.0)]
            rows = [r for r in rows if CENTERS[r] < sl]
            for r in rows:
                marks[r, [cell_index(-0.5), cell_index(0.5)]] = ARROW
            if rows and layout.command != "straight":
                side = 1.5 if layout.command == "left" else -1.5
                marks[rows[-1], cell_index(side)] = ARROW
    if layout.sign is not None:
        sx, sy = layout.sign
        r, c = cell_index(sx), cell_index(sy)
        marks[max(r - 1, 0):r + 2, max(c - 1, 0):c + 2] = SIGN

    occ = bev[CH_OCCUPANCY]
    for o in layout.obstacles:
        m = footprint_mask(o)
        occ[m] = np.maximum(occ[m], occupancy_value(o))

    bev[CH_EGO][(np.abs(X) <= EGO_HALF_LENGTH) & (np.abs(Y) <= EGO_HALF_WIDTH)] = 1.0
    bev[CH_LIGHT] = LIGHT_LEVEL[layout.light]
    return bev


def read_environment(bev: np.ndarray) -> dict[str, int]:
    """Junction, sign and light states as encoded in the raster."""
    drivable, marks, light = bev[CH_DRIVABLE], bev[CH_MARKING], bev[CH_LIGHT]
    level = float(light.max())
    if np.isclose(level, LIGHT_LEVEL[LIGHT_RED]):
        state = LIGHT_RED
    elif np.isclose(level, LIGHT_LEVEL[LIGHT_GREEN]):
        state = LIGHT_GREEN
    else:
        state = LIGHT_ABSENT
    return {
        "junction": int(np.isclose(drivable, JUNCTION_BOX).any()),
        "traffic_sign": int(np.isclose(marks, SIGN).any()),
        "traffic_light": state,
    }


def occupancy_kinds(bev: np.ndarray) -> dict[str, bool]:
    occ = bev[CH_OCCUPANCY]
    vehicle = np.isclose(occ, OCC_MOVING_VEHICLE) | np.isclose(occ, OCC_STATIC_VEHICLE)
    ped = np.isclose(occ, OCC_MOVING_PEDESTRIAN) | np.isclose(occ, OCC_STATIC_PEDESTRIAN)
    return {"vehicle": bool(vehicle.any()), "pedestrian": bool(ped.any())}
