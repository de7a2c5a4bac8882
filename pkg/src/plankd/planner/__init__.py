"""Toy teacher/student planners with a tappable middle backbone layer."""

from .checkpoint import CheckpointError, load_tensors, save_tensors
from .model import (
    STUDENT_CONFIG,
    TEACHER_CONFIG,
    PlannerConfig,
    PlannerModel,
    build_planner,
    forward_batch,
    mid_features,
    load_planner,
    planner_arrays,
    planner_forward,
    planner_from_arrays,
    predict,
    save_planner,
)
from .train import DatasetArrays, train_imitation, waypoint_l1
