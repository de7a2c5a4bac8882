"""Synthetic ego-frame driving scenes with a rule-based expert."""

from .expert import (
    Actions,
    InfeasibleScene,
    build_path,
    expert_actions,
    expert_policy,
    first_collision,
    planning_states,
)
from .generator import (
    ARCHETYPES,
    check_bev_consistency,
    derive_planning_states,
    generate_dataset,
    generate_scene,
    sample_layout,
    scene_from_layout,
)
from .io import (
    BadMagicError,
    DatasetFormatError,
    DimensionError,
    TruncatedError,
    VersionError,
    dataset_bytes_hash,
    decode_dataset,
    encode_dataset,
    read_dataset,
    write_dataset,
)
from .render import footprint_mask, read_environment, render_bev
from .types import (
    CHANNELS,
    COMMANDS,
    DT,
    EXTENT,
    GRID,
    PEDESTRIAN,
    STATE_NAMES,
    VEHICLE,
    Dataset,
    GenParams,
    Layout,
    ObstaclePose,
    PlanningStates,
    Scene,
)
