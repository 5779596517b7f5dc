from .graph import (
    PARAM_RANGE,
    CausalSummaryGraph,
    EdgeSpec,
    EdgeType,
    InvalidConfigError,
    InvalidInterventionError,
    apply_intervention,
    sample_summary_graph,
    unordered_pairs,
)
from .physics import (
    Episode,
    PlacementError,
    SimConfig,
    near_wall,
    sample_initial_state,
    simulate_episode,
    step,
    total_energy,
)
from .render import PALETTE, render_frame

__all__ = [
    "PARAM_RANGE",
    "PALETTE",
    "CausalSummaryGraph",
    "EdgeSpec",
    "EdgeType",
    "Episode",
    "InvalidConfigError",
    "InvalidInterventionError",
    "PlacementError",
    "SimConfig",
    "apply_intervention",
    "near_wall",
    "render_frame",
    "sample_initial_state",
    "sample_summary_graph",
    "simulate_episode",
    "step",
    "total_energy",
    "unordered_pairs",
]
