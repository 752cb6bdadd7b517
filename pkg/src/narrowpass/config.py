"""Configuration dataclasses shared across the planner and simulator."""
from __future__ import annotations

from dataclasses import dataclass, field, replace


@dataclass(frozen=True)
class GapCostWeights:
    """Weights of the four gap-cost items plus robustness factors."""

    w_len: float = 1.0
    w_times: float = 0.5
    w_dis: float = 1.0
    w_lane: float = 0.5
    hysteresis_alpha: float = 0.9
    reverse_discount: float = 0.8


@dataclass(frozen=True)
class PlannerConfig:
    sample_step: float = 0.01          # x-grid resolution of boundaries, meters
    n_waypoints: int = 40
    max_iterations: int = 200
    constraint_tol: float = 1e-6
    advance_goal_ahead: float = 2.0    # meters ahead for the advance/recovery goal
    back_time_margin: float = 1.0      # extra seconds required to prefer backing up
    parked_clearance: float = 0.01     # static margin for parked maneuver poses
    history_window: int = 10
    gap_weights: GapCostWeights = field(default_factory=GapCostWeights)
    enable_oncoming_meet_cut: bool = False  # meet+/cut+ are rarely useful; off by default
    enable_oncoming_back: bool = True
    gap_policy: str = "cost"           # "cost" (full model) or "nearest" (reference policy)
    strategy_policy: str = "hierarchical"  # or "meet_only" (reference policy)
    warm_start: bool = True

    def without_oncoming_back(self) -> "PlannerConfig":
        return replace(self, enable_oncoming_back=False)


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.05
    timeout_s: float = 120.0
    lookahead: float = 0.3             # pure-pursuit lookahead, meters
    goal_tolerance: float = 0.005
    waypoint_tolerance: float = 0.03
