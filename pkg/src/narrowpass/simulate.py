"""Deterministic discrete-time world: bicycle kinematics, drivers, metrics.

The ego vehicle tracks the planner's latest trajectory with pure pursuit;
oncoming vehicles follow replayed tracks, scripted profiles along their
boundary, or externally injected commands. Observation noise is seeded per
tick so identical (scenario, seed, config) runs produce identical logs.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .config import PlannerConfig, SimConfig
from .geometry import batch_footprints, convex_overlap, footprint, wrap_angle
from .planner import CandidateTrajectory, Observation, Planner
from .scene import Pose, RoadModel, StationaryVehicle, VehicleShape, build_boundary


@dataclass
class NoiseModel:
    position_std: float = 0.0
    speed_std: float = 0.0
    seed: int = 0

    def rng_for(self, tick: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence((self.seed, tick)))


@dataclass
class DriverState:
    kind: str                      # replay | scripted | external
    pose: Pose
    speed: float = 0.0
    track: np.ndarray | None = None      # (k, 4): t, x, y, theta
    profile: list | None = None          # [(t, speed), ...] piecewise-constant
    path_x: np.ndarray | None = None     # scripted path, descending x
    path_y: np.ndarray | None = None
    path_theta: np.ndarray | None = None
    arc: float = 0.0                     # progress along the scripted path
    command: tuple[float, float] = (0.0, 0.0)   # throttle, steering in [-1, 1]
    command_time: float = -1e9
    done: bool = False


@dataclass
class Metrics:
    success: bool
    travel_time_s: float
    time_ratio: float | None
    decision_oscillation_ratio: float
    decision_frequency_hz: float
    reason: str = ""


@dataclass
class DecisionRecord:
    tick: int
    gap: tuple[float, float] | None
    strategy: str
    compute_s: float


@dataclass
class EpisodeLog:
    records: list = field(default_factory=list)     # per-tick dict rows
    decisions: list = field(default_factory=list)   # DecisionRecord

    def dump(self, path):
        with open(path, "w") as f:
            for row in self.records:
                f.write(json.dumps(row, separators=(",", ":")) + "\n")


def decision_oscillation(decisions: list[DecisionRecord]) -> float:
    """Mean fraction of changes inside sliding windows of ten decisions."""
    keys = []
    for d in decisions:
        gap_key = None if d.gap is None else round(0.5 * (d.gap[0] + d.gap[1]), 1)
        keys.append((gap_key, d.strategy))
    changes = [int(a != b) for a, b in zip(keys, keys[1:])]
    if len(changes) < 10:
        return sum(changes) / 10.0
    windows = [sum(changes[i:i + 10]) / 10.0 for i in range(len(changes) - 9)]
    return float(np.mean(windows))


# ---------------------------------------------------------------------------
# drivers


def make_scripted_path(quads, shape: VehicleShape, road: RoadModel):
    """The cooperative line an oncoming driver follows: its own boundary."""
    b = build_boundary("upper", quads, shape, road)
    xs = b.x[::-1].copy()
    ys = b.base.y[::-1].copy()
    theta = (b.base.tangent[::-1] + math.pi).copy()
    return xs, ys, theta


def advance_driver(d: DriverState, t: float, dt: float, v_max: float):
    if d.kind == "replay":
        tr = d.track
        if t >= tr[-1, 0]:
            d.pose = Pose(tr[-1, 1], tr[-1, 2], tr[-1, 3])
            d.speed = 0.0
            d.done = True
            return
        i = int(np.searchsorted(tr[:, 0], t, side="right")) - 1
        i = max(0, min(i, len(tr) - 2))
        w = (t - tr[i, 0]) / max(tr[i + 1, 0] - tr[i, 0], 1e-9)
        x = tr[i, 1] + w * (tr[i + 1, 1] - tr[i, 1])
        y = tr[i, 2] + w * (tr[i + 1, 2] - tr[i, 2])
        th = tr[i, 3]
        d.speed = math.hypot(tr[i + 1, 1] - tr[i, 1], tr[i + 1, 2] - tr[i, 2]) \
            / max(tr[i + 1, 0] - tr[i, 0], 1e-9)
        d.pose = Pose(x, y, wrap_angle(th))
    elif d.kind == "scripted":
        speed = 0.0
        for t0, v in d.profile:
            if t >= t0:
                speed = v
        speed = min(speed, v_max)
        d.speed = speed
        d.arc += speed * dt
        # walk along the stored path by arc length
        xs, ys = d.path_x, d.path_y
        seg = np.hypot(np.diff(xs), np.diff(ys))
        s = np.concatenate([[0.0], np.cumsum(seg)])
        a = min(d.arc, s[-1])
        i = int(np.searchsorted(s, a, side="right")) - 1
        i = max(0, min(i, len(xs) - 2))
        w = (a - s[i]) / max(seg[i], 1e-9)
        d.pose = Pose(xs[i] + w * (xs[i + 1] - xs[i]),
                      ys[i] + w * (ys[i + 1] - ys[i]),
                      d.path_theta[min(i, len(d.path_theta) - 1)])
        if a >= s[-1]:
            d.done = True
    else:  # external
        throttle, steering = d.command
        if t - d.command_time > 1.0:
            throttle = 0.0             # heartbeat lost: freeze
        target = max(-1.0, min(1.0, throttle)) * v_max
        accel = 1.5
        dv = max(-accel * dt, min(accel * dt, target - d.speed))
        d.speed += dv
        R_min = 0.5
        kappa = max(-1.0, min(1.0, steering)) / R_min
        th = d.pose.theta + d.speed * kappa * dt
        d.pose = Pose(d.pose.x + d.speed * math.cos(th) * dt,
                      d.pose.y + d.speed * math.sin(th) * dt,
                      wrap_angle(th))


# ---------------------------------------------------------------------------
# ego tracking


@dataclass
class EgoState:
    pose: Pose
    speed: float = 0.0

    def as_tuple(self):
        return (self.pose.x, self.pose.y, self.pose.theta, self.speed)


def pure_pursuit_step(ego: EgoState, traj: CandidateTrajectory,
                      shape: VehicleShape, cfg: SimConfig, dt: float) -> EgoState:
    """One tracking step: chase a lookahead point, clamp curvature, integrate.

    The lookahead shrinks on tightly curved stretches so the chase does not
    cut inside the planned clearances.
    """
    pts = traj.points
    n = len(pts)
    d2 = np.hypot(pts[:, 0] - ego.pose.x, pts[:, 1] - ego.pose.y)
    i0 = int(np.argmin(d2))
    seg = np.hypot(*np.diff(pts, axis=0).T)
    remaining = seg[i0:].sum() + d2[i0]
    if remaining < cfg.goal_tolerance or n < 2:
        return EgoState(ego.pose, 0.0)
    reverse = bool(traj.reverse[min(i0 + 1, n - 1)])

    def target_at(dist_ahead):
        acc = 0.0
        for j in range(i0 + 1, n):
            acc += seg[j - 1]
            if acc >= dist_ahead:
                return pts[j], traj.headings[j], acc
        return pts[-1], traj.headings[-1], max(acc, 1e-6)

    _, th_far, acc_far = target_at(cfg.lookahead)
    kappa_path = abs(wrap_angle(th_far - traj.headings[i0])) / max(acc_far, 1e-6)
    lookahead = float(np.clip(cfg.lookahead * (1.0 - 0.35 * kappa_path),
                              0.12, cfg.lookahead))
    target, _, _ = target_at(lookahead)
    dx = target[0] - ego.pose.x
    dy = target[1] - ego.pose.y
    dist = math.hypot(dx, dy)
    if dist < 1e-6:
        return EgoState(ego.pose, 0.0)
    sign = -1.0 if reverse else 1.0
    heading = ego.pose.theta + (0.0 if sign > 0 else math.pi)
    alpha = wrap_angle(math.atan2(dy, dx) - heading)
    kappa = sign * 2.0 * math.sin(alpha) / max(dist, 0.5 * lookahead)
    kappa = max(-1.0 / shape.min_turn_radius,
                min(1.0 / shape.min_turn_radius, kappa))
    speed = min(shape.v_max, remaining / max(dt, 1e-9))
    v = sign * speed
    th = ego.pose.theta + v * kappa * dt
    x = ego.pose.x + v * math.cos(ego.pose.theta) * dt
    y = ego.pose.y + v * math.sin(ego.pose.theta) * dt
    return EgoState(Pose(x, y, wrap_angle(th)), speed)


# ---------------------------------------------------------------------------
# episode


@dataclass
class Scenario:
    """Runtime scenario: geometry plus driver definitions."""

    road: RoadModel
    shape: VehicleShape
    ego_start: Pose
    stationary: list
    drivers: list                  # DriverState templates
    noise: NoiseModel = field(default_factory=NoiseModel)
    name: str = "scenario"


def observe(scn: Scenario, drivers: list[DriverState], ego: EgoState,
            t: float, tick: int) -> Observation:
    """Noise-corrupted planner view; ego state stays exact."""
    rng = scn.noise.rng_for(tick)
    quads = []
    for v in scn.stationary:
        q = v.corners + rng.normal(0.0, scn.noise.position_std, size=(4, 2)) \
            if scn.noise.position_std > 0 else v.corners.copy()
        quads.append(q)
    movers = []
    for d in drivers:
        if d.done:
            continue
        px, py = d.pose.x, d.pose.y
        sp = d.speed
        if scn.noise.position_std > 0:
            px += rng.normal(0.0, scn.noise.position_std)
            py += rng.normal(0.0, scn.noise.position_std)
        if scn.noise.speed_std > 0:
            sp = max(0.0, sp + rng.normal(0.0, scn.noise.speed_std))
        movers.append((Pose(px, py, d.pose.theta), sp))
    return Observation(t, ego.pose, ego.speed, quads, movers, scn.road, scn.shape)


def collided(ego: EgoState, scn: Scenario, drivers: list[DriverState]) -> bool:
    body = footprint(ego.pose.x, ego.pose.y, ego.pose.theta,
                     scn.shape.length, scn.shape.width)
    if body[:, 1].min() < scn.road.y_low - 1e-9 or \
            body[:, 1].max() > scn.road.y_high + 1e-9:
        return True
    for v in scn.stationary:
        if convex_overlap(body, v.corners, margin=-1e-9):
            return True
    for d in drivers:
        if d.done:
            continue
        other = footprint(d.pose.x, d.pose.y, d.pose.theta,
                          scn.shape.length, scn.shape.width)
        if convex_overlap(body, other, margin=-1e-9):
            return True
    return False


def run_episode(scn: Scenario, planner_cfg: PlannerConfig | None = None,
                sim_cfg: SimConfig | None = None,
                with_log: bool = True,
                command_feed=None) -> tuple[Metrics, EpisodeLog]:
    """Drive the ego from its start to the far end of the road.

    ``command_feed(t) -> (throttle, steering) | None`` feeds any external
    drivers deterministically (used by the bridge and its tests).
    """
    planner_cfg = planner_cfg or PlannerConfig()
    sim_cfg = sim_cfg or SimConfig()
    planner = Planner(scn.road, scn.shape, planner_cfg)
    ego = EgoState(scn.ego_start, 0.0)
    drivers = [DriverState(**{**d.__dict__}) for d in scn.drivers]
    log = EpisodeLog()
    dt = sim_cfg.dt
    t = 0.0
    tick = 0
    goal_x = scn.road.x_max - 0.03
    success = False
    reason = "timeout"
    compute_total = 0.0
    while t < sim_cfg.timeout_s:
        obs = observe(scn, drivers, ego, t, tick)
        t_plan = time.perf_counter()
        plan = planner.plan(obs)
        compute = time.perf_counter() - t_plan
        compute_total += compute
        rec = DecisionRecord(tick, plan.gap.interval() if plan.gap else None,
                             plan.trajectory.strategy.label, compute)
        log.decisions.append(rec)

        ego = pure_pursuit_step(ego, plan.trajectory, scn.shape, sim_cfg, dt)
        for d in drivers:
            if d.kind == "external" and command_feed is not None:
                cmd = command_feed(t)
                if cmd is not None:
                    d.command = (float(cmd[0]), float(cmd[1]))
                    d.command_time = t
            advance_driver(d, t, dt, scn.shape.v_max)
        t += dt
        tick += 1
        if with_log:
            log.records.append({
                "tick": tick,
                "t": round(t, 4),
                "ego": [round(ego.pose.x, 5), round(ego.pose.y, 5),
                        round(ego.pose.theta, 5), round(ego.speed, 5)],
                "movers": [[round(d.pose.x, 5), round(d.pose.y, 5),
                            round(d.pose.theta, 5), round(d.speed, 5)]
                           for d in drivers],
                "gap": list(rec.gap) if rec.gap else None,
                "strategy": rec.strategy,
                "compute_ms": round(compute * 1e3, 3),
            })
        if collided(ego, scn, drivers):
            reason = "collision"
            break
        if ego.pose.x >= goal_x:
            success = True
            reason = "reached goal"
            break
    travel = t
    osc = decision_oscillation(log.decisions)
    f_dec = tick / compute_total if compute_total > 0 else 0.0
    metrics = Metrics(success, travel, None, osc, f_dec, reason)
    return metrics, log


def run_with_baseline(scn: Scenario, planner_cfg: PlannerConfig | None = None,
                      sim_cfg: SimConfig | None = None):
    """Episode plus the mover-free reference run for the added-time ratio."""
    metrics, log = run_episode(scn, planner_cfg, sim_cfg)
    bare = Scenario(scn.road, scn.shape, scn.ego_start, scn.stationary, [],
                    scn.noise, scn.name)
    base_metrics, _ = run_episode(bare, planner_cfg, sim_cfg, with_log=False)
    if base_metrics.success and base_metrics.travel_time_s > 0:
        ratio = (metrics.travel_time_s - base_metrics.travel_time_s) \
            / base_metrics.travel_time_s
        metrics.time_ratio = ratio
    return metrics, log
