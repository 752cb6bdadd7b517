"""Candidate trajectories, constrained smoothing, and strategy selection.

Up to seven candidates exist per meeting gap: advance along the lane middle,
and meet/cut/back on either lane. Each candidate is seeded from the lane
boundary plus the gap's parked poses, then smoothed by a penalty method
that minimizes travel time at top speed subject to the corridor between the
two rear-center boundaries, an endpoint guidance region, and spatiotemporal
clearance from the predicted oncoming body. Headings are always derived
from the positions through the chord-bisection rule, so the discrete
kinematic consistency residual is zero by construction and the maneuver
class of a candidate is conserved by checking its endpoint quadrant plus
the emptiness of the loop it spans against its seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import PlannerConfig
from .gaps import MeetingGap, LaneParking
from .geometry import (
    batch_footprints,
    batch_overlap_quad,
    kinematic_residuals,
    points_in_polygon,
    resample_polyline,
    wrap_angle,
)
from .scene import ExpandedBoundary, Pose, RoadModel, VehicleShape, build_boundary


@dataclass(frozen=True)
class Strategy:
    label: str
    action: str                 # advance | meet | cut | back
    lane: str                   # own | opposite | center
    quadrant: int | None        # endpoint motion quadrant in the lane frame

    @property
    def reverse_tail(self) -> bool:
        return self.action == "back"


ADVANCE = Strategy("advance", "advance", "center", None)
MEET_OWN = Strategy("meet_own", "meet", "own", 1)
CUT_OWN = Strategy("cut_own", "cut", "own", 4)
BACK_OWN = Strategy("back_own", "back", "own", 3)
MEET_OPP = Strategy("meet_opp", "meet", "opposite", 1)
CUT_OPP = Strategy("cut_opp", "cut", "opposite", 4)
BACK_OPP = Strategy("back_opp", "back", "opposite", 3)

_BY_ACTION = {("meet", "own"): MEET_OWN, ("cut", "own"): CUT_OWN,
              ("back", "own"): BACK_OWN, ("meet", "opposite"): MEET_OPP,
              ("cut", "opposite"): CUT_OPP, ("back", "opposite"): BACK_OPP}


@dataclass(frozen=True)
class GuidanceConstraint:
    kind: str                    # fixed_pose | stop_point | arc_region
    point: tuple[float, float] | None = None
    theta_bounds: tuple[float, float] | None = None
    anchor: tuple[float, float] | None = None      # arc region center
    radius: float = 0.0
    sector: tuple[float, float] | None = None      # bearing interval about anchor


@dataclass(frozen=True)
class HomologySignature:
    quadrant: int | None
    enclosed: frozenset


@dataclass
class CandidateTrajectory:
    strategy: Strategy
    points: np.ndarray           # (n, 2)
    headings: np.ndarray         # (n,)
    reverse: np.ndarray          # (n,) motion into waypoint i is reversed
    gap_id: int | None
    guidance: GuidanceConstraint | None = None
    feasible: bool = True
    reason: str = ""
    objective: float = math.inf
    tail_start: int = -1         # first index of the off-boundary maneuver tail

    @property
    def times(self) -> np.ndarray:
        return self._times

    def finalize(self, v_max: float) -> "CandidateTrajectory":
        d = np.hypot(*np.diff(self.points, axis=0).T)
        self._times = np.concatenate([[0.0], np.cumsum(d)]) / v_max
        self._v_max = v_max
        self.objective = float(self._times[-1])
        return self

    def motion_angle(self, i: int) -> float:
        th = self.headings[i]
        return wrap_angle(th + math.pi) if self.reverse[i] else wrap_angle(th)


def quadrant_of(angle: float) -> int:
    a = angle % (2.0 * math.pi)
    return int(a // (0.5 * math.pi)) % 4 + 1


def quadrant_bounds(quadrant: int, lane: str) -> tuple[float, float]:
    """Motion-angle interval for a maneuver quadrant, mirrored off-lane."""
    base = {1: (0.0, 0.5 * math.pi),
            3: (-math.pi, -0.5 * math.pi),
            4: (-0.5 * math.pi, 0.0)}[quadrant]
    if lane == "opposite":
        return (-base[1], -base[0])
    return base


# ---------------------------------------------------------------------------
# homology


def homology_signature(traj: CandidateTrajectory, ref: CandidateTrajectory,
                       quads) -> HomologySignature:
    """Class label of ``traj`` relative to ``ref`` sharing its start point.

    The two paths plus the segment joining their endpoints bound a region;
    the signature is the set of parked vehicles inside it (even-odd rule on
    their centroids) together with the endpoint motion quadrant.
    """
    loop = np.concatenate([traj.points, ref.points[::-1]], axis=0)
    enclosed = set()
    if len(quads):
        centroids = np.stack([np.asarray(q).mean(axis=0) for q in quads])
        inside = points_in_polygon(centroids, loop)
        enclosed = set(np.nonzero(inside)[0].tolist())
    return HomologySignature(quadrant_of(traj.motion_angle(len(traj.points) - 1)),
                             frozenset(enclosed))


def preserves_class(optimized: CandidateTrajectory, seed: CandidateTrajectory,
                    quads) -> bool:
    sig = homology_signature(optimized, seed, quads)
    if sig.enclosed:
        return False
    lo, hi = quadrant_bounds(optimized.strategy.quadrant, optimized.strategy.lane) \
        if optimized.strategy.quadrant else (None, None)
    if lo is None:
        return True
    a = wrap_angle(optimized.motion_angle(len(optimized.points) - 1))
    return lo - 1e-6 <= a <= hi + 1e-6


# ---------------------------------------------------------------------------
# initialization helpers


def _boundary_follow(boundary: ExpandedBoundary, x_from: float, x_to: float,
                     step: float = 0.05) -> np.ndarray:
    xs = np.arange(x_from, x_to, step)
    xs = np.append(xs, x_to)
    ys = boundary.base.y_at(xs)
    return np.stack([xs, ys], axis=1)


def _hermite(p0, th0, p1, th1, n: int = 8) -> np.ndarray:
    """Cubic pose-to-pose blend; tangent magnitudes tied to the separation."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    d = float(np.hypot(*(p1 - p0)))
    if d < 1e-9:
        return np.vstack([p0, p1])
    m0 = d * np.array([math.cos(th0), math.sin(th0)])
    m1 = d * np.array([math.cos(th1), math.sin(th1)])
    t = np.linspace(0.0, 1.0, n)[:, None]
    h00 = 2 * t ** 3 - 3 * t ** 2 + 1
    h10 = t ** 3 - 2 * t ** 2 + t
    h01 = -2 * t ** 3 + 3 * t ** 2
    h11 = t ** 3 - t ** 2
    return h00 * p0 + h10 * m0 + h01 * p1 + h11 * m1


def _approach(p0: Pose, boundary: ExpandedBoundary, x_target: float) -> np.ndarray:
    """Smooth merge onto the boundary, then boundary-following to a target.

    The merge is stretched so its dive stays shallow: steep noses near the
    hug line poke outside the road.
    """
    dy0 = abs(p0.y - float(boundary.base.y_at(p0.x)))
    merge_x = p0.x + max(0.35, 6.0 * dy0, 1.4 * abs(p0.theta) * 0.5)
    merge_x = min(merge_x, max(x_target, p0.x + 0.05))
    my = float(boundary.base.y_at(merge_x))
    mth = float(boundary.base.tangent_at(merge_x))
    blend = _hermite((p0.x, p0.y), p0.theta, (merge_x, my), mth, 10)
    if x_target <= merge_x + 1e-6:
        return blend
    follow = _boundary_follow(boundary, merge_x, x_target)
    return np.vstack([blend[:-1], follow])


def _resample_with_tail(points: np.ndarray, tail: np.ndarray | None,
                        n: int) -> tuple[np.ndarray, int]:
    """Uniform arc-length resample; an optional maneuver tail stays verbatim."""
    if tail is None:
        return resample_polyline(points, n), -1
    k = len(tail)
    body = resample_polyline(points, n - k)
    return np.vstack([body, tail]), n - k


def _candidate(strategy: Strategy, pts: np.ndarray, tail_idx: int, theta0: float,
               gap_id, guidance, v_max: float) -> CandidateTrajectory:
    reverse = np.zeros(len(pts), dtype=bool)
    if strategy.reverse_tail and tail_idx > 0:
        reverse[tail_idx:] = True
    headings = smooth_headings(pts, theta0, reverse)
    pts = exactify(pts, headings, reverse)
    cand = CandidateTrajectory(strategy, pts, headings, reverse, gap_id, guidance,
                               tail_start=tail_idx)
    return cand.finalize(v_max)


def _parked_at(ego: Pose, spot, tol_pos: float = 0.12, tol_th: float = 0.6) -> bool:
    return (math.hypot(ego.x - spot.pose.x, ego.y - spot.pose.y) < tol_pos
            and abs(wrap_angle(ego.theta - spot.pose.theta)) < tol_th)


def _stay_candidate(strategy: Strategy, ego: Pose, gap_id, guidance,
                    v_max: float) -> CandidateTrajectory:
    pts = np.tile([[ego.x, ego.y]], (2, 1))
    reverse = np.array([False, strategy.reverse_tail])
    cand = CandidateTrajectory(strategy, pts, np.full(2, ego.theta), reverse,
                               gap_id, guidance, tail_start=1)
    return cand.finalize(v_max)


def initialize_candidates(ego: Pose, gap: MeetingGap,
                          boundaries: dict[str, ExpandedBoundary],
                          road: RoadModel, shape: VehicleShape,
                          cfg: PlannerConfig) -> list[CandidateTrajectory]:
    """Seed trajectories for every enabled strategy available in the gap.

    Mid-maneuver and parked states yield degenerate continuation seeds with
    the same label, so replanning does not flip the reported decision.
    """
    out: list[CandidateTrajectory] = []
    n = cfg.n_waypoints
    for lane in ("own", "opposite"):
        side = "lower" if lane == "own" else "upper"
        parking: LaneParking = gap.parking.get(side) or LaneParking()
        boundary = boundaries[side]
        enabled = {"meet": lane == "own" or cfg.enable_oncoming_meet_cut,
                   "cut": lane == "own" or cfg.enable_oncoming_meet_cut,
                   "back": lane == "own" or cfg.enable_oncoming_back}
        if parking.meet is not None and enabled["meet"]:
            p6 = parking.meet.pose
            strategy = _BY_ACTION[("meet", lane)]
            if lane == "own":
                lo, hi = min(p6.theta, 0.5 * math.pi), 0.5 * math.pi
            else:
                lo, hi = -0.5 * math.pi, max(p6.theta, -0.5 * math.pi)
            if _parked_at(ego, parking.meet):
                g = GuidanceConstraint("stop_point", (ego.x, ego.y), (lo, hi))
                out.append(_stay_candidate(strategy, ego, gap.gid, g, shape.v_max))
            elif p6.x > ego.x + 0.05:
                pts = _approach(ego, boundary, p6.x)
                pts, _ = _resample_with_tail(pts, None, n)
                pts[-1] = (p6.x, p6.y)
                g = GuidanceConstraint("stop_point", (p6.x, p6.y), (lo, hi))
                out.append(_candidate(strategy, pts, -1, ego.theta, gap.gid,
                                      g, shape.v_max))
        if parking.cut is not None and enabled["cut"]:
            p3 = parking.cut.pose
            strategy = _BY_ACTION[("cut", lane)]
            g = _arc_guidance(parking.cut, "cut", lane, shape)
            p2x = max(ego.x + 0.1, p3.x - abs(p3.y - float(boundary.base.y_at(p3.x)))
                      / max(math.tan(abs(p3.theta)), 0.2))
            lo_q, hi_q = quadrant_bounds(4, lane)
            off = (float(boundary.base.y_at(ego.x)) - ego.y if lane == "own"
                   else ego.y - float(boundary.base.y_at(ego.x)))
            mid_dive = lo_q - 0.1 <= wrap_angle(ego.theta) <= hi_q + 0.1 \
                and ego.x > p2x - 0.3 and off > 0.03
            if _parked_at(ego, parking.cut):
                out.append(_stay_candidate(strategy, ego, gap.gid, g, shape.v_max))
            elif mid_dive and math.hypot(p3.x - ego.x, p3.y - ego.y) > 0.03:
                pts = _hermite((ego.x, ego.y), ego.theta, (p3.x, p3.y), p3.theta, 6)
                out.append(_candidate(strategy, pts, 1, ego.theta, gap.gid,
                                      g, shape.v_max))
            elif p2x > ego.x:
                th2 = float(boundary.base.tangent_at(p2x))
                y2 = float(boundary.base.y_at(p2x))
                tail = _hermite((p2x, y2), th2, (p3.x, p3.y), p3.theta, 7)[1:]
                pts = _approach(ego, boundary, p2x)
                pts, ti = _resample_with_tail(pts, tail, n)
                out.append(_candidate(strategy, pts, ti, ego.theta, gap.gid,
                                      g, shape.v_max))
        if parking.back is not None and enabled["back"]:
            p7 = parking.back.pose
            strategy = _BY_ACTION[("back", lane)]
            g = _arc_guidance(parking.back, "back", lane, shape)
            start_x = p7.x + max(0.3, shape.length * 1.2)
            if parking.meet is not None:
                start_x = max(start_x, parking.meet.pose.x)
            start_x = min(start_x, road.x_max - 0.05)
            nose_ok = abs(wrap_angle(ego.theta)) < 0.5 * math.pi
            off = (float(boundary.base.y_at(ego.x)) - ego.y if lane == "own"
                   else ego.y - float(boundary.base.y_at(ego.x)))
            mid_reverse = p7.x - 0.05 < ego.x <= start_x + 0.1 and nose_ok \
                and off > 0.03
            if _parked_at(ego, parking.back):
                out.append(_stay_candidate(strategy, ego, gap.gid, g, shape.v_max))
            elif mid_reverse and math.hypot(p7.x - ego.x, p7.y - ego.y) > 0.03:
                pts = _hermite((ego.x, ego.y), ego.theta + math.pi,
                               (p7.x, p7.y), p7.theta + math.pi, 6)
                reverse = np.ones(len(pts), dtype=bool)
                reverse[0] = False
                cand = CandidateTrajectory(strategy, pts,
                                           smooth_headings(pts, ego.theta, reverse),
                                           reverse, gap.gid, g, tail_start=1)
                out.append(cand.finalize(shape.v_max))
            elif start_x > ego.x + 0.05:
                sy = float(boundary.base.y_at(start_x))
                sth = float(boundary.base.tangent_at(start_x))
                tail = _hermite((start_x, sy), sth + math.pi,
                                (p7.x, p7.y), p7.theta + math.pi, 7)[1:]
                pts = _approach(ego, boundary, start_x)
                pts, ti = _resample_with_tail(pts, tail, n)
                out.append(_candidate(strategy, pts, ti, ego.theta, gap.gid,
                                      g, shape.v_max))
    return out


def _arc_guidance(spot, action: str, lane: str, shape: VehicleShape) -> GuidanceConstraint:
    """Endpoint region around the anchor corner: radius at least R, correct sector."""
    R = shape.min_turn_radius
    if spot.anchor is None:
        return GuidanceConstraint("arc_region", None,
                                  quadrant_bounds({"cut": 4, "back": 3}[action], lane),
                                  (spot.pose.x, spot.pose.y), 0.0, None)
    ax, ay = spot.anchor
    # circle center sits (R - W/2) inside the corner along the pass direction
    sign = 1.0 if lane == "own" else -1.0
    oy = ay + sign * (R - 0.5 * shape.width)
    sector = (-0.5 * math.pi, 0.0) if action == "cut" else (-math.pi, -0.5 * math.pi)
    if lane == "opposite":
        sector = (-sector[1], -sector[0])
    return GuidanceConstraint("arc_region", None,
                              quadrant_bounds({"cut": 4, "back": 3}[action], lane),
                              (ax, oy), R, sector)


def advance_trajectory(ego: Pose, boundaries, road: RoadModel,
                       shape: VehicleShape, cfg: PlannerConfig) -> CandidateTrajectory:
    """Lane-middle trajectory toward a sliding goal ahead; also the recovery."""
    lo, hi = boundaries["lower"], boundaries["upper"]
    goal_x = min(ego.x + cfg.advance_goal_ahead, road.x_max)
    n = cfg.n_waypoints
    if goal_x <= ego.x + 1e-6:
        pts = np.tile([[ego.x, ego.y]], (n, 1))
        cand = CandidateTrajectory(ADVANCE, pts, np.full(n, ego.theta),
                                   np.zeros(n, bool), None)
        return cand.finalize(shape.v_max)
    mid0 = 0.5 * float(lo.base.y_at(ego.x) + hi.base.y_at(ego.x))
    dive = max(0.4, 4.5 * abs(ego.y - mid0), 1.2 * abs(ego.theta) * shape.min_turn_radius)
    merge_x = min(ego.x + dive, goal_x)
    mth = 0.0
    blend = _hermite((ego.x, ego.y), ego.theta,
                     (merge_x, 0.5 * float(lo.base.y_at(merge_x) + hi.base.y_at(merge_x))),
                     mth, 10)
    if goal_x > merge_x + 1e-6:
        xs = np.arange(merge_x, goal_x, 0.05)
        xs = np.append(xs, goal_x)
        mids = 0.5 * (lo.base.y_at(xs) + hi.base.y_at(xs))
        pts = np.vstack([blend[:-1], np.stack([xs, mids], 1)])
    else:
        pts = blend
    pts = resample_polyline(pts, n)
    headings = smooth_headings(pts, ego.theta, np.zeros(n, bool))
    pts = exactify(pts, headings, np.zeros(n, bool))
    g = GuidanceConstraint("fixed_pose", (float(pts[-1, 0]), float(pts[-1, 1])), (0.0, 0.0))
    cand = CandidateTrajectory(ADVANCE, pts, headings,
                               np.zeros(n, bool), None, g)
    return cand.finalize(shape.v_max)


def advect_seed(prev_pts: np.ndarray, ego: Pose, boundaries, road: RoadModel,
                shape: VehicleShape, cfg: PlannerConfig) -> CandidateTrajectory | None:
    """Re-seed the advance from the previous solution, re-rooted at the ego.

    The old path's shape is kept from the point nearest the ego and extended
    along the lane middle to the new sliding goal, so successive solves stay
    warm without dragging stale anchors.
    """
    lo, hi = boundaries["lower"], boundaries["upper"]
    goal_x = min(ego.x + cfg.advance_goal_ahead, road.x_max)
    d2 = np.hypot(prev_pts[:, 0] - ego.x, prev_pts[:, 1] - ego.y)
    i0 = int(np.argmin(d2))
    tail = prev_pts[i0:]
    if len(tail) < 3 or d2[i0] > 0.3:
        return None
    parts = [np.array([[ego.x, ego.y]]), tail[tail[:, 0] > ego.x + 0.02]]
    last_x = parts[-1][-1, 0] if len(parts[-1]) else ego.x
    if last_x < goal_x - 0.05:
        xs = np.arange(last_x + 0.05, goal_x, 0.05)
        xs = np.append(xs, goal_x)
        mids = 0.5 * (lo.base.y_at(xs) + hi.base.y_at(xs))
        parts.append(np.stack([xs, mids], 1))
    pts = np.vstack([p for p in parts if len(p)])
    if len(pts) < 3:
        return None
    n = cfg.n_waypoints
    pts = resample_polyline(pts, n)
    headings = smooth_headings(pts, ego.theta, np.zeros(n, bool))
    pts = exactify(pts, headings, np.zeros(n, bool))
    g = GuidanceConstraint("fixed_pose", (float(pts[-1, 0]), float(pts[-1, 1])), (0.0, 0.0))
    cand = CandidateTrajectory(ADVANCE, pts, headings, np.zeros(n, bool), None, g)
    return cand.finalize(shape.v_max)


def recovery_trajectory(ego: Pose, boundaries, road: RoadModel,
                        shape: VehicleShape, cfg: PlannerConfig) -> CandidateTrajectory:
    """Forward path from a parked pose back to the lane middle."""
    return advance_trajectory(ego, boundaries, road, shape, cfg)


def stop_trajectory(ego: Pose, shape: VehicleShape) -> CandidateTrajectory:
    pts = np.tile([[ego.x, ego.y]], (2, 1))
    cand = CandidateTrajectory(Strategy("stop", "stop", "center", None), pts,
                               np.full(2, ego.theta), np.zeros(2, bool), None)
    cand.feasible = True
    return cand.finalize(shape.v_max)


# ---------------------------------------------------------------------------
# optimization


@dataclass
class MovingPrediction:
    """Constant-speed forecast of the closest oncoming body.

    With a lane path the body advances along it (oncoming traffic is assumed
    to keep to its side); otherwise it continues straight along its heading.
    """

    pose: Pose
    speed: float
    shape: VehicleShape
    path: tuple | None = None          # (xs, ys, thetas) toward -x

    def __post_init__(self):
        if self.path is not None:
            xs, ys, ths = self.path
            seg = np.hypot(np.diff(xs), np.diff(ys))
            self._arc = np.concatenate([[0.0], np.cumsum(seg)])
            i0 = int(np.argmin(np.hypot(xs - self.pose.x, ys - self.pose.y)))
            self._s0 = float(self._arc[i0])

    def states_at(self, t: np.ndarray):
        """Rear poses and heading unit vectors at the given times."""
        t = np.atleast_1d(t)
        if self.path is None:
            ux = np.array([math.cos(self.pose.theta), math.sin(self.pose.theta)])
            rear = np.stack([self.pose.x + ux[0] * self.speed * t,
                             self.pose.y + ux[1] * self.speed * t], axis=1)
            u = np.tile(ux, (len(t), 1))
            return rear, u
        xs, ys, ths = self.path
        s = np.minimum(self._s0 + self.speed * t, self._arc[-1])
        x = np.interp(s, self._arc, xs)
        y = np.interp(s, self._arc, ys)
        th = np.interp(s, self._arc, ths)
        return np.stack([x, y], axis=1), np.stack([np.cos(th), np.sin(th)], axis=1)

    def corners_at(self, t: np.ndarray) -> np.ndarray:
        rear, u = self.states_at(t)
        theta = np.arctan2(u[:, 1], u[:, 0])
        poses = np.concatenate([rear, theta[:, None]], axis=1)
        return batch_footprints(poses, self.shape.length, self.shape.width)


def smooth_headings(points: np.ndarray, theta0: float,
                    reverse: np.ndarray) -> np.ndarray:
    """Tangent-like headings: each point faces the mean of its chord dirs."""
    n = len(points)
    if n < 2:
        return np.full(n, theta0)
    d = np.diff(points, axis=0)
    norm = np.hypot(d[:, 0], d[:, 1])
    dirs = np.arctan2(d[:, 1], d[:, 0])
    # chords driven in reverse represent the heading rotated half a turn
    rev_chord = reverse[1:]
    dirs = np.where(rev_chord, dirs + math.pi, dirs)
    ux, uy = np.cos(dirs), np.sin(dirs)
    theta = np.empty(n)
    theta[0] = theta0
    for i in range(1, n - 1):
        if norm[i - 1] < 1e-12 and norm[i] < 1e-12:
            theta[i] = theta[i - 1]
        elif norm[i - 1] < 1e-12:
            theta[i] = dirs[i]
        elif norm[i] < 1e-12:
            theta[i] = dirs[i - 1]
        else:
            theta[i] = math.atan2(uy[i - 1] + uy[i], ux[i - 1] + ux[i])
    theta[n - 1] = dirs[n - 2] if norm[n - 2] > 1e-12 else theta[n - 2]
    return theta


def exactify(points: np.ndarray, theta: np.ndarray,
             reverse: np.ndarray) -> np.ndarray:
    """Rebuild chords parallel to the mean-heading vectors (zero residual).

    Chord lengths are preserved; the lateral drift per chord equals the
    remaining angular mismatch times the chord length, so a smoothed input
    moves by millimeters at most.
    """
    d = np.diff(points, axis=0)
    lengths = np.hypot(d[:, 0], d[:, 1])
    sum_x = np.cos(theta[:-1]) + np.cos(theta[1:])
    sum_y = np.sin(theta[:-1]) + np.sin(theta[1:])
    mag = np.hypot(sum_x, sum_y)
    ok = mag > 1e-12
    dir_x = np.where(ok, sum_x / np.maximum(mag, 1e-12), 0.0)
    dir_y = np.where(ok, sum_y / np.maximum(mag, 1e-12), 0.0)
    # a chord driven in reverse runs against the heading sum
    sign = np.where(reverse[1:], -1.0, 1.0)
    # degenerate opposed headings: keep the original chord direction
    dir_x = np.where(ok, dir_x, np.where(lengths > 1e-12, d[:, 0] / np.maximum(lengths, 1e-12), 1.0))
    dir_y = np.where(ok, dir_y, np.where(lengths > 1e-12, d[:, 1] / np.maximum(lengths, 1e-12), 0.0))
    sign = np.where(ok, sign, 1.0)
    out = np.empty_like(points)
    out[0] = points[0]
    steps = sign[:, None] * lengths[:, None] * np.stack([dir_x, dir_y], axis=1)
    out[1:] = points[0] + np.cumsum(steps, axis=0)
    return out


def _box_depths(corners: np.ndarray, center, ux, uy, hl: float, hw: float,
                margin: float):
    """Penetration of (k, 4, 2) corner sets into an oriented box.

    ``center`` may be a single point or one per corner set. Returns depth
    (k, 4) and the outward gradient direction per corner (k, 4, 2).
    """
    center = np.asarray(center, dtype=float)
    if center.ndim == 1:
        rel = corners - center
    else:
        rel = corners - center[:, None, :]
    px = rel @ ux
    py = rel @ uy
    dx = hl + margin - np.abs(px)
    dy = hw + margin - np.abs(py)
    inside = (dx > 0) & (dy > 0)
    depth = np.where(inside, np.minimum(dx, dy), 0.0)
    use_x = inside & (dx <= dy)
    use_y = inside & ~use_x
    grad = np.zeros_like(corners)
    grad += np.where(use_x[..., None], -np.sign(px)[..., None] * ux, 0.0)
    grad += np.where(use_y[..., None], -np.sign(py)[..., None] * uy, 0.0)
    return depth, grad


class _Problem:
    """Penalty smoothing of one candidate over positions and headings."""

    KIN_WEIGHT = 30.0

    def __init__(self, cand: CandidateTrajectory, corridor,
                 shape: VehicleShape, road: RoadModel, cfg: PlannerConfig,
                 mover: MovingPrediction | None, hold_until: float = 0.0,
                 quads=()):
        self.cand = cand
        floor, ceil, static_floor, static_ceil, grid_x = corridor
        self.grid_x = grid_x
        self.n = len(cand.points)
        ts = cand.tail_start if cand.tail_start > 0 else self.n
        # maneuver tails leave the boundary corridor; they are bounded by the
        # static free band instead, and the very last point by its own checks
        self.tail_mask = np.arange(self.n) >= ts
        self.floor_b, self.ceil_b = floor, ceil
        self.floor_s, self.ceil_s = static_floor, static_ceil
        self.shape = shape
        self.road = road
        self.cfg = cfg
        self.mover = mover
        self.hold_until = hold_until
        g = cand.guidance
        self.fixed_end = g is not None and g.kind in ("fixed_pose", "stop_point")
        self.corridor_margin = 0.015
        self.reverse = cand.reverse
        self.local = np.array([(shape.length, 0.5 * shape.width),
                               (0.0, 0.5 * shape.width),
                               (0.0, -0.5 * shape.width),
                               (shape.length, -0.5 * shape.width)])
        # nearby parked bodies as oriented boxes for footprint penalties
        x_lo = cand.points[:, 0].min() - 0.6
        x_hi = cand.points[:, 0].max() + 0.6
        boxes = []
        for q in quads:
            if q[:, 0].max() < x_lo or q[:, 0].min() > x_hi:
                continue
            c = q.mean(axis=0)
            e = q[0] - q[1]
            hl = 0.5 * float(np.hypot(*e))
            ux = e / max(2 * hl, 1e-9)
            boxes.append((c, ux, np.array([-ux[1], ux[0]]), hl,
                          0.5 * float(np.hypot(*(q[1] - q[2])))))
        if boxes:
            self.box_c = np.array([b[0] for b in boxes])
            self.box_ux = np.array([b[1] for b in boxes])
            self.box_uy = np.array([b[2] for b in boxes])
            self.box_hl = np.array([b[3] for b in boxes])
            self.box_hw = np.array([b[4] for b in boxes])
            self.obs_pts = np.concatenate(
                [q for q in quads
                 if not (q[:, 0].max() < x_lo or q[:, 0].min() > x_hi)])
        else:
            self.box_c = None
            self.obs_pts = None

    def free_index(self):
        idx = list(range(1, self.n - 1))
        if not self.fixed_end:
            idx.append(self.n - 1)
        return np.array(idx, dtype=int)

    def pack(self, pts: np.ndarray, theta: np.ndarray) -> np.ndarray:
        return np.concatenate([pts[self.free_index()].ravel(), theta[1:]])

    def unpack(self, z: np.ndarray):
        fi = self.free_index()
        pts = self.cand.points.copy()
        k = 2 * len(fi)
        pts[fi] = z[:k].reshape(-1, 2)
        theta = np.empty(self.n)
        theta[0] = self.cand.headings[0]
        theta[1:] = z[k:]
        return pts, theta

    def terms(self, pts, theta):
        obj, viol, _, _ = self._evaluate(pts, theta, want_grad=False)
        return obj, viol

    def merit(self, z, mu):
        pts, theta = self.unpack(z)
        obj, viol, _, _ = self._evaluate(pts, theta, want_grad=False)
        return obj + mu * viol

    def gradient(self, z, mu):
        return self.value_and_grad(z, mu)[1]

    def value_and_grad(self, z, mu):
        pts, theta = self.unpack(z)
        obj, viol, go, gv = self._evaluate(pts, theta, want_grad=True)
        gp = go[0] + mu * gv[0]
        gt = go[1] + mu * gv[1]
        grad = np.concatenate([gp[self.free_index()].ravel(), gt[1:]])
        return obj + mu * viol, grad

    def _hold_times(self, pts, t_end):
        """Sparse sample of the window when the held pose meets the mover."""
        if self.mover is None or self.hold_until <= t_end:
            return None
        mv = self.mover
        vx = mv.speed * math.cos(mv.pose.theta)
        if abs(vx) < 1e-6:
            return np.linspace(t_end, self.hold_until, 8)
        reach = self.shape.length + mv.shape.length + 0.3
        t1 = (pts[-1, 0] - reach - mv.pose.x) / vx
        t2 = (pts[-1, 0] + reach - mv.pose.x) / vx
        lo = max(min(t1, t2), t_end)
        hi = min(max(t1, t2), self.hold_until)
        if hi <= lo:
            return None
        return np.linspace(lo, hi, 10)

    def _evaluate(self, pts, theta, want_grad):
        n = self.n
        diff = np.diff(pts, axis=0)
        d = np.maximum(np.hypot(diff[:, 0], diff[:, 1]), 1e-9)
        obj = d.sum() / self.shape.v_max
        viol = 0.0
        if want_grad:
            gop = np.zeros((n, 2))
            got = np.zeros(n)
            gp = np.zeros((n, 2))      # violation part
            gt = np.zeros(n)
            unit = diff / d[:, None]
            gop[:-1] -= unit / self.shape.v_max
            gop[1:] += unit / self.shape.v_max
        else:
            gop = got = gp = gt = None

        # kinematic consistency
        cs = np.cos(theta[:-1]) + np.cos(theta[1:])
        sn = np.sin(theta[:-1]) + np.sin(theta[1:])
        res = cs * diff[:, 1] - sn * diff[:, 0]
        viol += self.KIN_WEIGHT * float((res ** 2).sum())
        if want_grad:
            w = self.KIN_WEIGHT * 2.0
            gp[:-1, 0] += w * res * sn
            gp[1:, 0] -= w * res * sn
            gp[:-1, 1] -= w * res * cs
            gp[1:, 1] += w * res * cs
            gt[:-1] += w * res * (-np.sin(theta[:-1]) * diff[:, 1]
                                  - np.cos(theta[:-1]) * diff[:, 0])
            gt[1:] += w * res * (-np.sin(theta[1:]) * diff[:, 1]
                                 - np.cos(theta[1:]) * diff[:, 0])

        # corridor between the rear-center curves (static band on tails)
        step = self.grid_x[1] - self.grid_x[0]
        xq = pts[:, 0]
        fi = np.clip(((xq - self.grid_x[0]) / step).astype(int), 0,
                     len(self.grid_x) - 2)
        w1 = (xq - self.grid_x[fi]) / step
        f0 = np.where(self.tail_mask, self.floor_s[fi], self.floor_b[fi])
        f1 = np.where(self.tail_mask, self.floor_s[fi + 1], self.floor_b[fi + 1])
        c0 = np.where(self.tail_mask, self.ceil_s[fi], self.ceil_b[fi])
        c1 = np.where(self.tail_mask, self.ceil_s[fi + 1], self.ceil_b[fi + 1])
        f = f0 + w1 * (f1 - f0)
        c = c0 + w1 * (c1 - c0)
        m = self.corridor_margin
        low_v = np.maximum(0.0, f + m - pts[:, 1])
        high_v = np.maximum(0.0, pts[:, 1] - c + m)
        low_v[0] = high_v[0] = 0.0
        low_v[-1] = high_v[-1] = 0.0
        viol += float((low_v ** 2).sum() + (high_v ** 2).sum())
        if want_grad:
            fslope = (f1 - f0) / step
            cslope = (c1 - c0) / step
            gp[:, 1] += -2.0 * low_v + 2.0 * high_v
            gp[:, 0] += 2.0 * low_v * fslope - 2.0 * high_v * cslope

        # endpoint guidance
        g = self.cand.guidance
        end = pts[-1]
        if g is not None and g.kind == "arc_region" and g.anchor is not None:
            rel = end - np.array(g.anchor)
            rr = float(rel @ rel)
            if g.radius > 0 and rr < g.radius ** 2:
                viol += (g.radius ** 2 - rr) ** 2 * 4.0
                if want_grad and not self.fixed_end:
                    gp[-1] += 4.0 * 2.0 * (g.radius ** 2 - rr) * (-2.0 * rel)
            if g.sector is not None and rr > 1e-12:
                b = wrap_angle(math.atan2(rel[1], rel[0]))
                lo, hi = g.sector
                err = max(0.0, lo - b) + max(0.0, b - hi)
                if err > 0:
                    viol += err ** 2 * rr
                    if want_grad and not self.fixed_end:
                        sgn = -1.0 if b < lo else 1.0
                        dbd = np.array([-rel[1], rel[0]]) / rr
                        gp[-1] += 2.0 * err * sgn * dbd * rr + err ** 2 * 2.0 * rel
            low_e = max(0.0, (self.road.y_low + 0.05) - end[1])
            high_e = max(0.0, end[1] - (self.road.y_high - 0.05))
            viol += low_e ** 2 + high_e ** 2
            if want_grad and not self.fixed_end:
                gp[-1, 1] += -2.0 * low_e + 2.0 * high_e
        if g is not None and g.theta_bounds is not None:
            a = wrap_angle(theta[-1] + (math.pi if self.reverse[-1] else 0.0))
            lo, hi = g.theta_bounds
            slack = 1e-3
            err_lo = max(0.0, (lo + slack) - a)
            err_hi = max(0.0, a - (hi - slack))
            err = err_lo + err_hi
            if err > math.pi:
                err = 2 * math.pi - err
                err_lo, err_hi = (0.0, err) if err_hi > 0 else (err, 0.0)
            viol += err ** 2
            if want_grad:
                gt[-1] += -2.0 * err_lo + 2.0 * err_hi

        # footprints
        corners = batch_footprints(np.column_stack([pts, theta]),
                                   self.shape.length, self.shape.width)
        if want_grad:
            cth, sth = np.cos(theta), np.sin(theta)
            dcx = -self.local[None, :, 0] * sth[:, None] \
                - self.local[None, :, 1] * cth[:, None]
            dcy = self.local[None, :, 0] * cth[:, None] \
                - self.local[None, :, 1] * sth[:, None]

        m_road = 0.004
        cy_c = corners[1:, :, 1]
        low = np.maximum(0.0, (self.road.y_low + m_road) - cy_c)
        high = np.maximum(0.0, cy_c - (self.road.y_high - m_road))
        viol += float((low ** 2).sum() + (high ** 2).sum())
        if want_grad and (low.any() or high.any()):
            gp[1:, 1] += 2.0 * (-low + high).sum(axis=1)
            gt[1:] += 2.0 * ((-low + high) * dcy[1:]).sum(axis=1)

        if self.box_c is not None:
            depth, dgrad = self._static_depths(corners[1:])
            viol += float((depth ** 2).sum())
            if want_grad and depth.any():
                gp[1:] += (2.0 * depth[..., None] * dgrad).sum(axis=(0, 2))
                gt[1:] += (2.0 * depth * (dgrad[..., 0] * dcx[None, 1:]
                                          + dgrad[..., 1] * dcy[None, 1:])).sum(axis=(0, 2))
        if self.obs_pts is not None:
            # parked corners swallowed by the body (edge-on overlaps)
            m_in = 0.018
            L, W2 = self.shape.length, 0.5 * self.shape.width
            dxy = self.obs_pts[None, :, :] - pts[:, None, :]      # (n, M, 2)
            cthn, sthn = np.cos(theta)[:, None], np.sin(theta)[:, None]
            lx = cthn * dxy[..., 0] + sthn * dxy[..., 1]
            ly = -sthn * dxy[..., 0] + cthn * dxy[..., 1]
            d1 = lx + m_in
            d2 = (L + m_in) - lx
            d3 = ly + W2 + m_in
            d4 = (W2 + m_in) - ly
            stackd = np.stack([d1, d2, d3, d4], axis=-1)
            inside = (stackd > 0).all(axis=-1)
            inside[0] = False
            face = np.argmin(stackd, axis=-1)
            idepth = np.where(inside, stackd.min(axis=-1), 0.0)
            viol += float((idepth ** 2).sum())
            if want_grad and inside.any():
                dlx_p = np.stack([-cthn * np.ones_like(lx), -sthn * np.ones_like(lx)], -1)
                dly_p = np.stack([sthn * np.ones_like(ly), -cthn * np.ones_like(ly)], -1)
                dlx_t = ly
                dly_t = -lx
                sgn = np.where((face == 0) | (face == 2), 1.0, -1.0)
                use_x = face < 2
                dd_p = np.where(use_x[..., None], dlx_p, dly_p) * sgn[..., None]
                dd_t = np.where(use_x, dlx_t, dly_t) * sgn
                w_i = 2.0 * idepth
                gp += (w_i[..., None] * dd_p * inside[..., None]).sum(axis=1)
                gt += (w_i * dd_t * inside).sum(axis=1)

        if self.mover is not None:
            t = np.concatenate([[0.0], np.cumsum(d)]) / self.shape.v_max
            depth, dgrad = self._mover_depths(corners, t)
            viol += float((depth ** 2).sum())
            if want_grad and depth.any():
                gp += (2.0 * depth[..., None] * dgrad).sum(axis=1)
                gt += (2.0 * depth * (dgrad[..., 0] * dcx
                                      + dgrad[..., 1] * dcy)).sum(axis=1)
            ht = self._hold_times(pts, t[-1])
            if ht is not None:
                held = np.repeat(corners[-1:], len(ht), axis=0)
                hdepth, hgrad = self._mover_depths(held, ht)
                viol += float((hdepth ** 2).sum())
                if want_grad and hdepth.any():
                    gp[-1] += (2.0 * hdepth[..., None] * hgrad).sum(axis=(0, 1))
                    gt[-1] += (2.0 * hdepth * (hgrad[..., 0] * dcx[-1]
                                               + hgrad[..., 1] * dcy[-1])).sum()
        if want_grad:
            return obj, viol, (gop, got), (gp, gt)
        return obj, viol, None, None

    def _static_depths(self, corners: np.ndarray):
        """Penetration into every nearby parked box: (B, k, 4) + directions."""
        rel = corners[None, :, :, :] - self.box_c[:, None, None, :]
        px = np.einsum("bkcj,bj->bkc", rel, self.box_ux)
        py = np.einsum("bkcj,bj->bkc", rel, self.box_uy)
        dx = self.box_hl[:, None, None] + 0.018 - np.abs(px)
        dy = self.box_hw[:, None, None] + 0.018 - np.abs(py)
        inside = (dx > 0) & (dy > 0)
        depth = np.where(inside, np.minimum(dx, dy), 0.0)
        use_x = inside & (dx <= dy)
        use_y = inside & ~use_x
        grad = np.zeros(rel.shape)
        grad += np.where(use_x[..., None],
                         -np.sign(px)[..., None] * self.box_ux[:, None, None, :], 0.0)
        grad += np.where(use_y[..., None],
                         -np.sign(py)[..., None] * self.box_uy[:, None, None, :], 0.0)
        return depth, grad

    def _mover_depths(self, corners: np.ndarray, t: np.ndarray, margin=0.01):
        """Penetration of body corners into the forecast mover body."""
        mv = self.mover
        rear, ux = mv.states_at(t)
        uy = np.stack([-ux[:, 1], ux[:, 0]], axis=1)
        centers = rear + 0.5 * mv.shape.length * ux
        rel = corners - centers[:, None, :]
        px = np.einsum("kcj,kj->kc", rel, ux)
        py = np.einsum("kcj,kj->kc", rel, uy)
        hl, hw = 0.5 * mv.shape.length, 0.5 * mv.shape.width
        dx = hl + margin - np.abs(px)
        dy = hw + margin - np.abs(py)
        inside = (dx > 0) & (dy > 0)
        depth = np.where(inside, np.minimum(dx, dy), 0.0)
        use_x = inside & (dx <= dy)
        use_y = inside & ~use_x
        grad = np.zeros_like(corners)
        grad += np.where(use_x[..., None], -np.sign(px)[..., None] * ux[:, None, :], 0.0)
        grad += np.where(use_y[..., None], -np.sign(py)[..., None] * uy[:, None, :], 0.0)
        return depth, grad

    def solve(self, z0: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray, float]:
        from scipy.optimize import minimize
        z = z0 if z0 is not None else self.pack(self.cand.points, self.cand.headings)
        budget = max(40, self.cfg.max_iterations)
        _, viol0 = self.terms(*self.unpack(z))
        # near-consistent starts (warm restarts of a moved problem) only need
        # the stiff polish stage
        stages = (4e5,) if viol0 < 1e-3 else (2e4, 4e5)
        iters = 20 if len(stages) == 1 else budget // 2
        viol = viol0
        prev = viol0
        for mu in stages:
            r = minimize(self.value_and_grad, z, args=(mu,), jac=True,
                         method="L-BFGS-B",
                         options=dict(maxiter=iters, ftol=1e-12, gtol=1e-9))
            z = r.x
            pts, theta = self.unpack(z)
            _, viol = self.terms(pts, theta)
            if viol < self.cfg.constraint_tol:
                break
            if viol > 0.7 * prev and viol > 100 * self.cfg.constraint_tol:
                break                  # plateaued on a hard conflict: give up
            prev = viol
        pts, theta = self.unpack(z)
        return pts, theta, viol


def optimize_trajectory(cand: CandidateTrajectory, boundaries, quads,
                        road: RoadModel, shape: VehicleShape,
                        cfg: PlannerConfig,
                        mover: MovingPrediction | None = None,
                        hold_until: float = 0.0,
                        warm: np.ndarray | None = None,
                        corridor=None) -> CandidateTrajectory:
    """Smooth one candidate; returns a finalized (possibly infeasible) copy.

    After the penalty stages the headings are made exactly chord-consistent
    by rebuilding the chords along the mean-heading directions.
    """
    if len(cand.points) <= 6:
        # degenerate stay/continuation seeds: nothing to smooth
        return rebuild_candidate(cand, exactify(cand.points, cand.headings,
                                                cand.reverse), cand.headings)
    if corridor is None:
        corridor = _corridor(boundaries, quads, road, shape)
    seed = cand
    prob = _Problem(cand, corridor, shape, road, cfg, mover, hold_until, quads)
    z0 = None
    if warm is not None and warm[0].shape == cand.points.shape:
        # reuse the previous solution's free variables; the start pose and
        # any fixed endpoint stay at this tick's values
        theta_w = warm[1].copy()
        theta_w[0] = cand.headings[0]
        z0 = prob.pack(warm[0], theta_w)
    pts, theta, viol = prob.solve(z0)
    pts = exactify(pts, theta, cand.reverse)
    out = rebuild_candidate(cand, pts, theta)
    if viol >= max(cfg.constraint_tol * 10, 1e-4):
        out.feasible = False
        out.reason = f"constraint violation {viol:.2e}"
        return out
    # never hand back something slower than a feasible seed
    if out.objective > seed.objective + 1e-9:
        s_prob = _Problem(seed, corridor, shape, road, cfg, mover, hold_until, quads)
        _, s_viol = s_prob.terms(seed.points, seed.headings)
        if s_viol < cfg.constraint_tol:
            return seed
    return out


def rebuild_candidate(cand: CandidateTrajectory, pts: np.ndarray,
                      theta: np.ndarray) -> CandidateTrajectory:
    out = CandidateTrajectory(cand.strategy, pts.copy(), theta.copy(),
                              cand.reverse.copy(), cand.gap_id, cand.guidance,
                              tail_start=cand.tail_start)
    return out.finalize(cand._v_max)


def _corridor(boundaries, quads, road: RoadModel, shape: VehicleShape):
    """Boundary corridor plus the static free band used by maneuver tails."""
    from .gaps import column_spines
    lo, hi = boundaries["lower"], boundaries["upper"]
    floor = lo.base.y.copy()
    ceil = hi.base.y.copy()
    ya, ym = column_spines(quads, road, shape, lo.x)
    if lo.pose_blocked is not None and lo.pose_blocked.any():
        floor = np.where(lo.pose_blocked, np.maximum(floor, ya), floor)
    if hi.pose_blocked is not None and hi.pose_blocked.any():
        ceil = np.where(hi.pose_blocked, np.minimum(ceil, ym), ceil)
    # parked/diving tails may sink toward the road edge itself
    w2 = 0.5 * shape.width
    static_floor = np.minimum(ya, floor) - 0.6 * w2
    static_ceil = np.maximum(ym, ceil) + 0.6 * w2
    return floor, ceil, static_floor, static_ceil, lo.x


# ---------------------------------------------------------------------------
# verification and selection


def _mover_separation(corners: np.ndarray, t: np.ndarray,
                      mover: MovingPrediction) -> float:
    """Worst separating-axis margin between bodies and the forecast mover.

    Positive means separated at every matched time. Uses the mover frame and
    each body's own frame as candidate axes, which is exact for rectangles.
    """
    rear, ux = mover.states_at(t)
    uy = np.stack([-ux[:, 1], ux[:, 0]], axis=1)
    m_center = rear + 0.5 * mover.shape.length * ux
    hl, hw = 0.5 * mover.shape.length, 0.5 * mover.shape.width
    e_center = corners.mean(axis=1)
    e_x = corners[:, 0, :] - corners[:, 1, :]
    e_len = np.maximum(np.hypot(e_x[:, 0], e_x[:, 1]), 1e-12)
    e_ux = e_x / e_len[:, None]
    e_uy = np.stack([-e_ux[:, 1], e_ux[:, 0]], axis=1)
    ehl = 0.5 * e_len
    ehw = 0.5 * np.hypot(*(corners[:, 1, :] - corners[:, 2, :]).T)
    off = e_center - m_center
    best = np.full(len(t), -np.inf)
    for axis_arr, m_ext in ((ux, hl), (uy, hw)):
        dot = np.einsum("kj,kj->k", off, axis_arr)
        e_ext = np.abs(np.einsum("kj,kj->k", e_ux, axis_arr)) * ehl \
            + np.abs(np.einsum("kj,kj->k", e_uy, axis_arr)) * ehw
        best = np.maximum(best, np.abs(dot) - m_ext - e_ext)
    for axis_arr, e_ext in ((e_ux, ehl), (e_uy, ehw)):
        m_ext = np.abs(np.einsum("kj,kj->k", axis_arr, ux)) * hl \
            + np.abs(np.einsum("kj,kj->k", axis_arr, uy)) * hw
        proj = np.einsum("kj,kj->k", off, axis_arr)
        best = np.maximum(best, np.abs(proj) - m_ext - e_ext)
    return float(best.min())


def verify_candidate(cand: CandidateTrajectory, seed: CandidateTrajectory,
                     quads, boundaries, road: RoadModel, shape: VehicleShape,
                     mover: MovingPrediction | None, cfg: PlannerConfig,
                     hold_until: float = 0.0) -> CandidateTrajectory:
    """Hard checks after smoothing; failures mark the candidate infeasible."""
    res = kinematic_residuals(cand.points, cand.headings)
    if np.abs(res).max() > 1e-6:
        cand.feasible = False
        cand.reason = "kinematic residual"
        return cand
    corners = batch_footprints(
        np.column_stack([cand.points, cand.headings]), shape.length, shape.width)
    pen_tol = -2e-3
    for q in quads:
        hit = batch_overlap_quad(corners, q, margin=pen_tol)
        if hit[1:].any():
            cand.feasible = False
            cand.reason = "static collision"
            return cand
    if corners[1:, :, 1].min() < road.y_low + pen_tol or \
            corners[1:, :, 1].max() > road.y_high - pen_tol:
        cand.feasible = False
        cand.reason = "left the road"
        return cand
    if mover is not None:
        t = cand.times
        if _mover_separation(corners, t, mover) <= 0.0:
            cand.feasible = False
            cand.reason = "crosses the oncoming body"
            return cand
        if hold_until > t[-1]:
            ts = np.arange(t[-1], hold_until, 0.2)
            held = np.repeat(corners[-1:], len(ts), axis=0)
            if _mover_separation(held, ts, mover) <= 0.0:
                cand.feasible = False
                cand.reason = "parked pose blocks the oncoming body"
                return cand
    if not preserves_class(cand, seed, quads):
        cand.feasible = False
        cand.reason = "homology class changed"
        return cand
    return cand


def hierarchical_select(cands: list[CandidateTrajectory], mover_present: bool,
                        mover_y: float | None, gap: MeetingGap | None,
                        time_to_conflict: float, shape: VehicleShape,
                        cfg: PlannerConfig,
                        advance: CandidateTrajectory | None = None
                        ) -> CandidateTrajectory | None:
    """Three-layer choice: advance, then lane, then meet > back > cut."""
    feas = [c for c in cands if c.feasible]
    if not mover_present:
        return advance
    if not feas:
        return None
    if mover_y is not None and abs(mover_y) > 0.08:
        lane = "own" if mover_y > 0 else "opposite"
    elif gap is not None:
        lane = "opposite" if gap.lower_room > gap.upper_room else "own"
    else:
        lane = "own"
    for pick_lane in (lane, "own" if lane == "opposite" else "opposite"):
        group = {c.strategy.action: c for c in feas if c.strategy.lane == pick_lane}
        if not group:
            continue
        if "meet" in group:
            return group["meet"]
        if "back" in group:
            need = group["back"].times[-1] + cfg.back_time_margin
            if time_to_conflict >= need:
                return group["back"]
        if "cut" in group:
            return group["cut"]
        if "back" in group:
            return group["back"]
    return None

# ---------------------------------------------------------------------------
# per-tick orchestration


@dataclass
class Observation:
    """What the planner sees this tick (possibly noise-corrupted)."""

    time: float
    ego: Pose
    ego_speed: float
    quads: list
    movers: list              # (Pose, speed) pairs, headings along motion
    road: RoadModel
    shape: VehicleShape


@dataclass
class PlanResult:
    trajectory: CandidateTrajectory
    gap: MeetingGap | None
    gap_cost: object | None
    forecast: object | None
    candidates: list
    partition: object | None
    compute_s: float = 0.0


class Planner:
    """Stateful replanner: hysteresis history and warm starts live here."""

    def __init__(self, road: RoadModel, shape: VehicleShape,
                 cfg: PlannerConfig | None = None):
        self.road = road
        self.shape = shape
        self.cfg = cfg or PlannerConfig()
        self.history: list = []           # selected gap intervals, newest last
        self.decisions: list = []         # (gap_interval, strategy_label)
        self._warm: dict = {}
        self._park_cache: dict = {}
        self._probe_cache: dict = {}

    def _plan_advance(self, obs, boundaries, prediction, corridor):
        """Optimize the lane-middle trajectory, advecting last tick's shape."""
        cfg = self.cfg
        seed = None
        prev = self._warm.get("advance")
        if prev is not None:
            seed = advect_seed(prev[0], obs.ego, boundaries, self.road,
                               self.shape, cfg)
        if seed is None:
            seed = advance_trajectory(obs.ego, boundaries, self.road,
                                      self.shape, cfg)
        traj = optimize_trajectory(seed, boundaries, obs.quads, self.road,
                                   self.shape, cfg, prediction, 0.0, None,
                                   corridor)
        self._warm["advance"] = (traj.points.copy(), traj.headings.copy())
        return traj

    def _seed_parking(self, gap, boundaries, quads):
        """Reuse last tick's parking spots when they are still valid."""
        from .gaps import _feasible_spots, LaneParking, ParkingSpot
        if gap.parking:
            return
        out = {}
        for side in ("lower", "upper"):
            cached = self._park_cache.get((round(gap.center, 1), side))
            if cached is None:
                return
            lp = LaneParking()
            passing = boundaries["upper"] if side == "lower" else boundaries["lower"]
            for name in ("meet", "cut", "back"):
                spot = getattr(cached, name)
                if spot is None:
                    continue
                pose = np.array([[spot.pose.x, spot.pose.y, spot.pose.theta]])
                ok, margins = _feasible_spots(pose, quads, passing, side,
                                              self.road, self.shape,
                                              self.cfg.parked_clearance)
                if ok[0]:
                    setattr(lp, name, ParkingSpot(spot.pose, spot.anchor,
                                                  float(margins[0])))
            out[side] = lp
        gap.parking.update(out)

    def active_mover(self, obs: Observation):
        """The nearest oncoming vehicle the ego still has to meet."""
        best = None
        for pose, speed in obs.movers:
            if pose.x > obs.ego.x + 0.5 * self.shape.length:
                if best is None or pose.x < best[0].x:
                    best = (pose, speed)
        return best

    def plan(self, obs: Observation) -> PlanResult:
        import time as _time
        t0 = _time.perf_counter()
        cfg = self.cfg
        boundaries = {
            "lower": build_boundary("lower", obs.quads, self.shape, self.road,
                                    cfg.sample_step),
            "upper": build_boundary("upper", obs.quads, self.shape, self.road,
                                    cfg.sample_step),
        }
        from .gaps import (classify_road, ensure_parking, find_gaps,
                           forecast_meeting, select_gap)
        mover = self.active_mover(obs)
        if mover is None:
            traj = self._plan_advance(obs, boundaries, None, None)
            self._record(None, "advance")
            return PlanResult(traj, None, None, None, [traj], None,
                              _time.perf_counter() - t0)

        m_pose, m_speed = mover
        partition = classify_road(boundaries["lower"], boundaries["upper"],
                                  self.shape.length)
        gaps = find_gaps(partition, boundaries["lower"], boundaries["upper"],
                         obs.quads, self.road, self.shape, cfg,
                         probe_window=(obs.ego.x - 1.2, m_pose.x + 0.6),
                         probe_cache=self._probe_cache)
        # the forecast reflects driving intent: a vehicle waiting in a gap
        # still plans as if cruising, otherwise the meeting point collapses
        # onto it and the situation oscillates
        forecast = forecast_meeting(obs.ego.x, self.shape.v_max,
                                    m_pose.x, max(m_speed, 0.0), gaps)
        if cfg.gap_policy == "nearest":
            reachable = [g for g in gaps if g.x_end > obs.ego.x - 0.5] or gaps
            gap = reachable[0] if reachable else None
            cost = None
        else:
            gap, cost = select_gap(gaps, forecast, self.history,
                                   cfg.gap_weights, self.road, self.shape,
                                   obs.ego.x)
        if gap is None:
            self._record(None, "stop")
            return PlanResult(stop_trajectory(obs.ego, self.shape), None, None,
                              forecast, [], partition, _time.perf_counter() - t0)
        hb = boundaries["upper"]
        lane_path = (hb.x[::-1].copy(), hb.base.y[::-1].copy(),
                     (hb.base.tangent[::-1] + math.pi).copy())
        prediction = MovingPrediction(m_pose, max(m_speed, 0.0), self.shape,
                                      lane_path)
        corridor = _corridor(boundaries, obs.quads, self.road, self.shape)

        chosen = None
        optimized = []
        prev_label = self.decisions[-1][1] if self.decisions else None
        if forecast.situation == "in_gap":
            # no conflict expected: keep advancing if the prediction clears;
            # leaving an engaged maneuver needs a few consistent ticks
            advance = self._plan_advance(obs, boundaries, prediction, corridor)
            advance = verify_candidate(advance, advance, obs.quads, boundaries,
                                       self.road, self.shape, prediction, cfg)
            if advance.feasible:
                engaged = prev_label not in (None, "advance", "stop")
                if engaged:
                    self._ingap_votes = getattr(self, "_ingap_votes", 0) + 1
                    if self._ingap_votes >= 3:
                        chosen = advance
                else:
                    chosen = advance
        else:
            self._ingap_votes = 0

        if chosen is None:
            self._seed_parking(gap, boundaries, obs.quads)
            ensure_parking(gap, boundaries["lower"], boundaries["upper"],
                           obs.quads, self.road, self.shape, cfg)
            for side in ("lower", "upper"):
                if side in gap.parking:
                    self._park_cache[(round(gap.center, 1), side)] = gap.parking[side]
            seeds = initialize_candidates(obs.ego, gap, boundaries, self.road,
                                          self.shape, cfg)
            hold = (m_pose.x - obs.ego.x) / max(m_speed, 0.05) + 6.0
            hold = min(hold, 60.0)
            for seed in seeds:
                key = (seed.strategy.label, round(gap.center, 1))
                warm = self._warm.get(key) if cfg.warm_start else None
                cand = optimize_trajectory(seed, boundaries, obs.quads, self.road,
                                           self.shape, cfg, prediction, hold,
                                           warm, corridor)
                cand = verify_candidate(cand, seed, obs.quads, boundaries, self.road,
                                        self.shape, prediction, cfg, hold)
                self._warm[key] = (cand.points.copy(), cand.headings.copy())
                optimized.append(cand)
            time_to_conflict = (m_pose.x - obs.ego.x) / max(m_speed + obs.ego_speed, 0.05)
            if cfg.strategy_policy == "meet_only":
                chosen = next((c for c in optimized
                               if c.feasible and c.strategy.action == "meet"), None)
            else:
                chosen = hierarchical_select(optimized, True, m_pose.y, gap,
                                             time_to_conflict, self.shape, cfg)
            chosen = self._debounce(chosen, optimized)

        if chosen is None:
            # nothing maneuverable: advance if it verifies, else hold still
            fallback = self._plan_advance(obs, boundaries, prediction, corridor)
            fallback = verify_candidate(fallback, fallback, obs.quads, boundaries,
                                        self.road, self.shape, prediction, cfg)
            if fallback.feasible:
                chosen = fallback
        if chosen is None:
            chosen = stop_trajectory(obs.ego, self.shape)
            label = "stop"
        else:
            label = chosen.strategy.label
        self._record(gap.interval(), label)
        return PlanResult(chosen, gap, cost, forecast, optimized, partition,
                          _time.perf_counter() - t0)

    def _debounce(self, chosen, optimized):
        """Keep the previous maneuver while it stays feasible.

        A different preferred maneuver must win on a few consecutive ticks
        before the switch is committed, which suppresses decision flicker
        from observation noise.
        """
        if chosen is None:
            self._switch_votes = 0
            return None
        prev = self.decisions[-1][1] if self.decisions else None
        if prev is None or prev == chosen.strategy.label:
            self._switch_votes = 0
            return chosen
        held = next((c for c in optimized
                     if c.feasible and c.strategy.label == prev), None)
        if held is None:
            self._switch_votes = 0
            return chosen
        self._switch_votes = getattr(self, "_switch_votes", 0) + 1
        if self._switch_votes >= 3:
            self._switch_votes = 0
            return chosen
        return held

    def _record(self, interval, label):
        self.history.append(interval)
        self.decisions.append((interval, label))
        if len(self.history) > 50:
            self.history = self.history[-50:]
            self.decisions = self.decisions[-50:]
