"""Meeting-gap identification, maneuver pockets, and optimal-gap selection.

The road is partitioned by comparing the two directions' swept model curves:
where the keep-right envelope rises above the oncoming envelope the two
flows cannot pass each other. Meeting segments become normal gaps; long
conflict segments are probed for parked poses (nose-in or reversed-in) that
still leave the other direction's envelope passable, yielding maneuver-only
gaps. The optimal gap under a constant-speed meeting forecast minimizes a
four-item weighted cost with a hysteresis factor on the incumbent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import GapCostWeights, PlannerConfig
from .geometry import batch_footprints, batch_overlap_quad, batch_top_envelope
from .scene import ExpandedBoundary, Pose, RoadModel, VehicleShape

MEETING = "meeting"
NON_MEETING = "non_meeting"


@dataclass(frozen=True)
class RoadSegment:
    x_start: float
    x_end: float
    label: str

    @property
    def length(self) -> float:
        return self.x_end - self.x_start


@dataclass
class RoadPartition:
    segments: list[RoadSegment]
    step: float

    def label_at(self, x: float) -> str:
        for s in self.segments:
            if s.x_start <= x <= s.x_end:
                return s.label
        return MEETING

    def labels_on(self, x: np.ndarray) -> np.ndarray:
        out = np.full(len(x), MEETING, dtype=object)
        for s in self.segments:
            m = (x >= s.x_start) & (x <= s.x_end)
            out[m] = s.label
        return out


@dataclass
class ParkingSpot:
    """A concrete parked pose that keeps the other direction passable."""

    pose: Pose
    anchor: tuple[float, float] | None
    margin: float                      # worst-case room left for the passer


@dataclass
class LaneParking:
    meet: ParkingSpot | None = None
    cut: ParkingSpot | None = None
    back: ParkingSpot | None = None

    def strategies(self) -> set[str]:
        return {name for name in ("meet", "cut", "back")
                if getattr(self, name) is not None}


@dataclass
class MeetingGap:
    gid: int
    x_start: float
    x_end: float
    kind: str                          # "normal" or "maneuver_only"
    lower_room: float = 0.0            # free area on the keep-right half
    upper_room: float = 0.0
    parking: dict = field(default_factory=dict)   # side -> LaneParking

    @property
    def length(self) -> float:
        return self.x_end - self.x_start

    @property
    def center(self) -> float:
        return 0.5 * (self.x_start + self.x_end)

    def interval(self) -> tuple[float, float]:
        return (self.x_start, self.x_end)

    def on_ego_lane(self) -> bool:
        return self.lower_room >= self.upper_room


@dataclass(frozen=True)
class GapCost:
    c_len: float
    c_times: float
    c_dis: float
    c_lane: float
    alpha: float
    total: float


@dataclass(frozen=True)
class MeetingForecast:
    meet_x: float
    situation: str                     # in_gap | between_gaps | behind_ego_gap | beyond_far_gap
    window: tuple[int, ...]            # gap ids, nearest first
    target_gids: tuple[int, ...]       # candidate gap ids for selection
    stalemate: bool = False


def same_gap(a: tuple[float, float], b: tuple[float, float]) -> bool:
    """Interval identity across replanning ticks (overlap of the shorter)."""
    lo = max(a[0], b[0])
    hi = min(a[1], b[1])
    if hi <= lo:
        return False
    shorter = min(a[1] - a[0], b[1] - b[0])
    return hi - lo >= 0.5 * max(shorter, 1e-6)


# ---------------------------------------------------------------------------
# partition


def _perimeter_points(quad: np.ndarray, step: float = 0.01) -> np.ndarray:
    pts = []
    for i in range(len(quad)):
        a, b = quad[i], quad[(i + 1) % len(quad)]
        n = max(2, int(math.ceil(np.hypot(*(b - a)) / step)) + 1)
        pts.append(np.linspace(a, b, n)[:-1])
    return np.concatenate(pts)


def _exclusion_bands(quads, x: np.ndarray, half_width: float):
    """Per column, the spine ordinates within half_width of each quad.

    The dilation of a convex quad by a disc is convex, so each quad excludes
    a single interval per column.
    """
    bands = []
    for quad in quads:
        per = _perimeter_points(quad)
        dx = per[:, 0, None] - x[None, :]
        with np.errstate(invalid="ignore"):
            s = np.sqrt(np.maximum(half_width ** 2 - dx ** 2, 0.0))
        reach = np.abs(dx) <= half_width
        lo = np.where(reach, per[:, 1, None] - s, np.inf).min(axis=0)
        hi = np.where(reach, per[:, 1, None] + s, -np.inf).max(axis=0)
        bands.append((lo, hi))
    return bands


_SPINE_CACHE: dict = {}


def column_spines(quads, road: RoadModel, shape: VehicleShape,
                  x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Lowest and highest feasible spine ordinates per column.

    A spine keeps half a body width from every parked vehicle and from the
    road edges. Columns with no feasible spine return crossed limits.
    Results are memoized on the identity of the quad list and grid.
    """
    key = (tuple(id(q) for q in quads), id(x), round(shape.width, 9))
    hit = _SPINE_CACHE.get(key)
    if hit is not None:
        return hit
    w2 = 0.5 * shape.width
    ya = np.full(len(x), road.y_low + w2)
    ym = np.full(len(x), road.y_high - w2)
    bands = _exclusion_bands(quads, x, w2)
    for _ in range(max(1, len(bands))):
        for lo, hi in bands:
            ya = np.where((ya > lo) & (ya < hi), hi, ya)
            ym = np.where((ym > lo) & (ym < hi), lo, ym)
    if len(_SPINE_CACHE) > 8:
        _SPINE_CACHE.clear()
    _SPINE_CACHE[key] = (ya, ym)
    return ya, ym


def classify_road(ego_boundary: ExpandedBoundary, onc_boundary: ExpandedBoundary,
                  min_run: float) -> RoadPartition:
    """Partition the span into meeting gaps and conflict areas.

    A column belongs to a gap when two bodies fit abreast there: the lowest
    and highest feasible spines must be at least a body width apart, and
    neither direction's boundary may be blocked. Meeting runs shorter than
    ``min_run`` are folded into their conflicting neighbors.
    """
    x = ego_boundary.x
    step = x[1] - x[0]
    width = 2.0 * (abs(ego_boundary.base.hug_y) + 0.5 * ego_boundary.shape.width)
    road = RoadModel(width, float(x[0]), float(x[-1]))
    ya, ym = column_spines(ego_boundary.quads or [], road, ego_boundary.shape, x)
    conflict = (ym - ya) < ego_boundary.shape.width - 1e-9
    conflict |= ya > road.y_high - 0.5 * ego_boundary.shape.width + 1e-9
    conflict |= ym < road.y_low + 0.5 * ego_boundary.shape.width - 1e-9
    conflict |= ego_boundary.blocked | onc_boundary.blocked
    labels = np.where(conflict, NON_MEETING, MEETING).astype(object)

    # fold short meeting slivers
    i = 0
    n = len(labels)
    while i < n:
        j = i
        while j < n and labels[j] == labels[i]:
            j += 1
        if labels[i] == MEETING and (j - i) * step < min_run and not (i == 0 and j == n):
            labels[i:j] = NON_MEETING
        i = j

    segments = []
    i = 0
    while i < n:
        j = i
        while j < n and labels[j] == labels[i]:
            j += 1
        segments.append(RoadSegment(float(x[i]), float(x[min(j, n - 1)]), str(labels[i])))
        i = j
    return RoadPartition(segments, float(step))


# ---------------------------------------------------------------------------
# parked-pose search


def _passable_mask(corners: np.ndarray, boundary: ExpandedBoundary,
                   side: str, eps: float) -> np.ndarray:
    """True where a parked body leaves room for the oncoming vehicle to pass.

    ``side`` is the lane the body is parked on. Parked on "lower", the
    passer squeezes by above, along the upper boundary's own-direction
    envelope; parked on "upper", it passes below, along the lower boundary's
    against-direction envelope (the passer always travels toward -x).
    """
    x = boundary.x
    step = x[1] - x[0]
    if side == "lower":
        model = boundary.model_y            # upper boundary, its own -x travel
        cols, tops = batch_top_envelope(corners, x, float(x[0]), step)
    else:
        mirrored = corners.copy()
        mirrored[..., 1] = -mirrored[..., 1]
        model = -boundary.model_against()   # lower boundary traversed toward -x
        cols, tops = batch_top_envelope(mirrored, x, float(x[0]), step)
    covered = np.isfinite(tops)
    room = np.where(covered, model[cols] - tops, np.inf)
    bad_col = boundary.blocked[cols] & covered
    ok = (room.min(axis=1) >= eps) & ~bad_col.any(axis=1)
    margins = np.where(ok, room.min(axis=1), -np.inf)
    return ok, margins


def _feasible_spots(poses: np.ndarray, quads: list[np.ndarray],
                    pass_boundary: ExpandedBoundary, park_side: str,
                    road: RoadModel, shape: VehicleShape,
                    clearance: float) -> tuple[np.ndarray, np.ndarray]:
    """Static feasibility of candidate parked poses plus passing margins."""
    corners = batch_footprints(poses, shape.length, shape.width)
    ok = np.ones(len(poses), dtype=bool)
    ok &= corners[..., 1].min(axis=1) >= road.y_low - 1e-9
    ok &= corners[..., 1].max(axis=1) <= road.y_high + 1e-9
    ok &= corners[..., 0].min(axis=1) >= road.x_min - 1e-9
    ok &= corners[..., 0].max(axis=1) <= road.x_max + 1e-9
    for q in quads:
        ok &= ~batch_overlap_quad(corners, q, margin=clearance)
    passable, margins = _passable_mask(corners, pass_boundary, park_side, clearance)
    ok &= passable
    return ok, margins


def _deepest_y(theta: float, side: str, road: RoadModel, shape: VehicleShape,
               clearance: float) -> float:
    """Rear-center ordinate that rests the body on the parked-side road edge."""
    L, W = shape.length, 0.5 * shape.width
    offs = [math.sin(theta) * lx + math.cos(theta) * ly
            for lx, ly in ((L, W), (0.0, W), (0.0, -W), (L, -W))]
    if side == "lower":
        return road.y_low + clearance - min(offs)
    return road.y_high - clearance - max(offs)


def _search_parked_pose(anchor, mode: str, side: str, x_range: tuple[float, float],
                        quads, pass_boundary, road, shape, cfg,
                        coarse: bool = False) -> ParkingSpot | None:
    """Grid search for a cut-in or backed-in parked pose near an anchor corner.

    Cut poses point into the parked-side edge (nose first); back poses point
    away from it (tail first). Returns the feasible pose with the widest
    passing margin.
    """
    clearance = cfg.parked_clearance
    angles = np.array([0.3, 0.7, 1.05]) if coarse \
        else np.array([0.25, 0.45, 0.65, 0.85, 1.05])
    if side == "lower":
        angles = -angles if mode == "cut" else angles
    else:
        angles = angles if mode == "cut" else -angles
    xs = np.arange(x_range[0], x_range[1] + 1e-9, 0.09 if coarse else 0.05)
    if len(xs) == 0:
        return None
    depths = (0.0, 0.04) if coarse else (0.0, 0.02, 0.05)
    poses = []
    for th in angles:
        y0 = _deepest_y(th, side, road, shape, clearance)
        for dy in depths:
            yy = y0 + dy if side == "lower" else y0 - dy
            for xx in xs:
                poses.append((xx, yy, th))
    poses = np.array(poses)
    ok, margins = _feasible_spots(poses, quads, pass_boundary, side, road,
                                  shape, clearance)
    if not ok.any():
        return None
    best = int(np.argmax(np.where(ok, margins, -np.inf)))
    p = poses[best]
    return ParkingSpot(Pose(float(p[0]), float(p[1]), float(p[2])),
                       anchor, float(margins[best]))


def _meet_spot(x_lo: float, x_hi: float, side: str, own_boundary: ExpandedBoundary,
               pass_boundary: ExpandedBoundary, quads, road, shape,
               cfg) -> ParkingSpot | None:
    """Farthest stop along the own-lane boundary that stays passable."""
    x = own_boundary.x
    m = (x >= x_lo) & (x <= x_hi) & ~own_boundary.pose_blocked
    idx = np.nonzero(m)[0][::5]
    if len(idx) == 0:
        return None
    poses = np.stack([x[idx], own_boundary.base.y[idx],
                      own_boundary.base.tangent[idx]], axis=1)
    ok, margins = _feasible_spots(poses, quads, pass_boundary, side, road,
                                  shape, cfg.parked_clearance)
    if not ok.any():
        return None
    best = int(np.nonzero(ok)[0].max())
    p = poses[best]
    return ParkingSpot(Pose(float(p[0]), float(p[1]), float(p[2])),
                       None, float(margins[best]))


def _lane_anchors(boundary: ExpandedBoundary, x_lo: float, x_hi: float):
    """Nearest rounded corners flanking an interval on one lane."""
    left, right = None, None
    for cp in boundary.base.active_corners or []:
        cx = cp.position[0]
        if cx <= x_lo + 0.15 and (left is None or cx > left[0]):
            left = cp.position
        if cx >= x_hi - 0.15 and (right is None or cx < right[0]):
            right = cp.position
    if boundary.base.side == "upper" and left is not None:
        left = (left[0], -left[1])     # active corners are kept mirrored
    if boundary.base.side == "upper" and right is not None:
        right = (right[0], -right[1])
    return left, right


def lane_parking(x_lo: float, x_hi: float, side: str,
                 ego_lower: ExpandedBoundary, ego_upper: ExpandedBoundary,
                 quads, road: RoadModel, shape: VehicleShape,
                 cfg: PlannerConfig, coarse: bool = False) -> LaneParking:
    """All parking options on one lane within an interval.

    Parked on "lower", the other direction must clear the upper envelope;
    parked on "upper", the lower one.
    """
    own = ego_lower if side == "lower" else ego_upper
    passing = ego_upper if side == "lower" else ego_lower
    out = LaneParking()
    out.meet = _meet_spot(x_lo, x_hi, side, own, passing, quads, road, shape, cfg)
    left, right = _lane_anchors(own, x_lo, x_hi)
    if left is not None:
        out.cut = _search_parked_pose(
            left, "cut", side, (max(left[0] - 0.05, road.x_min), min(left[0] + 0.55, x_hi)),
            quads, passing, road, shape, cfg, coarse)
    if right is not None:
        lo = max(right[0] - 0.6 - shape.length, road.x_min)
        out.back = _search_parked_pose(
            right, "back", side, (lo, max(lo, right[0] - shape.length * 0.7)),
            quads, passing, road, shape, cfg, coarse)
    return out


# ---------------------------------------------------------------------------
# gaps


def _side_room(gap_lo: float, gap_hi: float, ego_lower: ExpandedBoundary,
               ego_upper: ExpandedBoundary) -> tuple[float, float]:
    x = ego_lower.x
    m = (x >= gap_lo) & (x <= gap_hi)
    step = x[1] - x[0]
    lower = float(np.maximum(0.0, -ego_lower.model_y[m]).sum() * step)
    upper = float(np.maximum(0.0, ego_upper.model_y[m]).sum() * step)
    return lower, upper


def find_gaps(partition: RoadPartition, ego_lower: ExpandedBoundary,
              ego_upper: ExpandedBoundary, quads, road: RoadModel,
              shape: VehicleShape, cfg: PlannerConfig,
              with_parking: bool = True,
              probe_window: tuple[float, float] | None = None,
              probe_cache: dict | None = None) -> list[MeetingGap]:
    """Meeting gaps plus maneuver-only pockets inside long conflict areas.

    ``probe_window`` limits the expensive parked-pose probing of conflict
    areas to the stretch that currently matters; ``probe_cache`` remembers
    probe outcomes across replanning ticks (keyed on the rounded segment).
    """
    gaps: list[MeetingGap] = []
    for seg in partition.segments:
        probe = probe_window is None or \
            (seg.x_end > probe_window[0] and seg.x_start < probe_window[1])
        if seg.label == MEETING:
            lo, up = _side_room(seg.x_start, seg.x_end, ego_lower, ego_upper)
            gaps.append(MeetingGap(0, seg.x_start, seg.x_end, "normal", lo, up))
        elif seg.length >= shape.length and with_parking and probe:
            key = (round(seg.x_start, 1), round(seg.x_end, 1))
            if probe_cache is not None and key in probe_cache:
                found = probe_cache[key]
            else:
                found = {}
                for side in ("lower", "upper"):
                    lp = lane_parking(seg.x_start, seg.x_end, side, ego_lower,
                                      ego_upper, quads, road, shape, cfg,
                                      coarse=True)
                    lp.meet = None      # by definition no plain stop fits here
                    if lp.strategies():
                        found[side] = lp
                if probe_cache is not None:
                    if len(probe_cache) > 32:
                        probe_cache.clear()
                    probe_cache[key] = found
            if found:
                spots = [s for lp in found.values()
                         for s in (lp.cut, lp.back) if s is not None]
                x_lo = min(s.pose.x for s in spots)
                x_hi = max(s.pose.x + shape.length for s in spots)
                lo, up = _side_room(seg.x_start, seg.x_end, ego_lower, ego_upper)
                gap = MeetingGap(0, x_lo, x_hi, "maneuver_only", lo, up, found)
                gaps.append(gap)
    gaps.sort(key=lambda g: g.x_start)
    for i, g in enumerate(gaps):
        g.gid = i
    return gaps


def ensure_parking(gap: MeetingGap, ego_lower, ego_upper, quads, road, shape,
                   cfg) -> None:
    """Fill parking options for a normal gap on first use."""
    if gap.parking:
        return
    for side in ("lower", "upper"):
        gap.parking[side] = lane_parking(gap.x_start, gap.x_end, side, ego_lower,
                                         ego_upper, quads, road, shape, cfg)


# ---------------------------------------------------------------------------
# forecast and selection


def forecast_meeting(ego_x: float, ego_speed: float, onc_x: float,
                     onc_speed: float, gaps: list[MeetingGap]) -> MeetingForecast:
    """Constant-speed meeting abscissa and its relation to the gap window."""
    ego_speed = max(ego_speed, 0.0)
    onc_speed = max(onc_speed, 0.0)
    stalemate = ego_speed < 1e-6 and onc_speed < 1e-6
    if stalemate:
        meet_x = 0.5 * (ego_x + onc_x)
    else:
        meet_x = ego_x + ego_speed * (onc_x - ego_x) / (ego_speed + onc_speed)

    behind = [g for g in gaps if g.x_start <= ego_x]
    start = max(0, (behind[-1].gid if behind else 0))
    window = [g for g in gaps[start:start + 3]]
    if not window:
        return MeetingForecast(meet_x, "beyond_far_gap", (), (), stalemate)
    wids = tuple(g.gid for g in window)

    for g in window:
        if g.x_start <= meet_x <= g.x_end:
            return MeetingForecast(meet_x, "in_gap", wids, (g.gid,), stalemate)
    if meet_x > window[-1].x_end:
        return MeetingForecast(meet_x, "beyond_far_gap", wids,
                               (window[-1].gid,), stalemate)
    if meet_x < window[0].x_start:
        return MeetingForecast(meet_x, "behind_ego_gap", wids,
                               (window[0].gid,), stalemate)
    for a, b in zip(window, window[1:]):
        if a.x_end < meet_x < b.x_start:
            situation = "behind_ego_gap" if a.x_start <= ego_x else "between_gaps"
            return MeetingForecast(meet_x, situation, wids,
                                   (a.gid, b.gid), stalemate)
    return MeetingForecast(meet_x, "in_gap", wids, (wids[0],), stalemate)


def gap_cost(gap: MeetingGap, forecast: MeetingForecast, history,
             weights: GapCostWeights, road: RoadModel,
             shape: VehicleShape) -> GapCost:
    """Four-item weighted score; lower is better."""
    c_len = gap.length / shape.length
    c_times = float(sum(1 for h in history[-10:]
                        if h is not None and same_gap(h, gap.interval())))
    c_dis = abs(forecast.meet_x - gap.center) / road.length
    c_lane = 1.0 if gap.on_ego_lane() else 0.0
    alpha = weights.hysteresis_alpha if history and history[-1] is not None \
        and same_gap(history[-1], gap.interval()) else 1.0
    total = alpha * (-weights.w_len * c_len - weights.w_times * c_times
                     + weights.w_dis * c_dis - weights.w_lane * c_lane)
    return GapCost(c_len, c_times, c_dis, c_lane, alpha, total)


def select_gap(gaps: list[MeetingGap], forecast: MeetingForecast, history,
               weights: GapCostWeights, road: RoadModel, shape: VehicleShape,
               ego_x: float) -> tuple[MeetingGap | None, GapCost | None]:
    """The four-situation selection rule with reverse-discount and hysteresis."""
    by_id = {g.gid: g for g in gaps}
    cands = [by_id[g] for g in forecast.target_gids if g in by_id]
    if not cands:
        return None, None
    if forecast.stalemate and history and history[-1] is not None:
        for g in gaps:
            if same_gap(history[-1], g.interval()):
                return g, gap_cost(g, forecast, history, weights, road, shape)
    if forecast.situation in ("in_gap", "beyond_far_gap") or len(cands) == 1:
        g = cands[0]
        return g, gap_cost(g, forecast, history, weights, road, shape)

    best, best_cost, best_val = None, None, math.inf
    for g in cands:
        cost = gap_cost(g, forecast, history, weights, road, shape)
        val = cost.total
        if forecast.situation == "behind_ego_gap" and g.x_end <= ego_x:
            # reaching this gap means reversing; bias toward it for safety
            d = weights.reverse_discount
            val = val * d if val >= 0 else val / d
        if val < best_val - 1e-12:
            best, best_cost, best_val = g, cost, val
    return best, best_cost
