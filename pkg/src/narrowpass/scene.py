"""Expanded boundary construction for a two-way road with parked vehicles.

One travel direction hugs one road edge. Its rear-center boundary is the
lowest (resp. highest) curve the rear-axle center can follow while keeping
half a vehicle width of clearance from the hugged edge and from every parked
vehicle, subject to the minimum turning radius. Parked vehicles are rounded
with triples of tangent circular arcs anchored at their interior-facing
corners; adjacent roundings are merged with common-tangent straights (same
vehicle) or with a tangent valley arc (adjacent vehicles). Sweeping the
vehicle body along the boundary yields the model curve: the interior limit
of the space that direction's traffic occupies.

Everything is built for the lower (keep-right) side; the upper side is
produced by mirroring the scene about the centerline.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import footprint, points_to_polygon_distance, wrap_angle


class NotDetourable(ValueError):
    """Corner faces the hugged road edge; no rounding is defined for it."""


class GapTooDeep(ValueError):
    """Corner cannot be rounded with the minimum turning radius inside the road."""


class NoFeasibleConnector(ValueError):
    """No radius-R valley arc joins two adjacent roundings inside the road."""


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class RoadModel:
    width: float
    x_min: float = 0.0
    x_max: float = 7.0

    def __post_init__(self):
        if self.width <= 0 or self.x_min >= self.x_max:
            raise ValueError("degenerate road")

    @property
    def y_low(self) -> float:
        return -0.5 * self.width

    @property
    def y_high(self) -> float:
        return 0.5 * self.width

    @property
    def length(self) -> float:
        return self.x_max - self.x_min


@dataclass(frozen=True)
class VehicleShape:
    length: float
    width: float
    min_turn_radius: float
    v_max: float

    def __post_init__(self):
        if not (self.length > self.width > 0):
            raise ValueError("need length > width > 0")
        if self.min_turn_radius <= 0.5 * self.width or self.v_max <= 0:
            raise ValueError("bad turn radius or speed")


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.theta)):
            raise ValueError("non-finite pose")


@dataclass(frozen=True)
class StationaryVehicle:
    vid: str
    corners: np.ndarray          # (4, 2), counterclockwise
    heading: float
    side: str                    # "lower" or "upper": which edge it hugs

    @staticmethod
    def from_center(vid: str, cx: float, cy: float, length: float, width: float,
                    heading: float) -> "StationaryVehicle":
        from .geometry import rect_from_center
        corners = rect_from_center(cx, cy, length, width, heading)
        side = "lower" if cy < 0 else "upper"
        return StationaryVehicle(vid, corners, wrap_angle(heading), side)

    @property
    def center(self) -> np.ndarray:
        return self.corners.mean(axis=0)


@dataclass(frozen=True)
class CornerPoint:
    position: tuple[float, float]
    theta3: float
    vehicle_id: str = ""


# profile pieces; each is a single-valued y(x) over [x0, x1]


@dataclass(frozen=True)
class ArcPiece:
    x0: float
    x1: float
    cx: float
    cy: float
    r: float
    sign: int        # +1: curve above center (crest), -1: curve below (dip)
    kind: str        # "enter", "crest", "leave", "valley"

    def y_at(self, x):
        dx = np.clip(np.asarray(x, dtype=float) - self.cx, -self.r, self.r)
        return self.cy + self.sign * np.sqrt(np.maximum(self.r ** 2 - dx ** 2, 0.0))

    def dydx_at(self, x):
        dx = np.clip(np.asarray(x, dtype=float) - self.cx, -self.r + 1e-12, self.r - 1e-12)
        return -self.sign * dx / np.sqrt(np.maximum(self.r ** 2 - dx ** 2, 1e-18))

    @property
    def turn(self) -> str:
        # traveling toward +x on the lower side
        return "right" if self.sign > 0 else "left"


@dataclass(frozen=True)
class LinePiece:
    x0: float
    x1: float
    ya: float        # y at x0
    slope: float
    kind: str        # "hug" or "ridge"

    def y_at(self, x):
        return self.ya + self.slope * (np.asarray(x, dtype=float) - self.x0)

    def dydx_at(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.slope)


@dataclass
class DetourProfile:
    side: str
    pieces: list
    x: np.ndarray
    y: np.ndarray
    tangent: np.ndarray          # heading of the curve, radians
    blocked: np.ndarray          # bool mask per sample
    hug_y: float                 # ordinate of the boundary-hugging straight
    active_corners: list = None  # CornerPoints whose rounding shapes the curve
                                 # (upper-side values are in the mirrored frame)

    def y_at(self, x):
        return np.interp(np.asarray(x, dtype=float), self.x, self.y)

    def tangent_at(self, x):
        return np.interp(np.asarray(x, dtype=float), self.x, self.tangent)


@dataclass
class ExpandedBoundary:
    base: DetourProfile
    model_y: np.ndarray          # swept-body interior envelope, this side's
                                 # own travel direction (lower: +x, upper: -x)
    shape: VehicleShape
    pose_blocked: np.ndarray = None  # blocked dilated by one body length:
                                     # rear-center poses that cannot be used
    model_y_against: np.ndarray = None  # envelope for travel against the
                                        # side's own direction
    quads: list = None           # parked-vehicle outlines the build saw

    @property
    def x(self) -> np.ndarray:
        return self.base.x

    @property
    def blocked(self) -> np.ndarray:
        return self.base.blocked

    def model_at(self, x):
        return np.interp(np.asarray(x, dtype=float), self.base.x, self.model_y)

    def model_against(self) -> np.ndarray:
        """Envelope for travel against this side's own direction (lazy)."""
        if self.model_y_against is None:
            travel = +1 if self.base.side == "lower" else -1
            toward = +1 if self.base.side == "lower" else -1
            top = sweep_model_curve(self.base.x, self.base.y, self.base.tangent,
                                    self.shape, +1, -travel)
            bottom = sweep_model_curve(self.base.x, self.base.y, self.base.tangent,
                                       self.shape, -1, -travel)
            self.model_y_against = top if toward > 0 else bottom
        return self.model_y_against

    def blocked_intervals(self) -> list[tuple[float, float]]:
        return _mask_runs(self.base.x, self.base.blocked)


def _mask_runs(x: np.ndarray, mask: np.ndarray) -> list[tuple[float, float]]:
    runs = []
    in_run = False
    start = 0.0
    for xi, m in zip(x, mask):
        if m and not in_run:
            in_run, start = True, xi
        elif not m and in_run:
            in_run = False
            runs.append((start, xi))
    if in_run:
        runs.append((start, float(x[-1])))
    return runs


# ---------------------------------------------------------------------------
# corner selection


def _upper_hull(corners: np.ndarray) -> list[int]:
    """Indices of the quad's upper-hull corners, left to right."""
    order = sorted(range(len(corners)), key=lambda i: (corners[i][0], -corners[i][1]))
    hull: list[int] = []
    for i in order:
        while len(hull) >= 2:
            a, b = corners[hull[-2]], corners[hull[-1]]
            c = corners[i]
            cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
            if cross >= -1e-12:     # b does not turn right: not on the upper hull
                hull.pop()
            else:
                break
        hull.append(i)
    # a vertical right column contributes only its top corner
    while len(hull) >= 2 and corners[hull[-1]][0] - corners[hull[-2]][0] < 1e-12:
        hull.pop()
    return hull


def interior_corners(corners: np.ndarray, road: RoadModel, shape: VehicleShape,
                     vehicle_id: str = "") -> list[CornerPoint]:
    """Corner points a lower-side boundary must round, with their pass angles.

    The corner nearest the centerline gets angle 0 (the passing body runs
    parallel to the road there); every other upper-hull corner is passed
    parallel to the parked body, so it gets the direction of its longer
    incident edge, oriented toward +x. End corners closer than W/2 to the
    hugged edge are dropped.
    """
    hug = road.y_low + 0.5 * shape.width
    hull = _upper_hull(corners)
    pts = [corners[i] for i in hull]
    apex = max(range(len(pts)), key=lambda k: pts[k][1])
    n = len(corners)
    out: list[CornerPoint] = []
    for k, qi in enumerate(hull):
        p = corners[qi]
        if k == apex and len(pts) >= 3:
            th3 = 0.0
        else:
            e_in = p - corners[(qi - 1) % n]
            e_out = corners[(qi + 1) % n] - p
            e = e_in if np.hypot(*e_in) >= np.hypot(*e_out) else e_out
            th3 = math.atan2(e[1], e[0])
            if abs(th3) > 0.5 * math.pi:
                th3 = wrap_angle(th3 + math.pi)
        if k != apex and p[1] < hug:
            continue
        out.append(CornerPoint((float(p[0]), float(p[1])), th3, vehicle_id))
    return out


def corner_theta3(vehicle: StationaryVehicle, corner_index: int, road: RoadModel,
                  shape: VehicleShape) -> float:
    """Rounding orientation for one corner of a parked vehicle.

    The relevant side is the one the vehicle hugs: its interior-facing
    corners are the ones the passing traffic sees. Angles are reported in
    the frame of the boundary that rounds the vehicle (the upper side is
    the mirror image of the lower one).
    """
    corners = vehicle.corners
    if vehicle.side == "upper":
        corners = corners * np.array([1.0, -1.0])   # indices preserved
    target = corners[corner_index]
    for cp in interior_corners(corners, road, shape, vehicle.vid):
        if abs(cp.position[0] - target[0]) < 1e-9 and abs(cp.position[1] - target[1]) < 1e-9:
            return cp.theta3
    raise NotDetourable(f"corner {corner_index} of {vehicle.vid!r} faces the road edge")


def _mirror_quad(corners: np.ndarray) -> np.ndarray:
    m = corners.copy()
    m[:, 1] = -m[:, 1]
    return m[::-1].copy()       # keep counterclockwise order


# ---------------------------------------------------------------------------
# single-corner rounding


@dataclass(frozen=True)
class CornerRounding:
    """Solved rounding of one corner: three tangent arcs and their endpoints."""

    corner: CornerPoint
    o3: tuple[float, float]      # crest circle center
    o_y1: float                  # enter/leave circle center height
    theta: float                 # sweep of the enter turn
    y2: float                    # switch ordinate
    x2_minus: float
    x2_plus: float
    x1_minus: float
    x1_plus: float


def round_corner(corner: CornerPoint, shape: VehicleShape, road: RoadModel) -> CornerRounding:
    """Solve the three-arc rounding of one interior corner (lower side).

    The crest circle sits (R - W/2) from the corner so the body passes the
    corner at exactly W/2; the enter and leave circles sit at the hug height
    and must be externally tangent to the crest circle (center distance 2R).
    """
    W, R = shape.width, shape.min_turn_radius
    px, py = corner.position
    th3 = corner.theta3
    hug = road.y_low + 0.5 * W
    A = hug + R                                   # enter/leave center height
    B = py - (R - 0.5 * W) * math.cos(th3)        # crest center height
    ox3 = px + (R - 0.5 * W) * math.sin(th3)
    if abs(A - B) > 2.0 * R + 1e-12:
        raise GapTooDeep(
            f"corner at ({px:.3f}, {py:.3f}) cannot be rounded with R={R}")
    half = math.sqrt(max(4.0 * R * R - (A - B) ** 2, 0.0)) / 2.0
    theta = math.acos(max(-1.0, min(1.0, (A - B) / (2.0 * R))))
    y2 = 0.5 * (A + B)
    x2m, x2p = ox3 - half, ox3 + half
    x1m = x2m - R * math.sin(theta)
    x1p = x2p + R * math.sin(theta)
    return CornerRounding(corner, (ox3, B), A, theta, y2, x2m, x2p, x1m, x1p)


def rounding_arcs(r: CornerRounding, R: float) -> list[ArcPiece]:
    """The enter, crest, leave arcs of one standalone rounding."""
    return [
        ArcPiece(r.x1_minus, r.x2_minus, r.x1_minus, r.o_y1, R, -1, "enter"),
        ArcPiece(r.x2_minus, r.x2_plus, r.o3[0], r.o3[1], R, +1, "crest"),
        ArcPiece(r.x2_plus, r.x1_plus, r.x1_plus, r.o_y1, R, -1, "leave"),
    ]


# ---------------------------------------------------------------------------
# joins


def ridge_join(left: CornerRounding, right: CornerRounding, R: float):
    """Common-tangent straight between two crest circles of one vehicle.

    Both tangent points share the offset R*(-sin g, cos g) from their centers,
    where g is the slope angle of the center line, so the straight between
    them has slope g as well.
    """
    lx, ly = left.o3
    rx, ry = right.o3
    if rx - lx < 1e-12:
        return None
    g = math.atan2(ry - ly, rx - lx)
    if abs(g) >= 0.5 * math.pi - 1e-9:
        return None
    tx_l, ty_l = lx - R * math.sin(g), ly + R * math.cos(g)
    tx_r, ty_r = rx - R * math.sin(g), ry + R * math.cos(g)
    return (tx_l, ty_l), (tx_r, ty_r), g


def valley_join(left: CornerRounding, right: CornerRounding, R: float):
    """Tangent valley arc between crest circles of two adjacent vehicles.

    Its center is the upper intersection of the two radius-2R circles around
    the crest centers; the tangent points are the midpoints toward it.
    """
    o_l = np.array(left.o3)
    o_r = np.array(right.o3)
    d = float(np.hypot(*(o_r - o_l)))
    if d < 1e-12 or d > 4.0 * R:
        raise NoFeasibleConnector(
            f"no radius-{R} valley between crest centers {d:.3f} apart")
    mid = 0.5 * (o_l + o_r)
    h = math.sqrt(max(4.0 * R * R - (0.5 * d) ** 2, 0.0))
    perp = np.array([-(o_r - o_l)[1], (o_r - o_l)[0]]) / d
    o4 = mid + h * perp
    if perp[1] < 0:
        o4 = mid - h * perp
    k1 = 0.5 * (o_l + o4)
    k2 = 0.5 * (o_r + o4)
    if k2[0] - k1[0] < 1e-12:
        raise NoFeasibleConnector("valley tangent points out of order")
    return tuple(o4), tuple(k1), tuple(k2)


def valley_center_closed_form(left: CornerRounding, right: CornerRounding, R: float):
    """Closed-form angle from the left crest center to the valley center.

    Documented companion of the numeric two-circle solution; only defined
    when the radicand is nonnegative and the left center is not to the right
    of the valley center.
    """
    a = left.o3[0] - right.o3[0]
    b = left.o3[1] - right.o3[1]
    s = a * a + b * b
    rad = a * a * (s - (s / (4.0 * R)) ** 2)
    if rad < 0 or s < 1e-15:
        return None
    alpha = math.asin(max(-1.0, min(1.0, -b / (4.0 * R) + math.sqrt(rad) / s)))
    return (left.o3[0] + 2.0 * R * math.cos(alpha),
            left.o3[1] + 2.0 * R * math.sin(alpha))


def merge_vehicle_roundings(roundings: list[CornerRounding], shape: VehicleShape,
                            road: RoadModel) -> list:
    """Profile pieces rounding one vehicle: crests joined by tangent straights.

    Adjacent roundings whose turn extents overlap are joined at the common
    gradient; otherwise the profile returns to the hug line between them.
    """
    pieces, blocked, _ = _chain_pieces(
        roundings, [r.corner.vehicle_id for r in roundings], shape, road)
    return pieces, blocked


# ---------------------------------------------------------------------------
# chaining

_EPS = 1e-9


def _ridge_outcome(ra: CornerRounding, rb: CornerRounding, R: float):
    j = ridge_join(ra, rb, R)
    if j is None:
        return None
    (txl, tyl), (txr, tyr), g = j
    between = []
    if txr > txl + _EPS:
        between = [LinePiece(txl, txr, tyl, math.tan(g), "ridge")]
    return ("join", txl, txr, between)


def _compute_join(ra: CornerRounding, oa: str, rb: CornerRounding, ob: str,
                  R: float, hug: float, force_ridge: bool = False):
    """Smooth link between two crest circles, left to right.

    Returns ("join", end_x_on_ra, start_x_on_rb, pieces_between),
    ("separate", ...) when the turns do not overlap, or None when no smooth
    radius-R link exists.
    """
    if ra.x1_plus <= rb.x1_minus + _EPS:
        return ("separate", ra.x1_plus, rb.x1_minus, None)
    if oa == ob or force_ridge:
        return _ridge_outcome(ra, rb, R)
    try:
        o4, k1, k2 = valley_join(ra, rb, R)
        if o4[1] - R >= hug - 1e-6:
            return ("join", k1[0], k2[0],
                    [ArcPiece(k1[0], k2[0], o4[0], o4[1], R, -1, "valley")])
    except NoFeasibleConnector:
        pass
    return _ridge_outcome(ra, rb, R)


def _join_body_safe(ra: CornerRounding, rb: CornerRounding, outcome, quads,
                    shape: VehicleShape) -> bool:
    """Sweep the body over a candidate link and test it against given quads."""
    from .geometry import convex_overlap
    _, end_a, start_b, between = outcome
    R = shape.min_turn_radius
    test = [ArcPiece(min(ra.x2_minus, end_a), end_a, ra.o3[0], ra.o3[1], R, +1, "crest")]
    test += between
    test.append(ArcPiece(start_b, rb.x2_plus, rb.o3[0], rb.o3[1], R, +1, "crest"))
    for p in test:
        if p.x1 - p.x0 < _EPS:
            continue
        xs = np.linspace(p.x0, p.x1, max(3, int((p.x1 - p.x0) / 0.02)))
        ys = p.y_at(xs)
        ths = np.arctan(p.dydx_at(xs))
        for xi, yi, ti in zip(xs, ys, ths):
            body = footprint(xi, yi, ti, shape.length, shape.width)
            for q in quads:
                if convex_overlap(body, q, margin=-1e-6):
                    return False
    return True


def _chain_pieces(roundings: list[CornerRounding], owners: list[str],
                  shape: VehicleShape, road: RoadModel,
                  quads_by_owner: dict | None = None):
    """Assemble profile pieces from the crest circles of all roundings.

    Consecutive crests are linked by a tangent straight (same vehicle) or a
    tangent valley arc (adjacent vehicles); crests squeezed to an empty span
    by their neighbors are dropped, and the replacement link is lifted to the
    tangent straight when the swept body would clip the dropped corner's
    vehicle. Non-overlapping turns return to the boundary-hugging straight
    between them; spans with no smooth link are recorded as blocked.
    Returns (pieces, blocked_spans).
    """
    R = shape.min_turn_radius
    hug = road.y_low + 0.5 * shape.width
    pieces: list = []
    blocked: list[tuple[float, float]] = []
    if not roundings:
        return pieces, blocked, []
    quads_by_owner = quads_by_owner or {}

    idx = sorted(range(len(roundings)), key=lambda i: roundings[i].o3[0])
    roundings = [roundings[i] for i in idx]
    owners = [owners[i] for i in idx]

    # entries: [rounding, owner, crest_start_x, link] where link is None for a
    # chain head, "blocked" for a forced restart, or ("join", end_x_on_prev,
    # pieces_between)
    entries: list[list] = [[roundings[0], owners[0], roundings[0].x2_minus, None]]
    for r, ow in zip(roundings[1:], owners[1:]):
        outcome = None
        popped_quads: list = []
        force_ridge = False
        while entries:
            ra, oa, start_a, _ = entries[-1]
            outcome = _compute_join(ra, oa, r, ow, R, hug, force_ridge)
            if outcome is None:
                break
            if outcome[0] == "join" and outcome[1] < start_a - _EPS:
                q = quads_by_owner.get(oa)
                if q is not None:
                    popped_quads.append(q)
                entries.pop()           # previous crest fully dominated
                outcome = None
                continue
            if outcome[0] == "join" and popped_quads and not _join_body_safe(
                    ra, r, outcome, popped_quads, shape):
                if not force_ridge:
                    force_ridge = True  # retry with the higher straight link
                    outcome = None
                    continue
                outcome = None
            break
        if not entries:
            entries.append([r, ow, r.x2_minus, None])
            continue
        if outcome is None:
            blocked.append((entries[-1][0].o3[0], r.o3[0]))
            entries.append([r, ow, r.x2_minus, "blocked"])
            continue
        kind, end_a, start_b, between = outcome
        if kind == "separate":
            entries.append([r, ow, r.x2_minus, None])
            continue
        if start_b > r.x2_plus + _EPS:
            continue                    # new crest subsumed by the previous one
        entries.append([r, ow, start_b, ("join", end_a, between)])

    # emit: walk the chain, closing and reopening at heads
    cursor = road.x_min
    for k, (r, ow, start_x, link) in enumerate(entries):
        if link is None or link == "blocked":
            if k > 0:
                prev, _, prev_start, _ = entries[k - 1]
                pieces.append(ArcPiece(prev_start, prev.x2_plus, prev.o3[0], prev.o3[1], R, +1, "crest"))
                pieces.append(ArcPiece(prev.x2_plus, prev.x1_plus, prev.x1_plus, prev.o_y1, R, -1, "leave"))
                cursor = prev.x1_plus
            if r.x1_minus > cursor + _EPS:
                pieces.append(LinePiece(cursor, r.x1_minus, hug, 0.0, "hug"))
            pieces.append(ArcPiece(r.x1_minus, r.x2_minus, r.x1_minus, r.o_y1, R, -1, "enter"))
        else:
            _, end_a, between = link
            prev, _, prev_start, _ = entries[k - 1]
            pieces.append(ArcPiece(prev_start, end_a, prev.o3[0], prev.o3[1], R, +1, "crest"))
            pieces.extend(between)
    last, _, last_start, _ = entries[-1]
    pieces.append(ArcPiece(last_start, last.x2_plus, last.o3[0], last.o3[1], R, +1, "crest"))
    pieces.append(ArcPiece(last.x2_plus, last.x1_plus, last.x1_plus, last.o_y1, R, -1, "leave"))
    if last.x1_plus < road.x_max - _EPS:
        pieces.append(LinePiece(last.x1_plus, road.x_max, hug, 0.0, "hug"))
    # drop zero-length slivers and clamp to the road span
    pieces = [p for p in pieces if p.x1 - p.x0 > _EPS and p.x1 > road.x_min and p.x0 < road.x_max]
    survivors = [e[0].corner for e in entries]
    return pieces, blocked, survivors


# ---------------------------------------------------------------------------
# full profile for one side


def _active_roundings(roundings, owners, road: RoadModel, shape: VehicleShape,
                      step: float):
    """Drop roundings that never shape the upper envelope of all crest arcs."""
    if len(roundings) <= 1:
        return roundings, owners
    hug = road.y_low + 0.5 * shape.width
    x = np.arange(road.x_min, road.x_max + 0.5 * step, step)
    heights = np.full((len(roundings), len(x)), -np.inf)
    R = shape.min_turn_radius
    for i, r in enumerate(roundings):
        lo = max(r.x1_minus, road.x_min)
        hi = min(r.x1_plus, road.x_max)
        m = (x >= lo) & (x <= hi)
        crest = ArcPiece(r.x2_minus, r.x2_plus, r.o3[0], r.o3[1], R, +1, "crest")
        y = np.where(
            (x[m] >= r.x2_minus) & (x[m] <= r.x2_plus),
            crest.y_at(x[m]),
            np.where(x[m] < r.x2_minus,
                     ArcPiece(0, 1, r.x1_minus, r.o_y1, R, -1, "enter").y_at(x[m]),
                     ArcPiece(0, 1, r.x1_plus, r.o_y1, R, -1, "leave").y_at(x[m])))
        heights[i, m] = y
    heights = np.maximum(heights, hug)
    top = heights.max(axis=0)
    keep = []
    for i in range(len(roundings)):
        if np.any((heights[i] >= top - 1e-9) & (heights[i] > hug + 1e-9)):
            keep.append(i)
    if not keep:
        return [], []
    return [roundings[i] for i in keep], [owners[i] for i in keep]


def build_profile(side: str, vehicles: list[StationaryVehicle] | list[np.ndarray],
                  shape: VehicleShape, road: RoadModel,
                  step: float = 0.01) -> DetourProfile:
    """Rear-center boundary for one travel direction over the full road span."""
    quads, ids = _as_quads(vehicles)
    if side == "upper":
        quads = [_mirror_quad(q) for q in quads]
    profile = _build_lower_profile(quads, ids, shape, road, step)
    if side == "upper":
        profile = DetourProfile(
            side="upper",
            pieces=profile.pieces,       # pieces stay in the mirrored frame
            x=profile.x,
            y=-profile.y,
            tangent=-profile.tangent,
            blocked=profile.blocked,
            hug_y=-profile.hug_y,
            active_corners=profile.active_corners,
        )
    return profile


def _as_quads(vehicles) -> tuple[list[np.ndarray], list[str]]:
    quads, ids = [], []
    for i, v in enumerate(vehicles):
        if isinstance(v, StationaryVehicle):
            quads.append(np.asarray(v.corners, dtype=float))
            ids.append(v.vid)
        else:
            quads.append(np.asarray(v, dtype=float))
            ids.append(f"v{i}")
    return quads, ids


def _build_lower_profile(quads: list[np.ndarray], ids: list[str],
                         shape: VehicleShape, road: RoadModel,
                         step: float) -> DetourProfile:
    W = shape.width
    hug = road.y_low + 0.5 * W
    roundings: list[CornerRounding] = []
    owners: list[str] = []
    blocked_spans: list[tuple[float, float]] = []
    for quad, vid in zip(quads, ids):
        if quad[:, 1].min() - 0.5 * W >= hug - 1e-12:
            continue                      # traffic passes between it and the edge
        for cp in interior_corners(quad, road, shape, vid):
            try:
                roundings.append(round_corner(cp, shape, road))
                owners.append(vid)
            except GapTooDeep:
                x_lo, x_hi = quad[:, 0].min(), quad[:, 0].max()
                blocked_spans.append((x_lo - 0.5 * W, x_hi + 0.5 * W))
    roundings, owners = _active_roundings(roundings, owners, road, shape, step)
    pieces, more_blocked, survivors = _chain_pieces(roundings, owners, shape, road,
                                                    dict(zip(ids, quads)))
    blocked_spans.extend(more_blocked)
    if not pieces:
        pieces = [LinePiece(road.x_min, road.x_max, hug, 0.0, "hug")]

    x = np.arange(road.x_min, road.x_max + 0.5 * step, step)
    y = np.full_like(x, hug)
    dydx = np.zeros_like(x)
    for p in pieces:
        m = (x >= p.x0 - 1e-12) & (x <= p.x1 + 1e-12)
        y[m] = p.y_at(x[m])
        dydx[m] = p.dydx_at(x[m])
    y = np.maximum(y, hug)
    tangent = np.arctan(dydx)

    blocked = np.zeros(len(x), dtype=bool)
    for lo, hi in blocked_spans:
        blocked |= (x >= lo) & (x <= hi)
    # the curve must stay inside the road and keep W/2 from every body
    blocked |= y > road.y_high - 0.5 * W + 1e-9
    pts = np.stack([x, y], axis=1)
    for quad in quads:
        lo = quad[:, 0].min() - 2.0 * shape.min_turn_radius
        hi = quad[:, 0].max() + 2.0 * shape.min_turn_radius
        m = (x >= lo) & (x <= hi)
        if np.any(m):
            d = points_to_polygon_distance(pts[m], quad)
            sub = blocked[m]
            sub |= d < 0.5 * W - 1e-6
            blocked[m] = sub
    return DetourProfile("lower", pieces, x, y, tangent, blocked, hug,
                         active_corners=survivors)


# ---------------------------------------------------------------------------
# swept body envelope


def sweep_model_curve(x: np.ndarray, y: np.ndarray, tangent: np.ndarray,
                      shape: VehicleShape, toward: int = +1,
                      travel: int = +1) -> np.ndarray:
    """Interior envelope of the body swept along a sampled curve.

    For each pose the body's top boundary is the pointwise minimum of its two
    upper supporting lines; the envelope is the scatter-max of those lines
    over the grid columns each pose covers. ``toward=+1`` expands upward
    (lower side); ``toward=-1`` mirrors. ``travel`` gives the direction of
    motion along x: the body extends from the rear axle toward it.
    """
    if toward < 0:
        return -sweep_model_curve(x, -y, -tangent, shape, +1, travel)
    step = x[1] - x[0] if len(x) > 1 else 0.01
    L, W = shape.length, shape.width
    c, s = np.cos(tangent), np.sin(tangent)
    if travel < 0:
        c = -c
        s = -s       # heading flipped half a turn: body extends toward -x
    # corners relative to the rear-axle center (front-left, rear-left,
    # rear-right, front-right)
    local = np.array([(L, 0.5 * W), (0.0, 0.5 * W), (0.0, -0.5 * W), (L, -0.5 * W)])
    cx = x[:, None] + local[:, 0] * c[:, None] - local[:, 1] * s[:, None]
    cy = y[:, None] + local[:, 0] * s[:, None] + local[:, 1] * c[:, None]

    i_left = np.argmin(cx, axis=1)
    i_right = np.argmax(cx, axis=1)
    i_top = np.argmax(cy, axis=1)
    rows = np.arange(len(x))
    xl, yl = cx[rows, i_left], cy[rows, i_left]
    xr, yr = cx[rows, i_right], cy[rows, i_right]
    xt, yt = cx[rows, i_top], cy[rows, i_top]

    n_cols = int(math.ceil((L + W) / step)) + 2
    start = np.ceil((xl - x[0]) / step).astype(int)
    cols = start[:, None] + np.arange(n_cols)[None, :]
    col_x = x[0] + cols * step

    with np.errstate(divide="ignore", invalid="ignore"):
        slope1 = np.where(xt - xl > 1e-12, (yt - yl) / (xt - xl), 0.0)
        slope2 = np.where(xr - xt > 1e-12, (yr - yt) / (xr - xt), 0.0)
    line1 = yl[:, None] + slope1[:, None] * (col_x - xl[:, None])
    line2 = yt[:, None] + slope2[:, None] * (col_x - xt[:, None])
    top = np.minimum(line1, line2)
    degenerate = (xt - xl <= 1e-12)[:, None] & (col_x <= xt[:, None])
    top = np.where(degenerate, yt[:, None], top)
    degenerate = (xr - xt <= 1e-12)[:, None] & (col_x >= xt[:, None])
    top = np.where(degenerate, yt[:, None], top)
    valid = (col_x >= xl[:, None] - 1e-12) & (col_x <= xr[:, None] + 1e-12) \
        & (cols >= 0) & (cols < len(x))
    flat_cols = np.clip(cols, 0, len(x) - 1).ravel()
    flat_top = np.where(valid, top, -np.inf).ravel()
    model = np.full(len(x), -np.inf)
    np.maximum.at(model, flat_cols, flat_top)
    # columns never covered (possible at the far end) fall back to the offset curve
    fallback = y + 0.5 * W / np.maximum(np.cos(tangent), 1e-6)
    return np.where(np.isfinite(model), model, fallback)


def _quad_column_bounds(quad: np.ndarray, x: np.ndarray):
    """Per-column vertical extent of a quad: (mask, lower, upper)."""
    m = (x >= quad[:, 0].min()) & (x <= quad[:, 0].max())
    if not np.any(m):
        return m, None, None
    up = quad[_upper_hull(quad)]
    mirrored = quad * np.array([1.0, -1.0])
    lo = mirrored[_upper_hull(mirrored)] * np.array([1.0, -1.0])
    upper = np.interp(x[m], up[:, 0], up[:, 1])
    lower = np.interp(x[m], lo[:, 0], lo[:, 1])
    return m, lower, upper


def build_boundary(side: str, vehicles, shape: VehicleShape, road: RoadModel,
                   step: float = 0.01) -> ExpandedBoundary:
    """Rear-center boundary plus its swept-body model curves for one side.

    The primary model curve is swept in the side's own travel direction
    (keep-right: lower side runs toward +x, upper toward -x); the "against"
    variant covers bodies traversing the side the other way. Columns where
    the swept body band penetrates a parked vehicle regardless of the
    boundary shape are marked blocked.
    """
    profile = build_profile(side, vehicles, shape, road, step)
    toward = +1 if side == "lower" else -1
    travel = +1 if side == "lower" else -1
    top = sweep_model_curve(profile.x, profile.y, profile.tangent, shape, +1, travel)
    bottom = sweep_model_curve(profile.x, profile.y, profile.tangent, shape, -1, travel)
    quads, _ = _as_quads(vehicles)
    tol = 1e-4
    for quad in quads:
        m, lower, upper = _quad_column_bounds(quad, profile.x)
        if lower is None:
            continue
        hit = (lower < top[m] - tol) & (upper > bottom[m] + tol)
        sub = profile.blocked[m]
        sub |= hit
        profile.blocked[m] = sub
    model = top if toward > 0 else bottom
    reach = int(math.ceil(shape.length / step)) + 2
    pose_blocked = _dilate_mask(profile.blocked, reach)
    return ExpandedBoundary(profile, model, shape, pose_blocked, None, quads)


def _dilate_mask(mask: np.ndarray, reach: int) -> np.ndarray:
    if not mask.any() or reach <= 0:
        return mask.copy()
    out = mask.copy()
    idx = np.nonzero(mask)[0]
    for i in idx:
        out[max(0, i - reach):i + reach + 1] = True
    return out
