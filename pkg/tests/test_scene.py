import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from narrowpass.geometry import convex_overlap, footprint, points_to_polygon_distance
from narrowpass.scene import (
    ArcPiece,
    CornerPoint,
    GapTooDeep,
    LinePiece,
    NotDetourable,
    RoadModel,
    StationaryVehicle,
    VehicleShape,
    build_boundary,
    build_profile,
    corner_theta3,
    interior_corners,
    merge_vehicle_roundings,
    ridge_join,
    round_corner,
    rounding_arcs,
    valley_center_closed_form,
    valley_join,
)

from conftest import random_parked_vehicles


def bisect(f, lo, hi, tol=1e-12):
    flo = f(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) * flo > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# corner angles


class TestCornerAngles:
    def test_axis_aligned_near_corner_is_flat(self, road, shape):
        sv = StationaryVehicle.from_center("s", 3.0, -0.27, 0.30, 0.20, 0.0)
        cps = interior_corners(sv.corners, road, shape)
        assert len(cps) == 2
        assert all(abs(cp.theta3) < 1e-12 for cp in cps)

    def test_rotated_leading_corner_matches_body(self, road, shape):
        beta = 0.2
        sv = StationaryVehicle.from_center("s", 3.0, -0.27, 0.30, 0.20, beta)
        cps = interior_corners(sv.corners, road, shape)
        lead = min(cps, key=lambda cp: cp.position[0])
        assert lead.theta3 == pytest.approx(beta, abs=1e-9)

    def test_wrong_way_parked_trailing_corner(self, road, shape):
        beta = math.radians(170)
        sv = StationaryVehicle.from_center("s", 3.0, -0.27, 0.30, 0.20, beta)
        cps = interior_corners(sv.corners, road, shape)
        # oracle: the edge direction from the two corner coordinates
        for cp in cps:
            if cp.theta3 != 0.0:
                assert cp.theta3 == pytest.approx(beta - math.pi, abs=1e-9)

    def test_edge_facing_corner_rejected(self, road, shape):
        sv = StationaryVehicle.from_center("s", 3.0, -0.27, 0.30, 0.20, 0.0)
        # corner 3 is a bottom corner (faces the hugged edge)
        bottoms = [i for i, c in enumerate(sv.corners) if c[1] < -0.3]
        with pytest.raises(NotDetourable):
            corner_theta3(sv, bottoms[0], road, shape)

    def test_upper_side_vehicle_mirrors(self, road, shape):
        sv = StationaryVehicle.from_center("s", 3.0, 0.27, 0.30, 0.20, 0.0)
        tops = [i for i, c in enumerate(sv.corners) if c[1] < 0.3]
        assert corner_theta3(sv, tops[0], road, shape) == pytest.approx(0.0)


# ---------------------------------------------------------------------------
# single corner rounding


class TestCornerRounding:
    def test_worked_example_against_tangency_oracle(self, road, shape):
        cp = CornerPoint((3.0, -0.15), 0.0)
        r = round_corner(cp, shape, road)
        W, R = shape.width, shape.min_turn_radius
        A = road.y_low + 0.5 * W + R
        B = -0.15 - (R - 0.5 * W)
        # oracle: enter-circle abscissa solving center distance = 2R
        f = lambda ox1: math.hypot(ox1 - 3.0, A - B) - 2 * R
        ox1 = bisect(f, 3.0 - 2 * R, 3.0 - 1e-9)
        assert r.x1_minus == pytest.approx(ox1, abs=1e-9)
        assert r.x2_minus == pytest.approx(0.5 * (ox1 + 3.0), abs=1e-9)
        assert r.theta == pytest.approx(math.acos((A - B) / (2 * R)), abs=1e-12)
        assert r.theta == pytest.approx(0.8093, abs=1e-3)
        assert r.y2 == pytest.approx(-0.212, abs=1e-3)
        assert r.x2_minus == pytest.approx(2.638, abs=1e-3)
        assert r.x1_minus == pytest.approx(2.276, abs=1e-3)
        # symmetric on the + side
        assert r.x2_plus - 3.0 == pytest.approx(3.0 - r.x2_minus, abs=1e-12)
        assert r.x1_plus - 3.0 == pytest.approx(3.0 - r.x1_minus, abs=1e-12)

    def test_centers_equal_height_gives_quarter_sweep(self, road, shape):
        # B == A: crest center level with the enter circle center
        W, R = shape.width, shape.min_turn_radius
        A = road.y_low + 0.5 * W + R
        py = A + (R - 0.5 * W)
        r = round_corner(CornerPoint((3.0, py), 0.0), shape, road)
        assert r.theta == pytest.approx(0.5 * math.pi, abs=1e-12)
        # tangency still exact: switch points at the crest circle's equator
        assert r.x2_minus == pytest.approx(3.0 - R, abs=1e-12)
        assert r.x2_plus == pytest.approx(3.0 + R, abs=1e-12)

    def test_depth_limit_degenerates_to_point(self, road, shape):
        # A - B = 2R: crest apex exactly on the hug line, zero-length crest
        W, R = shape.width, shape.min_turn_radius
        A = road.y_low + 0.5 * W + R
        py = A - 2 * R + (R - 0.5 * W)
        r = round_corner(CornerPoint((3.0, py), 0.0), shape, road)
        assert r.x2_minus == pytest.approx(r.x2_plus, abs=1e-9)
        assert r.x2_minus == pytest.approx(3.0, abs=1e-9)
        assert r.theta == pytest.approx(0.0, abs=1e-9)
        with pytest.raises(GapTooDeep):
            round_corner(CornerPoint((3.0, py - 1e-6), 0.0), shape, road)

    def test_mirror_about_corner_axis(self, road, shape):
        r = round_corner(CornerPoint((3.0, -0.18), 0.0), shape, road)
        assert 3.0 - r.x1_minus == pytest.approx(r.x1_plus - 3.0, abs=1e-12)

    @given(py=st.floats(-0.35, 0.1), th3=st.floats(-1.0, 1.0))
    @settings(max_examples=200, deadline=None)
    def test_tangency_and_switch_relation_hold(self, py, th3):
        road = RoadModel(0.92, 0.0, 7.0)
        shape = VehicleShape(0.26, 0.186, 0.5, 0.5)
        W, R = shape.width, shape.min_turn_radius
        try:
            r = round_corner(CornerPoint((3.0, py), th3), shape, road)
        except GapTooDeep:
            return
        d_minus = math.hypot(r.x1_minus - r.o3[0], r.o_y1 - r.o3[1])
        d_plus = math.hypot(r.x1_plus - r.o3[0], r.o_y1 - r.o3[1])
        assert d_minus == pytest.approx(2 * R, abs=1e-9)
        assert d_plus == pytest.approx(2 * R, abs=1e-9)
        assert r.x2_minus - r.x1_minus == pytest.approx(R * math.sin(r.theta), abs=1e-9)


# ---------------------------------------------------------------------------
# merging within one vehicle


class TestMerging:
    def test_close_corners_merge_without_dip(self, road, shape):
        hug = road.y_low + 0.5 * shape.width
        a = round_corner(CornerPoint((3.0, -0.2), 0.0, "v"), shape, road)
        b = round_corner(CornerPoint((3.05, -0.2), 0.0, "v"), shape, road)
        pieces, blocked = merge_vehicle_roundings([a, b], shape, road)
        assert not blocked
        x = np.linspace(3.0, 3.05, 50)
        for p in pieces:
            m = (x >= p.x0) & (x <= p.x1)
            if m.any():
                assert np.all(p.y_at(x[m]) > hug + 1e-6)

    def test_far_corners_return_to_hug(self, road, shape):
        hug = road.y_low + 0.5 * shape.width
        a = round_corner(CornerPoint((1.5, -0.3), 0.0, "v"), shape, road)
        b = round_corner(CornerPoint((5.5, -0.3), 0.0, "v"), shape, road)
        pieces, blocked = merge_vehicle_roundings([a, b], shape, road)
        hugs = [p for p in pieces if isinstance(p, LinePiece) and p.kind == "hug"
                and p.x0 > a.x1_plus - 1e-9 and p.x1 < b.x1_minus + 1e-9]
        assert hugs and hugs[0].ya == pytest.approx(hug)

    def test_equal_height_corners_join_horizontally(self, road, shape):
        a = round_corner(CornerPoint((3.0, -0.2), 0.0, "v"), shape, road)
        b = round_corner(CornerPoint((3.2, -0.2), 0.0, "v"), shape, road)
        join = ridge_join(a, b, shape.min_turn_radius)
        (xl, yl), (xr, yr), g = join
        assert g == pytest.approx(0.0, abs=1e-12)
        assert yl == pytest.approx(yr)
        assert xl == pytest.approx(3.0) and xr == pytest.approx(3.2)


# ---------------------------------------------------------------------------
# valley between vehicles


class TestValley:
    def test_mirror_symmetric_vehicles_center_on_axis(self, road, shape):
        c = 3.5
        a = round_corner(CornerPoint((c - 0.45, -0.2), 0.0, "a"), shape, road)
        b = round_corner(CornerPoint((c + 0.45, -0.2), 0.0, "b"), shape, road)
        o4, k1, k2 = valley_join(a, b, shape.min_turn_radius)
        assert o4[0] == pytest.approx(c, abs=1e-12)

    def test_equal_height_formula(self, road, shape):
        R = shape.min_turn_radius
        h = -0.607
        a = round_corner(CornerPoint((3.0, h + (R - 0.5 * shape.width)), 0.0, "a"), shape, road)
        b = round_corner(CornerPoint((3.6, h + (R - 0.5 * shape.width)), 0.0, "b"), shape, road)
        o4, _, _ = valley_join(a, b, R)
        d = 0.3  # half the center separation
        assert o4[1] == pytest.approx(h + math.sqrt(4 * R * R - d * d), abs=1e-9)
        # numeric solution is externally tangent to both crest circles
        assert math.hypot(o4[0] - a.o3[0], o4[1] - a.o3[1]) == pytest.approx(2 * R, abs=1e-12)
        assert math.hypot(o4[0] - b.o3[0], o4[1] - b.o3[1]) == pytest.approx(2 * R, abs=1e-12)

    def test_closed_form_cross_check(self, road, shape):
        R = shape.min_turn_radius
        a = round_corner(CornerPoint((3.0, -0.18), 0.0, "a"), shape, road)
        b = round_corner(CornerPoint((3.7, -0.22), 0.0, "b"), shape, road)
        o4, _, _ = valley_join(a, b, R)
        closed = valley_center_closed_form(a, b, R)
        if closed is not None:
            assert closed[0] == pytest.approx(o4[0], abs=1e-6)
            assert closed[1] == pytest.approx(o4[1], abs=1e-6)

    def test_far_vehicles_use_straight_segment(self, road, shape):
        sva = StationaryVehicle.from_center("a", 1.5, -0.3, 0.30, 0.20, 0.0)
        svb = StationaryVehicle.from_center("b", 5.5, -0.3, 0.30, 0.20, 0.0)
        p = build_profile("lower", [sva, svb], shape, road)
        kinds = [q.kind for q in p.pieces]
        assert "valley" not in kinds
        mid = (p.x > 2.8) & (p.x < 4.2)
        assert np.allclose(p.y[mid], p.hug_y)


# ---------------------------------------------------------------------------
# full boundary


class TestBoundary:
    def test_empty_road_straight_lines(self, road, shape):
        b = build_boundary("lower", [], shape, road)
        assert np.allclose(b.base.y, -(0.5 * road.width - 0.5 * shape.width))
        assert np.allclose(b.model_y, -(0.5 * road.width - shape.width))
        bu = build_boundary("upper", [], shape, road)
        assert np.allclose(bu.base.y, 0.5 * road.width - 0.5 * shape.width)
        assert np.allclose(bu.model_y, 0.5 * road.width - shape.width)

    def test_single_vehicle_bulges_over_its_span(self, road, shape):
        sv = StationaryVehicle.from_center("s", 3.0, -0.26, 0.30, 0.20, 0.0)
        b = build_boundary("lower", [sv], shape, road)
        inside = (b.x >= 2.85) & (b.x <= 3.15)
        outside = (b.x < 1.5) | (b.x > 4.5)
        assert b.model_y[inside].min() > b.model_y[outside].max() + 0.1
        peak_x = b.x[np.argmax(b.model_y)]
        assert 2.7 < peak_x < 3.3

    def test_model_curve_interior_of_base(self, road, shape):
        sv = StationaryVehicle.from_center("s", 3.0, -0.26, 0.30, 0.20, 0.15)
        b = build_boundary("lower", [sv], shape, road)
        assert np.all(b.model_y > b.base.y + 1e-9)
        bu = build_boundary("upper", [StationaryVehicle.from_center("s", 3.0, 0.26, 0.30, 0.20, 0.15)], shape, road)
        assert np.all(bu.model_y < bu.base.y - 1e-9)

    def test_mirror_symmetry(self, road, shape):
        rng = np.random.default_rng(7)
        vehicles = random_parked_vehicles(rng, road, count=3)
        mirrored = [StationaryVehicle(v.vid, v.corners[::-1] * np.array([1.0, -1.0]),
                                      -v.heading, "upper" if v.side == "lower" else "lower")
                    for v in vehicles]
        lo = build_boundary("lower", vehicles, shape, road)
        hi = build_boundary("upper", mirrored, shape, road)
        assert np.max(np.abs(lo.base.y + hi.base.y)) < 1e-9
        # mirroring flips which x direction the sweep faces
        assert np.max(np.abs(lo.model_against() + hi.model_y)) < 1e-9
        assert np.max(np.abs(lo.model_y + hi.model_against())) < 1e-9

    def test_swept_footprint_collision_free_randomized(self, road, shape):
        rng = np.random.default_rng(123)
        for _ in range(10):
            vehicles = random_parked_vehicles(rng, road, count=3)
            b = build_boundary("lower", vehicles, shape, road)
            ok = ~b.pose_blocked
            for i in np.nonzero(ok)[0][::2]:
                body = footprint(b.x[i], b.base.y[i], b.base.tangent[i],
                                 shape.length, shape.width)
                for v in vehicles:
                    assert not convex_overlap(body, v.corners, margin=-1e-5), (
                        f"sweep hits {v.vid} at x={b.x[i]:.2f}")

    def test_clearance_curvature_tangent_invariants(self, road, shape):
        rng = np.random.default_rng(42)
        W = shape.width
        for _ in range(10):
            vehicles = random_parked_vehicles(rng, road)
            for side in ("lower", "upper"):
                b = build_boundary(side, vehicles, shape, road)
                ok = ~b.base.blocked
                pts = np.stack([b.x, b.base.y], 1)[ok]
                for v in vehicles:
                    assert points_to_polygon_distance(pts, v.corners).min() >= 0.5 * W - 1e-6
                edge = road.y_low if side == "lower" else road.y_high
                assert np.abs(pts[:, 1] - edge).min() >= 0.5 * W - 1e-6
                for p in b.base.pieces:
                    if isinstance(p, ArcPiece):
                        assert p.r >= shape.min_turn_radius - 1e-9
                _assert_tangent_continuity(b.base)

    def test_tightness_single_vehicle_corners(self, road, shape):
        # the rounding osculates the near-centerline corner exactly; joined
        # neighbor corners may be cut just before their osculation point by
        # the common-gradient straight, costing up to ~1 mm
        for beta in (0.0, 0.2, -0.2, math.radians(170), math.radians(195)):
            sv = StationaryVehicle.from_center("s", 3.0, -0.27, 0.30, 0.20, beta)
            b = build_boundary("lower", [sv], shape, road)
            for cp in b.base.active_corners:
                d = np.hypot(b.x - cp.position[0], b.base.y - cp.position[1]).min()
                assert d >= 0.5 * shape.width - 1e-6
                tol = 1e-3 if cp.theta3 == 0.0 else 2e-3
                assert d == pytest.approx(0.5 * shape.width, abs=tol)

    def test_tightness_per_vehicle(self, road, shape):
        # the merged boundary still hugs every rounded vehicle at W/2
        rng = np.random.default_rng(5)
        hugged = 0
        for _ in range(10):
            vehicles = random_parked_vehicles(rng, road, count=2)
            b = build_boundary("lower", vehicles, shape, road)
            if b.base.blocked.any():
                continue
            pts = np.stack([b.x, b.base.y], 1)
            rounded = {cp.vehicle_id for cp in b.base.active_corners}
            for v in vehicles:
                if v.vid not in rounded:
                    continue
                d = points_to_polygon_distance(pts, v.corners).min()
                assert d >= 0.5 * shape.width - 1e-6
                assert d == pytest.approx(0.5 * shape.width, abs=2e-3)
                hugged += 1
        assert hugged >= 5


def _assert_tangent_continuity(profile):
    prev_x1, prev_slope = None, None
    for p in profile.pieces:
        x0 = np.array([p.x0 + 1e-9])
        s0 = math.atan(float(p.dydx_at(x0)[0]))
        if prev_x1 is not None and abs(p.x0 - prev_x1) < 1e-9:
            assert abs(s0 - prev_slope) < 1e-6, f"kink at x={p.x0:.3f} ({p.kind})"
        prev_x1 = p.x1
        prev_slope = math.atan(float(p.dydx_at(np.array([p.x1 - 1e-9]))[0]))
