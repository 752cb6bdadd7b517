"""Scenario files: human-editable YAML with SI units and degrees.

A scenario pins the road, the ego start and body, parked vehicles, oncoming
drivers (replayed tracks, scripted profiles, or an external feed), the
observation noise, and optional planner overrides. Files round-trip
losslessly through load/save.
"""
from __future__ import annotations

import dataclasses
import math
from pathlib import Path

import numpy as np
import yaml

from .config import GapCostWeights, PlannerConfig
from .geometry import convex_overlap, rect_from_center, wrap_angle
from .scene import Pose, RoadModel, StationaryVehicle, VehicleShape
from .simulate import DriverState, NoiseModel, Scenario, make_scripted_path


class ValidationError(ValueError):
    pass


class PlacementError(RuntimeError):
    pass


def _shape_from(d: dict) -> VehicleShape:
    return VehicleShape(float(d.get("length_m", 0.26)),
                        float(d.get("width_m", 0.186)),
                        float(d.get("min_turn_radius_m", 0.5)),
                        float(d.get("v_max_mps", 0.5)))


def _shape_to(s: VehicleShape) -> dict:
    return {"length_m": s.length, "width_m": s.width,
            "min_turn_radius_m": s.min_turn_radius, "v_max_mps": s.v_max}


def load_scenario(path) -> Scenario:
    """Parse and validate one scenario file."""
    raw = yaml.safe_load(Path(path).read_text())
    return scenario_from_dict(raw, name=Path(path).stem)


def scenario_from_dict(raw: dict, name: str = "scenario") -> Scenario:
    road_d = raw.get("road", {})
    road = RoadModel(float(road_d.get("width_m", 0.92)), 0.0,
                     float(road_d.get("length_m", 7.0)))
    ego_d = raw.get("ego", {})
    shape = _shape_from(ego_d.get("shape", {}))
    start = ego_d.get("start", {})
    ego_start = Pose(float(start.get("x", 0.0)),
                     float(start.get("y", -0.5 * road.width + shape.width)),
                     math.radians(float(start.get("heading_deg", 0.0))))

    stationary = []
    seen = set()
    for i, sv in enumerate(raw.get("stationary", []) or []):
        vid = str(sv.get("id", f"sv{i + 1}"))
        if vid in seen:
            raise ValidationError(f"duplicate stationary vehicle id {vid!r}")
        seen.add(vid)
        heading = math.radians(float(sv.get("heading_deg", 0.0)))
        v = StationaryVehicle.from_center(
            vid, float(sv["x"]), float(sv["y"]),
            float(sv.get("length_m", 0.30)), float(sv.get("width_m", 0.20)),
            wrap_angle(heading))
        if v.corners[:, 1].min() < road.y_low - 1e-9 or \
                v.corners[:, 1].max() > road.y_high + 1e-9 or \
                v.corners[:, 0].min() < road.x_min - 1e-9 or \
                v.corners[:, 0].max() > road.x_max + 1e-9:
            raise ValidationError(f"stationary vehicle {vid!r} outside the road")
        for other in stationary:
            if convex_overlap(v.corners, other.corners, margin=-1e-9):
                raise ValidationError(
                    f"stationary vehicles {vid!r} and {other.vid!r} overlap")
        stationary.append(v)

    drivers = []
    quads = [v.corners for v in stationary]
    for d in raw.get("oncoming", []) or []:
        kind = d.get("kind", "scripted")
        if kind == "replay":
            track = np.asarray(d["track"], dtype=float)
            if track.ndim != 2 or track.shape[1] != 4:
                raise ValidationError("replay track must be rows of [t, x, y, heading_deg]")
            if np.any(np.diff(track[:, 0]) <= 0):
                raise ValidationError("replay track timestamps must increase")
            track = track.copy()
            track[:, 3] = np.radians(track[:, 3])
            drivers.append(DriverState("replay",
                                       Pose(track[0, 1], track[0, 2], track[0, 3]),
                                       0.0, track=track))
        elif kind == "scripted":
            profile = [(float(t), float(v)) for t, v in d.get("profile", [[0.0, 0.4]])]
            xs, ys, ths = make_scripted_path(quads, _shape_from(d.get("shape", {})
                                                                or {"length_m": 0.26,
                                                                    "width_m": 0.186,
                                                                    "min_turn_radius_m": 0.5,
                                                                    "v_max_mps": 0.5}),
                                             road)
            start_x = float(d.get("start_x", road.x_max - 0.3))
            keep = xs <= start_x
            xs, ys, ths = xs[keep], ys[keep], ths[keep]
            drivers.append(DriverState("scripted", Pose(xs[0], ys[0], ths[0]),
                                       0.0, profile=profile, path_x=xs,
                                       path_y=ys, path_theta=ths))
        elif kind == "external":
            start_x = float(d.get("start_x", road.x_max - 0.3))
            start_y = float(d.get("start_y", 0.5 * road.width - shape.width))
            drivers.append(DriverState("external",
                                       Pose(start_x, start_y, math.pi), 0.0))
        else:
            raise ValidationError(f"unknown driver kind {kind!r}")

    noise_d = raw.get("noise", {}) or {}
    noise = NoiseModel(float(noise_d.get("position_std_m", 0.0)),
                       float(noise_d.get("speed_std_mps", 0.0)),
                       int(noise_d.get("seed", 0)))
    return Scenario(road, shape, ego_start, stationary, drivers, noise, name)


def scenario_to_dict(scn: Scenario) -> dict:
    out = {
        "road": {"length_m": scn.road.x_max, "width_m": scn.road.width},
        "ego": {
            "start": {"x": scn.ego_start.x, "y": scn.ego_start.y,
                      "heading_deg": math.degrees(scn.ego_start.theta)},
            "shape": _shape_to(scn.shape),
        },
        "stationary": [],
        "oncoming": [],
        "noise": {"position_std_m": scn.noise.position_std,
                  "speed_std_mps": scn.noise.speed_std,
                  "seed": scn.noise.seed},
    }
    for v in scn.stationary:
        c = v.center
        e = v.corners[0] - v.corners[1]
        length = float(np.hypot(*e))
        width = float(np.hypot(*(v.corners[1] - v.corners[2])))
        out["stationary"].append({
            "id": v.vid, "x": float(c[0]), "y": float(c[1]),
            "length_m": length, "width_m": width,
            "heading_deg": math.degrees(v.heading),
        })
    for d in scn.drivers:
        if d.kind == "replay":
            tr = d.track.copy()
            tr[:, 3] = np.degrees(tr[:, 3])
            out["oncoming"].append({"kind": "replay", "track": tr.tolist()})
        elif d.kind == "scripted":
            out["oncoming"].append({"kind": "scripted", "profile": list(d.profile),
                                    "start_x": float(d.path_x[0])})
        else:
            out["oncoming"].append({"kind": "external", "start_x": d.pose.x,
                                    "start_y": d.pose.y})
    return out


def save_scenario(scn: Scenario, path) -> None:
    Path(path).write_text(yaml.safe_dump(scenario_to_dict(scn), sort_keys=True))


def planner_config_from(raw: dict) -> PlannerConfig:
    """Planner overrides from a scenario file's ``planner`` block."""
    d = dict(raw.get("planner", {}) or {})
    weights = d.pop("gap_weights", None)
    kwargs = {}
    for f in dataclasses.fields(PlannerConfig):
        if f.name in d:
            kwargs[f.name] = d[f.name]
    if weights:
        kwargs["gap_weights"] = GapCostWeights(**weights)
    return PlannerConfig(**kwargs)


# ---------------------------------------------------------------------------
# random layouts


def generate_random_scenario(count: int, seed: int,
                             road: RoadModel | None = None,
                             shape: VehicleShape | None = None,
                             sv_length: float = 0.30, sv_width: float = 0.20,
                             min_centerline_dist: float = 0.15,
                             heading_ranges_deg=((-20.0, 20.0), (160.0, 200.0)),
                             max_tries: int = 400) -> Scenario:
    """Random parked layout: headings near either road direction, vehicles
    kept close to a boundary, no overlaps. Deterministic per seed."""
    road = road or RoadModel(0.92, 0.0, 7.0)
    shape = shape or VehicleShape(0.26, 0.186, 0.5, 0.5)
    rng = np.random.default_rng(seed)
    placed: list[StationaryVehicle] = []
    tries = 0
    while len(placed) < count:
        tries += 1
        if tries > max_tries:
            raise PlacementError(
                f"could not place {count} vehicles after {max_tries} draws")
        lo_deg, hi_deg = heading_ranges_deg[int(rng.integers(len(heading_ranges_deg)))]
        heading = math.radians(rng.uniform(lo_deg, hi_deg))
        x = rng.uniform(road.x_min + 0.6, road.x_max - 0.6)
        y_top = road.y_high - 0.5 * sv_width - 1e-3
        if y_top <= min_centerline_dist:
            raise PlacementError("road too narrow for the requested margin")
        y = rng.uniform(min_centerline_dist, y_top)
        if rng.random() < 0.5:
            y = -y
        corners = rect_from_center(x, y, sv_length, sv_width, heading)
        if corners[:, 1].min() < road.y_low + 1e-3 or \
                corners[:, 1].max() > road.y_high - 1e-3:
            continue
        if any(convex_overlap(corners, p.corners, margin=0.01) for p in placed):
            continue
        placed.append(StationaryVehicle(f"sv{len(placed) + 1}", corners,
                                        wrap_angle(heading),
                                        "lower" if y < 0 else "upper"))
    ego_start = Pose(0.0, road.y_low + shape.width, 0.0)
    return Scenario(road, shape, ego_start, placed, [], NoiseModel(), f"random-{seed}")
