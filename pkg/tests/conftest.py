import math

import numpy as np
import pytest

from narrowpass.geometry import rect_from_center, convex_overlap
from narrowpass.scene import RoadModel, StationaryVehicle, VehicleShape


@pytest.fixture
def road():
    return RoadModel(0.92, 0.0, 7.0)


@pytest.fixture
def shape():
    return VehicleShape(0.26, 0.186, 0.5, 0.5)


def random_parked_vehicles(rng, road, count=None, length=0.30, width=0.20,
                           min_centerline_dist=0.15):
    """Random parked-vehicle layout matching the benchmark distribution."""
    if count is None:
        count = int(rng.integers(1, 5))
    vehicles = []
    tries = 0
    while len(vehicles) < count and tries < 300:
        tries += 1
        x = rng.uniform(road.x_min + 0.6, road.x_max - 0.6)
        span = road.y_high - width * 0.75 - min_centerline_dist
        y = min_centerline_dist + rng.uniform(0.0, max(span, 0.0))
        y *= rng.choice([-1.0, 1.0])
        heading = math.radians(rng.uniform(-20, 20))
        if rng.random() < 0.5:
            heading += math.pi
        corners = rect_from_center(x, y, length, width, heading)
        if corners[:, 1].max() > road.y_high - 1e-3 or corners[:, 1].min() < road.y_low + 1e-3:
            continue
        if any(convex_overlap(corners, v.corners, margin=0.01) for v in vehicles):
            continue
        vehicles.append(StationaryVehicle(f"s{len(vehicles)}", corners,
                                          heading, "lower" if y < 0 else "upper"))
    return vehicles
