"""Planar geometry primitives: oriented rectangles, distances, polylines.

All rectangles are convex quads given as (4, 2) arrays in counterclockwise
order. Vehicle footprints are referenced to the rear-axle center: the body
spans [0, length] along the heading and [-width/2, width/2] laterally.
"""
from __future__ import annotations

import math

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap to [-pi, pi)."""
    return (a + math.pi) % TWO_PI - math.pi


def wrap_angle_positive(a: float) -> float:
    """Wrap to [0, 2*pi)."""
    return a % TWO_PI


def rect_from_center(cx: float, cy: float, length: float, width: float,
                     heading: float) -> np.ndarray:
    """Corners of a center-referenced oriented rectangle, CCW."""
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = 0.5 * length, 0.5 * width
    local = np.array([(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)])
    rot = np.array([(c, -s), (s, c)])
    return local @ rot.T + np.array([cx, cy])


def footprint(x: float, y: float, theta: float, length: float,
              width: float) -> np.ndarray:
    """Corners of a rear-axle-referenced vehicle body, CCW."""
    c, s = math.cos(theta), math.sin(theta)
    hw = 0.5 * width
    local = np.array([(length, hw), (0.0, hw), (0.0, -hw), (length, -hw)])
    rot = np.array([(c, -s), (s, c)])
    return local @ rot.T + np.array([x, y])


def polygon_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def convex_overlap(a: np.ndarray, b: np.ndarray, margin: float = 0.0) -> bool:
    """Separating-axis test for two convex CCW polygons.

    Returns True when the polygons are closer than ``margin`` (overlap
    included). margin=0 treats touching as overlap-free.
    """
    for poly1, poly2 in ((a, b), (b, a)):
        edges = np.roll(poly1, -1, axis=0) - poly1
        # outward normals for CCW order
        normals = np.stack([edges[:, 1], -edges[:, 0]], axis=1)
        lengths = np.hypot(normals[:, 0], normals[:, 1])
        normals = normals / lengths[:, None]
        p1 = poly1 @ normals.T
        p2 = poly2 @ normals.T
        gap = p2.min(axis=0) - p1.max(axis=0)
        if np.any(gap > margin):
            return False
    return True


def _segment_distances(points: np.ndarray, seg_a: np.ndarray,
                       seg_b: np.ndarray) -> np.ndarray:
    """Distances from each point to one segment."""
    d = seg_b - seg_a
    denom = float(d @ d)
    if denom < 1e-18:
        return np.hypot(points[:, 0] - seg_a[0], points[:, 1] - seg_a[1])
    t = np.clip(((points - seg_a) @ d) / denom, 0.0, 1.0)
    proj = seg_a + t[:, None] * d
    return np.hypot(points[:, 0] - proj[:, 0], points[:, 1] - proj[:, 1])


def points_to_polygon_distance(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Unsigned distance from points to a convex CCW polygon (0 inside)."""
    points = np.atleast_2d(points)
    n = len(poly)
    dist = np.full(len(points), np.inf)
    for i in range(n):
        dist = np.minimum(dist, _segment_distances(points, poly[i], poly[(i + 1) % n]))
    inside = points_in_polygon(points, poly)
    dist[inside] = 0.0
    return dist


def points_in_polygon(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd (ray casting) containment test, vectorized over points."""
    points = np.atleast_2d(points)
    x, y = points[:, 0], points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        crosses = (y1 <= y) != (y2 <= y)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < x_at)
    return inside


def polygons_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Distance between two convex polygons, 0 when overlapping."""
    if convex_overlap(a, b, margin=0.0):
        # overlap vs touching: probe vertices
        if np.any(points_in_polygon(a, b)) or np.any(points_in_polygon(b, a)):
            return 0.0
    da = points_to_polygon_distance(a, b).min()
    db = points_to_polygon_distance(b, a).min()
    d = min(float(da), float(db))
    # vertex-vertex may miss edge-edge closest pairs; sample edges
    for poly1, poly2 in ((a, b), (b, a)):
        n = len(poly1)
        for i in range(n):
            seg = np.linspace(poly1[i], poly1[(i + 1) % n], 8)
            d = min(d, float(points_to_polygon_distance(seg, poly2).min()))
    return d


def batch_footprints(poses: np.ndarray, length: float, width: float) -> np.ndarray:
    """Body corners for (N, 3) rear-axle poses -> (N, 4, 2), CCW."""
    x, y, th = poses[:, 0], poses[:, 1], poses[:, 2]
    c, s = np.cos(th), np.sin(th)
    hw = 0.5 * width
    local = np.array([(length, hw), (0.0, hw), (0.0, -hw), (length, -hw)])
    cx = x[:, None] + local[:, 0] * c[:, None] - local[:, 1] * s[:, None]
    cy = y[:, None] + local[:, 0] * s[:, None] + local[:, 1] * c[:, None]
    return np.stack([cx, cy], axis=2)


def batch_overlap_quad(corners: np.ndarray, quad: np.ndarray,
                       margin: float = 0.0) -> np.ndarray:
    """Separating-axis overlap of (N, 4, 2) bodies against one quad.

    True where the body is closer than ``margin`` to the quad (negative
    margin requires actual penetration).
    """
    n = len(corners)
    overlap = np.ones(n, dtype=bool)
    # axes from the quad's edges
    edges = np.roll(quad, -1, axis=0) - quad
    normals = np.stack([edges[:, 1], -edges[:, 0]], axis=1)
    normals /= np.hypot(normals[:, 0], normals[:, 1])[:, None]
    q_proj = quad @ normals.T                      # (4 corners, 4 axes)
    b_proj = corners @ normals.T                   # (N, 4, 4)
    gap1 = np.maximum(q_proj.min(axis=0) - b_proj.max(axis=1),
                      b_proj.min(axis=1) - q_proj.max(axis=0))  # (N, 4)
    overlap &= ~(gap1 > margin).any(axis=1)
    # axes from each body's edges
    b_edges = np.roll(corners, -1, axis=1) - corners
    b_norm = np.stack([b_edges[..., 1], -b_edges[..., 0]], axis=2)
    b_norm /= np.maximum(np.hypot(b_norm[..., 0], b_norm[..., 1]), 1e-12)[..., None]
    qb = np.einsum("qk,nak->nqa", quad, b_norm)     # (N, 4 quad corners, 4 axes)
    bb = np.einsum("nck,nak->nca", corners, b_norm)
    gap2 = np.maximum(qb.min(axis=1) - bb.max(axis=1),
                      bb.min(axis=1) - qb.max(axis=1))
    overlap &= ~(gap2 > margin).any(axis=1)
    return overlap


def batch_top_envelope(corners: np.ndarray, grid_x: np.ndarray,
                       x0: float, step: float):
    """Per-pose upper boundary rasterized on the grid.

    Returns (cols, tops): integer column indices (N, K) and the body's top
    ordinate there (-inf outside the body's span).
    """
    n = len(corners)
    cx, cy = corners[..., 0], corners[..., 1]
    i_left = np.argmin(cx, axis=1)
    i_right = np.argmax(cx, axis=1)
    i_top = np.argmax(cy, axis=1)
    rows = np.arange(n)
    xl, yl = cx[rows, i_left], cy[rows, i_left]
    xr, yr = cx[rows, i_right], cy[rows, i_right]
    xt, yt = cx[rows, i_top], cy[rows, i_top]
    span = (xr - xl).max() if n else 0.0
    k = int(math.ceil(span / step)) + 2
    start = np.ceil((xl - x0) / step).astype(int)
    cols = start[:, None] + np.arange(k)[None, :]
    col_x = x0 + cols * step
    with np.errstate(divide="ignore", invalid="ignore"):
        s1 = np.where(xt - xl > 1e-12, (yt - yl) / (xt - xl), 0.0)
        s2 = np.where(xr - xt > 1e-12, (yr - yt) / (xr - xt), 0.0)
    line1 = yl[:, None] + s1[:, None] * (col_x - xl[:, None])
    line2 = yt[:, None] + s2[:, None] * (col_x - xt[:, None])
    top = np.minimum(line1, line2)
    flat = (xt - xl <= 1e-12)[:, None] & (col_x <= xt[:, None])
    top = np.where(flat, yt[:, None], top)
    flat = (xr - xt <= 1e-12)[:, None] & (col_x >= xt[:, None])
    top = np.where(flat, yt[:, None], top)
    valid = (col_x >= xl[:, None]) & (col_x <= xr[:, None]) \
        & (cols >= 0) & (cols < len(grid_x))
    top = np.where(valid, top, -np.inf)
    return np.clip(cols, 0, len(grid_x) - 1), top


def polyline_lengths(points: np.ndarray) -> np.ndarray:
    """Cumulative arc length along a polyline, starting at 0."""
    seg = np.hypot(np.diff(points[:, 0]), np.diff(points[:, 1]))
    return np.concatenate([[0.0], np.cumsum(seg)])


def resample_polyline(points: np.ndarray, n: int) -> np.ndarray:
    """Resample a polyline to n points uniform in arc length."""
    s = polyline_lengths(points)
    total = s[-1]
    if total < 1e-12:
        return np.repeat(points[:1], n, axis=0)
    target = np.linspace(0.0, total, n)
    x = np.interp(target, s, points[:, 0])
    y = np.interp(target, s, points[:, 1])
    return np.stack([x, y], axis=1)


def chain_headings(points: np.ndarray, theta0: float) -> np.ndarray:
    """Heading sequence satisfying the discrete bicycle consistency rule.

    Successive headings obey theta_{i+1} = 2*phi_i - theta_i where phi_i is
    the chord angle, which makes the average-heading vector parallel to every
    chord (zero cross-product residual) regardless of travel direction.
    """
    n = len(points)
    dx = np.diff(points[:, 0])
    dy = np.diff(points[:, 1])
    if n > 2 and np.all(np.abs(dx) + np.abs(dy) > 1e-15):
        phi = np.arctan2(dy, dx)
        # unrolled recursion: s_k = (-1)^k theta_k satisfies a cumulative sum
        sign = np.ones(n)
        sign[1::2] = -1.0
        inc = 2.0 * phi * -sign[:-1]
        s = np.concatenate([[theta0], theta0 + np.cumsum(inc)])
        theta = s * sign
        # snap each heading within pi of its predecessor (cos/sin unchanged)
        jumps = np.round(np.diff(theta) / TWO_PI)
        theta[1:] -= TWO_PI * np.cumsum(jumps)
        return theta
    theta = np.empty(n)
    theta[0] = theta0
    phi = np.arctan2(dy, dx)
    for i in range(n - 1):
        if abs(dx[i]) < 1e-15 and abs(dy[i]) < 1e-15:
            theta[i + 1] = theta[i]
        else:
            t = 2.0 * phi[i] - theta[i]
            k = round((theta[i] - t) / TWO_PI)
            theta[i + 1] = t + k * TWO_PI
    return theta


def kinematic_residuals(points: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Cross-product residual of the heading-consistency rule per chord."""
    dx = np.diff(points[:, 0])
    dy = np.diff(points[:, 1])
    cs = np.cos(theta[:-1]) + np.cos(theta[1:])
    sn = np.sin(theta[:-1]) + np.sin(theta[1:])
    return cs * dy - sn * dx
