import math

import numpy as np
import pytest

from vistrack.geom2d import ConvexBody


def convex_hull(points):
    """Andrew monotone chain; returns CCW hull without the closing point."""
    pts = sorted(map(tuple, points))
    if len(pts) < 3:
        return pts

    def cross(o, a, b):
        return ((a[0] - o[0]) * (b[1] - o[1])
                - (a[1] - o[1]) * (b[0] - o[0]))

    lo = []
    for p in pts:
        while len(lo) >= 2 and cross(lo[-2], lo[-1], p) <= 1e-12:
            lo.pop()
        lo.append(p)
    hi = []
    for p in reversed(pts):
        while len(hi) >= 2 and cross(hi[-2], hi[-1], p) <= 1e-12:
            hi.pop()
        hi.append(p)
    return lo[:-1] + hi[:-1]


def random_polygon(rng, center=(0.0, 0.0), scale=2.0, n_points=10):
    """Random strictly convex CCW polygon around ``center``."""
    while True:
        pts = rng.uniform(-scale, scale, (n_points, 2)) + np.asarray(center)
        hull = convex_hull(pts)
        if len(hull) >= 3:
            try:
                return ConvexBody.polygon(hull)
            except ValueError:
                continue


def random_body(rng, center=(0.0, 0.0), scale=2.0):
    kind = rng.integers(0, 3)
    c = np.asarray(center, dtype=float)
    if kind == 0:
        return ConvexBody.point(c + rng.uniform(-scale, scale, 2))
    if kind == 1:
        a = c + rng.uniform(-scale, scale, 2)
        b = c + rng.uniform(-scale, scale, 2)
        if math.hypot(*(a - b)) < 1e-6:
            b = a + (0.5, 0.0)
        return ConvexBody.segment(a, b)
    return random_polygon(rng, center, scale)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
