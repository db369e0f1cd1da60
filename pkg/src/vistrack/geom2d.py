"""2D convex geometry: support functions, GJK/EPA signed distances with witness
points, annular-sector sensor footprints, and exact visibility tests.

All bodies are convex and polygonal (points and segments are degenerate
polygons), so a single GJK/EPA pipeline covers every pairing. Coordinates are
meters, angles radians.
"""

import math
from dataclasses import dataclass

import numpy as np

GJK_TOL = 1e-9
GJK_MAX_ITERS = 64
EPA_TOL = 1e-9
TOUCH_TOL = 1e-9

TWO_PI = 2.0 * math.pi


class InvalidGeometryError(ValueError):
    """Raised for degenerate or non-convex body definitions."""


def wrap_angle(a):
    """Wrap an angle into (-pi, pi]."""
    a = a % TWO_PI
    if a > math.pi:
        a -= TWO_PI
    return a


@dataclass(frozen=True)
class Pose2:
    """Planar pose; heading wrapped into (-pi, pi]."""
    x: float
    y: float
    heading: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)
                and math.isfinite(self.heading)):
            raise InvalidGeometryError("non-finite pose")
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    @property
    def position(self):
        return np.array([self.x, self.y])


class ConvexBody:
    """Point, segment, or strictly convex CCW polygon.

    Vertices are stored as an (n, 2) float array; n == 1 is a point, n == 2 a
    segment, n >= 3 a polygon. Polygons must be counter-clockwise and strictly
    convex (every consecutive cross product positive).
    """

    __slots__ = ("vertices", "_verts")

    def __init__(self, vertices):
        v = np.asarray(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 1:
            raise InvalidGeometryError("vertices must be an (n, 2) array")
        if not np.all(np.isfinite(v)):
            raise InvalidGeometryError("non-finite vertex")
        n = v.shape[0]
        if n == 2 and np.allclose(v[0], v[1]):
            raise InvalidGeometryError("segment endpoints coincide")
        if n >= 3:
            for i in range(n):
                a, b, c = v[i], v[(i + 1) % n], v[(i + 2) % n]
                cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
                if cross <= 0.0:
                    raise InvalidGeometryError(
                        "polygon must be strictly convex and CCW")
        self.vertices = v
        self._verts = [(float(p[0]), float(p[1])) for p in v]

    @classmethod
    def point(cls, p):
        return cls(np.asarray(p, dtype=float).reshape(1, 2))

    @classmethod
    def segment(cls, a, b):
        return cls(np.array([a, b], dtype=float))

    @classmethod
    def polygon(cls, vertices):
        return cls(vertices)

    @property
    def kind(self):
        n = len(self._verts)
        return "point" if n == 1 else ("segment" if n == 2 else "polygon")

    def support(self, dx, dy):
        """Vertex maximizing the dot product with direction (dx, dy)."""
        verts = self._verts
        best = verts[0]
        best_dot = best[0] * dx + best[1] * dy
        for p in verts[1:]:
            d = p[0] * dx + p[1] * dy
            if d > best_dot:
                best_dot = d
                best = p
        return best

    def translated(self, t):
        return ConvexBody(self.vertices + np.asarray(t, dtype=float))


@dataclass(frozen=True)
class FovParams:
    """Annular-sector field of view: radii r1 < r2, total sensing angle psi,
    and the chord count used to inscribe the outer arc."""
    r1: float
    r2: float
    psi: float
    arc_segments: int = 6

    def __post_init__(self):
        if not (0.0 < self.r1 < self.r2):
            raise InvalidGeometryError("need 0 < r1 < r2")
        if not (0.0 < self.psi < math.pi):
            raise InvalidGeometryError("need 0 < psi < pi")
        if self.arc_segments < 2:
            raise InvalidGeometryError("need arc_segments >= 2")


@dataclass(frozen=True)
class SdfResult:
    """Signed distance with witness points.

    ``signed_distance`` < 0 iff the bodies overlap. ``p1`` lies on body A,
    ``p2`` on body B; ``normal`` is the unit contact normal
    sgn(d) * (p1 - p2) / ||p1 - p2||.
    """
    signed_distance: float
    p1: np.ndarray
    p2: np.ndarray
    normal: np.ndarray


# ---------------------------------------------------------------------------
# GJK / EPA on the Minkowski difference A - B.
# Simplex entries are ((wx, wy), (ax, ay), (bx, by)).
# ---------------------------------------------------------------------------

def _mink_support(a, b, dx, dy):
    pa = a.support(dx, dy)
    pb = b.support(-dx, -dy)
    return ((pa[0] - pb[0], pa[1] - pb[1]), pa, pb)


def _closest_on_segment(p, q):
    """Closest point to the origin on segment p-q, with barycentric weight of q."""
    ex, ey = q[0] - p[0], q[1] - p[1]
    ee = ex * ex + ey * ey
    if ee <= 0.0:
        return p, 0.0
    t = -(p[0] * ex + p[1] * ey) / ee
    if t <= 0.0:
        return p, 0.0
    if t >= 1.0:
        return q, 1.0
    return (p[0] + t * ex, p[1] + t * ey), t


def _gjk(a, b):
    """Distance GJK. Returns (dist, closest, polytope, contains_origin).

    ``closest`` is the point of A - B nearest the origin. When the origin is
    strictly contained, ``polytope`` is a CCW polygon of support entries
    enclosing the origin, ready for EPA.
    """
    d0x, d0y = 1.0, 0.0
    s = _mink_support(a, b, d0x, d0y)
    simplex = [s]
    closest = s[0]
    for _ in range(GJK_MAX_ITERS):
        # Reduce the simplex to the minimal feature supporting the closest point.
        if len(simplex) == 1:
            closest = simplex[0][0]
        elif len(simplex) == 2:
            c, t = _closest_on_segment(simplex[0][0], simplex[1][0])
            closest = c
            if t <= 0.0:
                simplex = [simplex[0]]
            elif t >= 1.0:
                simplex = [simplex[1]]
        else:
            closest, keep, inside = _closest_on_triangle(
                simplex[0][0], simplex[1][0], simplex[2][0])
            if inside:
                return 0.0, (0.0, 0.0), simplex, True
            simplex = [simplex[i] for i in keep]
        dist2 = closest[0] * closest[0] + closest[1] * closest[1]
        if dist2 <= GJK_TOL * GJK_TOL:
            # Origin lies on the current feature: interior or boundary of
            # A - B. Probe supports to decide, seeding EPA if interior.
            return _resolve_zero_distance(a, b, simplex, closest)
        dx, dy = -closest[0], -closest[1]
        w = _mink_support(a, b, dx, dy)
        # No progress toward the origin: converged.
        progress = (dx * w[0][0] + dy * w[0][1]) - (dx * closest[0] + dy * closest[1])
        if progress <= GJK_TOL * (1.0 + math.sqrt(dist2)):
            break
        if any(w[0] == e[0] for e in simplex):
            break
        simplex.append(w)
    return math.sqrt(closest[0] ** 2 + closest[1] ** 2), closest, simplex, False


def _resolve_zero_distance(a, b, simplex, closest):
    """Distinguish touching from penetration when GJK reaches the origin."""
    if len(simplex) == 2:
        px, py = simplex[0][0]
        qx, qy = simplex[1][0]
        ex, ey = qx - px, qy - py
        el = math.hypot(ex, ey)
        dirs = [(ey / el, -ex / el), (-ey / el, ex / el)] if el > 0.0 else \
            [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)]
    else:
        dirs = [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)]
    entries = list(simplex)
    for dx, dy in dirs:
        w = _mink_support(a, b, dx, dy)
        if dx * w[0][0] + dy * w[0][1] <= TOUCH_TOL:
            # A supporting direction with no positive extent: origin on the
            # boundary of A - B, bodies merely touch.
            return 0.0, closest, simplex, False
        if not any(w[0] == e[0] for e in entries):
            entries.append(w)
    poly = _ccw_hull(entries)
    if len(poly) < 3 or not _origin_strictly_inside(poly):
        return 0.0, closest, simplex, False
    return 0.0, (0.0, 0.0), poly, True


def _ccw_hull(entries):
    """Convex hull (CCW) of support entries, by angle around the centroid."""
    pts = [e[0] for e in entries]
    cx = sum(p[0] for p in pts) / len(pts)
    cy = sum(p[1] for p in pts) / len(pts)
    ordered = sorted(entries,
                     key=lambda e: math.atan2(e[0][1] - cy, e[0][0] - cx))
    # Drop hull-interior points (non-left turns).
    hull = []
    for e in ordered:
        while len(hull) >= 2:
            o, p = hull[-2][0], hull[-1][0]
            cross = ((p[0] - o[0]) * (e[0][1] - o[1])
                     - (p[1] - o[1]) * (e[0][0] - o[0]))
            if cross <= 0.0:
                hull.pop()
            else:
                break
        hull.append(e)
    return hull


def _origin_strictly_inside(poly):
    m = len(poly)
    for i in range(m):
        v1 = poly[i][0]
        v2 = poly[(i + 1) % m][0]
        cross = (v2[0] - v1[0]) * (-v1[1]) - (v2[1] - v1[1]) * (-v1[0])
        if cross <= TOUCH_TOL:
            return False
    return True


def _closest_on_triangle(p, q, r):
    """Closest point to the origin on triangle pqr.

    Returns (point, kept_indices, origin_inside).
    """
    # Edge vectors and region tests (Ericson, Real-Time Collision Detection).
    ab = (q[0] - p[0], q[1] - p[1])
    ac = (r[0] - p[0], r[1] - p[1])
    ap = (-p[0], -p[1])
    d1 = ab[0] * ap[0] + ab[1] * ap[1]
    d2 = ac[0] * ap[0] + ac[1] * ap[1]
    if d1 <= 0.0 and d2 <= 0.0:
        return p, (0,), False
    bp = (-q[0], -q[1])
    d3 = ab[0] * bp[0] + ab[1] * bp[1]
    d4 = ac[0] * bp[0] + ac[1] * bp[1]
    if d3 >= 0.0 and d4 <= d3:
        return q, (1,), False
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        denom = d1 - d3
        t = d1 / denom if denom != 0.0 else 0.0
        return (p[0] + t * ab[0], p[1] + t * ab[1]), (0, 1), False
    cp = (-r[0], -r[1])
    d5 = ab[0] * cp[0] + ab[1] * cp[1]
    d6 = ac[0] * cp[0] + ac[1] * cp[1]
    if d6 >= 0.0 and d5 <= d6:
        return r, (2,), False
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        denom = d2 - d6
        t = d2 / denom if denom != 0.0 else 0.0
        return (p[0] + t * ac[0], p[1] + t * ac[1]), (0, 2), False
    va = d3 * d6 - d5 * d4
    bc = (r[0] - q[0], r[1] - q[1])
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        denom = (d4 - d3) + (d5 - d6)
        t = (d4 - d3) / denom if denom != 0.0 else 0.0
        return (q[0] + t * bc[0], q[1] + t * bc[1]), (1, 2), False
    # Origin is inside the triangle.
    return (0.0, 0.0), (0, 1, 2), True


def _epa(a, b, simplex):
    """Expanding polytope: penetration depth and outward normal of the
    deepest-contact edge of A - B. Requires a simplex containing the origin."""
    poly = [e for e in simplex]
    # Ensure CCW winding (shoelace sign).
    area = 0.0
    for i in range(len(poly)):
        p = poly[i][0]
        q = poly[(i + 1) % len(poly)][0]
        area += p[0] * q[1] - q[0] * p[1]
    if area < 0.0:
        poly.reverse()
    for _ in range(64):
        # Closest edge of the polytope to the origin.
        best_i = 0
        best_dist = math.inf
        best_n = (1.0, 0.0)
        m = len(poly)
        for i in range(m):
            v1 = poly[i][0]
            v2 = poly[(i + 1) % m][0]
            ex, ey = v2[0] - v1[0], v2[1] - v1[1]
            el = math.hypot(ex, ey)
            if el <= 0.0:
                continue
            # Outward normal for a CCW polygon.
            nx, ny = ey / el, -ex / el
            d = nx * v1[0] + ny * v1[1]
            if d < 0.0:
                nx, ny, d = -nx, -ny, -d
            if d < best_dist:
                best_dist = d
                best_i = i
                best_n = (nx, ny)
        w = _mink_support(a, b, best_n[0], best_n[1])
        support_d = best_n[0] * w[0][0] + best_n[1] * w[0][1]
        if support_d - best_dist <= EPA_TOL:
            return best_dist, best_n
        poly.insert(best_i + 1, w)
    return best_dist, best_n


# ---------------------------------------------------------------------------
# Witness refinement. GJK/EPA give a converged separation axis; the actual
# witness pair is recomputed from the supporting features so that parallel
# faces deterministically yield the midpoint of their tangential overlap.
# ---------------------------------------------------------------------------

def _support_feature(body, ux, uy):
    """Vertices of ``body`` extremal along (ux, uy), as a list of tuples."""
    verts = body._verts
    best = max(v[0] * ux + v[1] * uy for v in verts)
    scale = 1.0 + abs(best)
    tol = 1e-9 * scale
    feat = [v for v in verts if v[0] * ux + v[1] * uy >= best - tol]
    if len(feat) > 2:
        # Numerical ties on tiny bodies; keep the two extremes tangentially.
        tx, ty = -uy, ux
        feat.sort(key=lambda v: v[0] * tx + v[1] * ty)
        feat = [feat[0], feat[-1]]
    return feat


def _witnesses_from_axis(a, b, ux, uy):
    """Witness pair (p1 on A, p2 on B) given the axis A -> B direction (ux, uy).

    Parallel edge features resolve to the midpoint of the tangential overlap
    interval; vertex features project onto the opposing feature.
    """
    fa = _support_feature(a, ux, uy)
    fb = _support_feature(b, -ux, -uy)
    tx, ty = -uy, ux

    def tcoord(v):
        return v[0] * tx + v[1] * ty

    if len(fa) == 2 and len(fb) == 2:
        lo = max(min(tcoord(fa[0]), tcoord(fa[1])),
                 min(tcoord(fb[0]), tcoord(fb[1])))
        hi = min(max(tcoord(fa[0]), tcoord(fa[1])),
                 max(tcoord(fb[0]), tcoord(fb[1])))
        if lo <= hi:
            tm = 0.5 * (lo + hi)
            p1 = _point_on_edge_at_t(fa, tx, ty, tm)
            p2 = _point_on_edge_at_t(fb, tx, ty, tm)
            return p1, p2
        # Disjoint tangential intervals: closest endpoints.
        pa = min(fa, key=lambda v: min(abs(tcoord(v) - tcoord(w)) for w in fb))
        pb = min(fb, key=lambda v: abs(tcoord(v) - tcoord(pa)))
        return pa, pb
    if len(fa) == 1 and len(fb) == 1:
        return fa[0], fb[0]
    if len(fa) == 1:
        p2, _ = _closest_on_segment(
            (fb[0][0] - fa[0][0], fb[0][1] - fa[0][1]),
            (fb[1][0] - fa[0][0], fb[1][1] - fa[0][1]))
        return fa[0], (p2[0] + fa[0][0], p2[1] + fa[0][1])
    p1, _ = _closest_on_segment(
        (fa[0][0] - fb[0][0], fa[0][1] - fb[0][1]),
        (fa[1][0] - fb[0][0], fa[1][1] - fb[0][1]))
    return (p1[0] + fb[0][0], p1[1] + fb[0][1]), fb[0]


def _point_on_edge_at_t(edge, tx, ty, t):
    """Point on a 2-vertex edge with tangential coordinate t."""
    t0 = edge[0][0] * tx + edge[0][1] * ty
    t1 = edge[1][0] * tx + edge[1][1] * ty
    if t1 == t0:
        return edge[0]
    s = (t - t0) / (t1 - t0)
    return (edge[0][0] + s * (edge[1][0] - edge[0][0]),
            edge[0][1] + s * (edge[1][1] - edge[0][1]))


def signed_distance(a, b):
    """Signed distance between two convex bodies with witness points.

    Positive when separated (GJK), negative when overlapping (EPA), zero with
    coincident witnesses when touching.
    """
    dist, closest, simplex, penetrating = _gjk(a, b)
    if penetrating:
        depth, n_m = _epa(a, b, simplex)
        if depth <= TOUCH_TOL:
            return _touching_result(a, b, n_m)
        # Feature of A along n_m, of B along -n_m; p1 - p2 ~ depth * n_m.
        p1, p2 = _witnesses_from_axis(a, b, n_m[0], n_m[1])
        sd = -depth
        normal = np.array([-n_m[0], -n_m[1]])
        return SdfResult(sd, np.array(p1), np.array(p2), normal)
    if dist <= TOUCH_TOL:
        ux, uy = (-closest[0], -closest[1])
        norm = math.hypot(ux, uy)
        if norm > 0.0:
            ux, uy = ux / norm, uy / norm
        else:
            ux, uy = 1.0, 0.0
        return _touching_result(a, b, (ux, uy))
    # Separated: axis from A toward B is -closest / |closest|.
    ux, uy = -closest[0] / dist, -closest[1] / dist
    p1, p2 = _witnesses_from_axis(a, b, ux, uy)
    dx, dy = p1[0] - p2[0], p1[1] - p2[1]
    sd = math.hypot(dx, dy)
    normal = np.array([dx / sd, dy / sd]) if sd > 0.0 else np.array([ux, uy])
    return SdfResult(sd, np.array(p1), np.array(p2), normal)


def _touching_result(a, b, direction):
    p1, p2 = _witnesses_from_axis(a, b, direction[0], direction[1])
    mid = np.array([0.5 * (p1[0] + p2[0]), 0.5 * (p1[1] + p2[1])])
    return SdfResult(0.0, mid.copy(), mid.copy(),
                     np.array([direction[0], direction[1]]))


# ---------------------------------------------------------------------------
# Field of view.
# ---------------------------------------------------------------------------

def sector_halfplanes(pose, fov):
    """The two angular boundary half-planes a_i . x <= b_i of the sensing
    sector at ``pose``. Returns (A, b) with A of shape (2, 2)."""
    alpha = 0.5 * fov.psi
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    sa, ca = math.sin(alpha), math.cos(alpha)
    # Local normals (-sin a, +/- cos a) rotated into the world frame.
    n1 = (-sa * c - ca * s, -sa * s + ca * c)
    n2 = (-sa * c + ca * s, -sa * s - ca * c)
    A = np.array([n1, n2])
    bvec = A @ np.array([pose.x, pose.y])
    return A, bvec


def convexify_fov(pose, fov):
    """Convex polygonal under-approximation of the annular-sector FOV.

    Bounded by the chord tangent to the inner arc (perpendicular to the
    heading), the two angular boundary rays, and the outer arc of radius r2
    inscribed with ``fov.arc_segments`` chords. Always a subset of the true
    sector.
    """
    alpha = 0.5 * fov.psi
    r1, r2 = fov.r1, fov.r2
    if r2 * math.cos(alpha) <= r1 + 1e-12:
        raise InvalidGeometryError(
            "FOV too wide for chord convexification: r2*cos(psi/2) <= r1")
    local = [(r1, -r1 * math.tan(alpha)),
             (r2 * math.cos(alpha), -r2 * math.sin(alpha))]
    n_arc = fov.arc_segments
    for j in range(1, n_arc):
        ang = -alpha + fov.psi * j / n_arc
        local.append((r2 * math.cos(ang), r2 * math.sin(ang)))
    local.append((r2 * math.cos(alpha), r2 * math.sin(alpha)))
    local.append((r1, r1 * math.tan(alpha)))
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    world = [(pose.x + c * px - s * py, pose.y + s * px + c * py)
             for px, py in local]
    return ConvexBody.polygon(world)


def fov_local_vertices(fov):
    """Local-frame vertices of the convexified FOV (heading along +x)."""
    return convexify_fov(Pose2(0.0, 0.0, 0.0), fov).vertices


def point_in_sector(pose, fov, p):
    """Membership in the true (non-convexified) annular sector."""
    dx, dy = p[0] - pose.x, p[1] - pose.y
    r = math.hypot(dx, dy)
    if r < fov.r1 or r > fov.r2:
        return False
    A, bvec = sector_halfplanes(pose, fov)
    return bool(A[0, 0] * p[0] + A[0, 1] * p[1] <= bvec[0] + 1e-12
                and A[1, 0] * p[0] + A[1, 1] * p[1] <= bvec[1] + 1e-12)


def segment_intersects_interior(p, q, body):
    """True iff segment p-q crosses the interior of a convex polygon.

    Cyrus-Beck clipping against the polygon's half-planes; grazing contact
    with the boundary does not count.
    """
    verts = body._verts
    n = len(verts)
    t_enter, t_exit = 0.0, 1.0
    dx, dy = q[0] - p[0], q[1] - p[1]
    for i in range(n):
        v1 = verts[i]
        v2 = verts[(i + 1) % n]
        # Outward normal of CCW edge.
        ex, ey = v2[0] - v1[0], v2[1] - v1[1]
        nx, ny = ey, -ex
        num = nx * (v1[0] - p[0]) + ny * (v1[1] - p[1])
        den = nx * dx + ny * dy
        if abs(den) < 1e-15:
            # Parallel: outside, or running along the edge itself.
            if num <= 1e-12:
                return False
            continue
        t = num / den
        if den < 0.0:
            if t > t_enter:
                t_enter = t
        else:
            if t < t_exit:
                t_exit = t
        if t_enter >= t_exit:
            return False
    return t_exit - t_enter > 1e-12


def exact_visibility(robot, target, obstacles, fov):
    """Exact detection oracle: target inside the true annular sector and the
    line of sight free of obstacle interiors."""
    if not point_in_sector(robot, fov, target):
        return False
    p = (robot.x, robot.y)
    q = (float(target[0]), float(target[1]))
    for obs in obstacles:
        if segment_intersects_interior(p, q, obs):
            return False
    return True
