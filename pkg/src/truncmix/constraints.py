"""Constraint sets on which the observations live.

Every set is closed: points on the boundary count as inside.  Membership
queries are exact on the given coordinates (no epsilon snapping), so repeated
queries are deterministic.
"""

import json

import numpy as np

from .exceptions import ConfigError


class ConstraintSet(object):
    """Base class for a subset of R^d given by an indicator function."""

    dim = None

    def contains(self, x):
        """Membership test.

        Parameters
        ----------
        x : array-like of shape (d,) or (n, d)

        Returns
        -------
        inside : bool or ndarray of bool of shape (n,)
        """
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            x = x.reshape(1)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        if pts.ndim != 2 or pts.shape[1] != self.dim:
            raise ValueError("Point dimension %s does not match constraint "
                             "dimension %d" % (x.shape, self.dim))
        inside = self._contains(pts)
        return bool(inside[0]) if single else inside

    def _contains(self, pts):
        raise NotImplementedError

    def bounding_box(self):
        """Axis-aligned box ``(lo, hi)`` containing the set."""
        raise NotImplementedError

    def boundary_distance(self, x):
        """Euclidean distance from each row of ``x`` to the set boundary."""
        raise NotImplementedError

    def shift(self, v):
        """Translated copy of the set."""
        raise NotImplementedError

    def to_dict(self):
        raise NotImplementedError

    @property
    def is_full(self):
        return False

    def __eq__(self, other):
        return type(self) is type(other) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(json.dumps(self.to_dict(), sort_keys=True))

    def __repr__(self):
        return "%s(%s)" % (type(self).__name__, self.to_dict())


class FullSpace(ConstraintSet):
    """The whole ambient space; nothing is ever rejected."""

    def __init__(self, dim):
        dim = int(dim)
        if dim < 1:
            raise ValueError("dim must be a positive integer, got %r" % dim)
        self.dim = dim

    @property
    def is_full(self):
        return True

    def _contains(self, pts):
        return np.ones(len(pts), dtype=bool)

    def bounding_box(self):
        raise NotImplementedError("FullSpace has no bounding box")

    def boundary_distance(self, x):
        return np.full(len(np.atleast_2d(x)), np.inf)

    def shift(self, v):
        return FullSpace(self.dim)

    def to_dict(self):
        return {"type": "full", "dim": self.dim}


class Box(ConstraintSet):
    """Closed axis-aligned box ``[lo, hi]`` with nonzero volume."""

    def __init__(self, lo, hi):
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise ValueError("lo and hi must be vectors of equal length")
        if not np.all(lo < hi):
            raise ValueError("Box requires lo < hi in every coordinate, got "
                             "lo=%s hi=%s" % (lo, hi))
        self.lo = lo
        self.hi = hi
        self.dim = len(lo)

    def _contains(self, pts):
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=1)

    def bounding_box(self):
        return self.lo.copy(), self.hi.copy()

    def boundary_distance(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        inside = np.minimum(x - self.lo, self.hi - x).min(axis=1)
        # outside points: distance to the box itself
        gap = np.maximum(np.maximum(self.lo - x, x - self.hi), 0.0)
        outside = np.sqrt((gap ** 2).sum(axis=1))
        return np.where(self._contains(x), inside, outside)

    def shift(self, v):
        v = np.asarray(v, dtype=float)
        return type(self)._from_bounds(self.lo + v, self.hi + v)

    @classmethod
    def _from_bounds(cls, lo, hi):
        return Box(lo, hi)

    def to_dict(self):
        return {"type": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}


class Interval(Box):
    """Closed interval ``[lo, hi]`` on the real line."""

    def __init__(self, lo, hi):
        super(Interval, self).__init__([lo], [hi])

    @classmethod
    def _from_bounds(cls, lo, hi):
        return Interval(lo[0], hi[0])

    def to_dict(self):
        return {"type": "interval", "lo": float(self.lo[0]),
                "hi": float(self.hi[0])}


def _ring_edges(ring):
    a = ring
    b = np.roll(ring, -1, axis=0)
    return a, b


def _segments_intersect(p1, p2, q1, q2):
    """Vectorised closed-segment intersection test."""
    def orient(a, b, c):
        return np.sign((b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1])
                       - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0]))

    def on_seg(a, b, c):
        return ((np.minimum(a[..., 0], b[..., 0]) <= c[..., 0])
                & (c[..., 0] <= np.maximum(a[..., 0], b[..., 0]))
                & (np.minimum(a[..., 1], b[..., 1]) <= c[..., 1])
                & (c[..., 1] <= np.maximum(a[..., 1], b[..., 1])))

    o1 = orient(p1, p2, q1)
    o2 = orient(p1, p2, q2)
    o3 = orient(q1, q2, p1)
    o4 = orient(q1, q2, p2)
    general = (o1 != o2) & (o3 != o4)
    collinear = (((o1 == 0) & on_seg(p1, p2, q1))
                 | ((o2 == 0) & on_seg(p1, p2, q2))
                 | ((o3 == 0) & on_seg(q1, q2, p1))
                 | ((o4 == 0) & on_seg(q1, q2, p2)))
    return general | collinear


def _check_simple(ring, index):
    m = len(ring)
    a, b = _ring_edges(ring)
    if np.any(np.all(a == b, axis=1)):
        raise ValueError("Polygon %d has repeated consecutive vertices" % index)
    i, j = np.triu_indices(m, k=2)
    # the first and last edges share a vertex
    keep = ~((i == 0) & (j == m - 1))
    i, j = i[keep], j[keep]
    if len(i) and np.any(_segments_intersect(a[i], b[i], a[j], b[j])):
        raise ValueError("Polygon %d is not simple (edges intersect)" % index)


class PolygonUnion(ConstraintSet):
    """Union of filled simple polygons in the plane.

    Parameters
    ----------
    polygons : sequence of (m_i, 2) array-likes
        Vertex rings; the first vertex need not be repeated at the end.
    validate : bool, default=True
        Reject rings with fewer than 3 vertices or self-intersections.
    """

    def __init__(self, polygons, validate=True):
        rings = []
        for idx, poly in enumerate(polygons):
            ring = np.asarray(poly, dtype=float)
            if ring.ndim != 2 or ring.shape[1] != 2:
                raise ValueError("Polygon %d must be an (m, 2) array" % idx)
            if len(ring) > 3 and np.array_equal(ring[0], ring[-1]):
                ring = ring[:-1]
            if len(ring) < 3:
                raise ValueError("Polygon %d has fewer than 3 vertices" % idx)
            if validate:
                _check_simple(ring, idx)
            rings.append(ring)
        if not rings:
            raise ValueError("PolygonUnion needs at least one polygon")
        self.polygons = rings
        self.dim = 2

    def _contains(self, pts, chunk=4096):
        out = np.zeros(len(pts), dtype=bool)
        for ring in self.polygons:
            a, b = _ring_edges(ring)
            ax, ay, bx, by = a[:, 0], a[:, 1], b[:, 0], b[:, 1]
            for start in range(0, len(pts), chunk):
                sl = slice(start, start + chunk)
                todo = ~out[sl]
                if not todo.any():
                    continue
                px = pts[sl, 0][todo][:, None]
                py = pts[sl, 1][todo][:, None]
                # half-open rule: lower endpoint included, upper excluded
                straddle = (ay <= py) != (by <= py)
                with np.errstate(divide="ignore", invalid="ignore"):
                    xcross = ax + (py - ay) * (bx - ax) / (by - ay)
                crossings = np.count_nonzero(straddle & (px < xcross), axis=1)
                cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
                on_edge = ((cross == 0)
                           & (np.minimum(ax, bx) <= px) & (px <= np.maximum(ax, bx))
                           & (np.minimum(ay, by) <= py) & (py <= np.maximum(ay, by)))
                hit = (crossings % 2 == 1) | on_edge.any(axis=1)
                sub = out[sl]
                sub[todo] = hit
                out[sl] = sub
        return out

    def bounding_box(self):
        allv = np.vstack(self.polygons)
        return allv.min(axis=0), allv.max(axis=0)

    def boundary_distance(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        best = np.full(len(x), np.inf)
        for ring in self.polygons:
            a, b = _ring_edges(ring)
            ab = b - a
            ap = x[:, None, :] - a[None]
            t = np.clip((ap * ab).sum(-1) / (ab * ab).sum(-1), 0.0, 1.0)
            proj = a[None] + t[..., None] * ab[None]
            dist = np.sqrt(((x[:, None, :] - proj) ** 2).sum(-1)).min(axis=1)
            best = np.minimum(best, dist)
        return best

    def shift(self, v):
        v = np.asarray(v, dtype=float)
        return PolygonUnion([r + v for r in self.polygons], validate=False)

    def to_dict(self):
        return {"type": "polygon_union",
                "polygons": [r.tolist() for r in self.polygons]}


def contains(constraint, x):
    """Functional alias for ``constraint.contains(x)``."""
    return constraint.contains(x)


def bounding_box(constraint):
    """Functional alias for ``constraint.bounding_box()``."""
    return constraint.bounding_box()


def constraint_from_dict(spec, dim=None):
    """Build a constraint set from its JSON-style description."""
    try:
        kind = spec["type"]
        if kind == "full":
            d = spec.get("dim", dim)
            if d is None:
                raise ConfigError("full constraint needs a 'dim'")
            return FullSpace(d)
        if kind == "box":
            return Box(spec["lo"], spec["hi"])
        if kind == "interval":
            return Interval(spec["lo"], spec["hi"])
        if kind == "polygon_union":
            return PolygonUnion(spec["polygons"])
    except KeyError as exc:
        raise ConfigError("constraint spec missing field %s" % exc)
    except ValueError as exc:
        raise ConfigError("invalid constraint: %s" % exc)
    raise ConfigError("unknown constraint type %r" % kind)


def load_constraint(path, dim=None):
    with open(path) as fh:
        try:
            spec = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("cannot parse constraint file %s: %s" % (path, exc))
    return constraint_from_dict(spec, dim=dim)
