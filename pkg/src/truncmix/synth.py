"""Synthetic datasets with mass piled up against the constraint boundary."""

import numpy as np

from .constraints import Interval, PolygonUnion
from .kernels import ComponentParams
from .mixture import MixtureState, simulate_tmog

# A non-convex island inside the unit square.
ISLAND_POLYGON = np.array([
    [0.10, 0.20], [0.45, 0.08], [0.90, 0.22], [0.78, 0.55],
    [0.95, 0.88], [0.52, 0.80], [0.14, 0.92], [0.30, 0.52],
])
# Edges whose midpoints carry the three generating components.
ISLAND_EDGES = ((0, 1), (3, 4), (6, 7))
ISLAND_COV = 0.004 * np.eye(2)


def truncated_edge_normal(rng, n, scale=0.05, scale_is="variance", lo=0.0, hi=1.0):
    """``n`` draws of ``N(0, scale)`` restricted to ``[lo, hi]``.

    ``scale_is`` says whether ``scale`` is a variance or a standard
    deviation.  Returns an (n, 1) array and the interval.
    """
    if scale_is not in ("variance", "sd"):
        raise ValueError("scale_is must be 'variance' or 'sd'")
    sd = np.sqrt(scale) if scale_is == "variance" else float(scale)
    out = np.empty(0)
    while len(out) < n:
        draw = rng.normal(0.0, sd, size=2 * (n - len(out)) + 16)
        out = np.concatenate([out, draw[(draw >= lo) & (draw <= hi)]])
    return out[:n].reshape(-1, 1), Interval(lo, hi)


def beta_edges(rng, n, a=0.1, b=0.1):
    """``n`` Beta(a, b) draws on ``[0, 1]``; both ends are sharp modes."""
    return rng.beta(a, b, size=n).reshape(-1, 1), Interval(0.0, 1.0)


def island_state():
    """Equal-weight mixture of three Gaussians centred on island edges."""
    centres = [0.5 * (ISLAND_POLYGON[i] + ISLAND_POLYGON[j]) for i, j in ISLAND_EDGES]
    comps = [ComponentParams(c, ISLAND_COV) for c in centres]
    return MixtureState.from_components(np.full(3, 1.0 / 3.0), comps)


def polygon_island(rng, n):
    """``n`` draws of the edge-centred mixture truncated to the island."""
    constraint = PolygonUnion([ISLAND_POLYGON])
    pts, _ = simulate_tmog(rng, island_state(), constraint, n)
    return pts, constraint


GENERATORS = {
    "edge_normal": truncated_edge_normal,
    "beta": beta_edges,
    "island": polygon_island,
}


def generate(kind, n, seed=0, **kwargs):
    """Dispatch to a generator by name; returns ``(points, constraint)``."""
    if kind not in GENERATORS:
        raise ValueError("unknown synthetic dataset %r; choose from %s"
                         % (kind, sorted(GENERATORS)))
    return GENERATORS[kind](np.random.default_rng(seed), n, **kwargs)
