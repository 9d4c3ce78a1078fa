"""Seeded random hierarchies and a small synthetic rolling-origin data set."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hierrec.hierarchy import Hierarchy, HierarchySpec, balance
from hierrec.reconcile import ForecastSet


def _nested_spec(rng: np.random.Generator, L: int, max_bottom: int) -> HierarchySpec:
    levels = [["T"]]
    edges = []
    bottom = []

    def add_bottoms(parent, k):
        for _ in range(k):
            b = f"b{len(bottom)}"
            bottom.append(b)
            edges.append((parent, b))

    for l in range(2, L + 1):
        nxt = []
        for p in levels[-1]:
            # an occasional node skips straight to the bottom (needs balancing)
            if l > 2 and rng.random() < 0.15:
                add_bottoms(p, int(rng.integers(1, 3)))
                continue
            for _ in range(int(rng.integers(1, 4))):
                c = f"n{l}_{len(nxt)}"
                nxt.append(c)
                edges.append((p, c))
        if not nxt:
            break
        levels.append(nxt)
    for p in levels[-1]:
        add_bottoms(p, int(rng.integers(1, 4)))
    return HierarchySpec(levels, bottom, edges)


def _grouped_spec(rng: np.random.Generator, L: int, max_bottom: int) -> HierarchySpec:
    sizes = []
    for _ in range(L - 1):
        room = max_bottom // max(1, int(np.prod(sizes)) if sizes else 1)
        sizes.append(int(rng.integers(2, max(3, min(4, room) + 1))))
    cells = [()]
    for s in sizes:
        cells = [c + (i,) for c in cells for i in range(s)]
    bottom = ["c" + "_".join(map(str, c)) for c in cells]
    levels = [["T"]] + [[f"g{f}_{i}" for i in range(s)] for f, s in enumerate(sizes)]
    edges = [("T", b) for b in bottom]
    for f in range(len(sizes)):
        edges += [(f"g{f}_{c[f]}", b) for c, b in zip(cells, bottom)]
    return HierarchySpec(levels, bottom, edges)


def random_hierarchy(seed=None, kind: str | None = None, max_levels: int = 4, max_bottom: int = 40) -> Hierarchy:
    """A balanced random hierarchy with L <= ``max_levels`` upper levels and n_b <= ``max_bottom``.

    ``kind`` is "nested" (a tree, possibly needing duplication) or "grouped"
    (cross-classified factors under one total); random if None.
    """
    rng = np.random.default_rng(seed)
    kind = kind or ("nested", "grouped")[int(rng.integers(2))]
    while True:
        L = int(rng.integers(1 if kind == "nested" else 2, max_levels + 1))
        spec = (_nested_spec if kind == "nested" else _grouped_spec)(rng, L, max_bottom)
        h = balance(spec)
        if h.n_b <= max_bottom:
            return h


@dataclass(frozen=True)
class SyntheticData:
    hierarchy: Hierarchy
    observations: np.ndarray
    base: dict
    seasonal_period: int


def synthetic_hierarchy() -> Hierarchy:
    """Total, 4 regions, 12 zones and 36 bottom series (53 series)."""
    regions = [f"R{i}" for i in range(4)]
    zones = [f"Z{i}" for i in range(12)]
    bottom = [f"B{i}" for i in range(36)]
    edges = [("T", r) for r in regions]
    edges += [(regions[i // 3], z) for i, z in enumerate(zones)]
    edges += [(zones[i // 3], b) for i, b in enumerate(bottom)]
    return balance(HierarchySpec([["T"], regions, zones], bottom, edges))


def synthetic_data(seed: int = 0, T: int = 72, seasonal_period: int = 12, horizons: int = 3) -> SyntheticData:
    """Seasonal non-negative bottoms, several of them small, plus noisy base forecasts.

    Base forecasts at origin ``o`` are the actuals ``o + 1 .. o + H`` plus
    noise whose scale does not shrink with the series level, so the small
    bottom series get occasional negative base forecasts while the totals
    stay well away from zero. Horizons past the end of the data reuse the
    last row.
    """
    rng = np.random.default_rng(seed)
    h = synthetic_hierarchy()
    nb, m = h.n_b, seasonal_period
    level = rng.uniform(2.0, 8.0, nb)
    # one small series per zone (groups of three bottoms)
    small = 3 * np.arange(nb // 3) + rng.integers(0, 3, nb // 3)
    level[small] = rng.uniform(0.2, 1.0, nb // 3)
    phase = rng.uniform(0, 2 * np.pi, nb)
    t = np.arange(T)[:, None]
    season = 1 + 0.3 * np.sin(2 * np.pi * t / m + phase)
    bottoms = np.maximum(level * season + rng.normal(0, 0.3, (T, nb)) * np.sqrt(level), 0.0)
    Y = np.asarray(h.S @ bottoms.T).T
    sd = np.concatenate([0.05 * np.abs(Y[:, : h.n_a]).mean(axis=0), np.full(nb, 0.8)])
    store = {}
    for o in range(T - 1):
        rows = np.minimum(np.arange(o + 1, o + 1 + horizons), T - 1)
        vals = Y[rows].T + rng.normal(0, 1, (h.n, horizons)) * sd[:, None]
        store[o] = ForecastSet(vals, h.labels, o, "synthetic")
    return SyntheticData(h, Y, store, m)
