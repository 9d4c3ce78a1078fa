"""Hierarchical/grouped structures and the matrices derived from them.

Series are always ordered upper levels first (level 1 = the total), in the
order given by the spec, followed by the bottom series. ``C`` maps bottom
series to upper series, ``S = [C; I]`` maps bottom series to all series.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import sparse

from hierrec.errors import InputError

# above this many series the aggregation matrices are kept in CSR form
DENSE_LIMIT = 2000
COHERENCE_RTOL = 1e-8
DUP_SUFFIX = "_dup"


@dataclass(frozen=True)
class HierarchySpec:
    """Declarative description of a hierarchy.

    ``levels`` lists the upper levels top first, ``bottom`` the bottom series
    and ``edges`` the (parent, child) links. A child may be a node of any
    deeper level, including a bottom series directly, which is how grouped
    (cross-classified) levels are entered. ``duplicates`` lists
    (original, synthetic) pairs produced by :func:`balance`.
    """

    levels: tuple[tuple[str, ...], ...]
    bottom: tuple[str, ...]
    edges: tuple[tuple[str, str], ...]
    duplicates: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(tuple(str(v) for v in lv) for lv in self.levels))
        object.__setattr__(self, "bottom", tuple(str(v) for v in self.bottom))
        object.__setattr__(self, "edges", tuple((str(p), str(c)) for p, c in self.edges))
        object.__setattr__(self, "duplicates", tuple((str(a), str(b)) for a, b in self.duplicates))

    @classmethod
    def from_dict(cls, d: dict) -> "HierarchySpec":
        try:
            return cls(
                levels=d["levels"],
                bottom=d["bottom"],
                edges=d.get("edges", ()),
                duplicates=d.get("duplicates", ()),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed hierarchy description: {exc}") from exc

    def to_dict(self) -> dict:
        d = {
            "levels": [list(lv) for lv in self.levels],
            "bottom": list(self.bottom),
            "edges": [list(e) for e in self.edges],
        }
        if self.duplicates:
            d["duplicates"] = [list(p) for p in self.duplicates]
        return d


@dataclass(frozen=True)
class ElementaryHierarchy:
    parent_id: str
    bottom_indices: tuple[int, ...]

    @property
    def local_sum_row(self) -> np.ndarray:
        return np.ones(len(self.bottom_indices))


@dataclass(frozen=True, eq=False)
class Hierarchy:
    """A validated, balanced hierarchy with its aggregation matrices.

    Immutable once built; the matrices are marked read-only.
    """

    spec: HierarchySpec
    C: np.ndarray | sparse.csr_matrix
    duplication_map: tuple[tuple[str, str], ...] = field(default=())

    @property
    def L(self) -> int:
        return len(self.spec.levels)

    @property
    def n_b(self) -> int:
        return len(self.spec.bottom)

    @property
    def n_a(self) -> int:
        return self.C.shape[0]

    @property
    def n(self) -> int:
        return self.n_a + self.n_b

    @property
    def level_sizes(self) -> tuple[int, ...]:
        return tuple(len(lv) for lv in self.spec.levels)

    @property
    def is_sparse(self) -> bool:
        return sparse.issparse(self.C)

    @cached_property
    def upper_labels(self) -> tuple[str, ...]:
        return tuple(v for lv in self.spec.levels for v in lv)

    @property
    def bottom_labels(self) -> tuple[str, ...]:
        return self.spec.bottom

    @cached_property
    def labels(self) -> tuple[str, ...]:
        return self.upper_labels + self.bottom_labels

    @cached_property
    def index(self) -> dict[str, int]:
        return {lab: i for i, lab in enumerate(self.labels)}

    @cached_property
    def level_offsets(self) -> tuple[int, ...]:
        return tuple(np.concatenate([[0], np.cumsum(self.level_sizes)]).astype(int))

    def level_rows(self, l: int) -> slice:
        """Row slice of level ``l`` (1-based) inside the upper block."""
        _check_level(self, l)
        return slice(self.level_offsets[l - 1], self.level_offsets[l])

    @cached_property
    def S(self):
        if self.is_sparse:
            S = sparse.vstack([self.C, sparse.identity(self.n_b, format="csr")]).tocsr()
        else:
            S = np.vstack([self.C, np.eye(self.n_b)])
            S.setflags(write=False)
        return S

    @cached_property
    def C_levels(self) -> tuple:
        return tuple(level_matrix(self, l) for l in range(1, self.L + 1))

    @cached_property
    def groups(self) -> tuple[str, ...]:
        """Evaluation group of each series: ``uts``, ``bts`` or ``duplicate``."""
        dup = {b for _, b in self.duplication_map}
        return tuple(
            "duplicate" if lab in dup else ("uts" if i < self.n_a else "bts")
            for i, lab in enumerate(self.labels)
        )

    def constraint_matrix(self):
        """``[I_{n_a} | -C]``: zero exactly on coherent vectors."""
        if self.is_sparse:
            return sparse.hstack([sparse.identity(self.n_a, format="csr"), -self.C]).tocsr()
        return np.hstack([np.eye(self.n_a), -self.C])

    def __repr__(self) -> str:
        return f"Hierarchy(L={self.L}, n_a={self.n_a}, n_b={self.n_b}, sparse={self.is_sparse})"


def _check_level(h: Hierarchy, l: int) -> None:
    if not isinstance(l, (int, np.integer)) or not 1 <= l <= h.L:
        raise InputError(f"level {l!r} out of range 1..{h.L}")


def _validate(spec: HierarchySpec) -> None:
    if not spec.levels:
        raise InputError("hierarchy needs at least one upper level")
    for i, lv in enumerate(spec.levels, start=1):
        if not lv:
            raise InputError(f"level {i} is empty")
    if len(spec.levels[0]) != 1:
        raise InputError(f"level 1 must contain exactly one node, got {len(spec.levels[0])}")
    if not spec.bottom:
        raise InputError("hierarchy needs at least one bottom series")

    upper = [v for lv in spec.levels for v in lv]
    bottom_set = set(spec.bottom)
    for v in upper:
        if v in bottom_set:
            raise InputError(f"node {v!r} is listed both as an upper node and as a bottom series")
    seen: set[str] = set()
    for v in upper + list(spec.bottom):
        if v in seen:
            raise InputError(f"duplicate node label {v!r}")
        seen.add(v)

    depth = {v: i for i, lv in enumerate(spec.levels) for v in lv}
    depth.update({b: len(spec.levels) for b in spec.bottom})
    children: dict[str, list[str]] = defaultdict(list)
    for p, c in spec.edges:
        for v in (p, c):
            if v not in depth:
                raise InputError(f"edge refers to unknown node {v!r}")
        if p in bottom_set:
            raise InputError(f"bottom series {p!r} cannot be a parent")
        children[p].append(c)

    # cycle check before the depth check so cyclic input gets the clearer message
    state: dict[str, int] = {}
    for root in children:
        stack = [(root, iter(children[root]))]
        state[root] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                state[node] = 2
                stack.pop()
                continue
            s = state.get(nxt, 0)
            if s == 1:
                raise InputError(f"cyclic parent reference through {nxt!r}")
            if s == 0:
                state[nxt] = 1
                stack.append((nxt, iter(children.get(nxt, ()))))
    for p, c in spec.edges:
        if depth[c] <= depth[p]:
            raise InputError(f"edge {p!r} -> {c!r} does not point to a deeper level")


def _descendants(spec: HierarchySpec) -> dict[str, frozenset[str]]:
    bottom_set = set(spec.bottom)
    children: dict[str, list[str]] = defaultdict(list)
    for p, c in spec.edges:
        children[p].append(c)
    out: dict[str, frozenset[str]] = {}
    # deepest levels first so each node's children are already resolved
    for lv in reversed(spec.levels):
        for v in lv:
            acc: set[str] = set()
            for c in children.get(v, ()):
                if c in bottom_set:
                    acc.add(c)
                else:
                    acc |= out[c]
            out[v] = frozenset(acc)
    return out


def _matrix(spec: HierarchySpec, desc: dict[str, frozenset[str]]):
    col = {b: j for j, b in enumerate(spec.bottom)}
    rows, cols = [], []
    r = 0
    for lv in spec.levels:
        for v in lv:
            for b in desc[v]:
                rows.append(r)
                cols.append(col[b])
            r += 1
    n = r + len(spec.bottom)
    C = sparse.csr_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(r, len(spec.bottom))
    )
    C.sort_indices()
    if n <= DENSE_LIMIT:
        C = C.toarray()
        C.setflags(write=False)
    return C


def build_hierarchy(spec: HierarchySpec) -> Hierarchy:
    """Materialize the matrices of an already balanced ``spec``.

    Level order is taken as given. Raises :class:`InputError` if some level
    does not partition the bottom series (use :func:`balance` for structures
    with childless upper nodes).
    """
    _validate(spec)
    desc = _descendants(spec)
    for i, lv in enumerate(spec.levels, start=1):
        covered: list[str] = []
        for v in lv:
            if not desc[v]:
                raise InputError(f"upper node {v!r} has no bottom descendants; balance the hierarchy first")
            covered.extend(desc[v])
        if len(covered) != len(set(covered)):
            raise InputError(f"level {i} assigns some bottom series to more than one node")
        if len(covered) != len(spec.bottom):
            missing = sorted(set(spec.bottom) - set(covered))
            raise InputError(f"level {i} does not cover bottom series {missing[:5]}")
    return Hierarchy(spec=spec, C=_matrix(spec, desc), duplication_map=spec.duplicates)


def balance(spec: HierarchySpec) -> Hierarchy:
    """Balance ``spec`` by duplicating childless nodes downward.

    A node with no descendants at the next level gets a synthetic copy
    ``<id>_dup`` there (and so on down to the bottom level). Every synthetic
    node is recorded in ``duplication_map`` as (original, copy).
    Already-balanced input is returned unchanged.
    """
    _validate(spec)
    levels = [list(lv) for lv in spec.levels]
    bottom = list(spec.bottom)
    edges = list(spec.edges)
    dups = list(spec.duplicates)
    labels = {v for lv in levels for v in lv} | set(bottom)
    children: dict[str, list[str]] = defaultdict(list)
    for p, c in edges:
        children[p].append(c)

    def new_label(v: str) -> str:
        name = v + DUP_SUFFIX
        if name in labels:
            raise InputError(f"cannot create synthetic node {name!r}: label already in use")
        labels.add(name)
        return name

    L = len(levels)
    for li in range(L):
        cur = HierarchySpec(levels, bottom, edges)
        desc = _descendants(cur)
        if li < L - 1:
            covered = set().union(*(desc[v] for v in levels[li + 1]))
        for v in list(levels[li]):
            dv = desc[v]
            if li == L - 1:
                if not dv:
                    b = new_label(v)
                    bottom.append(b)
                    edges.append((v, b))
                    children[v].append(b)
                    dups.append((v, b))
                continue
            if dv and dv <= covered:
                continue
            if dv and not dv.isdisjoint(covered):
                raise InputError(
                    f"node {v!r} is only partly covered by level {li + 2}; cannot balance"
                )
            w = new_label(v)
            levels[li + 1].append(w)
            for c in children[v]:
                edges.append((w, c))
                children[w].append(c)
            edges.append((v, w))
            children[v].append(w)
            dups.append((v, w))

    return build_hierarchy(HierarchySpec(levels, bottom, edges, dups))


def level_matrix(h: Hierarchy, l: int):
    """The (n_l x n_b) block ``C_l`` of level ``l`` (1-based)."""
    _check_level(h, l)
    return h.C[h.level_rows(l)]


def elementary_hierarchies(h: Hierarchy, l: int) -> list[ElementaryHierarchy]:
    Cl = level_matrix(h, l)
    names = h.spec.levels[l - 1]
    out = []
    for r, name in enumerate(names):
        row = Cl[r]
        if sparse.issparse(row):
            idx = row.indices
        else:
            idx = np.flatnonzero(row)
        out.append(ElementaryHierarchy(name, tuple(int(i) for i in sorted(idx))))
    return out


def coherence_residual(y, h: Hierarchy):
    """Max-norm of ``a - C b``; one value per column when ``y`` is 2-D."""
    y = np.asarray(y, dtype=float)
    if y.shape[0] != h.n:
        raise InputError(f"expected {h.n} rows, got {y.shape[0]}")
    r = y[: h.n_a] - h.C @ y[h.n_a:]
    if y.ndim == 1:
        return float(np.max(np.abs(r), initial=0.0))
    return np.max(np.abs(r), axis=0, initial=0.0)


def coherence_tolerance(y) -> np.ndarray | float:
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        return COHERENCE_RTOL * (1.0 + float(np.max(np.abs(y), initial=0.0)))
    return COHERENCE_RTOL * (1.0 + np.max(np.abs(y), axis=0, initial=0.0))


def is_coherent(y, h: Hierarchy) -> bool:
    return bool(np.all(coherence_residual(y, h) <= coherence_tolerance(y)))


def hierarchy_from_ancestors(rows: Sequence[Sequence[str]]) -> HierarchySpec:
    """Spec from rows of ``(level-1 id, ..., level-L id, bottom id)``.

    Each upper column links straight to the bottom id, so tree and grouped
    structures are handled alike.
    """
    rows = [tuple(str(c).strip() for c in r) for r in rows]
    if not rows:
        raise InputError("no rows in ancestor table")
    width = len(rows[0])
    if width < 2 or any(len(r) != width for r in rows):
        raise InputError("ancestor table rows must all have the same width >= 2")
    levels: list[list[str]] = [[] for _ in range(width - 1)]
    bottom, edges = [], []
    for r in rows:
        if any(c == "" for c in r):
            raise InputError(f"empty ancestor cell in row {r}")
        bottom.append(r[-1])
        for j, a in enumerate(r[:-1]):
            if a not in levels[j]:
                levels[j].append(a)
            edges.append((a, r[-1]))
    return HierarchySpec(levels, bottom, edges)
