"""Reconciliation methods: each maps base forecasts to coherent forecasts.

Every horizon column is reconciled independently. Outputs are always
assembled as ``S @ bottoms`` so they are coherent by construction; the
residual is still measured and checked.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import sparse

from hierrec.errors import InputError, NumericalError
from hierrec.hierarchy import Hierarchy, coherence_residual, coherence_tolerance, level_matrix
from hierrec.seasonal import seasonal_residuals
from hierrec.solver import (
    EqualitySystem,
    SolveDiagnostics,
    factorize,
    solve_endogenous,
    solve_equality,
    solve_nonnegative,
)
from hierrec.weights import (
    CombinationWeights,
    WeightMatrix,
    residual_variance_weights,
    shrinkage_covariance,
    training_variance_weights,
    unit_weights,
    validate_combination_weights,
)

NEG_TOL = 1e-9
WEIGHT_SUM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ForecastSet:
    """An (n x H) block of forecasts for one origin, rows labelled."""

    values: np.ndarray
    labels: tuple[str, ...]
    origin: int | None = None
    source: str = "external-model"

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[1] < 1:
            raise InputError(f"forecasts must be an (n x H) array with H >= 1, got shape {v.shape}")
        labels = tuple(str(s) for s in self.labels)
        if len(labels) != v.shape[0]:
            raise InputError(f"{len(labels)} labels for {v.shape[0]} forecast rows")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def for_hierarchy(cls, h: Hierarchy, values, origin=None, source="external-model") -> "ForecastSet":
        return cls(values, h.labels, origin, source)

    @property
    def H(self) -> int:
        return self.values.shape[1]

    def rows(self, h: Hierarchy, which: str = "all") -> np.ndarray:
        """Rows of ``which`` (all, bottom, upper) in hierarchy order."""
        if self.labels == h.labels:
            v = self.values
            if which == "bottom":
                return v[h.n_a:]
            if which == "upper":
                return v[: h.n_a]
            return v
        if which == "bottom" and self.labels == h.bottom_labels:
            return self.values
        if self.labels[-h.n_b:] == h.bottom_labels and which == "bottom":
            return self.values[-h.n_b:]
        raise InputError("forecast row labels do not match the hierarchy order")

    def level(self, h: Hierarchy, l: int) -> np.ndarray:
        lv = h.spec.levels[l - 1] if 1 <= l <= h.L else None
        if lv is None:
            raise InputError(f"level {l!r} out of range 1..{h.L}")
        if self.labels == h.labels:
            return self.values[h.level_rows(l)]
        pos = {lab: i for i, lab in enumerate(self.labels)}
        missing = [v for v in lv if v not in pos]
        if missing:
            raise InputError(f"forecasts missing for level-{l} series {missing[:5]}")
        return self.values[[pos[v] for v in lv]]


@dataclass(frozen=True, eq=False)
class ReconciliationResult:
    forecasts: ForecastSet
    method: str
    params: dict
    coherence: np.ndarray
    diagnostics: tuple
    nonneg: bool
    hierarchy: Hierarchy = field(repr=False)

    @property
    def values(self) -> np.ndarray:
        return self.forecasts.values

    @property
    def bottom(self) -> np.ndarray:
        return self.forecasts.values[self.hierarchy.n_a:]


def _finish(h, bottoms, method, params, origin, diagnostics, nonneg, values=None):
    if values is None:
        values = np.asarray(h.S @ bottoms)
    res = coherence_residual(values, h)
    tol = coherence_tolerance(values)
    if np.any(~(res <= tol)):
        bad = int(np.flatnonzero(~(res <= tol))[0]) + 1
        raise NumericalError(f"{method}: output not coherent at horizon {bad} (residual {res[bad - 1]:.3g})")
    if nonneg and np.min(values[h.n_a:]) < -NEG_TOL:
        raise NumericalError(f"{method}: non-negative mode produced a negative bottom forecast")
    fs = ForecastSet(values, h.labels, origin, method)
    return ReconciliationResult(fs, method, dict(params), np.asarray(res), tuple(diagnostics), bool(nonneg), h)


def _check_finite(a, what):
    if not np.all(np.isfinite(a)):
        raise InputError(f"{what} contain NaN or infinite values")


def _per_horizon(W, H: int, what: str) -> list:
    if isinstance(W, WeightMatrix):
        return [W] * H
    W = list(W)
    if len(W) != H:
        raise InputError(f"{what}: expected {H} per-horizon weight matrices, got {len(W)}")
    return W


def _solve_columns(A, targets, priors, Ws, nonneg_idx=None):
    """Solve one equality system per column, sharing factorizations."""
    xs, diags = [], []
    cache: dict[int, object] = {}
    for j in range(priors.shape[1]):
        W = Ws[j]
        fac = cache.get(id(W))
        if fac is None:
            fac = cache[id(W)] = factorize(A, W)
        sys = EqualitySystem(A, targets[:, j], W, priors[:, j])
        if nonneg_idx is None:
            x, d = solve_equality(sys, fac)
        else:
            x, d = solve_nonnegative(sys, nonneg_idx, fac)
        xs.append(x)
        diags.append(d)
    return np.column_stack(xs), diags


def bottom_up(base: ForecastSet, h: Hierarchy, nonneg: bool = False) -> ReconciliationResult:
    """``S @ b`` of the base bottoms; non-negative mode clips them at zero."""
    B = base.rows(h, "bottom")
    _check_finite(B, "bottom base forecasts")
    if nonneg:
        B = np.maximum(B, 0.0)
    return _finish(h, B, "bu", {}, base.origin, [None] * B.shape[1], nonneg)


def top_down_hp(
    a1,
    history,
    h: Hierarchy,
    seasonal_period: int = 1,
    start: int = 0,
    nonneg: bool = False,
    origin=None,
) -> ReconciliationResult:
    """Top-down with proportions of historical averages per calendar stratum.

    ``history`` is the (T x n) training window in hierarchy order (or T x n_b
    bottoms, in which case the total is their sum); ``a1`` the top-level
    forecasts per horizon (or a ForecastSet whose first row is the total).
    """
    if isinstance(a1, ForecastSet):
        origin = a1.origin if origin is None else origin
        a1 = a1.level(h, 1)[0]
    a1 = np.asarray(a1, dtype=float).reshape(-1)
    _check_finite(a1, "top-level forecasts")
    x = np.asarray(history, dtype=float)
    if x.ndim != 2 or x.shape[1] not in (h.n, h.n_b):
        raise InputError(f"history must be (T x {h.n}) or (T x {h.n_b})")
    bot = x[:, -h.n_b:]
    total = x[:, 0] if x.shape[1] == h.n else bot.sum(axis=1)
    T = x.shape[0]
    m = int(seasonal_period)
    if m < 1:
        raise InputError("seasonal period must be >= 1")
    strata = (start + np.arange(T)) % m
    last = start + T - 1
    B = np.empty((h.n_b, a1.size))
    top = np.maximum(a1, 0.0) if nonneg else a1
    for j in range(a1.size):
        s = (last + j + 1) % m
        rows = strata == s
        if not np.any(rows):
            raise InputError(f"no training observations in stratum {s}")
        tavg = total[rows].mean()
        if tavg == 0:
            raise InputError(f"zero average total in stratum {s}")
        B[:, j] = bot[rows].mean(axis=0) / tavg * top[j]
    if nonneg:
        B = np.maximum(B, 0.0)
    return _finish(h, B, "td-hp", {"seasonal_period": m}, origin, [None] * a1.size, nonneg)


def lcc_exogenous(base: ForecastSet, h: Hierarchy, l: int, Wb, nonneg: bool = False) -> ReconciliationResult:
    """Bottoms closest to the base bottoms (``Wb^{-1}`` metric) that add up to level-``l`` base forecasts."""
    a = base.level(h, l)
    B = base.rows(h, "bottom")
    _check_finite(a, f"level-{l} base forecasts")
    _check_finite(B, "bottom base forecasts")
    Ws = _per_horizon(Wb, base.H, "lcc_exogenous")
    Cl = level_matrix(h, l)
    idx = range(h.n_b) if nonneg else None
    X, diags = _solve_columns(Cl, a, B, Ws, idx)
    return _finish(h, X, f"lcc-exo:{l}", {"level": l}, base.origin, diags, nonneg)


def lcc_exogenous_gl(base: ForecastSet, h: Hierarchy, l: int, P) -> ReconciliationResult:
    """``P_l a_l + (I - P_l C_l) b`` from combination weights (vector or CombinationWeights)."""
    if not isinstance(P, CombinationWeights):
        P = CombinationWeights.from_vector(h, l, P)
    if P.level != l:
        raise InputError(f"combination weights are for level {P.level}, not {l}")
    validate_combination_weights(P, h)
    a = base.level(h, l)
    B = base.rows(h, "bottom")
    _check_finite(a, f"level-{l} base forecasts")
    _check_finite(B, "bottom base forecasts")
    Cl = level_matrix(h, l)
    X = B + P.P @ (a - Cl @ B)
    return _finish(h, X, f"lcc-gl:{l}", {"level": l}, base.origin, [None] * base.H, False)


def lcc_endogenous(base: ForecastSet, h: Hierarchy, l: int, Wl, nonneg: bool = False) -> ReconciliationResult:
    """Joint projection of level-``l`` and bottom base forecasts onto their aggregation constraint."""
    a = base.level(h, l)
    B = base.rows(h, "bottom")
    _check_finite(a, f"level-{l} base forecasts")
    _check_finite(B, "bottom base forecasts")
    Ws = _per_horizon(Wl, base.H, "lcc_endogenous")
    Cl = level_matrix(h, l)
    nl = Cl.shape[0]
    if sparse.issparse(Cl):
        U = sparse.hstack([sparse.identity(nl, format="csr"), -Cl]).tocsr()
    else:
        U = np.hstack([np.eye(nl), -Cl])
    Y = np.vstack([a, B])
    if nonneg:
        X, diags = _solve_columns(U, np.zeros((nl, base.H)), Y, Ws, range(nl, nl + h.n_b))
    else:
        xs, diags, cache = [], [], {}
        for j in range(base.H):
            W = Ws[j]
            if id(W) not in cache:
                cache[id(W)] = factorize(U, W)
            x, d = solve_endogenous(Y[:, j], U, W, cache[id(W)])
            xs.append(x)
            diags.append(d)
        X = np.column_stack(xs)
    return _finish(h, X[nl:], f"lcc-endo:{l}", {"level": l}, base.origin, diags, nonneg)


def mint(base: ForecastSet, h: Hierarchy, W, nonneg: bool = False, name: str = "mint") -> ReconciliationResult:
    """Projection of all base forecasts onto the coherent subspace in the ``W^{-1}`` metric."""
    Y = base.rows(h, "all")
    _check_finite(Y, "base forecasts")
    Ws = _per_horizon(W, base.H, name)
    A = h.constraint_matrix()
    idx = range(h.n_a, h.n) if nonneg else None
    X, diags = _solve_columns(A, np.zeros((h.n_a, base.H)), Y, Ws, idx)
    return _finish(h, X[h.n_a:], name, {}, base.origin, diags, nonneg)


def ccc_combine(
    members: Sequence[ReconciliationResult],
    omega=None,
    name: str = "ccc-combine",
) -> ReconciliationResult:
    """Convex combination ``sum_j omega_j y_j`` of coherent results (equal weights by default)."""
    members = list(members)
    if not members:
        raise InputError("no members to combine")
    k = len(members)
    w = np.full(k, 1.0 / k) if omega is None else np.asarray(omega, dtype=float).reshape(-1)
    if w.shape != (k,):
        raise InputError(f"{k} members but {w.size} weights")
    if np.any(w < 0) or np.any(w > 1) or abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
        raise InputError("combination weights must lie in [0, 1] and sum to 1")
    h = members[0].hierarchy
    shape = members[0].values.shape
    for r in members[1:]:
        if r.hierarchy is not h and r.hierarchy.labels != h.labels:
            raise InputError("members come from different hierarchies")
        if r.values.shape != shape:
            raise InputError("members have mismatched horizons")
    if omega is None:
        acc = members[0].values.copy()
        for r in members[1:]:
            acc = acc + r.values
        values = acc / k
    else:
        values = np.zeros(shape)
        for wj, r in zip(w, members):
            values = values + wj * r.values
    nonneg = all(r.nonneg for r in members)
    params = {"members": [r.method for r in members], "omega": w.tolist()}
    diags = tuple(r.diagnostics for r in members)
    return _finish(h, None, name, params, members[0].forecasts.origin, diags, nonneg, values=values)


def lcc_members(base: ForecastSet, h: Hierarchy, Wb, nonneg: bool = False) -> list[ReconciliationResult]:
    return [lcc_exogenous(base, h, l, Wb, nonneg) for l in range(1, h.L + 1)]


def lcc_average(base: ForecastSet, h: Hierarchy, Wb, nonneg: bool = False) -> ReconciliationResult:
    """Equal-weight average of the L level-conditional results."""
    return ccc_combine(lcc_members(base, h, Wb, nonneg), name="lcc")


def ccc(base: ForecastSet, h: Hierarchy, Wb, nonneg: bool = False) -> ReconciliationResult:
    """Equal-weight average of the L level-conditional results and bottom-up."""
    members = lcc_members(base, h, Wb, nonneg) + [bottom_up(base, h, nonneg)]
    return ccc_combine(members, name="ccc")


def with_bottoms(base: ForecastSet, h: Hierarchy, bottoms, source: str | None = None) -> ForecastSet:
    """Copy of ``base`` (all series) with the bottom rows replaced."""
    v = np.array(base.rows(h, "all"), dtype=float, copy=True)
    if isinstance(bottoms, ForecastSet):
        bottoms = bottoms.rows(h, "bottom")
    bottoms = np.asarray(bottoms, dtype=float)
    if bottoms.shape != (h.n_b, base.H):
        raise InputError(f"replacement bottoms must be ({h.n_b} x {base.H})")
    v[h.n_a:] = bottoms
    return ForecastSet(v, h.labels, base.origin, source or base.source)


def ccc_pooled(
    base_ets: ForecastSet,
    base_sa_bottom: ForecastSet,
    h: Hierarchy,
    Wb,
    nonneg: bool = False,
) -> ReconciliationResult:
    """Level-conditional steps on seasonal-average bottoms, bottom-up on model bottoms, averaged."""
    sa_b = base_sa_bottom.rows(h, "bottom")
    if sa_b.shape[1] != base_ets.H:
        raise InputError("seasonal-average and model forecasts have different horizons")
    # only level rows and bottoms are read, so missing deeper upper rows are fine
    uppers = np.vstack([base_ets.level(h, l) for l in range(1, h.L + 1)])
    mixed = ForecastSet(np.vstack([uppers, sa_b]), h.labels, base_ets.origin, "pooled")
    members = lcc_members(mixed, h, Wb, nonneg)
    members.append(bottom_up(ForecastSet(base_ets.rows(h, "bottom"), h.bottom_labels, base_ets.origin), h, nonneg))
    return ccc_combine(members, name="ccc-h")


def average_methods(a: ReconciliationResult, b: ReconciliationResult, name: str | None = None) -> ReconciliationResult:
    """Elementwise mean of two coherent results."""
    return ccc_combine([a, b], name=name or f"avg:{a.method}+{b.method}")


def reconcile_nonnegative(method: Callable[..., ReconciliationResult], *args, **kwargs) -> ReconciliationResult:
    """Run ``method`` (lcc_exogenous, lcc_endogenous, mint, ...) with bottom bounds."""
    kwargs["nonneg"] = True
    return method(*args, **kwargs)


# ---------------------------------------------------------------- registry

@dataclass
class MethodContext:
    """Everything a registry method may need for one origin.

    ``history`` is the training window (T x n, hierarchy order) whose first
    row is absolute observation ``start``. Weight fields left as None are
    derived from the history (or ``residuals``) on demand.
    """

    hierarchy: Hierarchy
    base: ForecastSet
    sa: ForecastSet | None = None
    history: np.ndarray | None = None
    start: int = 0
    seasonal_period: int = 1
    residuals: np.ndarray | None = None
    Wb: object = None
    Wl: dict | None = None
    W: WeightMatrix | None = None
    var_floor: float | None = None
    nonneg: bool = False
    _cache: dict = field(default_factory=dict, repr=False)

    def _need_history(self, what):
        if self.history is None:
            raise InputError(f"{what} needs the training window")
        return np.asarray(self.history, dtype=float)

    def _variance(self, cols, hh):
        x = self._need_history("training-variance weights")[:, cols]
        m = self.seasonal_period
        return training_variance_weights(
            x, m, seasonal=m > 1, horizon=hh, start=self.start, var_floor=self.var_floor
        )

    def bottom_weights(self) -> list[WeightMatrix]:
        if self.Wb is not None:
            return _per_horizon(self.Wb, self.base.H, "bottom weights")
        if "Wb" not in self._cache:
            h = self.hierarchy
            cols = slice(h.n_a, h.n)
            self._cache["Wb"] = self._by_stratum(lambda hh: self._variance(cols, hh))
        return self._cache["Wb"]

    def _by_stratum(self, make):
        # horizons landing on the same stratum share one weight matrix (and factorization)
        m = self.seasonal_period
        last = self.start + (0 if self.history is None else len(self.history)) - 1
        made: dict[int, WeightMatrix] = {}
        out = []
        for hh in range(1, self.base.H + 1):
            s = (last + hh) % m if m > 1 else 0
            if s not in made:
                made[s] = make(hh)
            out.append(made[s])
        return out

    def level_weights(self, l: int) -> list[WeightMatrix]:
        if self.Wl is not None and l in self.Wl:
            return _per_horizon(self.Wl[l], self.base.H, f"level-{l} weights")
        key = f"Wl{l}"
        if key not in self._cache:
            h = self.hierarchy
            rows = h.level_rows(l)
            cols = list(range(rows.start, rows.stop)) + list(range(h.n_a, h.n))
            self._cache[key] = self._by_stratum(lambda hh: self._variance(cols, hh))
        return self._cache[key]

    def _residuals(self) -> np.ndarray:
        if self.residuals is not None:
            return np.asarray(self.residuals, dtype=float)
        if "res" not in self._cache:
            x = self._need_history("residual-based weights")
            self._cache["res"] = seasonal_residuals(x, self.seasonal_period, self.start)
        return self._cache["res"]

    def full_weights(self, kind: str) -> WeightMatrix:
        if self.W is not None:
            return self.W
        key = f"W-{kind}"
        if key not in self._cache:
            if kind == "ols":
                W = unit_weights(self.hierarchy.n)
            elif kind == "wls":
                W = residual_variance_weights(self._residuals(), self.var_floor)
            elif kind == "shr":
                W = shrinkage_covariance(self._residuals(), var_floor=self.var_floor)
            else:
                raise InputError(f"unknown weighting {kind!r}")
            self._cache[key] = W
        return self._cache[key]

    def with_sa_bottoms(self) -> "MethodContext":
        if self.sa is None:
            raise InputError("seasonal-average forecasts are not available")
        base = with_bottoms(self.base, self.hierarchy, self.sa, source="sa-bottoms")
        return replace(self, base=base, _cache=self._cache)


METHOD_KEYS = ("bu", "td-hp", "ols", "wls", "shr", "lcc-exo:<l>", "lcc-endo:<l>", "lcc", "ccc", "ccc-h", "avg:<m1>+<m2>")


def _level_arg(key: str, h: Hierarchy) -> int:
    try:
        l = int(key.split(":", 1)[1])
    except (IndexError, ValueError) as exc:
        raise InputError(f"method {key!r} needs an integer level, e.g. lcc-exo:1") from exc
    if not 1 <= l <= h.L:
        raise InputError(f"method {key!r}: level out of range 1..{h.L}")
    return l


def run_method(key: str, ctx: MethodContext) -> ReconciliationResult:
    """Dispatch a registry key. ``<key>@sa`` swaps in seasonal-average bottoms."""
    h = ctx.hierarchy
    nn = ctx.nonneg
    if key.startswith("avg:"):
        parts = key[4:].split("+")
        if len(parts) != 2 or not all(parts):
            raise InputError(f"averaging key must look like avg:<m1>+<m2>, got {key!r}")
        a, b = (run_method(p, ctx) for p in parts)
        return average_methods(a, b, name=key)
    if key.endswith("@sa"):
        res = run_method(key[:-3], ctx.with_sa_bottoms())
        return replace(res, method=key, forecasts=replace(res.forecasts, source=key))
    base = ctx.base
    if key == "bu":
        return bottom_up(base, h, nn)
    if key == "td-hp":
        return top_down_hp(base, ctx._need_history("td-hp"), h, ctx.seasonal_period, ctx.start, nn)
    if key in ("ols", "wls", "shr"):
        return mint(base, h, ctx.full_weights(key), nn, name=key)
    if key.startswith("lcc-exo:"):
        return lcc_exogenous(base, h, _level_arg(key, h), ctx.bottom_weights(), nn)
    if key.startswith("lcc-endo:"):
        l = _level_arg(key, h)
        return lcc_endogenous(base, h, l, ctx.level_weights(l), nn)
    if key == "lcc":
        return lcc_average(base, h, ctx.bottom_weights(), nn)
    if key == "ccc":
        return ccc(base, h, ctx.bottom_weights(), nn)
    if key == "ccc-h":
        if ctx.sa is None:
            raise InputError("ccc-h needs seasonal-average forecasts")
        return ccc_pooled(base, ctx.sa, h, ctx.bottom_weights(), nn)
    raise InputError(f"unknown method key {key!r}; known: {', '.join(METHOD_KEYS)}")


def validate_method_key(key: str, h: Hierarchy | None = None) -> None:
    """Raise InputError for keys ``run_method`` would reject on syntax alone."""
    k = key[:-3] if key.endswith("@sa") else key
    if k in ("base", "sa") and key == k:
        return
    if k.startswith("avg:"):
        parts = k[4:].split("+")
        if len(parts) != 2 or not all(parts):
            raise InputError(f"averaging key must look like avg:<m1>+<m2>, got {key!r}")
        for p in parts:
            validate_method_key(p, h)
        return
    if k in ("bu", "td-hp", "ols", "wls", "shr", "lcc", "ccc", "ccc-h"):
        return
    if k.startswith("lcc-exo:") or k.startswith("lcc-endo:"):
        if h is not None:
            _level_arg(k, h)
        else:
            try:
                int(k.split(":", 1)[1])
            except ValueError as exc:
                raise InputError(f"method {key!r} needs an integer level") from exc
        return
    raise InputError(f"unknown method key {key!r}; known: {', '.join(METHOD_KEYS)}")
