"""Accuracy measurement: relative MSE/MAE indices, Friedman and MCB-Nemenyi tests."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from hierrec.errors import InputError, NumericalError
from hierrec.hierarchy import Hierarchy

METRICS = ("mse", "mae")
METRIC_NAMES = {"mse": "AvgRelMSE", "mae": "AvgRelMAE"}

# upper quantiles of the studentized range with infinite degrees of freedom, k = 2..20
_Q_TABLE = {
    0.01: (3.642773, 4.120303, 4.402801, 4.602821, 4.757047, 4.882166, 4.987183, 5.077506,
           5.156635, 5.226963, 5.290196, 5.347592, 5.400105, 5.448476, 5.493291, 5.53502,
           5.574047, 5.61069, 5.645215),
    0.05: (2.771808, 3.314493, 3.63316, 3.857656, 4.030092, 4.169554, 4.286309, 4.386509,
           4.474124, 4.551864, 4.621655, 4.68492, 4.742732, 4.795924, 4.845154, 4.890951,
           4.933745, 4.973892, 5.011689),
    0.10: (2.326174, 2.90238, 3.240446, 3.478281, 3.660721, 3.808098, 3.931349, 4.037023,
           4.129346, 4.2112, 4.284635, 4.351158, 4.411913, 4.467782, 4.519464, 4.567519,
           4.612403, 4.654494, 4.694104),
}


def studentized_range_quantile(alpha: float, k: int) -> float:
    """Upper ``alpha`` quantile of the studentized range for ``k`` means, df = inf.

    Tabulated for k <= 20 and alpha in {0.01, 0.05, 0.10}; other cases fall
    back to numerical integration.
    """
    if not 0 < alpha < 1:
        raise InputError("alpha must lie in (0, 1)")
    if k < 2:
        raise InputError("the studentized range needs k >= 2")
    for a, row in _Q_TABLE.items():
        if math.isclose(alpha, a, rel_tol=0, abs_tol=1e-12) and k <= 20:
            return row[k - 2]
    return float(stats.studentized_range.ppf(1 - alpha, k, np.inf))


@dataclass(frozen=True, eq=False)
class ErrorTensor:
    """Errors ``y - yhat`` indexed (series, horizon, origin, approach).

    Cells without an actual (beyond the end of the data) or without a
    forecast (failed solve) are NaN.
    """

    errors: np.ndarray
    approaches: tuple[str, ...]
    labels: tuple[str, ...]
    groups: tuple[str, ...]
    origins: tuple[int, ...]
    level_of: tuple[int, ...] = ()

    @property
    def H(self) -> int:
        return self.errors.shape[1]

    @property
    def q_h(self) -> np.ndarray:
        """Origins with an actual, per horizon."""
        has = np.any(np.isfinite(self.errors), axis=(0, 3))
        return has.sum(axis=1)

    def index(self, approach: str) -> int:
        try:
            return self.approaches.index(approach)
        except ValueError:
            raise InputError(f"approach {approach!r} not in {list(self.approaches)}") from None

    def series_mask(self, group: str) -> np.ndarray:
        g = np.asarray(self.groups)
        keep = g != "duplicate"
        if group == "all":
            return keep
        if group in ("uts", "bts"):
            return g == group
        if group.startswith("L") and group[1:].isdigit() and self.level_of:
            lv = int(group[1:])
            return keep & (np.asarray(self.level_of) == lv)
        raise InputError(f"unknown series group {group!r}")


def _check_errors(e) -> np.ndarray:
    e = np.asarray(e, dtype=float).ravel()
    if e.size == 0:
        raise InputError("no forecast origins")
    return e


def mse(errors) -> float:
    e = _check_errors(errors)
    return float(np.mean(e * e))


def mae(errors) -> float:
    e = _check_errors(errors)
    return float(np.mean(np.abs(e)))


def metric_table(tensor: ErrorTensor, metric: str) -> np.ndarray:
    """(n x H x J) metric over available origins (NaN if none)."""
    if metric not in METRICS:
        raise InputError(f"metric must be one of {METRICS}")
    e = tensor.errors
    v = e * e if metric == "mse" else np.abs(e)
    cnt = np.sum(np.isfinite(v), axis=2)
    tot = np.nansum(v, axis=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(cnt > 0, tot / np.maximum(cnt, 1), np.nan)


def avg_rel_metric(
    tensor: ErrorTensor,
    metric: str,
    horizon_set: Iterable[int],
    group: str = "all",
    benchmark: str = "base",
    table: np.ndarray | None = None,
) -> dict[str, float]:
    """Geometric mean of metric ratios vs ``benchmark`` over (series, horizon) cells."""
    hs = sorted(set(int(x) for x in horizon_set))
    if not hs or hs[0] < 1 or hs[-1] > tensor.H:
        raise InputError(f"horizons must lie in 1..{tensor.H}")
    tab = metric_table(tensor, metric) if table is None else table
    rows = np.flatnonzero(tensor.series_mask(group))
    if rows.size == 0:
        raise InputError(f"group {group!r} is empty")
    cells = tab[np.ix_(rows, np.asarray(hs) - 1)]
    j0 = tensor.index(benchmark)
    bench = cells[:, :, j0]
    if np.any(bench == 0):
        i, hh = np.argwhere(bench == 0)[0]
        raise NumericalError(
            f"benchmark {benchmark!r} has zero {metric.upper()} for series "
            f"{tensor.labels[rows[i]]!r} at horizon {hs[hh]}; relative accuracy is undefined"
        )
    out = {}
    for j, name in enumerate(tensor.approaches):
        if j == j0:
            out[name] = 1.0
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            logs = np.log(cells[:, :, j] / bench)
        out[name] = float(np.exp(np.mean(logs)))
    return out


def percentage_improvement(value: float) -> float:
    return (1.0 - value) * 100.0


def average_ranks(scores) -> np.ndarray:
    """Within-row ranks (1 = lowest score), ties averaged."""
    s = np.asarray(scores, dtype=float)
    return stats.rankdata(s, axis=1, method="average")


def friedman_test(scores) -> tuple[float, float]:
    """Friedman chi-square (no tie correction) and p-value with k-1 df."""
    s = np.asarray(scores, dtype=float)
    if s.ndim != 2 or s.shape[0] < 2 or s.shape[1] < 2:
        raise InputError("Friedman test needs >= 2 instances and >= 2 approaches")
    if not np.all(np.isfinite(s)):
        raise InputError("scores contain NaN")
    N, k = s.shape
    rbar = average_ranks(s).mean(axis=0)
    stat = 12.0 * N / (k * (k + 1)) * float(np.sum((rbar - (k + 1) / 2.0) ** 2))
    stat = max(stat, 0.0)
    return stat, float(stats.chi2.sf(stat, k - 1))


@dataclass(frozen=True)
class McbRow:
    approach: str
    mean_rank: float
    lower: float
    upper: float
    best_equivalent: bool


def mcb_nemenyi(scores, alpha: float = 0.05, names: Sequence[str] | None = None) -> list[McbRow]:
    """Mean ranks with intervals ``+- r_crit / 2``; flags overlap with the best."""
    if not 0 < alpha < 1:
        raise InputError("alpha must lie in (0, 1)")
    s = np.asarray(scores, dtype=float)
    if s.ndim != 2 or s.shape[0] < 1 or s.shape[1] < 1:
        raise InputError("scores must be an (instances x approaches) matrix")
    N, k = s.shape
    names = [f"m{j}" for j in range(k)] if names is None else list(names)
    if len(names) != k:
        raise InputError("one name per approach expected")
    if k == 1:
        return [McbRow(names[0], 1.0, 1.0, 1.0, True)]
    rbar = average_ranks(s).mean(axis=0)
    half = studentized_range_quantile(alpha, k) * math.sqrt(k * (k + 1) / (12.0 * N)) / 2.0
    best = int(np.argmin(rbar))
    lo_b, hi_b = rbar[best] - half, rbar[best] + half
    return [
        McbRow(names[j], float(rbar[j]), float(rbar[j] - half), float(rbar[j] + half),
               bool(rbar[j] - half <= hi_b and lo_b <= rbar[j] + half))
        for j in range(k)
    ]


def build_error_tensor(
    actuals,
    runs: Iterable[tuple[int, str, object]],
    benchmark: str,
    hierarchy: Hierarchy | None = None,
    labels: Sequence[str] | None = None,
) -> ErrorTensor:
    """Assemble ``y[t + h] - yhat`` from (origin, approach, forecasts) triples.

    ``actuals`` is (T x n) in series order; ``origin`` is the row index of
    the last training observation. Forecast values may be a ForecastSet or
    an (n x H) array; NaN forecasts stay NaN.
    """
    Y = np.asarray(actuals, dtype=float)
    if Y.ndim != 2:
        raise InputError("actuals must be a (T x n) matrix")
    T, n = Y.shape
    if hierarchy is not None:
        labels = hierarchy.labels
        groups = hierarchy.groups
        level_of = tuple(
            [l for l in range(1, hierarchy.L + 1) for _ in hierarchy.spec.levels[l - 1]]
            + [hierarchy.L + 1] * hierarchy.n_b
        )
    else:
        labels = tuple(labels) if labels is not None else tuple(str(i) for i in range(n))
        groups = ("bts",) * n
        level_of = ()
    if len(labels) != n:
        raise InputError(f"actuals have {n} columns, expected {len(labels)}")

    runs = list(runs)
    approaches: list[str] = []
    origins: list[int] = []
    H = 0
    for o, a, fs in runs:
        if a not in approaches:
            approaches.append(a)
        if o not in origins:
            origins.append(int(o))
        v = getattr(fs, "values", fs)
        H = max(H, np.asarray(v).shape[1] if np.ndim(v) == 2 else 1)
    if benchmark not in approaches:
        raise InputError(f"benchmark {benchmark!r} is not among the runs {approaches}")
    origins.sort()
    opos = {o: i for i, o in enumerate(origins)}
    apos = {a: i for i, a in enumerate(approaches)}
    E = np.full((n, H, len(origins), len(approaches)), np.nan)
    for o, a, fs in runs:
        lab = getattr(fs, "labels", None)
        if lab is not None and tuple(lab) != tuple(labels):
            raise InputError(f"forecast rows for {a!r} at origin {o} do not match the series order")
        v = np.asarray(getattr(fs, "values", fs), dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != n:
            raise InputError(f"forecasts for {a!r} at origin {o} have {v.shape[0]} rows, expected {n}")
        if o + 1 >= T or o < 0:
            raise InputError(f"no actual available for origin {o} (data has {T} rows)")
        for hh in range(v.shape[1]):
            t = o + hh + 1
            if t < T:
                E[:, hh, opos[o], apos[a]] = Y[t] - v[:, hh]
    return ErrorTensor(E, tuple(approaches), tuple(labels), tuple(groups), tuple(origins), level_of)


def parse_horizon_sets(text: str, H: int | None = None) -> list[tuple[str, tuple[int, ...]]]:
    """``"1,2,6,1:6"`` -> [("1", (1,)), ..., ("1:6", (1, ..., 6))]."""
    out = []
    for tok in (t.strip() for t in text.split(",")):
        if not tok:
            continue
        try:
            if ":" in tok:
                a, b = (int(x) for x in tok.split(":"))
                hs = tuple(range(a, b + 1))
            else:
                hs = (int(tok),)
        except ValueError as exc:
            raise InputError(f"bad horizon token {tok!r}") from exc
        if not hs or hs[0] < 1 or (H is not None and hs[-1] > H):
            raise InputError(f"horizon set {tok!r} outside 1..{H}")
        out.append((tok, hs))
    if not out:
        raise InputError("no horizon sets given")
    return out


def _fmt(v: float) -> str:
    return repr(float(v))


@dataclass
class AccuracyReport:
    """Relative accuracy per (approach, metric, horizon set, group) plus rank tests."""

    rows: list[tuple[str, str, str, str, float]]
    approaches: tuple[str, ...]
    benchmark: str
    friedman: dict = field(default_factory=dict)
    mcb: dict = field(default_factory=dict)
    alpha: float = 0.05

    def value(self, approach, metric, horizon_set, group) -> float:
        name = METRIC_NAMES.get(metric, metric)
        for a, m, hs, g, v in self.rows:
            if (a, m, hs, g) == (approach, name, horizon_set, group):
                return v
        raise KeyError((approach, metric, horizon_set, group))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["approach", "metric", "horizon_set", "group", "value"])
        for a, m, hs, g, v in self.rows:
            w.writerow([a, m, hs, g, _fmt(v)])
        return buf.getvalue()

    def mcb_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "horizon_set", "group", "approach", "mean_rank", "lower", "upper",
                    "best_equivalent", "friedman_stat", "friedman_p", "friedman_significant"])
        for key in sorted(self.mcb):
            m, hs, g = key
            stat, p = self.friedman.get(key, (float("nan"), float("nan")))
            for r in self.mcb[key]:
                w.writerow([m, hs, g, r.approach, _fmt(r.mean_rank), _fmt(r.lower), _fmt(r.upper),
                            int(r.best_equivalent), _fmt(stat), _fmt(p), int(p < self.alpha)])
        return buf.getvalue()

    def to_text(self) -> str:
        """Aligned table: one block per (metric, group), approaches by horizon set."""
        blocks = []
        keys = []
        for _, m, hs, g, _ in self.rows:
            if (m, g) not in keys:
                keys.append((m, g))
        for m, g in keys:
            sets = []
            for _, mm, hs, gg, _ in self.rows:
                if (mm, gg) == (m, g) and hs not in sets:
                    sets.append(hs)
            width = max(8, max(len(a) for a in self.approaches))
            lines = [f"{m} ({g} series, benchmark {self.benchmark})",
                     "Approach".ljust(width) + "".join(s.rjust(10) for s in sets)]
            for a in self.approaches:
                cells = []
                for s in sets:
                    try:
                        cells.append(f"{self.value(a, m, s, g):10.4f}")
                    except KeyError:
                        cells.append(" " * 10)
                lines.append(a.ljust(width) + "".join(cells))
            blocks.append("\n".join(lines))
        return "\n\n".join(blocks) + "\n"


def evaluate(
    tensor: ErrorTensor,
    benchmark: str = "base",
    metrics: Sequence[str] = ("mse",),
    horizon_sets: Sequence[tuple[str, tuple[int, ...]]] | str = "1",
    groups: Sequence[str] = ("all",),
    alpha: float = 0.05,
    tests: bool = True,
) -> AccuracyReport:
    """Full report over every metric x horizon set x group combination.

    The rank tests treat each (series, horizon) cell as one instance and
    each approach's metric value as its score; cells with a missing score
    are left out of the tests.
    """
    if isinstance(horizon_sets, str):
        horizon_sets = parse_horizon_sets(horizon_sets, tensor.H)
    tensor.index(benchmark)
    rows = []
    fried, mcb = {}, {}
    for metric in metrics:
        tab = metric_table(tensor, metric)
        name = METRIC_NAMES[metric]
        for label, hs in horizon_sets:
            for g in groups:
                vals = avg_rel_metric(tensor, metric, hs, g, benchmark, table=tab)
                rows.extend((a, name, label, g, vals[a]) for a in tensor.approaches)
                if not tests:
                    continue
                idx = np.flatnonzero(tensor.series_mask(g))
                sc = tab[np.ix_(idx, np.asarray(hs) - 1)].reshape(-1, len(tensor.approaches))
                sc = sc[np.all(np.isfinite(sc), axis=1)]
                if sc.shape[0] >= 2 and sc.shape[1] >= 2:
                    fried[(name, label, g)] = friedman_test(sc)
                    mcb[(name, label, g)] = mcb_nemenyi(sc, alpha, tensor.approaches)
    return AccuracyReport(rows, tensor.approaches, benchmark, fried, mcb, alpha)
