"""Rolling-origin experiment driver.

An origin is the row index of the last training observation; the window
covers rows ``origin - window_length + 1 .. origin`` and horizon ``h``
targets row ``origin + h``. Origins advance by one. By default they run
from ``window_length - 1`` to ``T - 2``, so horizon 1 always has an actual
and horizon ``h`` has ``T - window_length - h + 1`` of them.
"""

from __future__ import annotations

import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from hierrec.errors import InputError, NumericalError
from hierrec.evaluate import AccuracyReport, ErrorTensor, build_error_tensor, evaluate, parse_horizon_sets
from hierrec.hierarchy import Hierarchy
from hierrec.reconcile import NEG_TOL, ForecastSet, MethodContext, ReconciliationResult, run_method, validate_method_key
from hierrec.seasonal import seasonal_average_forecast

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

__all__ = [
    "ExperimentConfig",
    "RunRecord",
    "origin_range",
    "run_experiment",
    "seasonal_average_forecast",
]

_PATH_KEYS = ("hierarchy", "observations", "base_forecasts", "residuals", "out_dir")
_LIST_KEYS = ("methods", "metrics", "groups")


@dataclass
class ExperimentConfig:
    window_length: int
    horizons: int
    seasonal_period: int = 12
    first_origin: int | None = None
    last_origin: int | None = None
    methods: tuple[str, ...] = ("bu",)
    nonneg: bool = False
    benchmark: str = "base"
    metrics: tuple[str, ...] = ("mse",)
    horizon_sets: str = "1"
    groups: tuple[str, ...] = ("all",)
    alpha: float = 0.05
    workers: int = 1
    var_floor: float | None = None
    # no external base forecasts: use seasonal averages as the base
    base_from_sa: bool = False
    hierarchy: str | None = None
    observations: str | None = None
    base_forecasts: str | None = None
    residuals: str | None = None
    out_dir: str | None = None

    def __post_init__(self):
        for k in _LIST_KEYS:
            v = getattr(self, k)
            if isinstance(v, str):
                v = [s.strip() for s in v.split(",") if s.strip()]
            setattr(self, k, tuple(v))
        for k in ("window_length", "horizons", "seasonal_period", "workers"):
            v = getattr(self, k)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise InputError(f"{k} must be an integer, got {v!r}")
        if self.horizons < 1 or self.seasonal_period < 1 or self.workers < 1:
            raise InputError("horizons, seasonal_period and workers must be >= 1")
        if self.window_length < 2 * self.seasonal_period:
            raise InputError(
                f"window_length {self.window_length} is shorter than two seasonal cycles ({2 * self.seasonal_period})"
            )
        if not self.methods:
            raise InputError("no methods configured")
        for m in self.methods:
            validate_method_key(m)
        validate_method_key(self.benchmark)
        parse_horizon_sets(self.horizon_sets, self.horizons)
        if not 0 < self.alpha < 1:
            raise InputError("alpha must lie in (0, 1)")

    @classmethod
    def from_toml(cls, path, overrides: dict | None = None) -> "ExperimentConfig":
        """Flat ``key = value`` TOML (a ``[paths]`` table is also accepted); overrides win."""
        p = Path(path)
        try:
            raw = tomllib.loads(p.read_text(encoding="utf-8"))
        except OSError as exc:
            raise InputError(f"cannot read config {p}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise InputError(f"{p}: {exc}") from exc
        raw.update(raw.pop("paths", {}))
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise InputError(f"{p}: unknown config keys {unknown}")
        for k in _PATH_KEYS:
            if raw.get(k) is not None and not Path(raw[k]).is_absolute():
                raw[k] = str(p.parent / raw[k])
        raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
        try:
            return cls(**raw)
        except TypeError as exc:
            raise InputError(f"{p}: {exc}") from exc

    def approaches(self) -> tuple[str, ...]:
        """Configured methods plus the benchmark, in a fixed order."""
        out = list(dict.fromkeys(self.methods))
        if self.benchmark not in out:
            out.insert(0, self.benchmark)
        return tuple(out)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in _LIST_KEYS:
            d[k] = list(d[k])
        return d


def origin_range(cfg: ExperimentConfig, T: int) -> range:
    first = cfg.window_length - 1 if cfg.first_origin is None else cfg.first_origin
    last = T - 2 if cfg.last_origin is None else cfg.last_origin
    if first < cfg.window_length - 1:
        raise InputError(f"first origin {first} leaves fewer than {cfg.window_length} training rows")
    if last > T - 2:
        raise InputError(f"last origin {last} has no actual for horizon 1 (data has {T} rows)")
    if first > last:
        raise InputError(f"empty origin range {first}..{last} for {T} observations")
    return range(first, last + 1)


@dataclass
class RunRecord:
    origin: int
    method: str
    forecasts: ForecastSet
    result: ReconciliationResult | None = field(default=None, repr=False)
    wall_time: float = 0.0
    negative_count: int = 0
    negative_bottom_count: int = 0
    min_value: float = float("nan")
    error: str = ""
    coherence: float = float("nan")
    kkt: float = float("nan")


def _audit(values: np.ndarray, n_a: int) -> tuple[int, int, float]:
    finite = np.isfinite(values)
    neg = finite & (values < -NEG_TOL)
    mn = float(values[finite].min()) if finite.any() else float("nan")
    return int(neg.sum()), int(neg[n_a:].sum()), mn


def _flat(diags):
    for d in diags:
        if isinstance(d, (tuple, list)):
            yield from _flat(d)
        elif d is not None:
            yield d


def _record(origin, method, fs, h, result=None, wall=0.0, error="") -> RunRecord:
    a, b, mn = _audit(fs.values, h.n_a)
    coh = kkt = float("nan")
    if result is not None:
        coh = float(np.max(result.coherence)) if np.size(result.coherence) else 0.0
        ks = [d.kkt_residual for d in _flat(result.diagnostics)]
        kkt = float(max(ks)) if ks else float("nan")
        # the parent re-attaches the hierarchy; no need to ship it between processes
        result = replace(result, hierarchy=None)
    return RunRecord(origin, method, fs, result, wall, a, b, mn, error, coh, kkt)


# worker state, set once per process
_STATE: dict = {}


def _init_worker(state: dict) -> None:
    _STATE.clear()
    _STATE.update(state)


def _run_origin(origin: int) -> list[RunRecord]:
    cfg: ExperimentConfig = _STATE["cfg"]
    h: Hierarchy = _STATE["h"]
    Y: np.ndarray = _STATE["data"]
    W, H, m = cfg.window_length, cfg.horizons, cfg.seasonal_period
    start = origin - W + 1
    hist = Y[start: origin + 1]
    sa = ForecastSet(seasonal_average_forecast(hist, m, H, start), h.labels, origin, "sa")
    store = _STATE["store"]
    if store is not None:
        if origin not in store:
            raise InputError(f"missing base forecasts for origin {origin}")
        base = store[origin]
        if base.H < H:
            raise InputError(f"base forecasts at origin {origin} cover {base.H} horizons, need {H}")
        base = ForecastSet(base.values[:, :H], base.labels, origin, base.source)
    else:
        base = replace(sa, source="base")
    res = _STATE["residuals"]
    if res is not None and res.shape[0] == Y.shape[0]:
        res = res[start: origin + 1]
    ctx = MethodContext(h, base, sa, hist, start, m, residuals=res, var_floor=cfg.var_floor, nonneg=cfg.nonneg)
    out = []
    with threadpool_limits(limits=1):
        for key in cfg.approaches():
            t0 = time.perf_counter()
            if key in ("base", "sa"):
                fs = base if key == "base" else sa
                out.append(_record(origin, key, replace(fs, source=key), h, wall=time.perf_counter() - t0))
                continue
            try:
                r = run_method(key, ctx)
            except NumericalError as exc:
                nan = ForecastSet(np.full((h.n, H), np.nan), h.labels, origin, key)
                err = f"{type(exc).__name__}: {exc}"
                out.append(_record(origin, key, nan, h, wall=time.perf_counter() - t0, error=err))
                continue
            out.append(_record(origin, key, r.forecasts, h, r, time.perf_counter() - t0))
    return out


def run_experiment(
    cfg: ExperimentConfig,
    data,
    h: Hierarchy,
    base_store: dict[int, ForecastSet] | None = None,
    residuals=None,
    tests: bool = True,
) -> tuple[list[RunRecord], ErrorTensor, AccuracyReport]:
    """Run every configured approach at every origin and score them.

    ``data`` is the (T x n) observation matrix in hierarchy order. Without
    a ``base_store`` the seasonal-average forecasts serve as base forecasts
    (``cfg.base_from_sa`` must then be set). Per-cell numerical failures
    give NaN forecasts and a recorded error; input errors abort the run.
    """
    Y = np.asarray(data, dtype=float)
    if Y.ndim != 2 or Y.shape[1] != h.n:
        raise InputError(f"observations must be (T x {h.n}), got shape {Y.shape}")
    if not np.all(np.isfinite(Y)):
        raise InputError("observations contain NaN or infinite values")
    if base_store is None and not cfg.base_from_sa:
        raise InputError("no base forecasts given (set base_from_sa to use seasonal averages)")
    for key in cfg.approaches():
        validate_method_key(key, h)
    origins = origin_range(cfg, Y.shape[0])
    state = {
        "cfg": cfg,
        "h": h,
        "data": Y,
        "store": base_store,
        "residuals": None if residuals is None else np.asarray(residuals, dtype=float),
    }
    if cfg.workers == 1:
        _init_worker(state)
        per_origin = [_run_origin(o) for o in origins]
    else:
        ctx = multiprocessing.get_context("spawn")
        chunk = max(1, len(origins) // (4 * cfg.workers))
        with ProcessPoolExecutor(cfg.workers, mp_context=ctx, initializer=_init_worker, initargs=(state,)) as ex:
            per_origin = list(ex.map(_run_origin, origins, chunksize=chunk))
    records = [r for recs in per_origin for r in recs]
    for r in records:
        if r.result is not None:
            r.result = replace(r.result, hierarchy=h)
    tensor = build_error_tensor(Y, [(r.origin, r.method, r.forecasts) for r in records], cfg.benchmark, h)
    report = evaluate(tensor, cfg.benchmark, cfg.metrics, cfg.horizon_sets, cfg.groups, cfg.alpha, tests)
    return records, tensor, report
