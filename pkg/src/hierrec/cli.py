"""Command line interface.

Exit codes: 0 success, 2 input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from hierrec.errors import InputError, NumericalError
from hierrec.evaluate import build_error_tensor, evaluate
from hierrec.files import (
    ingest_base_forecasts,
    load_hierarchy,
    negativity_rows,
    persist_results,
    read_forecasts,
    read_matrix,
    read_runs,
    read_weight_csv,
    write_forecasts,
    write_negativity,
)
from hierrec.harness import ExperimentConfig, run_experiment
from hierrec.hierarchy import Hierarchy
from hierrec.reconcile import ForecastSet, MethodContext, lcc_exogenous_gl, run_method, validate_method_key
from hierrec.seasonal import seasonal_average_forecast
from hierrec.weights import WeightMatrix

EXIT_INPUT = 2
EXIT_NUMERICAL = 3


def _csv_list(text: str) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


def _weight_matrix(ids, vals, want, path) -> WeightMatrix:
    pos = {s: i for i, s in enumerate(ids)}
    order = [pos[s] for s in want]
    if vals.shape[0] == 1:
        return WeightMatrix.diag(vals[0, order], source=str(path))
    return WeightMatrix("full", vals[np.ix_(order, order)], source=str(path))


def _context_weights(path, h: Hierarchy) -> dict:
    """Route a weight file to the bottom, level or full slot by its series ids."""
    ids, vals = read_weight_csv(path, h.labels)
    got = set(ids)
    if len(got) != len(ids):
        raise InputError(f"{path}: duplicated series id")
    if got == set(h.bottom_labels):
        return {"Wb": _weight_matrix(ids, vals, h.bottom_labels, path)}
    if got == set(h.labels):
        return {"W": _weight_matrix(ids, vals, h.labels, path)}
    for l in range(1, h.L + 1):
        want = list(h.spec.levels[l - 1]) + list(h.bottom_labels)
        if got == set(want):
            return {"Wl": {l: _weight_matrix(ids, vals, want, path)}}
    raise InputError(f"{path}: series ids match neither the bottom series, one level plus bottom, nor all series")


def _proportions(path, h: Hierarchy) -> np.ndarray:
    ids, vals = read_weight_csv(path, h.bottom_labels)
    if vals.shape[0] != 1 or set(ids) != set(h.bottom_labels):
        raise InputError(f"{path}: expected one row of proportions over all bottom series")
    pos = {s: i for i, s in enumerate(ids)}
    return vals[0, [pos[s] for s in h.bottom_labels]]


def cmd_reconcile(args) -> int:
    h = load_hierarchy(args.hierarchy)
    validate_method_key(args.method, h)
    base = read_forecasts(args.base, h, args.origin)
    if args.proportions:
        if not args.method.startswith("lcc-exo:") or args.nonneg:
            raise InputError("--proportions applies to lcc-exo:<l> without --nonneg")
        res = lcc_exogenous_gl(base, h, int(args.method.split(":")[1]), _proportions(args.proportions, h))
    else:
        kw = {}
        if args.weights:
            kw.update(_context_weights(args.weights, h))
        if args.residuals:
            kw["residuals"] = read_matrix(args.residuals, h)
        sa = hist = None
        if args.history:
            hist = read_matrix(args.history, h)
            sa = ForecastSet(seasonal_average_forecast(hist, args.seasonal_period, base.H, args.start),
                             h.labels, base.origin, "sa")
        ctx = MethodContext(h, base, sa, hist, args.start, args.seasonal_period,
                            var_floor=args.var_floor, nonneg=args.nonneg, **kw)
        res = run_method(args.method, ctx)
    write_forecasts(res.forecasts, args.out)
    print(f"{res.method}: max coherence residual {float(np.max(res.coherence)):.3g}, wrote {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    h, runs = read_runs(args.runs)
    Y = read_matrix(args.actuals, h)
    tensor = build_error_tensor(Y, runs, args.benchmark, h)
    report = evaluate(tensor, args.benchmark, _csv_list(args.metric), args.horizons,
                      _csv_list(args.groups), args.alpha, not args.no_tests)
    Path(args.out).write_text(report.to_csv(), encoding="utf-8")
    if args.text:
        Path(args.text).write_text(report.to_text(), encoding="utf-8")
    if args.mcb:
        Path(args.mcb).write_text(report.mcb_csv(), encoding="utf-8")
    print(report.to_text(), end="")
    return 0


_OVERRIDES = (
    ("window_length", int), ("horizons", int), ("seasonal_period", int), ("first_origin", int),
    ("last_origin", int), ("methods", str), ("benchmark", str), ("metrics", str), ("horizon_sets", str),
    ("groups", str), ("alpha", float), ("workers", int), ("var_floor", float), ("hierarchy", str),
    ("observations", str), ("base_forecasts", str), ("residuals", str), ("out_dir", str),
)


def cmd_experiment(args) -> int:
    over = {k: getattr(args, k) for k, _ in _OVERRIDES}
    over["nonneg"] = args.nonneg
    over["base_from_sa"] = args.base_from_sa
    if args.config:
        cfg = ExperimentConfig.from_toml(args.config, over)
    else:
        try:
            cfg = ExperimentConfig(**{k: v for k, v in over.items() if v is not None})
        except TypeError as exc:
            raise InputError(f"without --config, give at least --window-length and --horizons ({exc})") from None
    for k in ("hierarchy", "observations", "out_dir"):
        if getattr(cfg, k) is None:
            raise InputError(f"experiment needs '{k}' (config key or --{k.replace('_', '-')})")
    h = load_hierarchy(cfg.hierarchy)
    Y = read_matrix(cfg.observations, h)
    store = ingest_base_forecasts(cfg.base_forecasts, h) if cfg.base_forecasts else None
    res = read_matrix(cfg.residuals, h) if cfg.residuals else None
    records, _, report = run_experiment(cfg, Y, h, store, res)
    out = persist_results(records, report, cfg.out_dir, h, cfg.to_dict())
    failures = [r for r in records if r.error]
    for r in failures:
        print(f"warning: origin {r.origin}, {r.method}: {r.error}", file=sys.stderr)
    print(report.to_text(), end="")
    print(f"wrote {out} ({len(records)} runs, {len(failures)} failed cells)")
    return 0


def cmd_audit(args) -> int:
    h, runs = read_runs(args.runs)
    rows = negativity_rows(runs, h, args.tol)
    write_negativity(rows, args.out)
    neg = sum(r[3] for r in rows)
    print(f"{len(rows)} runs audited, {neg} negative bottom forecasts, wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hierrec", description="Hierarchical forecast reconciliation")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("reconcile", help="reconcile one set of base forecasts")
    r.add_argument("--hierarchy", required=True)
    r.add_argument("--base", required=True, help="CSV series,h1..hH in hierarchy order")
    r.add_argument("--method", required=True, help="bu, td-hp, ols, wls, shr, lcc-exo:<l>, lcc-endo:<l>, lcc, ccc, ccc-h, avg:<a>+<b>")
    g = r.add_mutually_exclusive_group()
    g.add_argument("--weights", help="weight CSV: header of ids, one row (diagonal) or a square matrix")
    g.add_argument("--residuals", help="in-sample residual matrix (T x n) for wls/shr")
    g.add_argument("--proportions", help="one row of bottom proportions (lcc-exo:<l> only)")
    r.add_argument("--history", help="training observations (T x n) for derived weights, td-hp and ccc-h")
    r.add_argument("--seasonal-period", type=int, default=1)
    r.add_argument("--start", type=int, default=0, help="absolute index of the first history row")
    r.add_argument("--origin", type=int, default=None)
    r.add_argument("--nonneg", action="store_true")
    r.add_argument("--var-floor", type=float, default=None)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_reconcile)

    e = sub.add_parser("evaluate", help="score a run directory against actuals")
    e.add_argument("--actuals", required=True)
    e.add_argument("--runs", required=True)
    e.add_argument("--benchmark", default="base")
    e.add_argument("--metric", default="mse", help="mse, mae or both comma separated")
    e.add_argument("--horizons", default="1", help="e.g. 1,2,3,6,12,1:6,1:12")
    e.add_argument("--groups", default="all")
    e.add_argument("--alpha", type=float, default=0.05)
    e.add_argument("--out", required=True)
    e.add_argument("--text")
    e.add_argument("--mcb")
    e.add_argument("--no-tests", action="store_true", help="skip Friedman and MCB")
    e.set_defaults(func=cmd_evaluate)

    x = sub.add_parser("experiment", help="rolling-origin experiment")
    x.add_argument("--config")
    for k, t in _OVERRIDES:
        x.add_argument("--" + k.replace("_", "-"), dest=k, type=t, default=None)
    x.add_argument("--nonneg", action=argparse.BooleanOptionalAction, default=None)
    x.add_argument("--base-from-sa", action=argparse.BooleanOptionalAction, default=None)
    x.set_defaults(func=cmd_experiment)

    a = sub.add_parser("audit-negativity", help="count negative forecasts in a run directory")
    a.add_argument("--runs", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--tol", type=float, default=1e-9)
    a.set_defaults(func=cmd_audit)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure in {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
