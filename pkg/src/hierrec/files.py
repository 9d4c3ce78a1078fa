"""Reading and writing hierarchies, observations, forecasts and run directories.

All numbers are written with ``repr`` so a write/read round trip is exact.
Parsing is strict: unknown series ids, missing ids, misordered rows and
non-finite cells are errors that name the offending item.
"""

from __future__ import annotations

import csv
import json
import math
import re
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from hierrec.errors import InputError
from hierrec.hierarchy import Hierarchy, HierarchySpec, balance, hierarchy_from_ancestors
from hierrec.reconcile import NEG_TOL, ForecastSet

TIME_COLUMNS = ("time", "date", "t", "period", "index")


def _num(cell: str, where: str) -> float:
    try:
        v = float(cell.strip())
    except ValueError:
        raise InputError(f"{where}: cannot parse {cell!r} as a number") from None
    if not math.isfinite(v):
        raise InputError(f"{where}: non-finite value {cell!r}")
    return v


def _rows(path) -> list[list[str]]:
    p = Path(path)
    try:
        with p.open(newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise InputError(f"cannot read {p}: {exc.strerror or exc}") from exc
    if not rows:
        raise InputError(f"{p}: empty file")
    return rows


# ------------------------------------------------------------- hierarchy

def load_hierarchy(path) -> Hierarchy:
    """JSON (levels/bottom/edges) or ancestor-table CSV; balanced on load."""
    p = Path(path)
    if p.suffix.lower() == ".csv":
        rows = _rows(p)
        header = [c.strip() for c in rows[0]]
        body = rows[1:]
        if not body:
            raise InputError(f"{p}: no hierarchy rows")
        if any(len(r) != len(header) for r in body):
            raise InputError(f"{p}: ragged rows")
        return balance(hierarchy_from_ancestors(body))
    try:
        d = json.loads(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputError(f"cannot read {p}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{p}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    if not isinstance(d, dict):
        raise InputError(f"{p}: expected a JSON object")
    return balance(HierarchySpec.from_dict(d))


def save_hierarchy(h: Hierarchy, path) -> None:
    Path(path).write_text(json.dumps(h.spec.to_dict(), indent=1) + "\n", encoding="utf-8")


# ---------------------------------------------------------- observations

def read_matrix(path, h: Hierarchy, allow_bottom_only: bool = True) -> np.ndarray:
    """(T x n) matrix from a CSV with a header of series ids, in hierarchy order.

    An optional leading time column is skipped. A file holding only the
    bottom series is completed by aggregation when ``allow_bottom_only``.
    """
    rows = _rows(path)
    header = [c.strip() for c in rows[0]]
    skip = 1 if header and header[0].lower() in TIME_COLUMNS and header[0] not in h.index else 0
    ids = header[skip:]
    unknown = [c for c in ids if c not in h.index]
    if unknown:
        raise InputError(f"{path}: unknown series id {unknown[0]!r}")
    if len(set(ids)) != len(ids):
        raise InputError(f"{path}: duplicated series id in header")
    data = np.empty((len(rows) - 1, len(ids)))
    for r, row in enumerate(rows[1:]):
        if len(row) != len(header):
            raise InputError(f"{path}: row {r + 2} has {len(row)} cells, header has {len(header)}")
        for c, cell in enumerate(row[skip:]):
            data[r, c] = _num(cell, f"{path}: row {r + 2}, series {ids[c]!r}")
    fill = _missing_duplicates(ids, h)
    pos = {lab: i for i, lab in enumerate(ids)}
    if set(ids) | set(fill) == set(h.labels):
        return data[:, [pos[fill.get(lab, lab)] for lab in h.labels]]
    bottom = set(h.bottom_labels)
    if allow_bottom_only and set(ids) | (set(fill) & bottom) == bottom:
        order = [pos[fill.get(lab, lab)] for lab in h.bottom_labels]
        B = data[:, order]
        return np.asarray((h.S @ B.T).T)
    missing = [lab for lab in h.labels if lab not in ids and lab not in fill]
    raise InputError(f"{path}: missing series {missing[:5]}")


def ingest_observations(path, h: Hierarchy) -> np.ndarray:
    return read_matrix(path, h)


def write_matrix(path, values, labels: Sequence[str]) -> None:
    v = np.asarray(values, dtype=float)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(labels))
        for row in v:
            w.writerow([repr(float(x)) for x in row])


def read_weight_csv(path, labels: Sequence[str]):
    """Header of ids; one row (diagonal) or len(ids) rows (full matrix).

    Returns ``(ids, values)`` with ids a subset-order of ``labels``.
    """
    rows = _rows(path)
    ids = [c.strip() for c in rows[0]]
    known = set(labels)
    for c in ids:
        if c not in known:
            raise InputError(f"{path}: unknown series id {c!r}")
    vals = np.array([[_num(c, f"{path}: row {i + 2}") for c in row] for i, row in enumerate(rows[1:])])
    if vals.ndim != 2 or vals.shape[1] != len(ids) or vals.shape[0] not in (1, len(ids)):
        raise InputError(f"{path}: expected one row (diagonal) or a square matrix")
    return ids, vals


# ------------------------------------------------------------- forecasts

def _horizon_header(cells: Sequence[str], where: str) -> int:
    for j, c in enumerate(cells, start=1):
        if c.strip().lower() != f"h{j}":
            raise InputError(f"{where}: expected column 'h{j}', found {c!r}")
    if not cells:
        raise InputError(f"{where}: no horizon columns")
    return len(cells)


def read_forecasts(path, h: Hierarchy, origin: int | None = None, source: str = "external-model") -> ForecastSet:
    """Per-origin forecast CSV: ``series,h1..hH``, rows in hierarchy order."""
    rows = _rows(path)
    H = _horizon_header(rows[0][1:], str(path))
    ids = [r[0].strip() for r in rows[1:]]
    if any(len(r) != H + 1 for r in rows[1:]):
        raise InputError(f"{path}: ragged rows")
    v = np.array([[_num(c, f"{path}: series {r[0]!r}") for c in r[1:]] for r in rows[1:]])
    return ForecastSet(_align_rows(ids, v, h, str(path)), h.labels, origin, source)


def _missing_duplicates(ids, h: Hierarchy) -> dict[str, str]:
    """Synthetic duplicate series absent from ``ids`` whose original is present."""
    have = set(ids)
    return {dup: orig for orig, dup in h.duplication_map if dup not in have and orig in have}


def _align_rows(ids: list[str], v: np.ndarray, h: Hierarchy, where: str) -> np.ndarray:
    """Rows in hierarchy order; synthetic duplicates may be omitted (copied from their original)."""
    for s in ids:
        if s not in h.index:
            raise InputError(f"{where}: unknown series id {s!r}")
    if tuple(ids) == h.labels:
        return v
    fill = _missing_duplicates(ids, h)
    expected = tuple(lab for lab in h.labels if lab not in fill)
    if tuple(ids) == expected:
        pos = {lab: i for i, lab in enumerate(ids)}
        return v[[pos[fill.get(lab, lab)] for lab in h.labels]]
    if set(ids) == set(expected) and len(ids) == len(expected):
        bad = next(i for i, (a, b) in enumerate(zip(ids, expected)) if a != b)
        raise InputError(f"{where}: series order differs from the hierarchy at row {bad + 1} "
                         f"({ids[bad]!r}, expected {expected[bad]!r})")
    missing = [s for s in expected if s not in ids]
    raise InputError(f"{where}: missing series {missing[:5]}" if missing else f"{where}: repeated series ids")


def write_forecasts(fs: ForecastSet, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series"] + [f"h{j}" for j in range(1, fs.H + 1)])
        for lab, row in zip(fs.labels, fs.values):
            w.writerow([lab] + [repr(float(x)) for x in row])


def read_long_forecasts(path, h: Hierarchy, source: str = "external-model") -> dict[int, ForecastSet]:
    """Long format ``origin,series,h1..hH``; one block of n rows per origin."""
    rows = _rows(path)
    head = [c.strip().lower() for c in rows[0]]
    if head[:2] != ["origin", "series"]:
        raise InputError(f"{path}: long-format header must start with 'origin,series'")
    H = _horizon_header(rows[0][2:], str(path))
    blocks: dict[int, list[list[str]]] = {}
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != H + 2:
            raise InputError(f"{path}: row {i} has {len(r)} cells")
        try:
            o = int(r[0])
        except ValueError:
            raise InputError(f"{path}: row {i}: bad origin {r[0]!r}") from None
        blocks.setdefault(o, []).append(r[1:])
    out = {}
    for o in sorted(blocks):
        ids = [r[0].strip() for r in blocks[o]]
        v = np.array([[_num(c, f"{path}: origin {o}, series {r[0]!r}") for c in r[1:]] for r in blocks[o]])
        out[o] = ForecastSet(_align_rows(ids, v, h, f"{path} (origin {o})"), h.labels, o, source)
    return out


def write_long_forecasts(items: Iterable[ForecastSet], path) -> None:
    items = list(items)
    H = max((fs.H for fs in items), default=1)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["origin", "series"] + [f"h{j}" for j in range(1, H + 1)])
        for fs in items:
            for lab, row in zip(fs.labels, fs.values):
                w.writerow([fs.origin, lab] + [repr(float(x)) for x in row])


_ORIGIN_RE = re.compile(r"(-?\d+)$")


def ingest_base_forecasts(path, h: Hierarchy, source: str = "external-model") -> dict[int, ForecastSet]:
    """A directory of per-origin CSVs (origin = trailing integer of the file stem) or one long-format CSV."""
    p = Path(path)
    if p.is_dir():
        out = {}
        for f in sorted(p.glob("*.csv")):
            m = _ORIGIN_RE.search(f.stem)
            if not m:
                raise InputError(f"{f}: file name does not end in an origin index")
            o = int(m.group(1))
            if o in out:
                raise InputError(f"{f}: origin {o} appears twice")
            out[o] = read_forecasts(f, h, o, source)
        if not out:
            raise InputError(f"{p}: no forecast files")
        return dict(sorted(out.items()))
    return read_long_forecasts(p, h, source)


# ------------------------------------------------------------ run output

def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.@+-]", "_", name)


def persist_results(records, report, out_dir, h: Hierarchy, config: dict | None = None) -> Path:
    """Write the run directory: manifest, hierarchy, per-approach forecasts, report files."""
    out = Path(out_dir)
    (out / "runs").mkdir(parents=True, exist_ok=True)
    save_hierarchy(h, out / "hierarchy.json")
    by_method: dict[str, list] = {}
    for r in records:
        by_method.setdefault(r.method, []).append(r)
    files = []
    for m, recs in by_method.items():
        fname = f"runs/{_safe(m)}.csv"
        write_long_forecasts([r.forecasts for r in sorted(recs, key=lambda r: r.origin)], out / fname)
        files.append({"approach": m, "file": fname})
    failures = [r for r in records if r.error]
    with (out / "failures.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["origin", "approach", "error"])
        for r in failures:
            w.writerow([r.origin, r.method, r.error])
    write_negativity(
        [(r.origin, r.method, r.negative_count, r.negative_bottom_count, r.min_value) for r in records],
        out / "negativity.csv",
    )
    manifest = {"approaches": files, "config": config or {}}
    if report is not None:
        (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
        (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
        (out / "mcb.csv").write_text(report.mcb_csv(), encoding="utf-8")
        manifest["report"] = "report.csv"
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return out


def read_runs(runs_dir) -> tuple[Hierarchy, list[tuple[int, str, ForecastSet]]]:
    d = Path(runs_dir)
    try:
        manifest = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputError(f"{d}: not a run directory (no manifest.json)") from exc
    h = load_hierarchy(d / "hierarchy.json")
    try:
        entries = [(e["approach"], e["file"]) for e in manifest["approaches"]]
    except (KeyError, TypeError) as exc:
        raise InputError(f"{d}/manifest.json: malformed approach list") from exc
    order = {a: i for i, (a, _) in enumerate(entries)}
    runs = []
    for approach, fname in entries:
        for o, fs in read_long_forecasts_nan(d / fname, h, approach).items():
            runs.append((o, approach, fs))
    runs.sort(key=lambda x: (x[0], order[x[1]]))
    return h, runs


def read_long_forecasts_nan(path, h: Hierarchy, source: str) -> dict[int, ForecastSet]:
    """Like :func:`read_long_forecasts` but accepts 'nan' cells (failed solves in run output)."""
    rows = _rows(path)
    H = _horizon_header(rows[0][2:], str(path))
    blocks: dict[int, list] = {}
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != H + 2:
            raise InputError(f"{path}: row {i} has {len(r)} cells")
        blocks.setdefault(int(r[0]), []).append(r[1:])
    out = {}
    for o, block in sorted(blocks.items()):
        ids = [r[0] for r in block]
        try:
            v = np.array([[float(c) for c in r[1:]] for r in block])
        except ValueError as exc:
            raise InputError(f"{path}: origin {o}: {exc}") from None
        out[o] = ForecastSet(_align_rows(ids, v, h, f"{path} (origin {o})"), h.labels, o, source)
    return out


def negativity_rows(runs, h: Hierarchy, tol: float = NEG_TOL):
    """(origin, approach, negatives_all, negatives_bottom, min_value) per (origin, approach, forecasts)."""
    out = []
    for o, m, fs in runs:
        v = fs.values
        n_a = h.n_a
        finite = np.isfinite(v)
        neg = finite & (v < -tol)
        mn = float(np.min(v[finite])) if np.any(finite) else float("nan")
        out.append((o, m, int(neg.sum()), int(neg[n_a:].sum()), mn))
    return out


def write_negativity(rows, path) -> None:
    """Write (origin, approach, negative_cells, negative_bottom_cells, min_value) rows."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["origin", "approach", "negative_cells", "negative_bottom_cells", "min_value"])
        for o, m, a, b, mn in rows:
            w.writerow([o, m, a, b, repr(float(mn))])
