"""Model-space search: fit many specifications, rank by the information
criterion, and report the best member of each nested predictor family.

Every spec gets its own seed derived by hashing the master seed with the
spec string, so results are independent of ordering, subsetting and worker
scheduling, and a re-run with the same master seed reproduces every value
bit-exactly.  Completed fits are appended to a checkpoint file that a
resumed search skips.
"""

from __future__ import annotations

import csv
import hashlib
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .adjacency import SpatialGraph
from .data import Dataset
from .errors import InputError
from .laplace import FitOptions, fit_laplace
from .modelspec import ModelSpec, eq5_family
from .summaries import SummaryRow  # noqa: F401  (re-exported result types)

__all__ = ["SearchRow", "SearchReport", "derive_spec_seed", "run_search",
           "write_results_csv", "write_family_csv", "read_results_csv"]

RESULTS_HEADER = ["spec", "waic", "p_eff", "converged", "seconds"]
FAMILY_HEADER = ["family", "delta", "gamma", "z1", "z2", "z3", "waic"]


@dataclass(frozen=True)
class SearchRow:
    spec: str
    waic: float
    p_eff: float
    converged: bool
    seconds: float


@dataclass(frozen=True)
class SearchReport:
    rows: tuple[SearchRow, ...]
    best_per_family: dict[int, SearchRow]
    overall_best: str | None


def derive_spec_seed(master_seed: int, spec_string: str) -> int:
    """Stable per-spec seed, independent of enumeration order."""
    digest = hashlib.blake2b(f"{master_seed}:{spec_string}".encode(),
                             digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _fit_one(args) -> SearchRow:
    d, expected, spec_string, graph, prior_family, seed, opts = args
    from .modelspec import parse_spec

    spec = parse_spec(spec_string)
    start = time.perf_counter()
    try:
        fit = fit_laplace(d, expected, spec, graph, prior_family,
                          opts=_with_seed(opts, seed))
        return SearchRow(spec=spec_string, waic=fit.waic, p_eff=fit.p_eff,
                         converged=fit.converged,
                         seconds=time.perf_counter() - start)
    except Exception:
        return SearchRow(spec=spec_string, waic=float("nan"),
                         p_eff=float("nan"), converged=False,
                         seconds=time.perf_counter() - start)


def _with_seed(opts: FitOptions, seed: int) -> FitOptions:
    from dataclasses import replace

    return replace(opts, seed=seed)


def run_search(d: Dataset, expected: np.ndarray, graph: SpatialGraph,
               specs: list[ModelSpec], prior_family: str = "pc",
               jobs: int = 1, seed: int = 0,
               results_path: str | None = None, resume: bool = False,
               opts: FitOptions | None = None) -> SearchReport:
    """Fit every spec and collect the ranking.

    When ``results_path`` is given, each completed fit is appended there
    immediately; with ``resume=True`` specs already present in the file are
    not refit.
    """
    if not specs:
        raise InputError("no specs to search over")
    opts = opts or FitOptions()
    spec_strings = [s.to_string() for s in specs]

    done: dict[str, SearchRow] = {}
    if resume and results_path and os.path.exists(results_path):
        for row in read_results_csv(results_path):
            done.setdefault(row.spec, row)

    sink = None
    writer = None
    if results_path:
        mode = "a" if resume else "w"
        sink = open(results_path, mode, newline="", encoding="utf-8")
        writer = csv.writer(sink)
        if sink.tell() == 0:
            writer.writerow(RESULTS_HEADER)
            sink.flush()

    # first occurrence wins for duplicated spec strings; the derived seed
    # makes duplicates produce identical values anyway
    pending = []
    seen = set(done)
    for s in spec_strings:
        if s not in seen:
            pending.append(s)
            seen.add(s)

    results: dict[str, SearchRow] = dict(done)
    try:
        if pending:
            tasks = [(d, expected, s, graph, prior_family,
                      derive_spec_seed(seed, s), opts) for s in pending]
            if jobs > 1:
                with ProcessPoolExecutor(max_workers=jobs) as pool:
                    for row in pool.map(_fit_one, tasks):
                        results[row.spec] = row
                        if writer:
                            _append_row(writer, sink, row)
            else:
                for task in tasks:
                    row = _fit_one(task)
                    results[row.spec] = row
                    if writer:
                        _append_row(writer, sink, row)
    finally:
        if sink:
            sink.close()

    rows = tuple(results[s] for s in spec_strings)
    if all(not r.converged or not np.isfinite(r.waic) for r in rows):
        raise InputError("search failed: no spec produced a converged fit")

    from .modelspec import parse_spec

    best_per_family: dict[int, SearchRow] = {}
    overall_best: SearchRow | None = None
    for row in rows:  # enumeration order; strict < keeps the first on ties
        if not row.converged or not np.isfinite(row.waic):
            continue
        family = eq5_family(parse_spec(row.spec))
        if family is not None:
            cur = best_per_family.get(family)
            if cur is None or row.waic < cur.waic:
                best_per_family[family] = row
        if overall_best is None or row.waic < overall_best.waic:
            overall_best = row
    return SearchReport(rows=rows, best_per_family=best_per_family,
                        overall_best=overall_best.spec if overall_best else None)


def _append_row(writer, sink, row: SearchRow) -> None:
    writer.writerow([row.spec, f"{row.waic:.17g}", f"{row.p_eff:.17g}",
                     int(row.converged), f"{row.seconds:.3f}"])
    sink.flush()


def read_results_csv(path) -> list[SearchRow]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != RESULTS_HEADER:
            raise InputError(f"unexpected results header in {path}")
        for record in reader:
            if len(record) != 5:
                continue
            rows.append(SearchRow(spec=record[0], waic=float(record[1]),
                                  p_eff=float(record[2]),
                                  converged=bool(int(record[3])),
                                  seconds=float(record[4])))
    return rows


def write_results_csv(report: SearchReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULTS_HEADER)
        for row in report.rows:
            writer.writerow([row.spec, f"{row.waic:.17g}", f"{row.p_eff:.17g}",
                             int(row.converged), f"{row.seconds:.3f}"])


def write_family_csv(report: SearchReport, path) -> None:
    """Best model per nested predictor family, one row per family."""
    from .modelspec import parse_spec

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(FAMILY_HEADER)
        for family in sorted(report.best_per_family):
            row = report.best_per_family[family]
            spec = parse_spec(row.spec)
            writer.writerow([
                family,
                spec.time or "-",
                spec.age or "-",
                spec.space_time or "-",
                spec.space_age or "-",
                spec.time_age or "-",
                f"{row.waic:.17g}",
            ])
