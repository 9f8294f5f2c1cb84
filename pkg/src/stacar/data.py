"""Count datasets on a dense area x period x age lattice, with CSV I/O.

The CSV schema is ``area_id,period,age_group,observed,population`` with one
row per lattice cell; every cell must appear exactly once.  Label order is
first appearance in the file, which downstream code treats as the canonical
axis order (use :func:`reorder_areas` to align a dataset with a graph's
area order before fitting).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import InputError

__all__ = ["Dataset", "read_dataset_csv", "parse_dataset_csv", "write_dataset_csv",
           "reorder_areas"]

CSV_HEADER = ["area_id", "period", "age_group", "observed", "population"]


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observed counts and populations at risk on an S x T x K lattice."""

    area_ids: tuple[str, ...]
    period_labels: tuple[str, ...]
    age_labels: tuple[str, ...]
    observed: np.ndarray    # (S, T, K) non-negative counts
    population: np.ndarray  # (S, T, K) non-negative populations

    def __post_init__(self):
        S, T, K = len(self.area_ids), len(self.period_labels), len(self.age_labels)
        for name, labels in (("area", self.area_ids), ("period", self.period_labels),
                             ("age group", self.age_labels)):
            if len(labels) == 0:
                raise InputError(f"dataset needs at least one {name}")
            if len(set(labels)) != len(labels):
                raise InputError(f"{name} labels must be unique")
        if self.observed.shape != (S, T, K) or self.population.shape != (S, T, K):
            raise InputError(f"arrays must have shape {(S, T, K)}")
        if np.any(self.observed < 0):
            raise InputError("observed counts must be non-negative")
        if np.any(self.population < 0):
            raise InputError("populations must be non-negative")
        bad = (self.observed > 0) & (self.population == 0)
        if np.any(bad):
            i, j, k = np.argwhere(bad)[0]
            raise InputError(
                f"cell ({self.area_ids[i]}, {self.period_labels[j]}, "
                f"{self.age_labels[k]}) has observed > 0 with zero population"
            )

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.observed.shape

    @property
    def n_cells(self) -> int:
        S, T, K = self.shape
        return S * T * K


def parse_dataset_csv(text: str) -> Dataset:
    """Parse dataset CSV content; see :func:`read_dataset_csv`."""
    return _parse(io.StringIO(text))


def read_dataset_csv(path) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        return _parse(fh)


def _parse(fh) -> Dataset:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise InputError("dataset CSV is empty") from None
    if [h.strip() for h in header] != CSV_HEADER:
        raise InputError(
            f"line 1: expected header {','.join(CSV_HEADER)!r}, got {','.join(header)!r}"
        )
    areas: dict[str, int] = {}
    periods: dict[str, int] = {}
    ages: dict[str, int] = {}
    cells: dict[tuple[int, int, int], tuple[int, float]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 5:
            raise InputError(f"line {lineno}: expected 5 columns, got {len(row)}")
        area, period, age, obs_s, pop_s = (c.strip() for c in row)
        i = areas.setdefault(area, len(areas))
        j = periods.setdefault(period, len(periods))
        k = ages.setdefault(age, len(ages))
        try:
            obs = int(obs_s)
            pop = float(pop_s)
        except ValueError:
            raise InputError(f"line {lineno}: non-numeric observed/population") from None
        if (i, j, k) in cells:
            raise InputError(f"line {lineno}: duplicate cell ({area}, {period}, {age})")
        cells[(i, j, k)] = (obs, pop)

    S, T, K = len(areas), len(periods), len(ages)
    if S * T * K != len(cells):
        missing = S * T * K - len(cells)
        raise InputError(
            f"dataset lattice is incomplete: {missing} of {S * T * K} cells missing"
        )
    observed = np.zeros((S, T, K), dtype=np.int64)
    population = np.zeros((S, T, K), dtype=float)
    for (i, j, k), (obs, pop) in cells.items():
        observed[i, j, k] = obs
        population[i, j, k] = pop
    return Dataset(
        area_ids=tuple(areas),
        period_labels=tuple(periods),
        age_labels=tuple(ages),
        observed=observed,
        population=population,
    )


def write_dataset_csv(d: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for i, area in enumerate(d.area_ids):
            for j, period in enumerate(d.period_labels):
                for k, age in enumerate(d.age_labels):
                    writer.writerow([area, period, age,
                                     int(d.observed[i, j, k]),
                                     _format_pop(d.population[i, j, k])])


def _format_pop(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(float(value))


def reorder_areas(d: Dataset, area_ids) -> Dataset:
    """Return a copy with areas in the given order (e.g. a graph's order)."""
    area_ids = tuple(area_ids)
    if set(area_ids) != set(d.area_ids):
        missing = sorted(set(area_ids) - set(d.area_ids))
        extra = sorted(set(d.area_ids) - set(area_ids))
        parts = []
        if missing:
            parts.append(f"dataset lacks areas {missing}")
        if extra:
            parts.append(f"dataset has extra areas {extra}")
        raise InputError("; ".join(parts))
    perm = [d.area_ids.index(a) for a in area_ids]
    return Dataset(
        area_ids=area_ids,
        period_labels=d.period_labels,
        age_labels=d.age_labels,
        observed=d.observed[perm],
        population=d.population[perm],
    )
