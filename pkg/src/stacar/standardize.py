"""Indirect standardization: reference rates, expected counts, and the
proportionality diagnostic.

Expected counts control for population structure by applying per-stratum
reference rates to local populations.  The whole construction presumes that
stratum-specific rates factor into an area-period relative risk times a
stratum baseline; the diagnostic checks that factorization by regressing
observed stratum rates through the origin against the reference rates,
cell by cell.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import EmptyStratumError, InputError

__all__ = [
    "StandardizationResult",
    "ProportionalityCell",
    "ProportionalityReport",
    "stratum_rates",
    "expected_counts",
    "expected_for_model",
    "proportionality_check",
    "write_report_csv",
    "write_points_csv",
]


@dataclass(frozen=True, eq=False)
class StandardizationResult:
    """Reference rates with the expected counts and ratios they imply."""

    rates: np.ndarray               # (K,) reference rate per age group
    expected: np.ndarray            # (S, T, K) N * q
    expected_collapsed: np.ndarray  # (S, T) sum over age
    sir: np.ndarray                 # (S, T) observed/expected; NaN where E == 0


@dataclass(frozen=True, eq=False)
class ProportionalityCell:
    """Through-origin fit of observed rates against reference rates for one
    (area, period) cell."""

    area_id: str
    period: str
    assessed: bool
    slope: float = float("nan")
    r_squared: float = float("nan")
    flagged: bool = False
    # (age_label, reference rate, observed rate) per populated stratum
    points: tuple[tuple[str, float, float], ...] = field(default_factory=tuple)


@dataclass(frozen=True, eq=False)
class ProportionalityReport:
    cells: tuple[ProportionalityCell, ...]
    min_points: int
    r2_threshold: float

    @property
    def n_assessed(self) -> int:
        return sum(c.assessed for c in self.cells)

    @property
    def n_flagged(self) -> int:
        return sum(c.flagged for c in self.cells)

    def flagged_fraction(self) -> float:
        assessed = self.n_assessed
        return self.n_flagged / assessed if assessed else 0.0


def stratum_rates(d: Dataset) -> np.ndarray:
    """Internally standardized reference rates q_k = sum(O_.k) / sum(N_.k)."""
    total_obs = d.observed.sum(axis=(0, 1)).astype(float)
    total_pop = d.population.sum(axis=(0, 1))
    for k, pop in enumerate(total_pop):
        if pop <= 0.0:
            raise EmptyStratumError(
                f"age group {d.age_labels[k]!r} has zero total population"
            )
    return total_obs / total_pop


def expected_counts(d: Dataset, rates: np.ndarray) -> StandardizationResult:
    """Expected counts E_ijk = N_ijk * q_k and the ratios O_ij / E_ij."""
    rates = np.asarray(rates, dtype=float)
    K = d.shape[2]
    if rates.shape != (K,):
        raise InputError(f"rate vector must have length {K}, got shape {rates.shape}")
    if np.any(rates < 0.0):
        raise InputError("reference rates must be non-negative")
    expected = d.population * rates[None, None, :]
    collapsed = expected.sum(axis=2)
    observed = d.observed.sum(axis=2).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        sir = np.where(collapsed > 0.0, observed / collapsed, np.nan)
    return StandardizationResult(rates=rates, expected=expected,
                                 expected_collapsed=collapsed, sir=sir)


def expected_for_model(d: Dataset, policy: str = "internal",
                       rates: np.ndarray | None = None) -> np.ndarray:
    """Per-cell expected counts E_ijk feeding the count models.

    ``internal`` applies internally standardized per-stratum rates,
    ``global`` applies the single overall rate to every cell, and an
    explicit ``rates`` vector (length K) overrides either.
    """
    if rates is not None:
        return expected_counts(d, np.asarray(rates, dtype=float)).expected
    if policy == "internal":
        return expected_counts(d, stratum_rates(d)).expected
    if policy == "global":
        total_pop = float(d.population.sum())
        if total_pop <= 0.0:
            raise EmptyStratumError("dataset has zero total population")
        rate = float(d.observed.sum()) / total_pop
        return d.population * rate
    raise InputError(f"unknown expected-count policy {policy!r}")


def _through_origin_fit(q: np.ndarray, rates: np.ndarray) -> tuple[float, float]:
    """Least-squares slope of rate = theta * q, and the fraction of the
    rates' variance (about their mean) explained by the fit.

    A fit no better than predicting the mean rate gives r_squared <= 0, so
    constant observed rates against varying reference rates score very low;
    an exactly proportional configuration scores 1.
    """
    qq = float(q @ q)
    if qq <= 0.0:
        return 0.0, float("-inf")
    slope = max(float(q @ rates) / qq, 0.0)
    residual = rates - slope * q
    ss_res = float(residual @ residual)
    ss_tot = float(np.sum((rates - rates.mean()) ** 2))
    if ss_tot <= 0.0:
        return slope, 1.0 if ss_res <= 1e-300 else float("-inf")
    return slope, 1.0 - ss_res / ss_tot


def proportionality_check(d: Dataset, rates: np.ndarray, min_points: int = 3,
                          r2_threshold: float = 0.5) -> ProportionalityReport:
    """Fit observed stratum rates against reference rates for every
    (area, period) cell and flag poor through-origin fits.

    Cells with fewer than ``min_points`` populated strata are marked
    not-assessed.  Strata with zero population contribute no point.
    """
    if min_points < 3:
        raise InputError(f"min_points must be at least 3, got {min_points}")
    rates = np.asarray(rates, dtype=float)
    S, T, K = d.shape
    if rates.shape != (K,):
        raise InputError(f"rate vector must have length {K}")
    cells = []
    for i in range(S):
        for j in range(T):
            pop = d.population[i, j]
            mask = pop > 0.0
            labels = tuple(d.age_labels[k] for k in range(K) if mask[k])
            q = rates[mask]
            obs_rate = d.observed[i, j][mask] / pop[mask]
            points = tuple(zip(labels, q.tolist(), obs_rate.tolist()))
            if mask.sum() < min_points:
                cells.append(ProportionalityCell(
                    area_id=d.area_ids[i], period=d.period_labels[j],
                    assessed=False, points=points))
                continue
            slope, r2 = _through_origin_fit(q, obs_rate)
            cells.append(ProportionalityCell(
                area_id=d.area_ids[i], period=d.period_labels[j],
                assessed=True, slope=slope, r_squared=r2,
                flagged=bool(r2 < r2_threshold), points=points))
    return ProportionalityReport(cells=tuple(cells), min_points=min_points,
                                 r2_threshold=r2_threshold)


def write_report_csv(report: ProportionalityReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["area_id", "period", "slope", "r2", "flag", "assessed"])
        for c in report.cells:
            writer.writerow([
                c.area_id, c.period,
                f"{c.slope:.17g}" if c.assessed else "",
                f"{c.r_squared:.17g}" if c.assessed else "",
                int(c.flagged), int(c.assessed),
            ])


def write_points_csv(report: ProportionalityReport, path) -> None:
    """Long-format scatter points behind the diagnostic, for external plotting."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["area_id", "period", "age_group", "q", "rate"])
        for c in report.cells:
            for age, q, rate in c.points:
                writer.writerow([c.area_id, c.period, age, f"{q:.17g}", f"{rate:.17g}"])
