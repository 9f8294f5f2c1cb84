"""Posterior summary statistics and the widely applicable information
criterion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

__all__ = ["SummaryRow", "QUANTILE_LEVELS", "posterior_summary",
           "half_sample_mode", "waic"]

QUANTILE_LEVELS = (0.025, 0.25, 0.5, 0.75, 0.975)


@dataclass(frozen=True)
class SummaryRow:
    """Posterior mean, sd, the five standard quantiles, and the mode."""

    mean: float
    sd: float
    q025: float
    q25: float
    q50: float
    q75: float
    q975: float
    mode: float

    def as_dict(self) -> dict[str, float]:
        return {"mean": self.mean, "sd": self.sd, "q0.025": self.q025,
                "q0.25": self.q25, "q0.5": self.q50, "q0.75": self.q75,
                "q0.975": self.q975, "mode": self.mode}


def half_sample_mode(draws: np.ndarray) -> float:
    """Mode estimate by recursive half-sample range shrinking.

    Repeatedly keeps the half sample with the smallest range; no kernel or
    bandwidth choice involved.
    """
    x = np.sort(np.asarray(draws, dtype=float).ravel())
    while x.size > 3:
        half = (x.size + 1) // 2
        widths = x[half - 1:] - x[:x.size - half + 1]
        start = int(np.argmin(widths))
        x = x[start:start + half]
    if x.size == 3:
        return float(x[1]) if (x[1] - x[0]) == (x[2] - x[1]) else (
            float(0.5 * (x[0] + x[1])) if (x[1] - x[0]) < (x[2] - x[1])
            else float(0.5 * (x[1] + x[2])))
    return float(x.mean())


def posterior_summary(draws: np.ndarray) -> list[SummaryRow]:
    """Per-coordinate summaries of an (n_draws, d) matrix of draws.

    Quantiles use linear interpolation of order statistics; the mode uses
    the half-sample estimator.  Requires at least 10 draws.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 1:
        draws = draws[:, None]
    if draws.shape[0] < 10:
        raise InputError(f"need at least 10 draws, got {draws.shape[0]}")
    means = draws.mean(axis=0)
    sds = draws.std(axis=0, ddof=1)
    quants = np.quantile(draws, QUANTILE_LEVELS, axis=0, method="linear")
    rows = []
    for c in range(draws.shape[1]):
        rows.append(SummaryRow(
            mean=float(means[c]), sd=float(sds[c]),
            q025=float(quants[0, c]), q25=float(quants[1, c]),
            q50=float(quants[2, c]), q75=float(quants[3, c]),
            q975=float(quants[4, c]), mode=half_sample_mode(draws[:, c]),
        ))
    return rows


def waic(pointwise_loglik_draws: np.ndarray) -> tuple[float, float, float]:
    """Widely applicable information criterion from an (n_draws, n_cells)
    matrix of pointwise log likelihoods.

    Returns (waic, p_eff, lppd) with lppd the log pointwise predictive
    density (log of the draw-averaged likelihood per cell, summed), p_eff
    the summed posterior variance of the pointwise log likelihood, and
    waic = -2 (lppd - p_eff).
    """
    ll = np.asarray(pointwise_loglik_draws, dtype=float)
    if ll.ndim != 2:
        raise InputError("pointwise log likelihood draws must be 2-d")
    M = ll.shape[0]
    if M < 2:
        raise InputError(f"need at least 2 draws to estimate p_eff, got {M}")
    shift = ll.max(axis=0)
    lppd = float(np.sum(np.log(np.mean(np.exp(ll - shift), axis=0)) + shift))
    p_eff = float(np.sum(ll.var(axis=0, ddof=1)))
    return -2.0 * (lppd - p_eff), p_eff, lppd
