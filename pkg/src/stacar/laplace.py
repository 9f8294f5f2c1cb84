"""Empirical-Bayes Gaussian approximation of the latent field under hard
constraints, with hyperparameter exploration and posterior summaries.

The fit alternates two levels.  The inner step finds, for fixed
hyperparameters, the constrained mode of the latent log posterior (Poisson
log likelihood plus Gaussian prior quadratic forms) by projected Newton
iterations, conditioning each iterate on the sum-to-zero constraints via
kriging; its curvature supplies a Gaussian approximation on the constraint
surface.  The outer step climbs the resulting approximate marginal
posterior of the hyperparameters on the (log tau, logit lambda) scale with
a derivative-free simplex search from a fixed neutral start.  Posterior
summaries come from Gaussian draws re-projected onto the constraints;
hyperparameter summaries come from a Gaussian on the internal scale whose
curvature is measured by finite differences at the mode (optionally
replaced by a small mode-centred grid of Gaussians mixed with normalized
weights).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.optimize as sopt
import scipy.sparse as sp
from scipy.special import expit, gammaln

from .adjacency import SpatialGraph
from .data import Dataset
from .errors import InputError
from .model import Hyperparameters, LatentState, ModelStructure, log_hyperprior
from .modelspec import ModelSpec
from .sampling import PrecisionFactor
from .summaries import SummaryRow, posterior_summary, waic

__all__ = ["FitOptions", "FitResult", "fit_laplace", "export_effects",
           "fit_result_json_dict", "write_fit_json", "write_effect_tables"]

#: diagonal jitter applied to singular precisions before factorization
JITTER = 1e-8

#: divergence guard on the linear predictor
ETA_GUARD = 30.0


@dataclass(frozen=True)
class FitOptions:
    seed: int = 0
    n_draws: int = 1000
    hyper_draws: int = 2000
    max_newton: int = 100
    newton_tol: float = 1e-6
    max_halvings: int = 20
    optimizer_maxiter: int | None = None
    fd_step: float = 0.1
    ccd: bool = False
    ccd_scale: float = 1.0
    dense_cutoff: int = 700
    keep_draws: bool = False  # attach posterior latent draws to the result


@dataclass(frozen=True)
class FitResult:
    """Posterior summaries and fit diagnostics for one model specification."""

    spec: ModelSpec
    prior_family: str
    converged: bool
    waic: float
    p_eff: float
    lppd: float
    intercept: SummaryRow
    hyper_summary: dict[str, SummaryRow]
    latent_mean: dict[str, np.ndarray]
    latent_sd: dict[str, np.ndarray]
    hyper_mode: Hyperparameters
    diagnostics: dict
    area_ids: tuple[str, ...]
    period_labels: tuple[str, ...]
    age_labels: tuple[str, ...]
    seconds: float = 0.0
    # packed (n_draws, n_latent) posterior draws, kept only on request
    latent_draws: np.ndarray | None = None
    block_slices: dict[str, slice] | None = None


class _Objective:
    """Inner Newton solver plus the Laplace marginal, with warm starting."""

    def __init__(self, ms: ModelStructure, d: Dataset, expected: np.ndarray,
                 prior_family: str, opts: FitOptions):
        self.ms = ms
        self.opts = opts
        self.prior_family = prior_family
        self.B = ms.design
        self.obs = d.observed.ravel().astype(float)
        self.expected = np.asarray(expected, dtype=float).ravel()
        self.live = self.expected > 0.0
        if np.any((self.obs > 0) & ~self.live):
            raise InputError("positive count in a cell with zero expected value")
        # x- and theta-independent part of the log likelihood
        log_e = np.zeros_like(self.expected)
        log_e[self.live] = np.log(self.expected[self.live])
        self.ll_const = float(np.sum(self.obs[self.live] * log_e[self.live]
                                     - gammaln(self.obs[self.live] + 1.0)))
        self.A = ms.joint_constraints_orth()
        self.warm = np.zeros(ms.n_latent)
        self.newton_iterations = 0
        self.evaluations = 0
        self.last_converged = True

    # --- likelihood pieces ------------------------------------------------

    def _mu(self, eta: np.ndarray) -> np.ndarray:
        mu = np.zeros_like(eta)
        mu[self.live] = self.expected[self.live] * np.exp(eta[self.live])
        return mu

    def loglik_var(self, eta: np.ndarray) -> float:
        """x-dependent part of the log likelihood."""
        return float(np.sum(self.obs[self.live] * eta[self.live])
                     - np.sum(self._mu(eta)))

    def pointwise_loglik(self, eta_matrix: np.ndarray) -> np.ndarray:
        """(n_draws, n_cells) pointwise log likelihoods at predictor draws."""
        out = np.zeros_like(eta_matrix)
        live = self.live
        log_e = np.log(self.expected[live])
        out[:, live] = (self.obs[live] * (log_e + eta_matrix[:, live])
                        - self.expected[live] * np.exp(eta_matrix[:, live])
                        - gammaln(self.obs[live] + 1.0))
        return out

    # --- inner step ---------------------------------------------------

    def newton_mode(self, h: Hyperparameters, x0: np.ndarray | None = None):
        """Constrained posterior mode of the latent field and its curvature.

        Returns (x, factor, converged) where factor holds the jittered
        negative Hessian at the mode.
        """
        opts = self.opts
        Q = self.ms.prior_precision(h)
        x = self.warm.copy() if x0 is None else np.asarray(x0, dtype=float).copy()
        A = self.A
        factor = None
        converged = False

        def objective(vec, eta):
            return self.loglik_var(eta) - 0.5 * float(vec @ (Q @ vec))

        eta = self.B @ x
        if np.max(np.abs(eta)) > ETA_GUARD:
            x = np.zeros_like(x)
            eta = self.B @ x
        f_curr = objective(x, eta)
        for _ in range(opts.max_newton):
            self.newton_iterations += 1
            mu = self._mu(eta)
            grad = self.B.T @ (self.obs - mu) - Q @ x
            H = (Q + (self.B.T @ sp.diags(mu) @ self.B)).tocsc()
            factor = PrecisionFactor(H, jitter=JITTER, dense_cutoff=opts.dense_cutoff)
            # convergence measured on the gradient tangent to the constraints
            tangent = grad - A.T @ (A @ grad) if A.size else grad
            if np.max(np.abs(tangent)) < opts.newton_tol:
                converged = True
                break
            dx = factor.solve(grad)
            step = 1.0
            accepted = False
            for _ in range(opts.max_halvings):
                cand = self._project(factor, x + step * dx)
                eta_cand = self.B @ cand
                if np.max(np.abs(eta_cand)) <= ETA_GUARD:
                    f_cand = objective(cand, eta_cand)
                    if f_cand >= f_curr - 1e-10 * (1.0 + abs(f_curr)):
                        x, eta, f_curr = cand, eta_cand, f_cand
                        accepted = True
                        break
                step *= 0.5
            if not accepted:
                break
        if factor is None:  # pragma: no cover - max_newton >= 1 always
            raise InputError("Newton solver was given zero iterations")
        self.warm = x.copy()
        return x, factor, converged

    def _project(self, factor: PrecisionFactor, x: np.ndarray) -> np.ndarray:
        A = self.A
        if A.size == 0:
            return x
        V = factor.solve(A.T)
        G = A @ V
        G = 0.5 * (G + G.T)
        out = x - V @ np.linalg.solve(G, A @ x)
        # the kriging step leaves solver-level dust on the constraints (the
        # factor carries a jitter); scrub it exactly so prior quadratic
        # forms do not amplify it into a gradient noise floor
        return out - A.T @ (A @ out)

    def project_draws(self, factor: PrecisionFactor, draws: np.ndarray) -> np.ndarray:
        """Condition (n_draws, n) Gaussian draws on the constraints."""
        A = self.A
        if A.size == 0:
            return draws
        V = factor.solve(A.T)
        G = A @ V
        G = 0.5 * (G + G.T)
        corr = np.linalg.solve(G, A @ draws.T)
        out = draws - (V @ corr).T
        return out - (A.T @ (A @ out.T)).T

    # --- outer step -------------------------------------------------------

    def log_marginal(self, theta: np.ndarray) -> tuple[float, np.ndarray, PrecisionFactor, bool]:
        """Laplace approximation of the log marginal posterior at theta."""
        self.evaluations += 1
        if np.max(np.abs(theta)) > 25.0:
            return -np.inf, self.warm, None, False
        h = self.ms.hyper_from_internal(theta)
        x, factor, converged = self.newton_mode(h)
        self.last_converged = converged
        eta = self.B @ x
        value = (log_hyperprior(h, self.prior_family)
                 + self.loglik_var(eta)
                 - 0.5 * self.ms.prior_quad(h, x)
                 + 0.5 * self.ms.prior_logdet(h)
                 - 0.5 * factor.logdet())
        A = self.A
        if A.size:
            V = factor.solve(A.T)
            G = A @ V
            G = 0.5 * (G + G.T)
            sign, ld = np.linalg.slogdet(G)
            if sign <= 0:
                return -np.inf, x, factor, False
            value -= 0.5 * ld
        if not np.isfinite(value):
            return -np.inf, x, factor, False
        return float(value), x, factor, converged


def _fd_hessian(fun, theta: np.ndarray, step: float) -> np.ndarray:
    n = theta.size
    H = np.zeros((n, n))
    f0 = fun(theta)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = step
        fp = fun(theta + ei)
        fm = fun(theta - ei)
        H[i, i] = (fp - 2.0 * f0 + fm) / step ** 2
    for i in range(n):
        for j in range(i + 1, n):
            ei = np.zeros(n); ei[i] = step
            ej = np.zeros(n); ej[j] = step
            fpp = fun(theta + ei + ej)
            fpm = fun(theta + ei - ej)
            fmp = fun(theta - ei + ej)
            fmm = fun(theta - ei - ej)
            H[i, j] = H[j, i] = (fpp - fpm - fmp + fmm) / (4.0 * step ** 2)
    return H


def _hyper_covariance(H: np.ndarray, floor: float = 0.0625) -> np.ndarray:
    """Covariance from the negated marginal Hessian.

    Eigenvalues are floored so that directions with (numerically) vanishing
    curvature, e.g. a precision drifting to the box edge on degenerate
    data, yield wide but finite summaries.
    """
    neg = -0.5 * (H + H.T)
    w, V = np.linalg.eigh(neg)
    w = np.maximum(w, floor)
    return V @ np.diag(1.0 / w) @ V.T


def fit_laplace(d: Dataset, expected: np.ndarray, spec: ModelSpec,
                graph: SpatialGraph, prior_family: str = "pc",
                opts: FitOptions | None = None) -> FitResult:
    """Fit one model specification by the constrained Laplace approximation.

    ``expected`` is the (S, T, K) array of expected counts entering the
    Poisson rates (see :func:`stacar.standardize.expected_for_model`).
    The dataset's area order must match the graph's.
    """
    t_start = time.perf_counter()
    opts = opts or FitOptions()
    if d.area_ids != graph.area_ids:
        raise InputError("dataset areas must match the graph (use reorder_areas)")
    if d.n_cells == 0:
        raise InputError("empty dataset")
    ms = ModelStructure(spec, graph, T=len(d.period_labels), K=len(d.age_labels))
    obj = _Objective(ms, d, expected, prior_family, opts)

    theta0 = np.zeros(len(ms.internal_names()))
    maxiter = opts.optimizer_maxiter or 120 * theta0.size
    # unit steps on the internal scale; the simplex method's default
    # near-zero perturbations stall at a zero start
    simplex = np.vstack([theta0] + [theta0 + np.eye(theta0.size)[i]
                                    for i in range(theta0.size)])

    def negative(theta):
        value = obj.log_marginal(theta)[0]
        return -value if np.isfinite(value) else 1e100

    result = sopt.minimize(negative, theta0, method="Nelder-Mead",
                           options={"maxiter": maxiter, "xatol": 5e-2,
                                    "fatol": 5e-4, "adaptive": True,
                                    "initial_simplex": simplex})
    theta_hat = result.x

    marg_hess = _fd_hessian(lambda t: -negative(t), theta_hat, opts.fd_step)
    sigma_theta = _hyper_covariance(marg_hess)

    value_hat, x_hat, factor_hat, newton_ok = obj.log_marginal(theta_hat)
    h_hat = ms.hyper_from_internal(theta_hat)

    rng = np.random.default_rng(opts.seed)

    # mixture of Gaussian approximations over hyperparameter points
    points = [(theta_hat, 0.0, x_hat, factor_hat)]
    if opts.ccd:
        L = np.linalg.cholesky(sigma_theta)
        radius = opts.ccd_scale * np.sqrt(theta_hat.size)
        for axis in range(theta_hat.size):
            for sign in (1.0, -1.0):
                theta_g = theta_hat + sign * radius * L[:, axis]
                value_g, x_g, factor_g, _ = obj.log_marginal(theta_g)
                if np.isfinite(value_g):
                    points.append((theta_g, value_g - value_hat, x_g, factor_g))
    log_w = np.array([p[1] for p in points])
    weights = np.exp(log_w - log_w.max())
    weights /= weights.sum()
    allocation = rng.multinomial(opts.n_draws, weights)

    draws = np.empty((opts.n_draws, ms.n_latent))
    pos = 0
    for (theta_g, _, x_g, factor_g), m in zip(points, allocation):
        if m == 0:
            continue
        raw = x_g[None, :] + factor_g.sample(rng, m)
        draws[pos:pos + m] = obj.project_draws(factor_g, raw)
        pos += m

    constraint_residual = 0.0
    A = obj.A
    if A.size:
        constraint_residual = float(np.max(np.abs(A @ draws.T)))

    eta_draws = (obj.B @ draws.T).T
    ll_draws = obj.pointwise_loglik(eta_draws)
    waic_value, p_eff, lppd = waic(ll_draws)

    latent_mean, latent_sd = {}, {}
    for name in ms.block_names:
        if name == "intercept":
            continue
        sl = ms.block_slice(name)
        latent_mean[name] = draws[:, sl].mean(axis=0)
        latent_sd[name] = draws[:, sl].std(axis=0, ddof=1)
    intercept_summary = posterior_summary(draws[:, ms.offsets["intercept"]])[0]

    theta_draws = rng.multivariate_normal(theta_hat, sigma_theta,
                                          size=opts.hyper_draws,
                                          method="cholesky")
    hyper_summary: dict[str, SummaryRow] = {}
    for pos_name, internal in enumerate(ms.internal_names()):
        col = theta_draws[:, pos_name]
        if internal.startswith("log_tau_"):
            summary_name = "sigma_" + internal[len("log_tau_"):]
            transformed = np.exp(-col / 2.0)
        else:
            summary_name = "lambda_spatial"
            transformed = expit(col)
        hyper_summary[summary_name] = posterior_summary(transformed)[0]

    diagnostics = {
        "optimizer_evaluations": obj.evaluations,
        "newton_iterations": obj.newton_iterations,
        "newton_converged": bool(newton_ok),
        "optimizer_converged": bool(result.success),
        "constraint_residual": constraint_residual,
        "log_marginal": float(value_hat),
        "mixture_points": len(points),
    }
    converged = bool(newton_ok and constraint_residual < 1e-6)

    return FitResult(
        spec=spec, prior_family=prior_family, converged=converged,
        waic=waic_value, p_eff=p_eff, lppd=lppd,
        intercept=intercept_summary, hyper_summary=hyper_summary,
        latent_mean=latent_mean, latent_sd=latent_sd,
        hyper_mode=h_hat, diagnostics=diagnostics,
        area_ids=d.area_ids, period_labels=d.period_labels,
        age_labels=d.age_labels,
        seconds=time.perf_counter() - t_start,
        latent_draws=draws if opts.keep_draws else None,
        block_slices={name: ms.block_slice(name) for name in ms.block_names}
        if opts.keep_draws else None,
    )


# --- exports ------------------------------------------------------------


def export_effects(fit: FitResult) -> dict[str, list[dict]]:
    """Plot-ready long-format tables of exponentiated posterior mean effects.

    One table per latent block: spatial (per area), temporal (per period),
    age (per group), and each fitted interaction surface.  ``effect`` is
    exp(posterior mean); ``sd`` is the posterior standard deviation on the
    log scale.
    """
    tables: dict[str, list[dict]] = {}
    areas, periods, ages = fit.area_ids, fit.period_labels, fit.age_labels
    S, T, K = len(areas), len(periods), len(ages)
    for name, mean in fit.latent_mean.items():
        sd = fit.latent_sd[name]
        rows = []
        if name == "spatial":
            for i, a in enumerate(areas):
                rows.append({"area_id": a, "effect": float(np.exp(mean[i])),
                             "sd": float(sd[i])})
        elif name == "time":
            for j, p in enumerate(periods):
                rows.append({"period": p, "effect": float(np.exp(mean[j])),
                             "sd": float(sd[j])})
        elif name == "age":
            for k, a in enumerate(ages):
                rows.append({"age_group": a, "effect": float(np.exp(mean[k])),
                             "sd": float(sd[k])})
        elif name == "space_time":
            for i, a in enumerate(areas):
                for j, p in enumerate(periods):
                    idx = i * T + j
                    rows.append({"area_id": a, "period": p,
                                 "effect": float(np.exp(mean[idx])),
                                 "sd": float(sd[idx])})
        elif name == "space_age":
            for i, a in enumerate(areas):
                for k, g in enumerate(ages):
                    idx = i * K + k
                    rows.append({"area_id": a, "age_group": g,
                                 "effect": float(np.exp(mean[idx])),
                                 "sd": float(sd[idx])})
        else:
            for j, p in enumerate(periods):
                for k, g in enumerate(ages):
                    idx = k * T + j
                    rows.append({"period": p, "age_group": g,
                                 "effect": float(np.exp(mean[idx])),
                                 "sd": float(sd[idx])})
        tables[name] = rows
    return tables


def fit_result_json_dict(fit: FitResult) -> dict:
    """JSON document for a fit: spec, summaries, criterion, diagnostics.

    Keys are emitted in a fixed order and timestamps/durations are excluded
    so reruns with the same seed are byte-identical.
    """
    return {
        "spec": fit.spec.to_string(),
        "prior": fit.prior_family,
        "converged": fit.converged,
        "waic": fit.waic,
        "p_eff": fit.p_eff,
        "lppd": fit.lppd,
        "intercept": fit.intercept.as_dict(),
        "hyperparameters": {name: row.as_dict()
                            for name, row in fit.hyper_summary.items()},
        "diagnostics": fit.diagnostics,
    }


def write_fit_json(fit: FitResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(fit_result_json_dict(fit), fh, indent=2)
        fh.write("\n")


def write_effect_tables(fit: FitResult, prefix: str) -> list[str]:
    """Write one effect CSV per block as ``<prefix>_<block>.csv``."""
    import csv

    written = []
    for name, rows in export_effects(fit).items():
        path = f"{prefix}_{name}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            header = list(rows[0].keys())
            writer.writerow(header)
            for row in rows:
                writer.writerow([row[c] if isinstance(row[c], str)
                                 else f"{row[c]:.17g}" for c in header])
        written.append(path)
    return written
