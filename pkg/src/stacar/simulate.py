"""Synthetic datasets with known ground truth, for recovery tests and
diagnostic calibration.

Latent blocks are drawn from their constrained Gaussian priors (jittered
factorization followed by conditioning on the sum-to-zero constraints),
assembled into relative risks through the log-linear predictor, and counts
are drawn Poisson around expected values built from a population policy
and a designated reference-rate vector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .adjacency import SpatialGraph
from .data import Dataset
from .errors import InputError
from .model import Hyperparameters, LatentState, ModelStructure, predictor_array
from .modelspec import ModelSpec
from .sampling import PrecisionFactor
from .standardize import stratum_rates

__all__ = ["SimulationTruth", "simulate_dataset", "make_proportionality_violation",
           "write_truth_json"]

_JITTER = 1e-8


@dataclass(frozen=True, eq=False)
class SimulationTruth:
    spec: ModelSpec
    alpha: float
    hyper: Hyperparameters
    state: LatentState
    rates: np.ndarray       # (K,) reference rates used to build E
    expected: np.ndarray    # (S, T, K)


def _population_array(policy, S: int, T: int, K: int) -> np.ndarray:
    if np.isscalar(policy):
        value = float(policy)
        if value <= 0.0:
            raise InputError("population per cell must be positive")
        return np.full((S, T, K), value)
    weights = np.asarray(policy, dtype=float)
    if weights.shape != (K,):
        raise InputError(f"population policy must be a scalar or length-{K} vector")
    if np.any(weights <= 0.0):
        raise InputError("population weights must be positive")
    return np.broadcast_to(weights, (S, T, K)).copy()


def _rate_vector(rates, K: int) -> np.ndarray:
    if np.isscalar(rates):
        value = float(rates)
        if value < 0.0:
            raise InputError("reference rate must be non-negative")
        return np.full(K, value)
    rates = np.asarray(rates, dtype=float)
    if rates.shape != (K,):
        raise InputError(f"reference rates must be a scalar or length-{K} vector")
    return rates


def simulate_dataset(graph: SpatialGraph, T: int, K: int, spec: ModelSpec,
                     hyper: Hyperparameters, alpha: float,
                     population=1000.0, reference_rates=0.01,
                     seed: int = 0) -> tuple[Dataset, SimulationTruth]:
    """Draw a dataset from the generative model with known truth.

    ``population`` is a constant per cell or a length-K age pyramid;
    ``reference_rates`` is a constant or per-age vector q used to form the
    expected values E = N * q entering the Poisson rates.
    """
    ms = ModelStructure(spec, graph, T=T, K=K)
    rng = np.random.default_rng(seed)
    blocks: dict[str, np.ndarray] = {}
    for name in ms.block_names:
        if name == "intercept":
            continue
        Q = ms.block_precision(name, hyper)
        structure = ms.structures[name]
        # the jitter must survive rounding against the matrix scale, which
        # can be huge for near-degenerate precisions
        jitter = _JITTER * max(1.0, float(Q.diagonal().max())) \
            if structure.rank_deficiency > 0 else 0.0
        factor = PrecisionFactor(Q, jitter=jitter)
        raw = factor.sample(rng, 1)[0]
        A = ms.block_constraints_orth(name)
        V = factor.solve(A.T)
        G = A @ V
        G = 0.5 * (G + G.T)
        blocks[name] = raw - V @ np.linalg.solve(G, A @ raw)
    state = LatentState(intercept=alpha, **blocks)
    S = graph.n_areas
    theta = np.exp(predictor_array(spec, state, S, T, K))
    pop = _population_array(population, S, T, K)
    rates = _rate_vector(reference_rates, K)
    expected = pop * rates[None, None, :]
    observed = rng.poisson(expected * theta)
    d = Dataset(
        area_ids=graph.area_ids,
        period_labels=tuple(f"p{j}" for j in range(T)),
        age_labels=tuple(f"k{k}" for k in range(K)),
        observed=observed,
        population=pop,
    )
    truth = SimulationTruth(spec=spec, alpha=alpha, hyper=hyper, state=state,
                            rates=rates, expected=expected)
    return d, truth


def make_proportionality_violation(d: Dataset, crossover_strength: float,
                                   seed: int = 0) -> Dataset:
    """Redraw counts after warping stratum risks with area-dependent age
    gradients, so the proportional-rates factorization fails.

    Cell risks are estimated from the dataset itself as the product of its
    internally standardized rates and per-cell ratios, then multiplied by
    ``exp(strength * g_i * s_k)`` with a per-area gradient g and a centred
    age score s.  Strength zero reproduces the estimated risks exactly and
    follows the same generator path.
    """
    if crossover_strength < 0.0:
        raise InputError("crossover strength must be non-negative")
    rng = np.random.default_rng(seed)
    S, T, K = d.shape
    q = stratum_rates(d)
    expected = d.population * q[None, None, :]
    collapsed = expected.sum(axis=2)
    observed = d.observed.sum(axis=2).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        theta = np.where(collapsed > 0.0, observed / collapsed, 0.0)
    risks = theta[:, :, None] * q[None, None, :]
    # random sign with magnitude bounded away from zero, so every area's
    # age profile is genuinely warped once the strength is nonzero
    area_gradient = (rng.choice([-1.0, 1.0], size=S)
                     * rng.uniform(0.5, 1.5, size=S))
    age_score = np.linspace(-1.0, 1.0, K) if K > 1 else np.zeros(1)
    warp = np.exp(crossover_strength * area_gradient[:, None, None]
                  * age_score[None, None, :])
    new_counts = rng.poisson(d.population * risks * warp)
    return Dataset(area_ids=d.area_ids, period_labels=d.period_labels,
                   age_labels=d.age_labels, observed=new_counts,
                   population=d.population)


def write_truth_json(truth: SimulationTruth, path) -> None:
    doc = {
        "spec": truth.spec.to_string(),
        "alpha": truth.alpha,
        "hyperparameters": {
            name: getattr(truth.hyper, name)
            for name in ("tau_spatial", "lambda_spatial", "tau_time", "tau_age",
                         "tau_space_time", "tau_space_age", "tau_time_age")
            if getattr(truth.hyper, name) is not None
        },
        "reference_rates": truth.rates.tolist(),
        "latent": {
            name: np.asarray(truth.state.block(name)).tolist()
            for name in ("spatial", "time", "age", "space_time", "space_age",
                         "time_age")
            if truth.state.block(name) is not None
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
