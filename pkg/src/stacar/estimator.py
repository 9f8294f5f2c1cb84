"""Scikit-learn style estimator wrapping the count-model fit.

The estimator composes with the wider ecosystem: construction only stores
parameters (``get_params``/``set_params`` work as usual), ``fit`` runs the
Laplace approximation, and ``predict`` returns fitted relative risks on
the training lattice.  ``score`` returns the negative information
criterion so that higher is better, as model-selection utilities expect.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .adjacency import SpatialGraph
from .data import Dataset
from .laplace import FitOptions, FitResult, fit_laplace
from .mcmc import McmcOptions, fit_mcmc
from .model import LatentState, predictor_array
from .modelspec import parse_spec
from .standardize import expected_for_model
from .validation import (check_dataset, check_expected, check_graph_alignment,
                         check_seed)

__all__ = ["SpaceTimeAgeRiskModel"]


class SpaceTimeAgeRiskModel(BaseEstimator):
    """Age-structured spatio-temporal Poisson risk model.

    Parameters
    ----------
    spec : str
        Serialized model specification,
        e.g. ``"delta=rw1;gamma=rw1;z1=II;z2=II;z3=-"``.
    prior : str
        Hyperprior family, ``"pc"`` or ``"noninformative"``.
    expected : str
        Expected-count policy fed to the Poisson rates: ``"internal"``
        (per-stratum internally standardized rates) or ``"global"``.
    seed : int
        Seed for all stochastic steps of the fit.
    n_draws : int
        Posterior draws behind the summaries and the information criterion.
    ccd : bool
        Mix Gaussian approximations over a small hyperparameter grid
        around the mode instead of using the mode alone.
    mcmc_check : bool
        Also run the sampling oracle and store it as ``mcmc_result_``.
    mcmc_iterations : int
        Iterations for the oracle run.
    """

    def __init__(self, spec: str = "delta=iid;gamma=-;z1=-;z2=-;z3=-",
                 prior: str = "pc", expected: str = "internal", seed: int = 0,
                 n_draws: int = 1000, ccd: bool = False,
                 mcmc_check: bool = False, mcmc_iterations: int = 5000):
        self.spec = spec
        self.prior = prior
        self.expected = expected
        self.seed = seed
        self.n_draws = n_draws
        self.ccd = ccd
        self.mcmc_check = mcmc_check
        self.mcmc_iterations = mcmc_iterations

    def fit(self, X: Dataset, y=None, *, graph: SpatialGraph = None,
            expected_counts: np.ndarray = None):
        """Fit the model to a dataset aligned with a spatial graph.

        ``X`` is the dataset; ``graph`` is required.  ``expected_counts``
        overrides the expected-count policy (useful when reference rates
        are known externally).
        """
        if graph is None:
            raise ValueError("fit requires graph=<SpatialGraph>")
        d = check_graph_alignment(check_dataset(X), graph)
        spec = parse_spec(self.spec)
        seed = check_seed(self.seed)
        if expected_counts is None:
            expected_counts = expected_for_model(d, policy=self.expected)
        expected_counts = check_expected(expected_counts, d.shape)

        opts = FitOptions(seed=seed, n_draws=self.n_draws, ccd=self.ccd)
        result = fit_laplace(d, expected_counts, spec, graph, self.prior, opts)
        self.result_: FitResult = result
        self.graph_ = graph
        self.expected_counts_ = expected_counts
        self.waic_ = result.waic
        self.converged_ = result.converged
        if self.mcmc_check:
            self.mcmc_result_ = fit_mcmc(
                d, expected_counts, spec, graph, self.prior,
                iterations=self.mcmc_iterations, seed=seed + 1,
                opts=McmcOptions())
        return self

    def _check_fitted(self):
        if not hasattr(self, "result_"):
            raise NotFittedError("call fit before using this estimator")

    def predict(self, X=None) -> np.ndarray:
        """Fitted relative risks exp(eta) on the training lattice, (S, T, K).

        ``X`` is accepted for interface compatibility and must be None or
        the training dataset; the model predicts its own lattice.
        """
        self._check_fitted()
        r = self.result_
        spec = r.spec
        state = LatentState(
            intercept=r.intercept.mean,
            spatial=r.latent_mean.get("spatial"),
            time=r.latent_mean.get("time"),
            age=r.latent_mean.get("age"),
            space_time=r.latent_mean.get("space_time"),
            space_age=r.latent_mean.get("space_age"),
            time_age=r.latent_mean.get("time_age"),
        )
        S, T, K = (len(r.area_ids), len(r.period_labels), len(r.age_labels))
        return np.exp(predictor_array(spec, state, S, T, K))

    def predict_counts(self, X=None) -> np.ndarray:
        """Fitted mean counts E * exp(eta) on the training lattice."""
        self._check_fitted()
        return self.expected_counts_ * self.predict(X)

    def score(self, X=None, y=None) -> float:
        """Negative information criterion (higher is better)."""
        self._check_fitted()
        return -self.waic_
