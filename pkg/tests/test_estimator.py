import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from stacar.adjacency import lattice_graph
from stacar.errors import InputError
from stacar.estimator import SpaceTimeAgeRiskModel
from stacar.model import Hyperparameters
from stacar.modelspec import parse_spec
from stacar.simulate import simulate_dataset


def _data():
    g = lattice_graph(3, 3)
    spec = parse_spec("delta=rw1;gamma=iid;z1=-;z2=-;z3=-")
    hyper = Hyperparameters(tau_spatial=4.0, lambda_spatial=0.5,
                            tau_time=8.0, tau_age=8.0)
    d, truth = simulate_dataset(g, T=3, K=3, spec=spec, hyper=hyper,
                                alpha=-0.2, population=3000.0,
                                reference_rates=0.02, seed=8)
    return g, d, truth


class TestEstimatorApi:
    def test_get_set_params_and_clone(self):
        est = SpaceTimeAgeRiskModel(spec="delta=rw1;gamma=-;z1=-;z2=-;z3=-",
                                    prior="noninformative", seed=3)
        params = est.get_params()
        assert params["prior"] == "noninformative"
        fresh = clone(est)
        assert fresh.get_params() == params
        est.set_params(seed=9)
        assert est.seed == 9

    def test_unfitted_predict_raises(self):
        with pytest.raises(NotFittedError):
            SpaceTimeAgeRiskModel().predict()

    def test_fit_requires_graph(self):
        _, d, _ = _data()
        with pytest.raises(ValueError, match="graph"):
            SpaceTimeAgeRiskModel().fit(d)

    def test_fit_predict_shapes(self):
        g, d, truth = _data()
        est = SpaceTimeAgeRiskModel(spec="delta=rw1;gamma=iid;z1=-;z2=-;z3=-",
                                    seed=1).fit(d, graph=g)
        risks = est.predict()
        assert risks.shape == d.shape
        assert np.all(risks > 0)
        counts = est.predict_counts()
        assert counts.shape == d.shape
        # fitted mean counts should track the data total reasonably well
        assert 0.8 < counts.sum() / d.observed.sum() < 1.2

    def test_score_is_negative_waic(self):
        g, d, truth = _data()
        est = SpaceTimeAgeRiskModel(seed=2).fit(
            d, graph=g, expected_counts=truth.expected)
        assert est.score() == -est.waic_

    def test_external_expected_counts(self):
        g, d, truth = _data()
        est = SpaceTimeAgeRiskModel(spec="delta=rw1;gamma=iid;z1=-;z2=-;z3=-",
                                    seed=4)
        est.fit(d, graph=g, expected_counts=truth.expected)
        # truth-based expected counts keep the intercept near its true value
        assert abs(est.result_.intercept.mean - truth.alpha) < 0.1

    def test_invalid_seed_rejected(self):
        g, d, _ = _data()
        with pytest.raises(InputError):
            SpaceTimeAgeRiskModel(seed=1.5).fit(d, graph=g)

    def test_area_reordering_applied(self):
        from stacar.data import reorder_areas
        g, d, _ = _data()
        shuffled = reorder_areas(d, tuple(reversed(d.area_ids)))
        est = SpaceTimeAgeRiskModel(spec="delta=rw1;gamma=iid;z1=-;z2=-;z3=-",
                                    seed=5).fit(shuffled, graph=g)
        assert est.result_.area_ids == g.area_ids

    def test_mcmc_check_attached(self):
        g, d, truth = _data()
        est = SpaceTimeAgeRiskModel(spec="delta=rw1;gamma=iid;z1=-;z2=-;z3=-",
                                    seed=6, mcmc_check=True, mcmc_iterations=300)
        est.fit(d, graph=g, expected_counts=truth.expected)
        assert hasattr(est, "mcmc_result_")
        gap = abs(est.mcmc_result_.intercept.mean - est.result_.intercept.mean)
        assert gap < 0.2
