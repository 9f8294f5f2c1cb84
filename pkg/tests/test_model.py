import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import poisson

from stacar.adjacency import lattice_graph, parse_adjacency
from stacar.data import Dataset
from stacar.errors import ImpossibleCellError, SpecificationError
from stacar.model import (Hyperparameters, LatentState, ModelStructure,
                          linear_predictor, log_hyperprior, pc_rate,
                          pc_sigma_logpdf, poisson_loglik, predictor_array)
from stacar.modelspec import parse_spec


def _dataset(S=2, T=3, K=2, seed=0, pop=100.0):
    rng = np.random.default_rng(seed)
    return Dataset(
        area_ids=tuple(f"a{i}" for i in range(S)),
        period_labels=tuple(f"p{j}" for j in range(T)),
        age_labels=tuple(f"k{k}" for k in range(K)),
        observed=rng.poisson(3.0, size=(S, T, K)),
        population=np.full((S, T, K), pop),
    )


FULL_SPEC = parse_spec("delta=rw1;gamma=iid;z1=II;z2=I;z3=IV")


class TestLinearPredictor:
    def test_all_zero_blocks_give_intercept(self):
        spec = parse_spec("delta=iid;gamma=-;z1=-;z2=-;z3=-")
        x = LatentState(intercept=1.25, spatial=np.zeros(3), time=np.zeros(4))
        assert linear_predictor(spec, x, 2, 3, 0) == 1.25

    def test_simple_sum(self):
        spec = parse_spec("delta=iid;gamma=-;z1=-;z2=-;z3=-")
        spatial = np.zeros(4)
        spatial[2] = -0.2
        time = np.zeros(3)
        time[1] = 0.1
        x = LatentState(intercept=0.5, spatial=spatial, time=time)
        assert linear_predictor(spec, x, 2, 1, 0) == pytest.approx(0.4)

    def test_matches_brute_force_reindexing(self):
        # independent oracle: rebuild the predictor from raw block arrays
        g = lattice_graph(2, 2)
        ms = ModelStructure(FULL_SPEC, g, T=3, K=2)
        rng = np.random.default_rng(42)
        vec = rng.standard_normal(ms.n_latent)
        x = ms.unpack(vec)
        S, T, K = 4, 3, 2
        z1 = np.asarray(x.space_time).reshape(S, T)
        z2 = np.asarray(x.space_age).reshape(S, K)
        z3 = np.asarray(x.time_age).reshape(K, T)
        for i in range(S):
            for j in range(T):
                for k in range(K):
                    oracle = (x.intercept + x.spatial[i] + x.time[j] + x.age[k]
                              + z1[i, j] + z2[i, k] + z3[k, j])
                    assert linear_predictor(FULL_SPEC, x, i, j, k) == pytest.approx(oracle)
        eta = predictor_array(FULL_SPEC, x, S, T, K)
        design_eta = (ms.design @ vec).reshape(S, T, K)
        np.testing.assert_allclose(eta, design_eta, atol=1e-12)

    def test_missing_block_rejected(self):
        spec = parse_spec("delta=iid;gamma=-;z1=-;z2=-;z3=-")
        x = LatentState(intercept=0.0, spatial=np.zeros(2))
        with pytest.raises(SpecificationError, match="time"):
            linear_predictor(spec, x, 0, 0, 0)


class TestPoissonLoglik:
    def test_zero_counts(self):
        d = _dataset()
        d = Dataset(area_ids=d.area_ids, period_labels=d.period_labels,
                    age_labels=d.age_labels, observed=np.zeros_like(d.observed),
                    population=d.population)
        spec = parse_spec("delta=iid;gamma=-;z1=-;z2=-;z3=-")
        x = LatentState(intercept=0.0, spatial=np.zeros(2), time=np.zeros(3))
        expected = np.full(d.shape, 1.5)
        total, pointwise = poisson_loglik(d, expected, spec, x)
        assert total == pytest.approx(-expected.sum())

    def test_single_cell_matches_scipy(self):
        d = Dataset(area_ids=("a",), period_labels=("p", "q"), age_labels=("k",),
                    observed=np.array([[[2], [0]]]),
                    population=np.array([[[10.0], [10.0]]]))
        spec = parse_spec("delta=iid;gamma=-;z1=-;z2=-;z3=-")
        x = LatentState(intercept=0.0, spatial=np.zeros(1), time=np.zeros(2))
        expected = np.array([[[1.0], [1.0]]])
        total, pointwise = poisson_loglik(d, expected, spec, x)
        assert pointwise[0, 0, 0] == pytest.approx(poisson.logpmf(2, 1.0))
        assert pointwise[0, 0, 0] == pytest.approx(-1.0 - np.log(2.0))

    def test_total_equals_pointwise_sum(self):
        d = _dataset(seed=5)
        spec = parse_spec("delta=iid;gamma=iid;z1=-;z2=-;z3=-")
        rng = np.random.default_rng(6)
        x = LatentState(intercept=0.1, spatial=rng.standard_normal(2),
                        time=rng.standard_normal(3), age=rng.standard_normal(2))
        expected = np.full(d.shape, 2.0)
        total, pointwise = poisson_loglik(d, expected, spec, x)
        assert abs(total - pointwise.sum()) <= 1e-10 * max(abs(total), 1.0)

    def test_intercept_shift_matches_theta_scaling(self):
        # adding c to the intercept shifts every predictor by c
        d = _dataset(seed=7)
        spec = parse_spec("delta=iid;gamma=-;z1=-;z2=-;z3=-")
        rng = np.random.default_rng(8)
        state = LatentState(intercept=0.3, spatial=rng.standard_normal(2),
                            time=rng.standard_normal(3))
        shifted = LatentState(intercept=0.3 + 0.7, spatial=state.spatial,
                              time=state.time)
        eta0 = predictor_array(spec, state, 2, 3, 2)
        eta1 = predictor_array(spec, shifted, 2, 3, 2)
        np.testing.assert_allclose(eta1 - eta0, 0.7, atol=1e-14)

    def test_likelihood_invariant_under_confounded_shift(self):
        # moving mass between the intercept and a constant spatial offset
        # leaves every predictor unchanged: the reason constraints exist
        d = _dataset(seed=9)
        spec = parse_spec("delta=iid;gamma=-;z1=-;z2=-;z3=-")
        rng = np.random.default_rng(10)
        # dyadic values keep the shifted sums bit-exact
        spatial = rng.integers(-8, 8, size=2) / 8.0
        time = rng.integers(-8, 8, size=3) / 8.0
        a = LatentState(intercept=0.25, spatial=spatial, time=time)
        b = LatentState(intercept=0.25 + 0.5, spatial=spatial - 0.5, time=time)
        ea = predictor_array(spec, a, 2, 3, 2)
        eb = predictor_array(spec, b, 2, 3, 2)
        np.testing.assert_array_equal(ea, eb)
        expected = np.full(d.shape, 2.0)
        assert poisson_loglik(d, expected, spec, a)[0] == \
            poisson_loglik(d, expected, spec, b)[0]

    def test_impossible_cell_named(self):
        d = _dataset()
        spec = parse_spec("delta=iid;gamma=-;z1=-;z2=-;z3=-")
        x = LatentState(intercept=0.0, spatial=np.zeros(2), time=np.zeros(3))
        expected = np.full(d.shape, 1.0)
        expected[1, 2, 0] = 0.0
        d.observed[1, 2, 0] = 3
        with pytest.raises(ImpossibleCellError, match=r"a1.*p2.*k0"):
            poisson_loglik(d, expected, spec, x)


class TestHyperpriors:
    def test_pc_rate_from_tail_condition(self):
        assert pc_rate(1.0, 0.01) == pytest.approx(4.605170185988091, abs=1e-12)

    def test_doubling_sigma_drops_logpdf_by_rate_times_sigma(self):
        rate = pc_rate()
        for sigma in (0.2, 0.7, 1.9):
            drop = pc_sigma_logpdf(2 * sigma, rate) - pc_sigma_logpdf(sigma, rate)
            assert drop == pytest.approx(-rate * sigma, rel=1e-12)

    def test_lambda_prior_symmetric(self):
        h3 = Hyperparameters(tau_spatial=1.0, lambda_spatial=0.3)
        h7 = Hyperparameters(tau_spatial=1.0, lambda_spatial=0.7)
        for family in ("pc", "noninformative"):
            a = log_hyperprior(h3, family)
            b = log_hyperprior(h7, family)
            assert a == pytest.approx(b, rel=1e-12)

    def test_pc_prior_normalizes_on_internal_scale(self):
        # integrate the log-tau density over the real line
        rate = pc_rate()

        def density(log_tau):
            sigma = np.exp(-log_tau / 2.0)
            return np.exp(pc_sigma_logpdf(sigma, rate)) * sigma / 2.0

        total, _ = quad(density, -40, 40, limit=200)
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_bad_hyperparameters_rejected(self):
        with pytest.raises(SpecificationError):
            Hyperparameters(tau_spatial=-1.0)
        with pytest.raises(SpecificationError):
            Hyperparameters(tau_spatial=1.0, lambda_spatial=1.5)


class TestModelStructure:
    def test_prior_precision_blocks(self):
        g = parse_adjacency("a: b\nb: a c\nc: b")
        spec = parse_spec("delta=rw1;gamma=-;z1=-;z2=-;z3=-")
        ms = ModelStructure(spec, g, T=4, K=2)
        h = Hyperparameters(tau_spatial=2.0, lambda_spatial=0.5, tau_time=3.0)
        Q = ms.prior_precision(h).toarray()
        assert Q[0, 0] == 0.0  # flat intercept
        np.testing.assert_allclose(Q[1:4, 1:4], [[2, -1, 0], [-1, 3, -1], [0, -1, 2]])
        np.testing.assert_allclose(Q[4:, 4:], 3.0 * ms.structures["time"].as_dense())

    def test_prior_logdet_matches_dense_constrained_computation(self):
        # oracle: log det Q + log det(A Q^{-1} A') over each block, using a
        # tiny jitter for the singular random-walk block
        g = parse_adjacency("a: b\nb: a c\nc: b")
        spec = parse_spec("delta=rw1;gamma=-;z1=-;z2=-;z3=-")
        ms = ModelStructure(spec, g, T=4, K=2)

        def oracle(h):
            total = 0.0
            for name in ("spatial", "time"):
                Q = ms.block_precision(name, h).toarray()
                A = ms.constraints[name].rows
                Qj = Q + 1e-10 * np.eye(Q.shape[0])
                sign, ld = np.linalg.slogdet(Qj)
                gram = A @ np.linalg.solve(Qj, A.T)
                sign2, ld2 = np.linalg.slogdet(gram)
                total += ld + ld2
            return total

        h1 = Hyperparameters(tau_spatial=2.0, lambda_spatial=0.3, tau_time=3.0)
        h2 = Hyperparameters(tau_spatial=0.7, lambda_spatial=0.8, tau_time=0.5)
        got = ms.prior_logdet(h1) - ms.prior_logdet(h2)
        want = oracle(h1) - oracle(h2)
        assert got == pytest.approx(want, abs=1e-5)

    def test_internal_round_trip(self):
        g = lattice_graph(2, 2)
        ms = ModelStructure(FULL_SPEC, g, T=3, K=2)
        h = Hyperparameters(tau_spatial=2.0, lambda_spatial=0.25, tau_time=1.5,
                            tau_age=0.5, tau_space_time=4.0, tau_space_age=3.0,
                            tau_time_age=2.5)
        theta = ms.hyper_to_internal(h)
        back = ms.hyper_from_internal(theta)
        assert back.tau_spatial == pytest.approx(2.0)
        assert back.lambda_spatial == pytest.approx(0.25)
        assert back.tau_time_age == pytest.approx(2.5)
