import numpy as np
import pytest
import scipy.sparse as sp

from stacar.adjacency import icar_structure, parse_adjacency
from stacar.errors import NotPositiveDefiniteError
from stacar.sampling import PrecisionFactor, sample_gmrf
from stacar.structures import leroux_precision, rw1_structure


def _spd(rng, n):
    M = rng.standard_normal((n, n))
    return M @ M.T + n * np.eye(n)


class TestPrecisionFactor:
    def test_solve_and_logdet_dense_path(self):
        rng = np.random.default_rng(0)
        Q = _spd(rng, 20)
        f = PrecisionFactor(Q)
        b = rng.standard_normal(20)
        np.testing.assert_allclose(f.solve(b), np.linalg.solve(Q, b), atol=1e-9)
        np.testing.assert_allclose(f.logdet(), np.linalg.slogdet(Q)[1], atol=1e-9)

    def test_sparse_path_matches_dense(self):
        rng = np.random.default_rng(1)
        n = 60
        Q = sp.diags([np.full(n - 1, -1.0), np.full(n, 4.0), np.full(n - 1, -1.0)],
                     [-1, 0, 1]).tocsc()
        dense = PrecisionFactor(Q.toarray())
        sparse = PrecisionFactor(Q, dense_cutoff=10)
        b = rng.standard_normal(n)
        np.testing.assert_allclose(sparse.solve(b), dense.solve(b), atol=1e-9)
        np.testing.assert_allclose(sparse.logdet(), dense.logdet(), atol=1e-8)
        B = rng.standard_normal((n, 3))
        np.testing.assert_allclose(sparse.solve(B), dense.solve(B), atol=1e-9)

    def test_sqrt_solve_covariance_sparse_path(self):
        # empirical covariance of sqrt-solved draws matches the dense inverse
        n = 40
        Q = sp.diags([np.full(n - 1, -1.0), np.full(n, 3.0), np.full(n - 1, -1.0)],
                     [-1, 0, 1]).tocsc()
        f = PrecisionFactor(Q, dense_cutoff=10)
        rng = np.random.default_rng(5)
        draws = f.sample(rng, 60000)
        emp = np.cov(draws.T)
        np.testing.assert_allclose(emp, np.linalg.inv(Q.toarray()), atol=3e-2)

    def test_not_positive_definite_raises(self):
        with pytest.raises(NotPositiveDefiniteError):
            PrecisionFactor(np.array([[1.0, 2.0], [2.0, 1.0]]))
        R = rw1_structure(30).matrix.tocsc()  # singular
        with pytest.raises(NotPositiveDefiniteError):
            PrecisionFactor(R, dense_cutoff=5)


class TestSampleGmrf:
    def test_standard_normal_coordinate_variance(self):
        draws = sample_gmrf(sp.identity(1000, format="csc"), rng_seed=0, n_draws=10000)
        var = draws.var(axis=0)
        assert var.min() > 0.94 and var.max() < 1.06

    def test_diagonal_precision_scales_sd(self):
        draws = sample_gmrf(4.0 * sp.identity(6, format="csc"), rng_seed=1, n_draws=10000)
        sd = draws.std(axis=0)
        se = 0.5 / np.sqrt(2 * (10000 - 1))
        assert np.all(np.abs(sd - 0.5) < 3 * se * np.sqrt(2) + 0.01)

    def test_leroux_path3_covariance_matches_dense_inverse(self):
        g = parse_adjacency("a: b\nb: a c\nc: b")
        Q = leroux_precision(icar_structure(g), 0.5, 2.0)
        draws = sample_gmrf(Q, rng_seed=7, n_draws=100000)
        emp = np.cov(draws.T)
        np.testing.assert_allclose(emp, np.linalg.inv(Q.toarray()), atol=2e-2)

    def test_deterministic_for_fixed_seed(self):
        Q = 2.0 * sp.identity(5, format="csc")
        a = sample_gmrf(Q, rng_seed=42, n_draws=3)
        b = sample_gmrf(Q, rng_seed=42, n_draws=3)
        np.testing.assert_array_equal(a, b)

    def test_single_draw_returns_vector(self):
        Q = sp.identity(4, format="csc")
        assert sample_gmrf(Q, rng_seed=0).shape == (4,)
