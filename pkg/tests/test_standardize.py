import numpy as np
import pytest

from stacar.data import Dataset
from stacar.errors import EmptyStratumError, InputError
from stacar.standardize import (expected_counts, expected_for_model,
                                proportionality_check, stratum_rates,
                                write_points_csv, write_report_csv)


def _dataset(observed, population, ages=None):
    observed = np.asarray(observed)
    population = np.asarray(population, dtype=float)
    S, T, K = observed.shape
    return Dataset(
        area_ids=tuple(f"a{i}" for i in range(S)),
        period_labels=tuple(f"p{j}" for j in range(T)),
        age_labels=ages or tuple(f"k{k}" for k in range(K)),
        observed=observed,
        population=population,
    )


class TestStratumRates:
    def test_single_stratum_ratio(self):
        d = _dataset([[[2]]], [[[100]]])
        np.testing.assert_allclose(stratum_rates(d), [0.02])

    def test_zero_counts_give_zero_rates(self):
        d = _dataset(np.zeros((2, 2, 3), dtype=int), np.full((2, 2, 3), 10.0))
        np.testing.assert_array_equal(stratum_rates(d), np.zeros(3))

    def test_two_strata_hand_summed(self):
        observed = np.zeros((2, 1, 2), dtype=int)
        population = np.zeros((2, 1, 2))
        observed[:, 0, 0] = [1, 2]      # stratum totals 3 / 300
        population[:, 0, 0] = [100, 200]
        observed[:, 0, 1] = [3, 4]      # stratum totals 7 / 350
        population[:, 0, 1] = [150, 200]
        np.testing.assert_allclose(stratum_rates(_dataset(observed, population)),
                                   [0.01, 0.02])

    def test_empty_stratum_named(self):
        observed = np.zeros((1, 1, 2), dtype=int)
        population = np.ones((1, 1, 2))
        population[..., 1] = 0.0
        with pytest.raises(EmptyStratumError, match="k1"):
            stratum_rates(_dataset(observed, population))


class TestExpectedCounts:
    def test_zero_rates(self):
        d = _dataset([[[1, 0]]], [[[10, 10]]])
        res = expected_counts(d, np.zeros(2))
        assert np.all(res.expected == 0)
        assert np.all(np.isnan(res.sir))

    def test_hand_computed_cell(self):
        d = _dataset([[[0, 0]]], [[[100, 100]]])
        res = expected_counts(d, np.array([0.01, 0.02]))
        np.testing.assert_allclose(res.expected_collapsed, [[3.0]])

    def test_internal_balance(self):
        rng = np.random.default_rng(0)
        observed = rng.poisson(5.0, size=(3, 2, 4))
        population = rng.uniform(50, 150, size=(3, 2, 4))
        d = _dataset(observed, population)
        res = expected_counts(d, stratum_rates(d))
        total_o, total_e = d.observed.sum(), res.expected.sum()
        assert abs(total_e - total_o) <= 1e-9 * total_o

    def test_scale_equivariance(self):
        # doubling populations halves rates and leaves expected counts fixed
        rng = np.random.default_rng(1)
        observed = rng.poisson(3.0, size=(2, 2, 3))
        population = rng.uniform(40, 60, size=(2, 2, 3))
        d1 = _dataset(observed, population)
        d2 = _dataset(observed, 2.0 * population)
        q1, q2 = stratum_rates(d1), stratum_rates(d2)
        np.testing.assert_allclose(q2, q1 / 2.0)
        np.testing.assert_allclose(expected_counts(d2, q2).expected,
                                   expected_counts(d1, q1).expected)

    def test_length_mismatch_rejected(self):
        d = _dataset([[[1, 1]]], [[[10, 10]]])
        with pytest.raises(InputError):
            expected_counts(d, np.array([0.1]))


class TestExpectedForModel:
    def test_global_policy_single_rate(self):
        d = _dataset([[[2, 2]]], [[[100, 100]]])
        expected = expected_for_model(d, policy="global")
        np.testing.assert_allclose(expected, d.population * 0.02)

    def test_external_rates_override(self):
        d = _dataset([[[2, 2]]], [[[100, 100]]])
        expected = expected_for_model(d, rates=np.array([0.5, 0.25]))
        np.testing.assert_allclose(expected, [[[50.0, 25.0]]])


class TestProportionalityCheck:
    def _proportional_cell(self, theta, q, n=10000):
        # observed rates exactly theta * q
        observed = np.round(theta * q * n).astype(int)[None, None, :]
        population = np.full((1, 1, len(q)), float(n))
        return _dataset(observed, population)

    def test_exact_proportionality_not_flagged(self):
        q = np.array([0.01, 0.02, 0.03, 0.04])
        d = self._proportional_cell(2.0, q, n=100000)
        report = proportionality_check(d, q)
        cell = report.cells[0]
        assert cell.assessed and not cell.flagged
        assert cell.slope == pytest.approx(2.0, rel=1e-3)
        assert cell.r_squared == pytest.approx(1.0, abs=2e-3)

    def test_constant_rates_flagged(self):
        # four points with constant observed rate against varying q: the fit
        # explains none of the rates' variance about their mean, so the
        # coefficient of determination collapses (-inf for exactly constant)
        q = np.array([0.01, 0.02, 0.03, 0.04])
        rate = 0.02
        slope_oracle = float(q @ (rate * np.ones(4))) / float(q @ q)
        observed = np.full((1, 1, 4), int(rate * 100000))
        population = np.full((1, 1, 4), 100000.0)
        report = proportionality_check(_dataset(observed, population), q)
        cell = report.cells[0]
        assert cell.flagged
        assert cell.slope == pytest.approx(slope_oracle, rel=1e-12)
        assert cell.r_squared == float("-inf")

    def test_noisy_nonproportional_r2_oracle(self):
        # closed-form centered R-squared on a 4-point configuration
        q = np.array([0.01, 0.02, 0.03, 0.04])
        rates = np.array([0.03, 0.021, 0.028, 0.035])
        slope = float(q @ rates) / float(q @ q)
        ss_res = float(np.sum((rates - slope * q) ** 2))
        ss_tot = float(np.sum((rates - rates.mean()) ** 2))
        oracle = 1.0 - ss_res / ss_tot
        n = 1000000
        observed = np.round(rates * n).astype(int)[None, None, :]
        population = np.full((1, 1, 4), float(n))
        report = proportionality_check(_dataset(observed, population), q)
        assert report.cells[0].r_squared == pytest.approx(oracle, rel=1e-9)

    def test_too_few_points_not_assessed(self):
        q = np.array([0.01, 0.02, 0.03])
        observed = np.array([[[1, 1, 0]]])
        population = np.array([[[100.0, 100.0, 0.0]]])
        report = proportionality_check(_dataset(observed, population), q, min_points=3)
        assert not report.cells[0].assessed
        assert len(report.cells[0].points) == 2

    def test_min_points_floor(self):
        d = self._proportional_cell(1.0, np.array([0.01, 0.02, 0.03]))
        with pytest.raises(InputError):
            proportionality_check(d, np.array([0.01, 0.02, 0.03]), min_points=2)

    def test_report_files(self, tmp_path):
        q = np.array([0.01, 0.02, 0.03, 0.04])
        d = self._proportional_cell(1.5, q)
        report = proportionality_check(d, q)
        report_path = tmp_path / "report.csv"
        points_path = tmp_path / "points.csv"
        write_report_csv(report, report_path)
        write_points_csv(report, points_path)
        lines = report_path.read_text().strip().splitlines()
        assert lines[0] == "area_id,period,slope,r2,flag,assessed"
        assert len(lines) == 2
        point_lines = points_path.read_text().strip().splitlines()
        assert point_lines[0] == "area_id,period,age_group,q,rate"
        assert len(point_lines) == 5
