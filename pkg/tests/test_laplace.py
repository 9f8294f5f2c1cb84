import numpy as np
import pytest

from stacar.adjacency import lattice_graph, parse_adjacency
from stacar.data import Dataset
from stacar.errors import InputError
from stacar.laplace import (FitOptions, export_effects, fit_laplace,
                            fit_result_json_dict, write_effect_tables,
                            write_fit_json)
from stacar.model import Hyperparameters
from stacar.modelspec import parse_spec
from stacar.simulate import simulate_dataset

SPEC_MAIN = parse_spec("delta=rw1;gamma=iid;z1=-;z2=-;z3=-")


def _null_dataset(seed=0, mean=20.0):
    g = lattice_graph(3, 3)
    rng = np.random.default_rng(seed)
    obs = rng.poisson(mean, size=(9, 3, 2))
    d = Dataset(area_ids=g.area_ids,
                period_labels=tuple(f"p{j}" for j in range(3)),
                age_labels=("k0", "k1"),
                observed=obs, population=np.full((9, 3, 2), 1000.0))
    return g, d, np.full((9, 3, 2), mean)


class TestFitLaplace:
    def test_flat_data_centers_intercept(self):
        # counts drawn around O = E everywhere: the overall level is 1,
        # so the intercept posterior should cover zero
        g, d, expected = _null_dataset(seed=3)
        fit = fit_laplace(d, expected, SPEC_MAIN, g, "pc", FitOptions(seed=0))
        assert fit.converged
        assert abs(fit.intercept.mean) < 2.0 * fit.intercept.sd + 0.02

    def test_constraints_satisfied_by_draws(self):
        g, d, expected = _null_dataset(seed=4)
        fit = fit_laplace(d, expected, SPEC_MAIN, g, "pc", FitOptions(seed=1))
        assert fit.diagnostics["constraint_residual"] < 1e-6

    def test_latent_recovery_on_strong_signal(self):
        g = lattice_graph(4, 4)
        hyper = Hyperparameters(tau_spatial=1.0, lambda_spatial=0.4,
                                tau_time=4.0, tau_age=4.0)
        d, truth = simulate_dataset(g, T=4, K=3, spec=SPEC_MAIN, hyper=hyper,
                                    alpha=-0.3, population=5000.0,
                                    reference_rates=0.02, seed=9)
        fit = fit_laplace(d, truth.expected, SPEC_MAIN, g, "pc", FitOptions(seed=2))
        assert fit.converged
        assert abs(fit.intercept.mean - truth.alpha) < 4.0 * fit.intercept.sd
        corr = np.corrcoef(fit.latent_mean["spatial"], truth.state.spatial)[0, 1]
        assert corr > 0.9

    def test_deterministic_given_seed(self):
        g, d, expected = _null_dataset(seed=5)
        a = fit_laplace(d, expected, SPEC_MAIN, g, "pc", FitOptions(seed=7))
        b = fit_laplace(d, expected, SPEC_MAIN, g, "pc", FitOptions(seed=7))
        assert fit_result_json_dict(a) == fit_result_json_dict(b)
        np.testing.assert_array_equal(a.latent_mean["spatial"],
                                      b.latent_mean["spatial"])

    def test_waic_identity(self):
        g, d, expected = _null_dataset(seed=6)
        fit = fit_laplace(d, expected, SPEC_MAIN, g, "pc", FitOptions(seed=3))
        assert fit.waic == pytest.approx(-2.0 * (fit.lppd - fit.p_eff), rel=1e-14)

    def test_prior_families_agree_on_informative_data(self):
        g = lattice_graph(3, 3)
        hyper = Hyperparameters(tau_spatial=2.0, lambda_spatial=0.5, tau_time=4.0)
        spec = parse_spec("delta=rw1;gamma=-;z1=-;z2=-;z3=-")
        d, truth = simulate_dataset(g, T=4, K=2, spec=spec, hyper=hyper,
                                    alpha=-0.4, population=4000.0,
                                    reference_rates=0.02, seed=13)
        pc = fit_laplace(d, truth.expected, spec, g, "pc", FitOptions(seed=4))
        ni = fit_laplace(d, truth.expected, spec, g, "noninformative",
                         FitOptions(seed=4))
        assert abs(pc.intercept.mean - ni.intercept.mean) < pc.intercept.sd

    def test_mismatched_areas_rejected(self):
        g, d, expected = _null_dataset()
        g2 = parse_adjacency("x: y\ny: x")
        with pytest.raises(InputError):
            fit_laplace(d, expected, SPEC_MAIN, g2, "pc", FitOptions())

    def test_ccd_mixture_runs(self):
        g, d, expected = _null_dataset(seed=8)
        fit = fit_laplace(d, expected, SPEC_MAIN, g, "pc",
                          FitOptions(seed=5, ccd=True, n_draws=400))
        assert fit.diagnostics["mixture_points"] > 1
        assert fit.converged


class TestEffectExport:
    def _fit(self):
        g, d, expected = _null_dataset(seed=10)
        spec = parse_spec("delta=rw1;gamma=iid;z1=II;z2=-;z3=-")
        return fit_laplace(d, expected, spec, g, "pc", FitOptions(seed=6))

    def test_zero_effects_export_as_one(self):
        fit = self._fit()
        tables = export_effects(fit)
        # null data: every exponentiated effect is close to one
        for rows in tables.values():
            for row in rows:
                assert row["effect"] == pytest.approx(1.0, abs=0.35)

    def test_exact_exponentiation(self):
        fit = self._fit()
        tables = export_effects(fit)
        np.testing.assert_allclose(
            [row["effect"] for row in tables["spatial"]],
            np.exp(fit.latent_mean["spatial"]), rtol=1e-12)

    def test_interaction_table_covers_lattice(self):
        fit = self._fit()
        tables = export_effects(fit)
        assert len(tables["space_time"]) == 9 * 3
        first = tables["space_time"][0]
        assert set(first) == {"area_id", "period", "effect", "sd"}

    def test_written_files(self, tmp_path):
        fit = self._fit()
        write_fit_json(fit, tmp_path / "fit.json")
        files = write_effect_tables(fit, str(tmp_path / "fit"))
        assert len(files) == 4  # spatial, time, age, space_time
        body = (tmp_path / "fit_spatial.csv").read_text().splitlines()
        assert body[0] == "area_id,effect,sd"
        assert len(body) == 10

    def test_json_excludes_timings(self, tmp_path):
        fit = self._fit()
        doc = fit_result_json_dict(fit)
        assert "seconds" not in str(doc)
