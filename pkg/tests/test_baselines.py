"""Unit tests for the comparison estimators and the flop accountant."""
import numpy as np
import pytest

from dualpf import baselines
from dualpf.baselines import (
    BayesianKSConfig,
    EFCostModel,
    RMLConfig,
    complexity_report,
    ef_complexity,
    init_bayesian_ks,
    init_rml,
    match_particle_budget,
    rml_spsa_step,
    spsa_gradient,
)
from dualpf.errors import ConfigError, GradientUndefinedError
from dualpf.model import ModelSpec, ParamDomain, simulate
from dualpf.smc import as_rng


def _output_scaling_model(sigma_w=0.3, sigma_v=0.2, lower=0.5, upper=1.2):
    """Stable AR(1) state observed through y = theta * x."""

    def transition(x, eff, w, u=None):
        return 0.9 * np.asarray(x, dtype=float) + 1.0 + w

    def output(x, eff, u=None):
        return np.asarray(eff, dtype=float) * np.asarray(x, dtype=float)

    return ModelSpec(n_x=1, n_theta=1, n_y=1,
                     transition=transition, output=output,
                     process_noise_cov=[[sigma_w ** 2]],
                     measurement_noise_cov=[[sigma_v ** 2]],
                     param_domain=ParamDomain([lower], [upper]))


def _direct_observation_model(sigma_v=0.5):
    """y = theta with a frozen dummy state (quadratic log-likelihood)."""

    def transition(x, eff, w, u=None):
        return np.asarray(x, dtype=float) + w

    def output(x, eff, u=None):
        x = np.asarray(x, dtype=float)
        return np.asarray(eff, dtype=float) + 0.0 * x

    return ModelSpec(n_x=1, n_theta=1, n_y=1,
                     transition=transition, output=output,
                     process_noise_cov=[[0.0]],
                     measurement_noise_cov=[[sigma_v ** 2]],
                     param_domain=ParamDomain([-10.0], [10.0]))


class TestBayesianKS:
    def test_determinism(self):
        m = _output_scaling_model()
        runs = []
        for _ in range(2):
            rng = as_rng(5)
            st = init_bayesian_ks(m, np.array([10.0]), np.eye(1),
                                  np.array([0.8]), 0.01 * np.eye(1),
                                  BayesianKSConfig(n_particles=40), rng)
            for _ in range(10):
                st = baselines.bayesian_ks_step(st, np.array([8.0]), m,
                                                BayesianKSConfig(40), rng)
            runs.append(st.particles)
        assert np.array_equal(runs[0], runs[1])

    def test_unit_shrinkage_with_collapsed_init_freezes_parameters(self):
        m = _output_scaling_model()
        cfg = BayesianKSConfig(n_particles=30, shrinkage=1.0)
        rng = as_rng(0)
        st = init_bayesian_ks(m, np.array([10.0]), np.eye(1),
                              np.array([0.8]), np.zeros((1, 1)), cfg, rng)
        for _ in range(15):
            st = baselines.bayesian_ks_step(st, np.array([8.0]), m, cfg, rng)
        assert np.all(st.particles[:, 1] == 0.8)

    def test_parameters_stay_in_domain(self):
        m = _output_scaling_model()
        cfg = BayesianKSConfig(n_particles=60)
        rng = as_rng(3)
        st = init_bayesian_ks(m, np.array([10.0]), np.eye(1),
                              np.array([1.0]), 0.05 * np.eye(1), cfg, rng)
        for _ in range(40):
            st = baselines.bayesian_ks_step(st, np.array([9.0]), m, cfg, rng)
            assert np.all(m.param_domain.contains(st.particles[:, 1:]))

    def test_constant_parameter_convergence(self):
        m = _output_scaling_model()
        theta_true = 0.8
        errs = []
        for seed in range(10):
            rng = as_rng(seed)
            T = 500
            _, ys = simulate(m, np.array([10.0]),
                             np.full((T, 1), theta_true), T, rng)
            cfg = BayesianKSConfig(n_particles=500)
            st = init_bayesian_ks(m, np.array([10.0]), np.eye(1),
                                  np.array([0.85]), 0.01 * np.eye(1),
                                  cfg, rng)
            for t in range(T):
                st = baselines.bayesian_ks_step(st, ys[t], m, cfg, rng)
            errs.append(abs(st.theta_hat[0] - theta_true))
        assert np.median(errs) < 0.05 * theta_true


class TestRmlSpsa:
    def test_gradient_matches_quadratic_closed_form(self):
        # y = theta under Gaussian noise: the incremental log-likelihood
        # is quadratic, so the two-sided difference is exact.
        sigma_v = 0.5
        m = _direct_observation_model(sigma_v)
        theta, y = np.array([1.0]), np.array([2.2])
        particles = np.full((20, 1), 0.0)
        for seed in range(5):
            grad = spsa_gradient(particles, theta, y, m,
                                 RMLConfig(perturbation=0.01), seed)
            assert grad[0] == pytest.approx((y[0] - theta[0]) / sigma_v ** 2,
                                            rel=1e-9)

    def test_gradient_vanishes_at_symmetric_point(self):
        m = _direct_observation_model()
        theta = np.array([1.5])
        grad = spsa_gradient(np.zeros((10, 1)), theta, np.array([1.5]), m,
                             RMLConfig(), 7)
        assert grad[0] == pytest.approx(0.0, abs=1e-12)

    def test_nonfinite_observation_raises(self):
        m = _direct_observation_model()
        with pytest.raises(GradientUndefinedError):
            spsa_gradient(np.zeros((10, 1)), np.array([1.0]),
                          np.array([np.inf]), m, RMLConfig(), 0)

    def test_zero_step_size_keeps_parameter_constant(self):
        m = _output_scaling_model()
        cfg = RMLConfig(n_particles=30, step_size=0.0)
        rng = as_rng(2)
        st = init_rml(m, np.array([10.0]), np.eye(1), np.array([0.8]),
                      cfg, rng)
        for _ in range(10):
            st = rml_spsa_step(st, np.array([8.0]), m, cfg, rng)
        assert st.theta_hat[0] == 0.8

    def test_undefined_gradient_freezes_and_tallies(self, monkeypatch):
        m = _output_scaling_model()
        cfg = RMLConfig(n_particles=30)
        rng = as_rng(4)
        st = init_rml(m, np.array([10.0]), np.eye(1), np.array([0.8]),
                      cfg, rng)

        def boom(*args, **kwargs):
            raise GradientUndefinedError("forced")

        monkeypatch.setattr(baselines, "spsa_gradient", boom)
        st = rml_spsa_step(st, np.array([8.0]), m, cfg, rng)
        assert st.theta_hat[0] == 0.8
        assert st.skipped_steps == 1

    def test_init_rejects_out_of_domain_parameter(self):
        m = _output_scaling_model()
        with pytest.raises(ConfigError):
            init_rml(m, np.array([10.0]), np.eye(1), np.array([5.0]),
                     RMLConfig(), 0)

    def test_tracks_parameter_on_observable_model(self):
        m = _output_scaling_model()
        theta_true = 0.8
        errs = []
        for seed in range(10):
            rng = as_rng(seed)
            T = 400
            _, ys = simulate(m, np.array([10.0]),
                             np.full((T, 1), theta_true), T, rng)
            cfg = RMLConfig(n_particles=100, step_size=2e-4)
            st = init_rml(m, np.array([10.0]), np.eye(1), np.array([1.0]),
                          cfg, rng)
            for t in range(T):
                st = rml_spsa_step(st, ys[t], m, cfg, rng)
            errs.append(abs(st.theta_hat[0] - theta_true))
        assert np.median(errs) < 0.05 * theta_true


class TestFlopAccounting:
    COST = EFCostModel(4, 4, 5, 10.0, 10.0, 10.0, N=50)

    def test_reference_dual_count(self):
        assert ef_complexity("dual", self.COST) == 21_950

    def test_zero_particles(self):
        cost = EFCostModel(4, 4, 5, 10.0, 10.0, 10.0, N=0)
        assert ef_complexity("dual", cost) == 0

    def test_linear_in_particles(self):
        double = EFCostModel(4, 4, 5, 10.0, 10.0, 10.0, N=100)
        for method in ("dual", "bayesian", "rml"):
            assert ef_complexity(method, double) == \
                2 * ef_complexity(method, self.COST)

    def test_unknown_method(self):
        with pytest.raises(ConfigError):
            ef_complexity("ekf", self.COST)

    def test_invalid_dimensions(self):
        with pytest.raises(ConfigError):
            EFCostModel(0, 4, 5, 10.0, 10.0, 10.0)
        with pytest.raises(ConfigError):
            EFCostModel(4, 4, 5, 0.0, 10.0, 10.0)


class TestBudgetMatching:
    COST = EFCostModel(2, 4, 4, 10.0, 10.0, 10.0)

    def test_reference_budgets(self):
        assert match_particle_budget("bayesian", self.COST, 45) == 41
        assert match_particle_budget("rml", self.COST, 150) == 60

    def test_unknown_reference(self):
        with pytest.raises(ConfigError):
            match_particle_budget("ukf", self.COST, 10)

    def test_regularization_cost_lowers_budget_coefficient(self):
        # The relative budget correction shrinks as the per-element
        # regularization cost grows.
        def coeff(c3):
            cost = EFCostModel(2, 4, 4, 10.0, 10.0, c3)
            n = match_particle_budget("bayesian", cost, 10_000)
            return 1.0 - n / 10_000
        cs = [coeff(c3) for c3 in (1.0, 10.0, 50.0)]
        assert cs[0] > cs[1] > cs[2]

    def test_report_structure(self):
        doc = complexity_report(self.COST, 50, 45, 150)
        assert doc["flops"]["dual"] == ef_complexity(
            "dual", EFCostModel(2, 4, 4, 10.0, 10.0, 10.0, N=50))
        assert doc["matched_dual_budget"]["bayesian"] == 41
        assert doc["matched_dual_budget"]["rml"] == 60
