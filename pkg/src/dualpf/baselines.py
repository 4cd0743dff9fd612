"""Comparison estimators and the equivalent-flop complexity accountant.

Two baselines share the model interface of the dual estimator: an
augmented-state particle filter whose parameters evolve by pure
kernel-smoothing shrinkage (no prediction-error term), and a recursive
maximum-likelihood scheme that follows a simultaneous-perturbation
estimate of the log-likelihood gradient with a plain state particle
filter underneath.  The flop accountant prices all three so particle
budgets can be matched for fair comparisons.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import state_filter
from .errors import BudgetError, ConfigError, GradientUndefinedError
from .model import ModelSpec
from .param_filter import project_step
from .smc import (
    ParticleEnsemble,
    RegularizationConfig,
    as_rng,
    cov_factor,
    gaussian_loglik,
    likelihood_weights,
    regularize,
    sample_gaussian,
)
from .state_filter import StateFilterConfig, StateFilterState, init_state_filter


# ---------------------------------------------------------------------------
# Augmented-state Bayesian kernel-smoothing filter
# ---------------------------------------------------------------------------

@dataclass
class BayesianKSConfig:
    n_particles: int = 45
    shrinkage: float = 0.93
    regularization: RegularizationConfig = field(default_factory=RegularizationConfig)
    projection_factor: float = 0.5


@dataclass
class BayesianKSState:
    particles: np.ndarray   # (N, n_x + n_theta)
    x_hat: np.ndarray
    theta_hat: np.ndarray
    ess: float = np.nan


def init_bayesian_ks(model: ModelSpec, x0_mean, x0_cov, theta0_mean,
                     theta0_cov, config: BayesianKSConfig, seed
                     ) -> BayesianKSState:
    rng = as_rng(seed)
    n = config.n_particles
    x0_mean = np.atleast_1d(np.asarray(x0_mean, dtype=float))
    theta0_mean = np.atleast_1d(np.asarray(theta0_mean, dtype=float))
    xs = x0_mean + sample_gaussian(x0_cov, n, rng)
    ths = theta0_mean + sample_gaussian(theta0_cov, n, rng)
    ths = project_step(np.broadcast_to(theta0_mean, ths.shape),
                       ths - theta0_mean, model.param_domain,
                       config.projection_factor)
    particles = np.hstack([xs, ths])
    return BayesianKSState(particles, xs.mean(axis=0), ths.mean(axis=0))


def bayesian_ks_step(state: BayesianKSState, y_t: np.ndarray,
                     model: ModelSpec, config: BayesianKSConfig, seed,
                     u=None) -> BayesianKSState:
    """Joint propagate / reweight / regularize of the augmented vector."""
    rng = as_rng(seed)
    n_x = model.n_x
    xs = state.particles[:, :n_x]
    ths = state.particles[:, n_x:]
    n = xs.shape[0]
    a = config.shrinkage

    # Parameter evolution: shrink toward the ensemble mean, inflate back.
    centered = ths - ths.mean(axis=0)
    cov = (centered.T @ centered) / max(n - 1, 1)
    cov += 1e-12 * np.eye(cov.shape[0])
    zeta = sample_gaussian((1.0 - a ** 2) * cov, n, rng)
    shrunk = a * ths + (1.0 - a) * ths.mean(axis=0)
    ths_new = project_step(shrunk, zeta, model.param_domain,
                           config.projection_factor)

    # State propagation at the evolved parameters.
    noise = sample_gaussian(model.process_noise_cov, n, rng)
    xs_new = np.atleast_2d(model.step_state(xs, ths_new, noise, u=u))

    yhat = np.atleast_2d(model.measure(xs_new, ths_new, u=u))
    weights = likelihood_weights(np.asarray(y_t, dtype=float) - yhat,
                                 model.measurement_noise_cov)
    augmented = np.hstack([xs_new, ths_new])
    ensemble = ParticleEnsemble(augmented, weights)
    centered = augmented - augmented.mean(axis=0)
    prior_cov = (centered.T @ centered) / max(n - 1, 1)
    result = regularize(ensemble, cov_factor(prior_cov),
                        config.regularization, rng)
    post = result.particles
    # Regularization jitter can push parameters past the box edge; clip.
    post[:, n_x:] = model.param_domain.clip(post[:, n_x:])
    return BayesianKSState(post, post[:, :n_x].mean(axis=0),
                           post[:, n_x:].mean(axis=0), ensemble.ess())


# ---------------------------------------------------------------------------
# RML with simultaneous-perturbation gradient estimates
# ---------------------------------------------------------------------------

@dataclass
class RMLConfig:
    n_particles: int = 150
    step_size: float = 0.05
    perturbation: float = 0.01   # SPSA scale c_t
    state_config: StateFilterConfig | None = None
    projection_factor: float = 0.5


@dataclass
class RMLState:
    filter: StateFilterState
    theta_hat: np.ndarray
    skipped_steps: int = 0


def init_rml(model: ModelSpec, x0_mean, x0_cov, theta0_mean,
             config: RMLConfig, seed) -> RMLState:
    rng = as_rng(seed)
    theta0_mean = np.atleast_1d(np.asarray(theta0_mean, dtype=float))
    if not model.param_domain.contains(theta0_mean):
        raise ConfigError("initial parameter outside the domain")
    sc = config.state_config or StateFilterConfig(n_particles=config.n_particles)
    return RMLState(init_state_filter(x0_mean, x0_cov, sc, rng), theta0_mean)


def spsa_gradient(particles: np.ndarray, theta_hat: np.ndarray,
                  y_t: np.ndarray, model: ModelSpec, config: RMLConfig,
                  seed, u=None) -> np.ndarray:
    """Two-sided SPSA estimate of the incremental log-likelihood gradient.

    Both perturbed branches reuse the same process-noise draws so the
    difference isolates the parameter perturbation.
    """
    rng = as_rng(seed)
    n_th = theta_hat.shape[0]
    delta = rng.choice([-1.0, 1.0], size=n_th)
    c_t = config.perturbation
    lo, hi = model.param_domain.lower, model.param_domain.upper
    th_plus = np.clip(theta_hat + c_t * delta, lo, hi)
    th_minus = np.clip(theta_hat - c_t * delta, lo, hi)

    n = particles.shape[0]
    noise = sample_gaussian(model.process_noise_cov, n, rng)
    y_t = np.asarray(y_t, dtype=float)
    j_branch = []
    for th in (th_plus, th_minus):
        pred = np.atleast_2d(model.step_state(particles, th, noise, u=u))
        yhat = np.atleast_2d(model.measure(pred, th, u=u))
        ll = gaussian_loglik(y_t - yhat, model.measurement_noise_cov)
        j_branch.append(logsumexp(ll) - np.log(n))
    if not all(np.isfinite(j_branch)):
        raise GradientUndefinedError("zero likelihood sum in an SPSA branch")
    span = th_plus - th_minus
    with np.errstate(divide="ignore"):
        grad = np.where(span != 0.0, (j_branch[0] - j_branch[1]) / span, 0.0)
    return grad


def rml_spsa_step(state: RMLState, y_t: np.ndarray, model: ModelSpec,
                  config: RMLConfig, seed, u=None) -> RMLState:
    """Parameter gradient step followed by one state-filter cycle.

    An undefined gradient (likelihood underflow in a branch) freezes the
    parameter for this step and is tallied in `skipped_steps`.
    """
    rng = as_rng(seed)
    try:
        grad = spsa_gradient(state.filter.particles, state.theta_hat, y_t,
                             model, config, rng, u=u)
        theta_new = project_step(state.theta_hat, config.step_size * grad,
                                 model.param_domain, config.projection_factor)
        skipped = state.skipped_steps
    except GradientUndefinedError:
        theta_new = state.theta_hat
        skipped = state.skipped_steps + 1
    sf = state_filter.step(state.filter, theta_new, y_t, model, rng, u=u)
    return RMLState(sf, np.atleast_1d(theta_new), skipped)


# ---------------------------------------------------------------------------
# Equivalent-flop complexity accounting
# ---------------------------------------------------------------------------

@dataclass
class EFCostModel:
    n_x: int
    n_theta: int
    n_y: int
    c1: float   # random-number-generation unit cost
    c2: float   # resampling unit cost
    c3: float   # regularization unit cost
    N: int = 1

    def __post_init__(self):
        if min(self.n_x, self.n_theta, self.n_y) < 1:
            raise ConfigError("dimensions must be positive")
        if min(self.c1, self.c2, self.c3) <= 0 or self.N < 0:
            raise ConfigError("cost constants must be positive, N nonnegative")


def _dual_per_particle(d: EFCostModel) -> float:
    nx, nt, ny = d.n_x, d.n_theta, d.n_y
    return (3 * nx ** 2 + 5 * nt ** 2 + 6 * nt + 2 * nt * ny + 7 * ny + 3 * nx
            + d.c1 * (nx + nt) + d.c2 * (nx + nt) + d.c3 * nx)


def _bayesian_per_particle(d: EFCostModel) -> float:
    nx, nt, ny = d.n_x, d.n_theta, d.n_y
    unit = 1 + d.c1 + d.c2 + d.c3
    return (3 * nx ** 2 + 3 * nt ** 2 + 6 * nx * nt
            + unit * nx + unit * nt + ny)


def _rml_per_particle(d: EFCostModel) -> float:
    nx, nt = d.n_x, d.n_theta
    return (2 * nx ** 2 + 4 * nt + 2 * nx
            + d.c1 * (2 * nx + nt) + d.c2 * nx + d.c3 * nx)


_PER_PARTICLE = {
    "dual": _dual_per_particle,
    "bayesian": _bayesian_per_particle,
    "rml": _rml_per_particle,
}


def ef_complexity(method: str, cost: EFCostModel) -> float:
    """Equivalent-flop count per filter cycle for one of the three methods."""
    if method not in _PER_PARTICLE:
        raise ConfigError(f"unknown method {method!r}")
    return cost.N * _PER_PARTICLE[method](cost)


def match_particle_budget(reference: str, cost: EFCostModel,
                          n_reference: int) -> int:
    """Dual-method particle count with the same flop budget as a baseline.

    Evaluates the closed-form correction factors relating the dual
    per-particle cost to the Bayesian (reference="bayesian", N_B) or RML
    (reference="rml", N_M) per-particle cost.
    """
    nx, nt, ny = cost.n_x, cost.n_theta, cost.n_y
    cd = _dual_per_particle(cost)
    if reference == "bayesian":
        numer = (2 * nt ** 2 + 5 * nt + 2 * nt * ny + 6 * ny + 2 * nt
                 - 6 * nx * nt - cost.c3 * nt)
    elif reference == "rml":
        numer = (nx ** 2 + 5 * nt ** 2 + 2 * nt + nx + 2 * nt * ny + 7 * ny
                 + cost.c2 * nt)
    else:
        raise ConfigError(f"unknown reference {reference!r}")
    n = n_reference * (1.0 - numer / cd)
    if n <= 0:
        raise BudgetError(f"matched budget nonpositive ({n:.2f})")
    return max(1, int(round(n)))


def complexity_report(cost: EFCostModel, n_dual: int, n_bayesian: int,
                      n_rml: int) -> dict:
    """Per-method flop totals and matched budgets as a JSON-ready dict."""
    out = {"dims": {"n_x": cost.n_x, "n_theta": cost.n_theta, "n_y": cost.n_y},
           "unit_costs": {"c1": cost.c1, "c2": cost.c2, "c3": cost.c3},
           "flops": {}, "matched_dual_budget": {}}
    for method, n in (("dual", n_dual), ("bayesian", n_bayesian),
                      ("rml", n_rml)):
        d = EFCostModel(cost.n_x, cost.n_theta, cost.n_y,
                        cost.c1, cost.c2, cost.c3, N=n)
        out["flops"][method] = ef_complexity(method, d)
    for ref, n in (("bayesian", n_bayesian), ("rml", n_rml)):
        try:
            out["matched_dual_budget"][ref] = match_particle_budget(ref, cost, n)
        except BudgetError as exc:
            out["matched_dual_budget"][ref] = str(exc)
    return out
