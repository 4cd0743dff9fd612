"""Prediction-error driven parameter particle filter.

Each particle takes a gradient-flavored step scaled by an adaptive gain
built from the output prediction error, is shrunk toward the previous
ensemble mean, perturbed with kernel-smoothing noise whose covariance
preserves the ensemble variance, projected into the admissible box, then
reweighted by the output likelihood and residual-resampled.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, DualPFError
from .model import ModelSpec, ParamDomain
from .smc import (
    ParticleEnsemble,
    as_rng,
    likelihood_weights,
    resample_residual,
    sample_gaussian,
)

COV_FLOOR = 1e-12
PROJECTION_MAX_SCALINGS = 64


@dataclass
class ParamFilterConfig:
    n_particles: int = 50
    shrinkage: float = 0.93                 # a in A = a I, 0 < a <= 1
    step_size: float | Callable = 0.9       # gamma_t (constant or t -> gamma)
    projection_factor: float = 0.5          # mu in [0, 1]
    evolution_cov: np.ndarray | None = None  # initial parameter covariance
    pe_window: int = 10                     # averaging window for reported J only
    jacobian: Callable | None = None        # analytic dyhat/dtheta, (n_th, n_y)
    fd_step: float = 1e-6
    cov_mode: str = "running"               # "running" | "initial"
    predictor: str = "output"               # "output" | "one_step"
    gamma0: float | None = None             # initial step size for the bound
    emax_outer: np.ndarray | float = 1.0    # E_max E_max^T design parameter

    def __post_init__(self):
        if not 0.0 < self.shrinkage <= 1.0:
            raise ConfigError("shrinkage must be in (0, 1]")
        if not 0.0 <= self.projection_factor <= 1.0:
            raise ConfigError("projection_factor must be in [0, 1]")
        if self.cov_mode not in ("running", "initial"):
            raise ConfigError(f"unknown cov_mode {self.cov_mode!r}")
        if self.predictor not in ("output", "one_step"):
            raise ConfigError(f"unknown predictor {self.predictor!r}")

    def gamma(self, t: int) -> float:
        g = self.step_size(t) if callable(self.step_size) else float(self.step_size)
        if g <= 0:
            raise ConfigError("step size must stay positive")
        return g


@dataclass
class ParamFilterState:
    particles: np.ndarray   # (N, n_theta), all inside the domain
    estimate: np.ndarray    # ensemble mean
    prev_mean: np.ndarray   # mean at the previous step (shrinkage target)
    cov: np.ndarray         # running posterior covariance
    ess: float = np.nan
    mean_criterion: float = np.nan  # ensemble average of 0.5 eps'eps
    criterion_history: list = field(default_factory=list)
    particle_steps: int = 0

    @property
    def n(self) -> int:
        return self.particles.shape[0]


def init_param_filter(mean: np.ndarray, cov: np.ndarray, domain: ParamDomain,
                      config: ParamFilterConfig, seed) -> ParamFilterState:
    rng = as_rng(seed)
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    if not domain.contains(mean):
        raise ConfigError("initial parameter mean outside the domain")
    particles = mean + sample_gaussian(cov, config.n_particles, rng)
    particles = project_step(
        np.broadcast_to(mean, particles.shape), particles - mean, domain,
        config.projection_factor)
    if config.evolution_cov is None:
        config.evolution_cov = np.atleast_2d(np.asarray(cov, dtype=float))
    return ParamFilterState(
        particles=particles,
        estimate=particles.mean(axis=0),
        prev_mean=particles.mean(axis=0),
        cov=_sample_cov(particles),
    )


def _sample_cov(particles: np.ndarray) -> np.ndarray:
    centered = particles - particles.mean(axis=0)
    denom = max(particles.shape[0] - 1, 1)
    return (centered.T @ centered) / denom


def _floored(cov: np.ndarray) -> np.ndarray:
    return cov + COV_FLOOR * np.eye(cov.shape[0])


def predicted_outputs(thetas: np.ndarray, x_hat: np.ndarray, model: ModelSpec,
                      predictor: str = "output",
                      x_prev: np.ndarray | None = None, u=None) -> np.ndarray:
    """Per-particle output prediction.

    "output" evaluates the measurement map at the current state estimate.
    "one_step" pushes the previous state estimate through the noise-free
    transition at the candidate parameter first, so models whose
    measurement map does not carry the parameter still expose it.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    if predictor == "one_step":
        if x_prev is None:
            raise ConfigError("one_step predictor needs the previous state estimate")
        base = np.broadcast_to(x_prev, (thetas.shape[0], model.n_x))
        states = np.atleast_2d(
            model.step_state(base, thetas, np.zeros(model.n_x), u=u))
        return np.atleast_2d(model.measure(states, thetas, u=u))
    base = np.broadcast_to(x_hat, (thetas.shape[0], model.n_x))
    return np.atleast_2d(model.measure(base, thetas, u=u))


def prediction_error(thetas: np.ndarray, x_hat: np.ndarray, y: np.ndarray,
                     model: ModelSpec, predictor: str = "output",
                     x_prev: np.ndarray | None = None, u=None) -> np.ndarray:
    """eps = y - yhat(theta); vectorized over parameter particles."""
    yhat = predicted_outputs(thetas, x_hat, model, predictor, x_prev, u)
    eps = np.asarray(y, dtype=float) - yhat
    return eps if np.asarray(thetas).ndim > 1 else eps[0]


def updating_gain(eps: np.ndarray) -> np.ndarray:
    """Euclidean norm of the output-mean-centered prediction error.

    A positive scalar per particle; vanishes when every output component
    carries the same error (including any scalar-output model).
    """
    eps = np.asarray(eps, dtype=float)
    single = eps.ndim == 1
    eps2 = np.atleast_2d(eps)
    centered = eps2 - eps2.mean(axis=1, keepdims=True)
    r = np.linalg.norm(centered, axis=1)
    return float(r[0]) if single else r


def output_jacobian(x_hat: np.ndarray, thetas: np.ndarray, model: ModelSpec,
                    config: ParamFilterConfig,
                    x_prev: np.ndarray | None = None, u=None) -> np.ndarray:
    """dyhat/dtheta per particle, shaped (N, n_theta, n_y).

    Uses the analytic Jacobian when configured, otherwise central finite
    differences with a one-sided fallback at the domain boundary.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    n, n_th = thetas.shape
    if config.jacobian is not None:
        jac = np.asarray(config.jacobian(x_hat, thetas), dtype=float)
        if jac.ndim == 2:
            jac = np.broadcast_to(jac, (n, n_th, model.n_y))
        return jac

    domain = model.param_domain
    base = predicted_outputs(thetas, x_hat, model, config.predictor, x_prev, u)
    jac = np.zeros((n, n_th, model.n_y))
    for k in range(n_th):
        eta = config.fd_step * np.maximum(1.0, np.abs(thetas[:, k]))
        up_ok = thetas[:, k] + eta <= domain.upper[k]
        dn_ok = thetas[:, k] - eta >= domain.lower[k]
        t_up = thetas.copy()
        t_up[:, k] = np.where(up_ok, thetas[:, k] + eta, thetas[:, k])
        t_dn = thetas.copy()
        t_dn[:, k] = np.where(dn_ok, thetas[:, k] - eta, thetas[:, k])
        y_up = predicted_outputs(t_up, x_hat, model, config.predictor, x_prev, u)
        y_dn = predicted_outputs(t_dn, x_hat, model, config.predictor, x_prev, u)
        span = t_up[:, k] - t_dn[:, k]
        with np.errstate(invalid="ignore", divide="ignore"):
            deriv = np.where(span[:, None] > 0, (y_up - y_dn) / span[:, None], 0.0)
        jac[:, k, :] = deriv
    return jac


def project_step(theta_prev: np.ndarray, raw_step: np.ndarray,
                 domain: ParamDomain, mu: float) -> np.ndarray:
    """Scale a candidate step by mu until the endpoint is admissible.

    theta_prev must already lie in the domain; after 64 scalings the step
    is dropped entirely so termination is guaranteed even for mu = 1.
    """
    theta_prev = np.atleast_2d(np.asarray(theta_prev, dtype=float))
    step = np.atleast_2d(np.asarray(raw_step, dtype=float)).copy()
    for _ in range(PROJECTION_MAX_SCALINGS):
        outside = ~domain.contains(theta_prev + step)
        if not np.any(outside):
            break
        step[outside] *= mu
    else:
        outside = ~domain.contains(theta_prev + step)
        step[outside] = 0.0
    result = theta_prev + step
    if np.asarray(raw_step).ndim == 1 and np.asarray(theta_prev).ndim <= 2:
        if np.asarray(raw_step).shape == result.shape[1:] and result.shape[0] == 1:
            return result[0]
    return result


def shrinkage_upper_bound(pmax: float, psi: np.ndarray, vy: np.ndarray,
                          vtheta: np.ndarray) -> float:
    """Worst-case admissible shrinkage factor a_max.

    a_max = 1 - sqrt(sigma_min(M) / sigma_max(M)) for
    M = pmax^2 Psi Vy Psi' Vtheta^{-1}; degenerates to 0 whenever the
    eigenvalue spread collapses (always the case for scalar parameters).
    """
    psi = np.atleast_2d(np.asarray(psi, dtype=float))
    vy = np.atleast_2d(np.asarray(vy, dtype=float))
    vtheta = np.atleast_2d(np.asarray(vtheta, dtype=float))
    m = (pmax ** 2) * psi @ vy @ psi.T @ np.linalg.inv(vtheta)
    eig = np.real(np.linalg.eigvals(m))
    smax = float(eig.max())
    if smax <= 0.0:
        raise DualPFError("shrinkage bound undefined: zero output sensitivity")
    smin = float(np.clip(eig.min(), 0.0, None))
    if m.shape[0] == 1:
        warnings.warn("shrinkage bound degenerates to 0 for scalar parameters")
    return 1.0 - float(np.sqrt(smin / smax))


def pmax_from_config(config: ParamFilterConfig) -> float:
    gamma0 = config.gamma0 if config.gamma0 is not None else config.gamma(0)
    outer = np.atleast_2d(np.asarray(config.emax_outer, dtype=float))
    return gamma0 * float(np.sqrt(np.trace(outer)))


def evolve(state: ParamFilterState, x_hat: np.ndarray, y: np.ndarray,
           model: ModelSpec, config: ParamFilterConfig, seed, t: int = 0,
           x_prev: np.ndarray | None = None, u=None,
           force_zero_error: bool = False) -> np.ndarray:
    """Intermediate particles: gradient step, shrinkage, evolution noise.

    `force_zero_error` bypasses the prediction-error term (used by the
    non-dispersion diagnostics).
    """
    rng = as_rng(seed)
    thetas = state.particles
    n, n_th = thetas.shape
    a = config.shrinkage
    domain = model.param_domain

    if force_zero_error:
        m = thetas.copy()
        state.mean_criterion = 0.0
    else:
        eps = prediction_error(thetas, x_hat, y, model, config.predictor, x_prev, u)
        gain = updating_gain(eps)
        psi = output_jacobian(x_hat, thetas, model, config, x_prev, u)
        raw = config.gamma(t) * gain[:, None] * np.einsum("njy,ny->nj", psi, eps)
        m = project_step(thetas, raw, domain, config.projection_factor)
        state.mean_criterion = float(np.mean(0.5 * np.sum(eps ** 2, axis=1)))
    state.criterion_history.append(state.mean_criterion)
    del state.criterion_history[:-max(config.pe_window, 1)]

    mbar = state.prev_mean
    base_cov = state.cov if config.cov_mode == "running" else np.atleast_2d(
        np.asarray(config.evolution_cov, dtype=float))
    noise_cov = (1.0 - a ** 2) * _floored(base_cov)
    zeta = sample_gaussian(noise_cov, n, rng)
    shrunk = a * m + (1.0 - a) * mbar
    return project_step(shrunk, zeta, domain, config.projection_factor)


def update(theta_tilde: np.ndarray, x_hat: np.ndarray, y: np.ndarray,
           model: ModelSpec, config: ParamFilterConfig, seed,
           prev_state: ParamFilterState | None = None,
           x_prev: np.ndarray | None = None, u=None) -> ParamFilterState:
    """Likelihood reweighting and residual resampling of the intermediates."""
    rng = as_rng(seed)
    yhat = predicted_outputs(theta_tilde, x_hat, model, config.predictor, x_prev, u)
    weights = likelihood_weights(np.asarray(y, dtype=float) - yhat,
                                 model.measurement_noise_cov)
    ensemble = ParticleEnsemble(theta_tilde, weights)
    idx = resample_residual(ensemble, rng)
    particles = theta_tilde[idx]
    if not np.all(model.param_domain.contains(particles)):
        raise DualPFError("parameter particle escaped the admissible domain")
    new = ParamFilterState(
        particles=particles,
        estimate=particles.mean(axis=0),
        prev_mean=particles.mean(axis=0),
        cov=_sample_cov(particles),
        ess=ensemble.ess(),
    )
    if prev_state is not None:
        new.criterion_history = list(prev_state.criterion_history)
        new.mean_criterion = prev_state.mean_criterion
        new.particle_steps = prev_state.particle_steps + particles.shape[0]
    return new


def step(state: ParamFilterState, x_hat: np.ndarray, y: np.ndarray,
         model: ModelSpec, config: ParamFilterConfig, seed, t: int = 0,
         x_prev: np.ndarray | None = None, u=None) -> ParamFilterState:
    """One full parameter-filter cycle."""
    rng = as_rng(seed)
    tilde = evolve(state, x_hat, y, model, config, rng, t=t, x_prev=x_prev, u=u)
    return update(tilde, x_hat, y, model, config, rng, prev_state=state,
                  x_prev=x_prev, u=u)


def averaged_criterion(state: ParamFilterState) -> float:
    """Windowed mean of the quadratic prediction-error criterion."""
    if not state.criterion_history:
        return np.nan
    return float(np.mean(state.criterion_history))
