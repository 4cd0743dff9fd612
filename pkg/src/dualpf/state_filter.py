"""Regularized bootstrap particle filter for the state estimation side.

One step runs predict (propagate particles through the transition with
process noise at the frozen previous parameter estimate), a likelihood
weight update against the new observation, and a kernel-regularized
resampling that returns an equally weighted posterior ensemble.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FilterDivergenceError
from .model import ModelSpec
from .smc import (
    ParticleEnsemble,
    RegularizationConfig,
    as_rng,
    cov_factor,
    likelihood_weights,
    regularize,
    sample_gaussian,
)


@dataclass
class StateFilterConfig:
    n_particles: int = 50
    regularization: RegularizationConfig = field(default_factory=RegularizationConfig)


@dataclass
class StateFilterState:
    particles: np.ndarray            # (N, n_x) equally weighted posterior
    estimate: np.ndarray             # posterior mean
    prior_cov: np.ndarray            # last a-priori covariance
    config: StateFilterConfig
    ess: float = np.nan              # ESS of the last weight update
    degenerate: bool = False         # max weight ~ 1 on the last update
    passthrough_dims: tuple = ()

    @property
    def n(self) -> int:
        return self.particles.shape[0]


def init_state_filter(mean: np.ndarray, cov: np.ndarray,
                      config: StateFilterConfig, seed) -> StateFilterState:
    """Draw the initial ensemble from N(mean, cov)."""
    rng = as_rng(seed)
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    particles = mean + sample_gaussian(cov, config.n_particles, rng)
    return StateFilterState(
        particles=particles,
        estimate=particles.mean(axis=0),
        prior_cov=np.atleast_2d(np.asarray(cov, dtype=float)),
        config=config,
    )


def predict(particles: np.ndarray, theta_hat: np.ndarray, model: ModelSpec,
            seed, u=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Propagate the ensemble one step at the frozen parameter estimate.

    Returns the predicted particles, the sample covariance of the
    prediction (divide by N-1) and the per-particle predicted outputs.
    """
    rng = as_rng(seed)
    n = particles.shape[0]
    noise = sample_gaussian(model.process_noise_cov, n, rng)
    predicted = np.atleast_2d(model.step_state(particles, theta_hat, noise, u=u))
    bad = ~np.all(np.isfinite(predicted), axis=1)
    if np.any(bad):
        raise FilterDivergenceError(int(np.flatnonzero(bad)[0]))
    centered = predicted - predicted.mean(axis=0)
    denom = max(n - 1, 1)
    prior_cov = (centered.T @ centered) / denom
    outputs = np.atleast_2d(model.measure(predicted, theta_hat, u=u))
    return predicted, prior_cov, outputs


def update(predicted_outputs: np.ndarray, y: np.ndarray,
           model: ModelSpec) -> np.ndarray:
    """Likelihood reweighting: w_i proportional to N(y - yhat_i; 0, V)."""
    resid = np.asarray(y, dtype=float) - np.atleast_2d(predicted_outputs)
    return likelihood_weights(resid, model.measurement_noise_cov)


def step(state: StateFilterState, theta_hat: np.ndarray, y: np.ndarray,
         model: ModelSpec, seed, u=None) -> StateFilterState:
    """Full predict / weight / regularized-resample cycle."""
    rng = as_rng(seed)
    predicted, prior_cov, outputs = predict(
        state.particles, theta_hat, model, rng, u=u)
    weights = update(outputs, y, model)
    ensemble = ParticleEnsemble(predicted, weights)
    whitening = cov_factor(prior_cov)
    result = regularize(ensemble, whitening, state.config.regularization, rng)
    posterior = result.particles
    return StateFilterState(
        particles=posterior,
        estimate=posterior.mean(axis=0),
        prior_cov=prior_cov,
        config=state.config,
        ess=ensemble.ess(),
        degenerate=ensemble.is_collapsed(),
        passthrough_dims=result.passthrough_dims,
    )


def estimated_output(state: StateFilterState, theta_hat: np.ndarray,
                     model: ModelSpec, u=None) -> np.ndarray:
    """yhat_t evaluated at the posterior mean and the frozen parameter."""
    return model.measure(state.estimate, theta_hat, u=u)
