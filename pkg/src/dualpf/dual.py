"""Dual estimator: concurrent state and parameter particle filters.

Within each time step the state filter runs first against the parameter
estimate frozen at the previous step, then the parameter filter runs
against the freshly produced state estimate.  The loop therefore realizes
the decoupled factorization where each marginal filter conditions on the
other filter's most recent output.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import param_filter, state_filter
from .errors import ConfigError, DualPFError
from .model import ModelSpec
from .param_filter import ParamFilterConfig, ParamFilterState, init_param_filter
from .smc import as_rng
from .state_filter import StateFilterConfig, StateFilterState, init_state_filter


@dataclass
class HistoryRow:
    t: int
    x_hat: np.ndarray
    theta_hat: np.ndarray
    y_hat: np.ndarray
    ess_state: float
    ess_param: float


@dataclass
class DualEstimatorState:
    model: ModelSpec
    state: StateFilterState
    params: ParamFilterState
    param_config: ParamFilterConfig
    t: int = 0
    history: list = field(default_factory=list)
    rng: np.random.Generator = None

    @property
    def x_hat(self) -> np.ndarray:
        return self.state.estimate

    @property
    def theta_hat(self) -> np.ndarray:
        return self.params.estimate


def init(model: ModelSpec, x0_mean, x0_cov, theta0_mean, theta0_cov,
         state_config: StateFilterConfig, param_config: ParamFilterConfig,
         seed) -> DualEstimatorState:
    """Draw both initial ensembles from their Gaussian priors."""
    rng = as_rng(seed)
    theta0_mean = np.atleast_1d(np.asarray(theta0_mean, dtype=float))
    if not model.param_domain.contains(theta0_mean):
        raise ConfigError("theta0 mean outside the admissible domain")
    sf = init_state_filter(x0_mean, x0_cov, state_config, rng)
    pf = init_param_filter(theta0_mean, theta0_cov, model.param_domain,
                           param_config, rng)
    return DualEstimatorState(model=model, state=sf, params=pf,
                              param_config=param_config, rng=rng)


def step(est: DualEstimatorState, y_t: np.ndarray, u=None) -> DualEstimatorState:
    """One joint cycle: state update at frozen theta, then parameter update.

    The parameter filter's one-step-ahead predictor (when configured) is
    anchored at the state estimate from before this step's state update, so
    neither filter ever reads the other's same-step intermediate quantities
    out of order.
    """
    y_t = np.atleast_1d(np.asarray(y_t, dtype=float))
    if y_t.shape[0] != est.model.n_y:
        raise ConfigError("observation dimension mismatch")
    theta_prev = est.params.estimate
    x_prev = est.state.estimate
    try:
        est.state = state_filter.step(est.state, theta_prev, y_t, est.model,
                                      est.rng, u=u)
    except DualPFError as exc:
        raise type(exc)(f"state filter, step {est.t + 1}: {exc}") from exc
    try:
        est.params = param_filter.step(est.params, est.state.estimate, y_t,
                                       est.model, est.param_config, est.rng,
                                       t=est.t, x_prev=x_prev, u=u)
    except DualPFError as exc:
        raise type(exc)(f"parameter filter, step {est.t + 1}: {exc}") from exc
    est.t += 1
    y_hat = est.model.measure(est.state.estimate, est.params.estimate, u=u)
    est.history.append(HistoryRow(
        t=est.t,
        x_hat=est.state.estimate.copy(),
        theta_hat=est.params.estimate.copy(),
        y_hat=np.atleast_1d(y_hat).copy(),
        ess_state=est.state.ess,
        ess_param=est.params.ess,
    ))
    return est


def run(est: DualEstimatorState, observations: np.ndarray,
        u_trajectory: np.ndarray | None = None) -> list[HistoryRow]:
    """Fold step over an observation sequence; returns the history."""
    observations = np.atleast_2d(np.asarray(observations, dtype=float))
    for t in range(observations.shape[0]):
        u = None if u_trajectory is None else u_trajectory[t]
        step(est, observations[t], u=u)
    return est.history


def history_arrays(history: list[HistoryRow]) -> dict[str, np.ndarray]:
    """Stack the per-step history into dense arrays."""
    if not history:
        return {"t": np.empty(0), "x_hat": np.empty((0, 0)),
                "theta_hat": np.empty((0, 0)), "y_hat": np.empty((0, 0)),
                "ess_state": np.empty(0), "ess_param": np.empty(0)}
    return {
        "t": np.asarray([r.t for r in history], dtype=float),
        "x_hat": np.vstack([r.x_hat for r in history]),
        "theta_hat": np.vstack([r.theta_hat for r in history]),
        "y_hat": np.vstack([r.y_hat for r in history]),
        "ess_state": np.asarray([r.ess_state for r in history]),
        "ess_param": np.asarray([r.ess_param for r in history]),
    }


def write_history_csv(path, history: list[HistoryRow]) -> None:
    """CSV with header t,xhat_1..,thetahat_1..,yhat_1..,ess_state,ess_param."""
    arr = history_arrays(history)
    n_x = arr["x_hat"].shape[1]
    n_th = arr["theta_hat"].shape[1]
    n_y = arr["y_hat"].shape[1]
    header = (["t"] + [f"xhat_{i+1}" for i in range(n_x)]
              + [f"thetahat_{i+1}" for i in range(n_th)]
              + [f"yhat_{i+1}" for i in range(n_y)]
              + ["ess_state", "ess_param"])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in history:
            writer.writerow([row.t]
                            + [repr(float(v)) for v in row.x_hat]
                            + [repr(float(v)) for v in row.theta_hat]
                            + [repr(float(v)) for v in row.y_hat]
                            + [repr(float(row.ess_state)),
                               repr(float(row.ess_param))])
