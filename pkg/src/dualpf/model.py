"""Discrete-time nonlinear stochastic state-space model abstraction.

A model is a transition map, an output map, a health map tying parameter
components to the state, noise covariances and a box-shaped admissible
parameter domain.  The parameter vector acts multiplicatively on the health
map (healthy value is all ones); with the identity health map the plain
state-space form is recovered.

Model callables must be stateless and vectorized over a leading particle
axis: `transition(x, eff, w)` and `output(x, eff)` accept `x` of shape
`(n_x,)` or `(N, n_x)` (with `eff` broadcastable accordingly) and may take
an optional keyword `u` carrying an exogenous input for the step.
"""
from __future__ import annotations

import csv
import inspect
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, SimulationDivergenceError
from .smc import as_rng, sample_gaussian

SYM_TOL = 1e-10


@dataclass(frozen=True)
class ParamDomain:
    """Axis-aligned admissible box for the parameter vector."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float))
        if self.lower.shape != self.upper.shape:
            raise ConfigError("domain bound shapes differ")
        if not np.all(self.lower < self.upper):
            raise ConfigError("domain requires lower < upper componentwise")

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def contains(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return np.all((theta >= self.lower) & (theta <= self.upper), axis=-1)

    def clip(self, theta: np.ndarray) -> np.ndarray:
        return np.clip(theta, self.lower, self.upper)


def _accepts_u(fn: Callable) -> bool:
    try:
        params = inspect.signature(fn).parameters
    except (TypeError, ValueError):
        return False
    return "u" in params or any(
        p.kind == inspect.Parameter.VAR_KEYWORD for p in params.values()
    )


@dataclass
class ModelSpec:
    """Nonlinear stochastic system with multiplicative health parameters."""

    n_x: int
    n_theta: int
    n_y: int
    transition: Callable  # (x, eff, w[, u]) -> next state
    output: Callable      # (x, eff[, u]) -> noise-free output
    process_noise_cov: np.ndarray
    measurement_noise_cov: np.ndarray
    param_domain: ParamDomain
    health_map: Callable | None = None  # lambda(x) -> (n_theta,); None = ones

    def __post_init__(self):
        self.process_noise_cov = np.atleast_2d(
            np.asarray(self.process_noise_cov, dtype=float))
        self.measurement_noise_cov = np.atleast_2d(
            np.asarray(self.measurement_noise_cov, dtype=float))
        self._transition_takes_u = _accepts_u(self.transition)
        self._output_takes_u = _accepts_u(self.output)
        self.validate()

    def validate(self):
        if min(self.n_x, self.n_theta, self.n_y) < 1:
            raise ConfigError("dimensions must be positive")
        L, V = self.process_noise_cov, self.measurement_noise_cov
        if L.shape != (self.n_x, self.n_x):
            raise ConfigError("process noise covariance has wrong shape")
        if V.shape != (self.n_y, self.n_y):
            raise ConfigError("measurement noise covariance has wrong shape")
        for name, m in (("L", L), ("V", V)):
            if not np.allclose(m, m.T, atol=SYM_TOL):
                raise ConfigError(f"{name} not symmetric")
        if np.any(np.linalg.eigvalsh(L) < -SYM_TOL):
            raise ConfigError("L must be positive semidefinite")
        if np.any(np.linalg.eigvalsh(V) <= 0):
            raise ConfigError("V must be strictly positive definite")
        if self.param_domain.dim != self.n_theta:
            raise ConfigError("param_domain dimension mismatch")
        if self.health_map is not None:
            probe = np.asarray(self.health_map(np.zeros(self.n_x)), dtype=float)
            if probe.shape[-1] != self.n_theta:
                raise ConfigError("health_map output length must be n_theta")

    def effective_parameter(self, x: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Componentwise product of theta with the health map at x."""
        theta = np.asarray(theta, dtype=float)
        if self.health_map is None:
            return theta if theta.ndim > 0 else np.atleast_1d(theta)
        lam = np.asarray(self.health_map(x), dtype=float)
        return theta * lam

    def step_state(self, x, theta, w, u=None) -> np.ndarray:
        eff = self.effective_parameter(x, theta)
        if self._transition_takes_u:
            return np.asarray(self.transition(x, eff, w, u=u), dtype=float)
        return np.asarray(self.transition(x, eff, w), dtype=float)

    def measure(self, x, theta, u=None) -> np.ndarray:
        eff = self.effective_parameter(x, theta)
        if self._output_takes_u:
            return np.asarray(self.output(x, eff, u=u), dtype=float)
        return np.asarray(self.output(x, eff), dtype=float)


def simulate(model: ModelSpec, x0: np.ndarray, theta_trajectory: np.ndarray,
             T: int, seed, u_trajectory: np.ndarray | None = None
             ) -> tuple[np.ndarray, np.ndarray]:
    """Simulate T steps; returns (T+1 states, T noisy outputs).

    The output at step t (1-based) is measured at the post-transition state
    using the parameter that drove the transition, matching the predictor
    structure of the filters.
    """
    rng = as_rng(seed)
    theta_trajectory = np.atleast_2d(np.asarray(theta_trajectory, dtype=float))
    if theta_trajectory.shape[0] < T:
        raise ConfigError("theta_trajectory shorter than T")
    x0 = np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise ConfigError("x0 must be finite")

    states = np.empty((T + 1, model.n_x))
    outputs = np.empty((T, model.n_y))
    states[0] = x0
    process_noise = sample_gaussian(model.process_noise_cov, max(T, 1), rng)
    meas_noise = sample_gaussian(model.measurement_noise_cov, max(T, 1), rng)
    for t in range(T):
        u = None if u_trajectory is None else u_trajectory[t]
        theta = theta_trajectory[t]
        x_next = model.step_state(states[t], theta, process_noise[t], u=u)
        if not np.all(np.isfinite(x_next)):
            raise SimulationDivergenceError(t + 1)
        states[t + 1] = x_next
        outputs[t] = model.measure(x_next, theta, u=u) + meas_noise[t]
    return states, outputs


def write_trajectory_csv(path, states: np.ndarray, outputs: np.ndarray,
                         thetas: np.ndarray) -> None:
    """CSV with header t,x_1..x_nx,y_1..y_ny,theta_1..theta_ntheta.

    Row t pairs state x_t with the output and parameter of step t; the
    output columns of row 0 repeat row 1 semantics and are left empty.
    """
    states = np.atleast_2d(states)
    outputs = np.atleast_2d(outputs)
    thetas = np.atleast_2d(thetas)
    n_x, n_y, n_th = states.shape[1], outputs.shape[1], thetas.shape[1]
    header = (["t"] + [f"x_{i+1}" for i in range(n_x)]
              + [f"y_{i+1}" for i in range(n_y)]
              + [f"theta_{i+1}" for i in range(n_th)])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(1, states.shape[0]):
            row = ([t] + [repr(float(v)) for v in states[t]]
                   + [repr(float(v)) for v in outputs[t - 1]]
                   + [repr(float(v))
                      for v in thetas[min(t - 1, thetas.shape[0] - 1)]])
            writer.writerow(row)


def read_trajectory_csv(path) -> dict[str, np.ndarray]:
    """Inverse of write_trajectory_csv; returns arrays keyed x/y/theta."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [list(map(float, r)) for r in reader]
    data = np.asarray(rows, dtype=float)
    cols = {name: i for i, name in enumerate(header)}
    out = {}
    for key in ("x", "y", "theta"):
        idx = [cols[c] for c in header if c.startswith(key + "_")]
        out[key] = data[:, idx]
    out["t"] = data[:, cols["t"]]
    return out
