"""Single-spool gas-turbine plant with multiplicative health parameters.

Four states: combustion-chamber temperature T_CC (K), spool speed S (rpm),
combustion-chamber pressure P_CC (kPa) and nozzle-outlet pressure P_NLT
(kPa).  Five measured outputs: compressor exit temperature, P_CC, S,
P_NLT and turbine exit temperature.  Health parameters scale compressor /
turbine efficiency and mass flow; healthy value is 1.

The shipped constants are NOT calibrated against any real engine.  They
are a physically plausible single-spool operating point constructed so
that the nominal state is an exact equilibrium of the healthy model; every
structural property of the equations is preserved, absolute magnitudes
are illustrative only.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import IntegrationError, PhysicalDomainError
from .model import ModelSpec, ParamDomain

DT_DEFAULT = 0.01          # sampling period, s
FIXED_POINT_MAX_ITER = 50
FIXED_POINT_TOL = 1e-13

# Health-vector component order used throughout.
COMPONENTS = ("eta_c", "m_c", "eta_t", "m_t")


@dataclass(frozen=True)
class EngineConstants:
    """Thermodynamic and geometric constants of the single-spool engine.

    kJ/kg/K units for c_p, c_v, R; pressures in kPa; powers in kW.
    """

    gamma: float = 1.4
    c_p: float = 1.005
    c_v: float = 0.718
    R: float = 0.287
    H_u: float = 43100.0        # fuel lower heating value, kJ/kg
    eta_cc: float = 0.99        # combustion efficiency
    eta_c: float = 0.85         # nominal compressor isentropic efficiency
    eta_t: float = 0.88         # nominal turbine isentropic efficiency
    eta_mech: float = 0.958     # spool mechanical efficiency (closure value)
    J: float = 50.0             # spool inertia, kg m^2
    V_cc: float = 0.6           # combustion chamber volume, m^3
    V_m: float = 4.0            # nozzle mixing volume, m^3
    T_m: float = 300.0          # mixing volume temperature, K
    beta: float = 5.0           # bypass ratio
    T_d: float = 288.0          # diffuser (compressor inlet) temperature, K
    P_d: float = 101.3          # diffuser pressure, kPa
    m_cc: float = 1.29          # resident combustion-chamber gas mass, kg
    mdot_f_ref: float = 0.36    # nominal fuel flow, kg/s
    # Flow-map reference quantities (smooth algebraic component maps).
    mdot_c_ref: float = 20.0
    mdot_t_ref: float = 20.36
    mdot_n_ref: float = 37.0
    S_ref: float = 12000.0
    P_cc_ref: float = 800.0
    P_nlt_ref: float = 300.0
    T_cc_ref: float = 1300.0
    k_pc: float = 0.3           # compressor-map backpressure coefficient


NOMINAL_STATE = np.array([1300.0, 12000.0, 800.0, 300.0])

HEALTH_DOMAIN = ParamDomain(np.full(4, 0.5), np.full(4, 1.2))


def nominal_constants() -> tuple[EngineConstants, np.ndarray]:
    """Constants closed so NOMINAL_STATE is an exact healthy equilibrium.

    Fuel flow balances the combustion-chamber energy equation, turbine
    flow balances the pressure equation, mechanical efficiency balances
    the spool, and the nozzle reference flow balances the mixing volume.
    """
    c = EngineConstants()
    t_cc, s, p_cc, p_nlt = NOMINAL_STATE
    ex = (c.gamma - 1.0) / c.gamma
    t_comp = c.T_d * (1.0 + ((p_cc / c.P_d) ** ex - 1.0) / c.eta_c)
    t_turb = t_cc * (1.0 - c.eta_t * (1.0 - (p_nlt / p_cc) ** ex))
    mdot_c = c.mdot_c_ref
    mdot_f = c.c_p * mdot_c * (t_cc - t_comp) / (c.eta_cc * c.H_u - c.c_p * t_cc)
    mdot_t = mdot_c + mdot_f
    w_comp = mdot_c * c.c_p * (t_comp - c.T_d)
    w_turb = mdot_t * c.c_p * (t_cc - t_turb)
    c = replace(
        c,
        mdot_f_ref=mdot_f,
        mdot_t_ref=mdot_t,
        eta_mech=w_comp / w_turb,
        mdot_n_ref=mdot_t + c.beta / (c.beta + 1.0) * mdot_c,
        m_cc=p_cc * c.V_cc / (c.R * t_cc),
    )
    return c, NOMINAL_STATE.copy()


def _split_state(state: np.ndarray):
    state = np.asarray(state, dtype=float)
    return state[..., 0], state[..., 1], state[..., 2], state[..., 3]


def _check_positive(state: np.ndarray):
    t_cc, s, p_cc, p_nlt = _split_state(state)
    if (np.any(t_cc <= 0) or np.any(s <= 0)
            or np.any(p_cc <= 0) or np.any(p_nlt <= 0)):
        raise PhysicalDomainError("engine state left the positive orthant")


def compressor_flow(s, p_cc, c: EngineConstants):
    return c.mdot_c_ref * (s / c.S_ref) * (1.0 + c.k_pc * (1.0 - p_cc / c.P_cc_ref))


def turbine_flow(p_cc, t_cc, c: EngineConstants):
    return c.mdot_t_ref * (p_cc / c.P_cc_ref) * np.sqrt(c.T_cc_ref / t_cc)


def nozzle_flow(p_nlt, c: EngineConstants):
    return c.mdot_n_ref * (p_nlt / c.P_nlt_ref)


def compressor_exit_temp(p_cc, theta_eta_c, c: EngineConstants):
    ex = (c.gamma - 1.0) / c.gamma
    return c.T_d * (1.0 + ((p_cc / c.P_d) ** ex - 1.0)
                    / (theta_eta_c * c.eta_c))


def turbine_exit_temp(t_cc, p_cc, p_nlt, theta_eta_t, c: EngineConstants):
    ex = (c.gamma - 1.0) / c.gamma
    return t_cc * (1.0 - theta_eta_t * c.eta_t * (1.0 - (p_nlt / p_cc) ** ex))


def derivatives(state: np.ndarray, health: np.ndarray, c: EngineConstants,
                fuel_flow: float | None = None) -> np.ndarray:
    """Continuous-time right-hand side; vectorized over leading axes."""
    _check_positive(state)
    t_cc, s, p_cc, p_nlt = _split_state(state)
    health = np.asarray(health, dtype=float)
    th_ec, th_mc, th_et, th_mt = (health[..., i] for i in range(4))
    mdot_f = c.mdot_f_ref if fuel_flow is None else fuel_flow

    t_comp = compressor_exit_temp(p_cc, th_ec, c)
    t_turb = turbine_exit_temp(t_cc, p_cc, p_nlt, th_et, c)
    mdot_c = th_mc * compressor_flow(s, p_cc, c)
    mdot_t = th_mt * turbine_flow(p_cc, t_cc, c)
    net_mass = mdot_c + mdot_f - mdot_t

    # Energy balance of the resident combustion-chamber gas.
    d_tcc = (c.c_p * (mdot_c * t_comp - mdot_t * t_cc)
             + c.eta_cc * c.H_u * mdot_f
             - c.c_v * t_cc * net_mass) / (c.c_v * c.m_cc)

    # Pressure follows temperature and net mass storage (ideal gas).
    d_pcc = (p_cc / t_cc) * d_tcc + (c.gamma * c.R * t_cc / c.V_cc) * net_mass

    # Spool power balance; powers in kW, hence the 1e3 factor.
    w_comp = mdot_c * c.c_p * (t_comp - c.T_d)
    w_turb = mdot_t * c.c_p * (t_cc - t_turb)
    d_s = 1e3 * (c.eta_mech * w_turb - w_comp) / (c.J * s * (np.pi / 30.0) ** 2)

    # Nozzle mixing-volume mass balance (isothermal at T_m).
    d_pnlt = (c.R * c.T_m / c.V_m) * (
        mdot_t + c.beta / (c.beta + 1.0) * mdot_c - nozzle_flow(p_nlt, c))

    return np.stack([d_tcc, d_s, d_pcc, d_pnlt], axis=-1)


def outputs(state: np.ndarray, health: np.ndarray,
            c: EngineConstants) -> np.ndarray:
    """Five measured channels; T_comp uses the reciprocal of theta_eta_c."""
    _check_positive(state)
    t_cc, s, p_cc, p_nlt = _split_state(state)
    health = np.asarray(health, dtype=float)
    y1 = compressor_exit_temp(p_cc, health[..., 0], c)
    y5 = turbine_exit_temp(t_cc, p_cc, p_nlt, health[..., 2], c)
    return np.stack([y1, p_cc + 0 * y1, s + 0 * y1, p_nlt + 0 * y1, y5], axis=-1)


def implicit_euler_step(rhs, state: np.ndarray,
                        dt: float = DT_DEFAULT) -> np.ndarray:
    """Implicit (backward) Euler step solved by fixed-point iteration.

    rhs(state) is the continuous-time derivative.  Falls back to explicit
    Euler (with a warning) if the iteration has not converged after
    FIXED_POINT_MAX_ITER sweeps; raises IntegrationError if the iterates
    go non-finite.
    """
    if dt <= 0:
        raise IntegrationError("dt must be positive")
    state = np.asarray(state, dtype=float)
    z = state.copy()
    for _ in range(FIXED_POINT_MAX_ITER):
        z_new = state + dt * rhs(z)
        if not np.all(np.isfinite(z_new)):
            raise IntegrationError(f"implicit step diverged from {state!r}")
        delta = np.max(np.abs(z_new - z) / np.maximum(np.abs(z), 1.0))
        z = z_new
        if delta < FIXED_POINT_TOL:
            return z
    warnings.warn("implicit step did not converge; explicit Euler fallback")
    return state + dt * rhs(state)


def step_backward_euler(state: np.ndarray, health: np.ndarray,
                        c: EngineConstants, fuel_flow: float | None = None,
                        dt: float = DT_DEFAULT) -> np.ndarray:
    """One implicit-Euler step of the engine dynamics."""
    return implicit_euler_step(
        lambda z: derivatives(z, health, c, fuel_flow), state, dt)


@dataclass(frozen=True)
class FaultEvent:
    """Timed multiplicative loss of effectiveness on one component."""

    start_time: float
    component: str              # one of COMPONENTS
    magnitude: float            # fractional loss in [0, 0.5]
    profile: str = "step"       # "step" | "drift"
    ramp_end: float | None = None

    def __post_init__(self):
        if self.component not in COMPONENTS:
            raise ValueError(f"unknown component {self.component!r}")
        if not 0.0 <= self.magnitude <= 0.5:
            raise ValueError("magnitude must be in [0, 0.5]")
        if self.start_time < 0:
            raise ValueError("start_time must be nonnegative")
        if self.profile == "drift" and (self.ramp_end is None
                                        or self.ramp_end <= self.start_time):
            raise ValueError("drift events need ramp_end > start_time")


@dataclass(frozen=True)
class FaultScenario:
    name: str
    events: tuple = ()
    fuel_step_time: float | None = None  # input excitation, None = constant fuel
    fuel_step_fraction: float = 0.0

    def fuel_at(self, t: float, c: EngineConstants) -> float:
        base = c.mdot_f_ref
        if self.fuel_step_time is not None and t >= self.fuel_step_time:
            return base * (1.0 + self.fuel_step_fraction)
        return base


def health_at(scenario: FaultScenario, t: float) -> np.ndarray:
    """Health vector at time t seconds (all ones before any event)."""
    if t < 0:
        raise ValueError("time must be nonnegative")
    theta = np.ones(4)
    for ev in scenario.events:
        idx = COMPONENTS.index(ev.component)
        if t < ev.start_time:
            continue
        if ev.profile == "step":
            loss = ev.magnitude
        else:
            frac = min((t - ev.start_time) / (ev.ramp_end - ev.start_time), 1.0)
            loss = ev.magnitude * frac
        theta[idx] = min(theta[idx], 1.0 - loss)
    return theta


scenario_I_concurrent = FaultScenario(
    name="scenario_I_concurrent",
    fuel_step_time=1.0, fuel_step_fraction=-0.02,
    events=(
        FaultEvent(4.0, "eta_c", 0.05),
        FaultEvent(9.0, "m_c", 0.05),
        FaultEvent(14.0, "eta_t", 0.05),
        FaultEvent(19.0, "m_t", 0.05),
    ),
)

scenario_II_simultaneous = FaultScenario(
    name="scenario_II_simultaneous",
    fuel_step_time=1.0, fuel_step_fraction=-0.02,
    events=(
        FaultEvent(9.0, "eta_c", 0.05, profile="drift", ramp_end=19.0),
        FaultEvent(9.0, "eta_t", 0.03, profile="drift", ramp_end=19.0),
        FaultEvent(9.0, "m_c", 0.05),
        FaultEvent(9.0, "m_t", 0.05),
    ),
)

SCENARIOS = {
    "scenario_I_concurrent": scenario_I_concurrent,
    "scenario_II_simultaneous": scenario_II_simultaneous,
    "healthy": FaultScenario(name="healthy", fuel_step_time=1.0,
                             fuel_step_fraction=-0.02),
}


def engine_model(constants: EngineConstants | None = None,
                 process_noise_std: np.ndarray | None = None,
                 measurement_noise_std: np.ndarray | None = None,
                 dt: float = DT_DEFAULT) -> ModelSpec:
    """Discrete-time ModelSpec view of the engine for the estimators.

    The exogenous input u is the fuel flow (kg/s); defaults to nominal.
    Noise magnitudes default to roughly 0.1% of each channel's nominal
    scale.
    """
    c = constants if constants is not None else nominal_constants()[0]
    if process_noise_std is None:
        process_noise_std = 1e-3 * NOMINAL_STATE
    if measurement_noise_std is None:
        nominal_y = outputs(NOMINAL_STATE, np.ones(4), c)
        measurement_noise_std = 1e-3 * nominal_y

    def transition(x, eff, w, u=None):
        fuel = c.mdot_f_ref if u is None else float(u)
        return step_backward_euler(x, eff, c, fuel, dt) + w

    def output(x, eff, u=None):
        return outputs(x, eff, c)

    return ModelSpec(
        n_x=4, n_theta=4, n_y=5,
        transition=transition, output=output,
        process_noise_cov=np.diag(np.asarray(process_noise_std) ** 2),
        measurement_noise_cov=np.diag(np.asarray(measurement_noise_std) ** 2),
        param_domain=HEALTH_DOMAIN,
    )
