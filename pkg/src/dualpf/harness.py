"""Scenario execution, Monte-Carlo campaigns and report emission.

Single entry points used by both the CLI and the test suite: simulate a
truth trajectory with fault injection, run one of the three estimators on
the noisy outputs, turn parameter estimates into residuals/decisions, and
aggregate campaigns into confusion matrices and MAE tables.
"""
from __future__ import annotations

import csv
import json
import time
import warnings
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import baselines, diagnosis, dual, gas_turbine, synthetic
from .baselines import BayesianKSConfig, EFCostModel, RMLConfig
from .diagnosis import CATEGORIES, ConfusionMatrix
from .errors import ConfigError, DualPFError
from .model import ModelSpec, simulate, write_trajectory_csv
from .param_filter import ParamFilterConfig
from .smc import as_rng
from .state_filter import StateFilterConfig

ESTIMATORS = ("dual", "bayesian", "rml")
MODELS = ("scalar", "mixed", "gas_turbine")

# All-run defaults mirroring the shipped preset configuration.
RUN_DEFAULTS = {
    "dt": 0.01,
    "n_particles": 50,
    "n_bayesian": 45,
    "n_rml": 150,
    "shrinkage": 0.93,
    "step_size_pe": 0.9,
    "step_size_rml": 0.05,
    "convergence_window": 200,
    "coverage": 0.99,
    "persistence": 5,
    "unit_costs": {"c1": 10.0, "c2": 10.0, "c3": 10.0},
}


@dataclass
class SyntheticFault:
    """Step or ramp loss on one health component of a synthetic model."""

    component: int | None = None   # None = healthy run
    magnitude: float = 0.0
    start_step: int = 0
    profile: str = "step"
    ramp_end_step: int | None = None


@dataclass
class RunConfig:
    model: str = "mixed"            # "scalar" | "mixed" | "gas_turbine"
    estimator: str = "dual"
    n_particles: int = 50
    duration: int = 300             # steps
    seed: int = 0
    scenario: str | SyntheticFault = "healthy"
    shrinkage: float = RUN_DEFAULTS["shrinkage"]
    step_size: float | None = None  # default depends on estimator
    predictor: str = "output"
    cov_mode: str = "initial"
    theta0_std: float = 0.05
    x0_std: float = 0.5
    persistence: int = RUN_DEFAULTS["persistence"]
    output_dir: str | None = None

    def __post_init__(self):
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        if self.n_particles < 2:
            raise ConfigError("n_particles must be >= 2")
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}")


def build_model(config: RunConfig) -> tuple[ModelSpec, np.ndarray]:
    """Model plus its nominal (equilibrium) initial state."""
    if config.model == "scalar":
        return synthetic.scalar_growth_model(), np.array([1.0 / (1.0 - 0.8)])
    if config.model == "mixed":
        return synthetic.mixed_fault_model(), synthetic.mixed_equilibrium()
    constants, x0 = gas_turbine.nominal_constants()
    return gas_turbine.engine_model(constants), x0


def theta_trajectory(config: RunConfig, model: ModelSpec) -> np.ndarray:
    """Per-step true health vector for the configured scenario."""
    T = config.duration
    n_th = model.n_theta
    if config.model == "gas_turbine":
        scen = gas_turbine.SCENARIOS[config.scenario] \
            if isinstance(config.scenario, str) else config.scenario
        dt = RUN_DEFAULTS["dt"]
        return np.vstack([gas_turbine.health_at(scen, t * dt)
                          for t in range(T)])
    fault = config.scenario
    if isinstance(fault, str):
        if fault != "healthy":
            raise ConfigError(f"unknown synthetic scenario {fault!r}")
        fault = SyntheticFault()
    thetas = np.ones((T, n_th))
    if config.model == "scalar":
        thetas *= 0.8    # scalar model's healthy dynamics coefficient
    if fault.component is not None:
        j = fault.component
        for t in range(fault.start_step, T):
            if fault.profile == "step" or fault.ramp_end_step is None:
                loss = fault.magnitude
            else:
                frac = min((t - fault.start_step)
                           / max(fault.ramp_end_step - fault.start_step, 1), 1.0)
                loss = fault.magnitude * frac
            thetas[t, j] = thetas[t, j] * (1.0 - loss)
    return thetas


def fuel_trajectory(config: RunConfig) -> np.ndarray | None:
    if config.model != "gas_turbine":
        return None
    scen = gas_turbine.SCENARIOS[config.scenario] \
        if isinstance(config.scenario, str) else config.scenario
    constants, _ = gas_turbine.nominal_constants()
    dt = RUN_DEFAULTS["dt"]
    return np.array([scen.fuel_at(t * dt, constants)
                     for t in range(config.duration)])


def simulate_truth(config: RunConfig, seed=None):
    """(model, states, outputs, thetas, u) for the configured scenario."""
    model, x0 = build_model(config)
    thetas = theta_trajectory(config, model)
    u = fuel_trajectory(config)
    states, ys = simulate(model, x0, thetas, config.duration,
                          seed if seed is not None else config.seed,
                          u_trajectory=u)
    return model, states, ys, thetas, u


def _theta0_for(config: RunConfig, model: ModelSpec) -> np.ndarray:
    if config.model == "scalar":
        return np.array([0.8])
    return np.ones(model.n_theta)


def run_estimator(model: ModelSpec, ys: np.ndarray, config: RunConfig,
                  seed, x0_mean: np.ndarray,
                  u_trajectory: np.ndarray | None = None) -> dict:
    """Run the configured estimator; returns dense history arrays."""
    rng = as_rng(seed)
    theta0 = _theta0_for(config, model)
    theta0_cov = (config.theta0_std ** 2) * np.eye(model.n_theta)
    x0_cov = (config.x0_std ** 2) * np.eye(model.n_x)
    T = ys.shape[0]
    t_start = time.perf_counter()

    if config.estimator == "dual":
        pc = ParamFilterConfig(
            n_particles=config.n_particles,
            shrinkage=config.shrinkage,
            step_size=config.step_size or RUN_DEFAULTS["step_size_pe"],
            evolution_cov=theta0_cov.copy(),
            predictor=config.predictor,
            cov_mode=config.cov_mode,
        )
        sc = StateFilterConfig(n_particles=config.n_particles)
        est = dual.init(model, x0_mean, x0_cov, theta0, theta0_cov,
                        sc, pc, rng)
        history = dual.run(est, ys, u_trajectory=u_trajectory)
        arr = dual.history_arrays(history)
        out = {"theta_hat": arr["theta_hat"], "x_hat": arr["x_hat"],
               "y_hat": arr["y_hat"], "ess_state": arr["ess_state"],
               "ess_param": arr["ess_param"],
               "particle_steps": est.params.particle_steps}
    elif config.estimator == "bayesian":
        bc = BayesianKSConfig(n_particles=config.n_particles,
                              shrinkage=config.shrinkage)
        st = baselines.init_bayesian_ks(model, x0_mean, x0_cov, theta0,
                                        theta0_cov, bc, rng)
        th, xh = np.empty((T, model.n_theta)), np.empty((T, model.n_x))
        for t in range(T):
            u = None if u_trajectory is None else u_trajectory[t]
            st = baselines.bayesian_ks_step(st, ys[t], model, bc, rng, u=u)
            th[t], xh[t] = st.theta_hat, st.x_hat
        out = {"theta_hat": th, "x_hat": xh}
    else:
        rc = RMLConfig(n_particles=config.n_particles,
                       step_size=config.step_size
                       or RUN_DEFAULTS["step_size_rml"])
        st = baselines.init_rml(model, x0_mean, x0_cov, theta0, rc, rng)
        th, xh = np.empty((T, model.n_theta)), np.empty((T, model.n_x))
        for t in range(T):
            u = None if u_trajectory is None else u_trajectory[t]
            st = baselines.rml_spsa_step(st, ys[t], model, rc, rng, u=u)
            th[t], xh[t] = st.theta_hat, st.filter.estimate
        out = {"theta_hat": th, "x_hat": xh, "skipped": st.skipped_steps}
    out["elapsed_s"] = time.perf_counter() - t_start
    out["steps"] = T
    return out


def fault_start_step(config: RunConfig) -> int | None:
    if isinstance(config.scenario, SyntheticFault):
        if config.scenario.component is None:
            return None
        return config.scenario.start_step
    return None


def run_scenario(config: RunConfig,
                 band: diagnosis.ThresholdBand | None = None) -> dict:
    """Single truth + estimation + diagnosis run; optionally writes files."""
    model, states, ys, thetas, u = simulate_truth(config)
    x0 = states[0]
    result = run_estimator(model, ys, config, config.seed, x0,
                           u_trajectory=u)
    theta_hat = result["theta_hat"]

    start = fault_start_step(config)
    window_end = start if start is not None else theta_hat.shape[0]
    window = min(RUN_DEFAULTS["convergence_window"], max(window_end, 2))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        baseline = diagnosis.fit_healthy_baseline(theta_hat[:window_end],
                                                  window=window)
    residuals = diagnosis.residual(baseline, theta_hat)
    decisions = None
    metrics = None
    if band is not None:
        decisions = diagnosis.decide(residuals, band, config.persistence)
    mae = {}
    tail = slice(-RUN_DEFAULTS["convergence_window"], None)
    for j in range(model.n_theta):
        mae[f"theta_{j+1}"] = diagnosis.mae_percent(
            theta_hat[:, j], thetas[:, j],
            nominal=float(np.mean(np.abs(thetas[:, j])) or 1.0), window=tail)
    report = {
        "config": {k: (asdict(v) if isinstance(v, SyntheticFault) else v)
                   for k, v in asdict(config).items()},
        "mae_percent": mae,
        "elapsed_s": result["elapsed_s"],
        "baseline_theta0": baseline.theta0.tolist(),
    }
    out = {"model": model, "states": states, "ys": ys, "thetas": thetas,
           "theta_hat": theta_hat, "x_hat": result["x_hat"],
           "residuals": residuals, "baseline": baseline,
           "decisions": decisions, "report": report,
           "particle_steps": result.get("particle_steps", 0)}
    if config.output_dir:
        _write_run_artifacts(Path(config.output_dir), out, band)
    return out


def _write_run_artifacts(outdir: Path, run: dict,
                         band: diagnosis.ThresholdBand | None):
    outdir.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(outdir / "trajectory.csv", run["states"],
                         run["ys"], run["thetas"])
    res = run["residuals"]
    with open(outdir / "residuals.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"r_{j+1}" for j in range(res.shape[1])])
        for t in range(res.shape[0]):
            writer.writerow([t + 1] + [repr(float(v)) for v in res[t]])
    report = dict(run["report"])
    if band is not None and run["decisions"] is not None:
        report["diagnosis"] = json.loads(diagnosis.report_to_json(
            run["baseline"], band, run["decisions"]))
    with open(outdir / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)


def monte_carlo(config: RunConfig, n_runs: int, base_seed: int,
                band: diagnosis.ThresholdBand | None = None) -> dict:
    """Independent seeded repetitions of run_scenario with aggregation.

    Runs execute sequentially; per-run seeds are spawned from base_seed so
    a parallel executor would produce identical numbers.
    """
    if n_runs < 1:
        raise ConfigError("n_runs must be >= 1")
    seeds = np.random.SeedSequence(base_seed).spawn(n_runs)
    runs, failures = [], []
    for i, ss in enumerate(seeds):
        cfg = RunConfig(**{**asdict(config),
                           "seed": int(ss.generate_state(1)[0] % (2 ** 31)),
                           "output_dir": (f"{config.output_dir}/run_{i:03d}"
                                          if config.output_dir else None)})
        if isinstance(config.scenario, SyntheticFault):
            cfg.scenario = config.scenario
        try:
            runs.append(run_scenario(cfg, band=band))
        except DualPFError as exc:
            failures.append({"run": i, "error": str(exc)})
    theta_err = [np.abs(r["theta_hat"] - r["thetas"]) for r in runs]
    agg = {
        "n_runs": n_runs,
        "n_failures": len(failures),
        "failures": failures,
        "median_final_abs_error": (
            np.median([e[-1] for e in theta_err], axis=0).tolist()
            if runs else None),
        "median_mae_percent": (
            {k: float(np.median([r["report"]["mae_percent"][k] for r in runs]))
             for k in runs[0]["report"]["mae_percent"]} if runs else None),
    }
    if config.output_dir:
        outdir = Path(config.output_dir)
        outdir.mkdir(parents=True, exist_ok=True)
        with open(outdir / "aggregate.json", "w") as fh:
            json.dump(agg, fh, indent=2, sort_keys=True)
    return {"runs": runs, "aggregate": agg}


def calibrate_band(config: RunConfig, n_runs: int, base_seed: int,
                   coverage: float | None = None,
                   target_fp: float | None = 0.04) -> diagnosis.ThresholdBand:
    """Healthy-condition Monte-Carlo threshold calibration.

    Starts from the per-step quantile envelope, then (when target_fp is
    given) widens the band about its midpoint until at most that fraction
    of the healthy calibration runs would raise any detection under the
    configured persistence rule — residuals are strongly autocorrelated,
    so the pooled envelope alone does not control run-level false alarms.
    """
    cfg = RunConfig(**{**asdict(config), "scenario": "healthy",
                       "output_dir": None})
    mc = monte_carlo(cfg, n_runs, base_seed)
    residual_runs = [r["residuals"] for r in mc["runs"]]
    band = diagnosis.calibrate_thresholds(
        residual_runs, coverage=coverage or RUN_DEFAULTS["coverage"],
        min_runs=min(n_runs, diagnosis.MIN_CALIBRATION_RUNS))
    if target_fp is None:
        return band
    mid = 0.5 * (band.lower + band.upper)
    half = 0.5 * (band.upper - band.lower)
    scale = 1.0
    for _ in range(60):
        cand = diagnosis.ThresholdBand(mid - scale * half, mid + scale * half)
        trips = sum(
            any(d.detected for d in diagnosis.decide(
                res, cand, config.persistence))
            for res in residual_runs)
        if trips / len(residual_runs) <= target_fp:
            return cand
        scale *= 1.1
    return cand


def campaign_design(n_per_category: int = 7,
                    severities=(0.06, 0.07, 0.08, 0.09, 0.10, 0.11, 0.12),
                    start_step: int = 120) -> list[SyntheticFault]:
    """Mixed-fault design: n healthy runs plus n per fault component."""
    design = [SyntheticFault() for _ in range(n_per_category)]
    for j in range(4):
        for i in range(n_per_category):
            design.append(SyntheticFault(component=j,
                                         magnitude=severities[i % len(severities)],
                                         start_step=start_step))
    return design


def confusion_campaign(base_config: RunConfig, design: list[SyntheticFault],
                       band: diagnosis.ThresholdBand, base_seed: int) -> dict:
    """Run the design and classify each run into the 5-way confusion matrix."""
    matrix = ConfusionMatrix()
    seeds = np.random.SeedSequence(base_seed).spawn(len(design))
    labels = []
    particle_steps = 0
    for fault, ss in zip(design, seeds):
        cfg = RunConfig(**{**asdict(base_config), "output_dir": None,
                           "seed": int(ss.generate_state(1)[0] % (2 ** 31))})
        cfg.scenario = fault
        run = run_scenario(cfg, band=band)
        particle_steps += run.get("particle_steps", 0)
        actual = ("no_fault" if fault.component is None
                  else CATEGORIES[fault.component])
        decided = diagnosis.classify(run["decisions"], band=band)
        matrix.add(actual, decided)
        labels.append((actual, decided))
    return {"matrix": matrix, "labels": labels,
            "metrics": diagnosis.confusion_metrics(matrix),
            "particle_steps": particle_steps}


def bootstrap_comparison(labels_a: list, labels_b: list, statistic,
                         n_boot: int = 2000, seed: int = 0) -> float:
    """Paired bootstrap: fraction of resamples with stat(a) >= stat(b)."""
    if len(labels_a) != len(labels_b):
        raise ConfigError("paired bootstrap needs equal-length campaigns")
    rng = as_rng(seed)
    n = len(labels_a)
    wins = 0
    for _ in range(n_boot):
        idx = rng.integers(0, n, size=n)
        if statistic([labels_a[i] for i in idx]) >= \
                statistic([labels_b[i] for i in idx]):
            wins += 1
    return wins / n_boot


def accuracy_stat(labels: list) -> float:
    if not labels:
        return 0.0
    return sum(a == d for a, d in labels) / len(labels)


def fp_stat(labels: list) -> float:
    healthy = [(a, d) for a, d in labels if a == "no_fault"]
    if not healthy:
        return 0.0
    return sum(d != "no_fault" for _, d in healthy) / len(healthy)


def report_tables(phase_mae: dict[str, dict[str, float]],
                  outdir: str | None = None) -> str:
    """MAE%-by-phase table (rows = signals, columns = fault phases).

    phase_mae maps signal name -> {phase name -> MAE%}; the canonical
    phase order is No Fault then 1st..4th Fault.
    """
    phases = ["No Fault", "1st Fault", "2nd Fault", "3rd Fault", "4th Fault"]
    lines = ["signal," + ",".join(phases)]
    for signal, row in phase_mae.items():
        lines.append(signal + "," + ",".join(
            f"{row[p]:.4f}" if p in row and row[p] is not None else ""
            for p in phases))
    text = "\n".join(lines) + "\n"
    if outdir:
        tables = Path(outdir) / "tables"
        tables.mkdir(parents=True, exist_ok=True)
        (tables / "mae_by_phase.csv").write_text(text)
    return text
