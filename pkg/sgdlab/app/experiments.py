# sgdlab/app/experiments.py
"""Experiment files and their runners.

An experiment file is a flat INI document with one [run] section; its keys
are validated by the pydantic models in schemas.py. Every runner returns a
result table, an optional figure, a JSON-able summary and the list of
embedded checks.
"""
import configparser
import logging
import math
from pathlib import Path
from typing import Callable, Dict, List, NamedTuple, Optional, Union

import numpy as np
import pandas as pd
import plotly.graph_objects as go
from pydantic import TypeAdapter, ValidationError

from . import analysis, export
from .errors import AssertionFailure, ConfigError
from .expansion import evaluate_grid
from .models import get_family, get_observable, try_certify
from .schemas import (
    ChainConfig,
    DescentTimeConfig,
    ExpansionGridConfig,
    ExperimentConfig,
    OuCheckConfig,
    StationaryConfig,
    UniformityConfig,
    W2DecayConfig,
    WeakErrorConfig,
)
from .sde import em_estimate, linear_drift, ou_moments
from .sgd import mc_estimate, stationary_sample

logger = logging.getLogger(__name__)

SECTION = "run"
_adapter = TypeAdapter(ExperimentConfig)


class Check(NamedTuple):
    name: str
    passed: bool
    detail: str


class ExperimentResult(NamedTuple):
    frame: pd.DataFrame
    figure: Optional[go.Figure]
    summary: dict
    checks: List[Check]


def _describe(error: dict) -> str:
    field = ".".join(str(p) for p in error["loc"][1:] or error["loc"])
    if error["type"] == "missing":
        return f"missing field: {field}"
    if error["type"] == "extra_forbidden":
        return f"unknown field: {field}"
    if error["type"] == "union_tag_invalid":
        return f"unknown experiment: {error['input'].get('experiment')}"
    return f"{field}: {error['msg'].removeprefix('Value error, ')}"


def parse_config(text: str):
    """Parse INI text into a validated experiment config."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}")
    extra = [s for s in parser.sections() if s != SECTION]
    if extra:
        raise ConfigError(f"unknown section: {extra[0]}")
    data = dict(parser[SECTION]) if parser.has_section(SECTION) else {}
    if "experiment" not in data:
        raise ConfigError("missing field: experiment")
    try:
        cfg = _adapter.validate_python(data)
    except ValidationError as e:
        raise ConfigError("; ".join(_describe(err) for err in e.errors()))
    family = get_family(cfg.family_id)
    get_observable(cfg.phi_id, family)
    return cfg


def load_config(path: Union[str, Path]):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}")
    return parse_config(text)


def _ini_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ", ".join(_ini_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(cfg) -> str:
    """Canonical INI text that parses back to an equal config."""
    data = cfg.model_dump(mode="json", exclude_none=True)
    lines = [f"[{SECTION}]", f"experiment = {data.pop('experiment')}"]
    lines += [f"{key} = {_ini_value(value)}" for key, value in data.items()]
    return "\n".join(lines) + "\n"


def _check(name: str, passed: bool, detail: str) -> Check:
    if not passed:
        logger.warning(f"check failed: {name} ({detail})")
    return Check(name, bool(passed), detail)


# --- runners -------------------------------------------------------------------


def run_weak_error(cfg: WeakErrorConfig, threads: Optional[int]) -> ExperimentResult:
    family = get_family(cfg.family_id)
    phi = get_observable(cfg.phi_id, family)
    certificate = try_certify(family, cfg.radius)
    curve = analysis.weak_error_experiment(
        family, phi, cfg.x, cfg.horizon, cfg.eta_grid, cfg.n_samples, seed=cfg.seed,
        antithetic=cfg.antithetic, method=cfg.method, certificate=certificate, threads=threads,
    )
    frame = pd.DataFrame({
        "eta": curve.eta_grid,
        "n": curve.n_steps,
        "u_mc": curve.u_mc,
        "std_error": curve.std_errors,
        "u_trunc": curve.u_trunc,
        "error": curve.errors,
        "noise_floor": curve.noise_floor,
        "in_certificate": curve.in_certificate,
    })
    checks = [_check(
        "slope",
        cfg.slope_min <= curve.slope <= cfg.slope_max,
        f"slope {curve.slope:.4f} expected in [{cfg.slope_min}, {cfg.slope_max}]",
    )]
    summary = {
        "slope": curve.slope,
        "slope_ci": list(curve.slope_ci),
        "slope_certified_only": curve.slope_certified_only,
        "eta0": None if certificate is None else certificate.eta0,
    }
    return ExperimentResult(frame, export.weak_error_figure(curve), summary, checks)


def run_uniformity(cfg: UniformityConfig, threads: Optional[int]) -> ExperimentResult:
    family = get_family(cfg.family_id)
    phi = get_observable(cfg.phi_id, family)
    certificate = try_certify(family, cfg.radius)
    if certificate is not None and not certificate.admits(cfg.eta):
        logger.warning(f"outside certificate: eta={cfg.eta} exceeds eta0={certificate.eta0:.6g}")
    report = analysis.uniformity_check(
        family, phi, cfg.x, cfg.eta, cfg.n_list, cfg.n_samples, seed=cfg.seed,
        antithetic=cfg.antithetic, growth_factor=cfg.growth_factor, certificate=certificate, threads=threads,
        reference_time=cfg.reference_time,
    )
    frame = pd.DataFrame({
        "n": report.n_list,
        "t": [n * cfg.eta for n in report.n_list],
        "error": report.errors,
        "std_error": report.std_errors,
        "noise_floor": report.noise_floor,
    })
    checks = [_check(
        "no growth in n",
        report.growth_ok,
        f"error at n={report.n_list[-1]} is {report.errors[-1]:.3g}, median {report.median_error:.3g}",
    ), _check(
        "bounded by reference",
        report.bounded_by_reference,
        f"max error {report.max_error:.3g}, error at n={report.reference_n} is {report.reference_error:.3g}",
    )]
    summary = {
        "max_error": report.max_error,
        "median_error": report.median_error,
        "reference_n": report.reference_n,
        "reference_error": report.reference_error,
    }
    return ExperimentResult(frame, export.uniformity_figure(report), summary, checks)


def run_stationary(cfg: StationaryConfig, threads: Optional[int]) -> ExperimentResult:
    family = get_family(cfg.family_id)
    samples = stationary_sample(family, cfg.eta, cfg.burn_in, cfg.n_samples, cfg.seed, x0=cfg.x0, threads=threads)
    values = samples[:, 0]
    density, edges = np.histogram(values, bins=cfg.bins, density=True)
    frame = pd.DataFrame({"bin_left": edges[:-1], "bin_right": edges[1:], "density": density})
    mean = float(values.mean())
    std_error = float(values.std(ddof=1) / math.sqrt(len(values)))
    summary = {"mean": mean, "std_error": std_error}
    checks = []
    if cfg.reference is not None:
        ks = analysis.ks_distance(values, cfg.reference)
        summary["ks"] = ks
        checks.append(_check("ks distance", ks <= cfg.ks_max, f"KS {ks:.4g} against {cfg.reference}, max {cfg.ks_max}"))
    figure = export.histogram_figure(values, cfg.bins, f"X after {cfg.burn_in} steps at eta = {cfg.eta:g}")
    return ExperimentResult(frame, figure, summary, checks)


def run_w2_decay(cfg: W2DecayConfig, threads: Optional[int]) -> ExperimentResult:
    family = get_family(cfg.family_id)
    curve = analysis.w2_decay_experiment(
        family, cfg.eta, cfg.x0_a, cfg.x0_b, cfg.n_grid, cfg.n_samples, seed=cfg.seed, radius=cfg.radius,
        threads=threads,
    )
    frame = pd.DataFrame({"n": curve.n_grid, "w2": curve.w2_values, "reference": curve.reference})
    checks = []
    if curve.fitted_rate is not None:
        bound = math.log(curve.rho_ref) + cfg.rate_slack
        checks.append(_check(
            "contraction rate", curve.fitted_rate <= bound, f"fitted {curve.fitted_rate:.4g} vs bound {bound:.4g}"
        ))
    summary = {"rho_ref": curve.rho_ref, "fitted_rate": curve.fitted_rate}
    return ExperimentResult(frame, export.decay_figure(curve), summary, checks)


def run_descent_time(cfg: DescentTimeConfig, threads: Optional[int]) -> ExperimentResult:
    family = get_family(cfg.family_id)
    report = analysis.descent_time_experiment(
        family, cfg.eta_grid, cfg.n_samples, x0=cfg.x0, seed=cfg.seed, max_ratio_spread=cfg.max_ratio_spread,
        threads=threads,
    )
    frame = pd.DataFrame([row.model_dump() for row in report.rows])
    checks = [_check(
        "gap / eta stable", report.stable, f"ratio spread {report.ratio_spread:.3g}, max {cfg.max_ratio_spread}"
    )]
    return ExperimentResult(frame, None, {"ratio_spread": report.ratio_spread}, checks)


def run_expansion_grid(cfg: ExpansionGridConfig, threads: Optional[int]) -> ExperimentResult:
    family = get_family(cfg.family_id)
    phi = get_observable(cfg.phi_id, family)
    xs = np.linspace(cfg.x_min, cfg.x_max, cfg.nx)
    ts = np.linspace(cfg.t_min, cfg.t_max, cfg.nt)
    frame = evaluate_grid(xs, ts, cfg.eta, phi, family, cfg.method)
    if cfg.mc_samples > 0:
        values, errors = [], []
        for x, t in zip(frame["x"], frame["t"]):
            chain = ChainConfig(eta=cfg.eta, n_steps=int(round(t / cfg.eta)), x0=float(x), seed=cfg.seed)
            est = mc_estimate(chain, family, phi, cfg.mc_samples, threads=threads)
            values.append(est.value)
            errors.append(est.std_error)
        frame["u_mc"] = values
        frame["mc_std_error"] = errors
    surface = frame.pivot(index="t", columns="x", values="u_trunc")
    figure = go.Figure(go.Heatmap(x=surface.columns, y=surface.index, z=surface.values, colorbar=dict(title="u^1")))
    figure.update_layout(title=f"u0 + eta u1 at eta = {cfg.eta:g}", xaxis_title="x", yaxis_title="t")
    return ExperimentResult(frame, figure, {"points": len(frame)}, [])


def run_ou_check(cfg: OuCheckConfig, threads: Optional[int]) -> ExperimentResult:
    """Euler-Maruyama against the closed-form Gaussian law, for both drift conventions."""
    family = get_family(cfg.family_id)
    sde_cfg = cfg.sde_config()
    t = sde_cfg.n_steps * sde_cfg.dt
    conventions = {
        "gradient correction": (linear_drift(1.0 + 2.0 * cfg.eta), 1.0 + 2.0 * cfg.eta),
        "modified equation": (None, 1.0 + 0.5 * cfg.eta),
    }
    rows, checks = [], []
    for label, (drift, rate) in conventions.items():
        mean, variance = ou_moments(cfg.x0, t, cfg.eta, rate)
        exact = {"identity": float(mean), "square": float(variance + mean**2)}
        for phi_id, target in exact.items():
            est, clamps = em_estimate(
                sde_cfg, family, get_observable(phi_id), cfg.n_samples, drift=drift, threads=threads
            )
            within = est.within(target, slack=cfg.bias_constant * sde_cfg.dt)
            rows.append({
                "drift": label, "rate": rate, "observable": phi_id, "em_value": est.value,
                "std_error": est.std_error, "exact": target, "within": within, "clamp_events": clamps,
            })
            checks.append(_check(
                f"{label} {phi_id}", within, f"EM {est.value:.6g} +- {est.std_error:.2g} vs exact {target:.6g}"
            ))
    return ExperimentResult(pd.DataFrame(rows), None, {"t": t, "dt": sde_cfg.dt}, checks)


RUNNERS: Dict[str, Callable] = {
    "weak-error": run_weak_error,
    "uniformity": run_uniformity,
    "stationary": run_stationary,
    "w2-decay": run_w2_decay,
    "descent-time": run_descent_time,
    "expansion-grid": run_expansion_grid,
    "ou-check": run_ou_check,
}


def run_experiment(cfg, threads: Optional[int] = None) -> ExperimentResult:
    """Run, write `output`.csv (and `output`.html for figures), then enforce the checks."""
    logger.info(f"Running {cfg.experiment} on {cfg.family_id} (phi={cfg.phi_id}, seed={cfg.seed})")
    threads = cfg.threads if threads is None else threads
    result = RUNNERS[cfg.experiment](cfg, threads)
    export.write_results(result.frame, cfg.output, cfg.model_dump(mode="json"))
    if result.figure is not None:
        export.write_figure(result.figure, cfg.output)
    failed = [c for c in result.checks if not c.passed]
    if failed:
        raise AssertionFailure("; ".join(f"{c.name}: {c.detail}" for c in failed))
    return result
