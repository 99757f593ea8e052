# sgdlab/app/analysis.py
import logging
import math
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .expansion import truncated_series
from .models import StochasticGradientFamily, TestFunction, local_constants, objective_observable
from .schemas import (
    ChainConfig,
    ConvexityCertificate,
    DescentTimeReport,
    DescentTimeRow,
    EstimateWithError,
    ExpansionMethod,
    UniformityReport,
    W2DecayCurve,
    WeakErrorCurve,
)
from .sgd import mc_estimate, run_batch
from .workers import map_chunks

logger = logging.getLogger(__name__)

NOISE_FLOOR_SIGMAS = 4.0
CI_LEVEL = 0.95


class SlopeFit(NamedTuple):
    slope: float
    intercept: float
    ci: Tuple[float, float]


def fit_slope(eta_grid: Sequence[float], errors: Sequence[float], mask: Optional[Sequence[bool]] = None) -> SlopeFit:
    """OLS of log2(error) on log2(eta) over the masked points, with a t-based 95% CI."""
    eta = np.asarray(eta_grid, dtype=float)
    err = np.asarray(errors, dtype=float)
    keep = np.ones(len(eta), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    keep &= err > 0
    if keep.sum() < 2:
        logger.warning(f"slope fit needs two usable points, got {int(keep.sum())}")
        return SlopeFit(math.nan, math.nan, (math.nan, math.nan))
    fit = stats.linregress(np.log2(eta[keep]), np.log2(err[keep]))
    dof = int(keep.sum()) - 2
    if dof == 0:
        return SlopeFit(float(fit.slope), float(fit.intercept), (-math.inf, math.inf))
    half = stats.t.ppf(0.5 + CI_LEVEL / 2, dof) * fit.stderr
    return SlopeFit(float(fit.slope), float(fit.intercept), (float(fit.slope - half), float(fit.slope + half)))


def build_weak_error_curve(
    eta_grid: Sequence[float],
    horizon: float,
    n_steps: Sequence[int],
    estimates: Sequence[EstimateWithError],
    u_trunc: Sequence[float],
    in_certificate: Sequence[bool],
) -> WeakErrorCurve:
    """Errors, noise-floor flags and both slope fits from per-eta results."""
    u_mc = [e.value for e in estimates]
    std = [e.std_error for e in estimates]
    errors = [abs(m - u) for m, u in zip(u_mc, u_trunc)]
    floor = [err < NOISE_FLOOR_SIGMAS * s for err, s in zip(errors, std)]
    for eta, flagged in zip(eta_grid, floor):
        if flagged:
            logger.warning(f"noise floor: eta={eta} error below {NOISE_FLOOR_SIGMAS:g} std errors, excluded from fit")
    usable = [not f for f in floor]
    fit = fit_slope(eta_grid, errors, usable)
    certified = [u and c for u, c in zip(usable, in_certificate)]
    slope_certified = None
    if certified != usable and sum(certified) >= 2:
        slope_certified = fit_slope(eta_grid, errors, certified).slope
    return WeakErrorCurve(
        eta_grid=list(eta_grid),
        horizon=horizon,
        n_steps=list(n_steps),
        errors=errors,
        std_errors=std,
        u_mc=u_mc,
        u_trunc=list(u_trunc),
        noise_floor=floor,
        in_certificate=list(in_certificate),
        slope=fit.slope,
        intercept=fit.intercept,
        slope_ci=fit.ci,
        slope_certified_only=slope_certified,
    )


def _certificate_flags(eta_grid, certificate: Optional[ConvexityCertificate]) -> List[bool]:
    if certificate is None:
        logger.warning("no certificate attached: step sizes are not screened against eta0")
        return [True] * len(eta_grid)
    flags = [certificate.admits(eta) for eta in eta_grid]
    for eta, ok in zip(eta_grid, flags):
        if not ok:
            logger.warning(f"outside certificate: eta={eta} exceeds eta0={certificate.eta0:.6g}")
    return flags


def weak_error_experiment(
    family: StochasticGradientFamily,
    phi: TestFunction,
    x: float,
    horizon: float,
    eta_grid: Sequence[float],
    n_samples: int,
    seed: int = 0,
    antithetic: bool = True,
    method=ExpansionMethod.NUMERIC,
    certificate: Optional[ConvexityCertificate] = None,
    threads: Optional[int] = None,
) -> WeakErrorCurve:
    """|E_x phi(X_n) - u^1(x, n eta)| across eta at n = round(T / eta).

    Every eta reuses the same seed, so trajectory i sees the same noise
    stream at every step size.
    """
    n_steps, estimates, u_trunc = [], [], []
    series_cache: Dict[float, Tuple[float, float]] = {}
    for eta in eta_grid:
        n = int(round(horizon / eta))
        t = n * eta
        logger.info(f"weak error: {family.family_id} eta={eta} n={n} samples={n_samples}")
        cfg = ChainConfig(eta=eta, n_steps=n, x0=x, seed=seed)
        estimates.append(
            mc_estimate(cfg, family, phi, n_samples, antithetic=antithetic, certificate=certificate, threads=threads)
        )
        if t not in series_cache:
            evaluation = truncated_series(x, t, 0.0, phi, family, method)
            series_cache[t] = (evaluation.u0, evaluation.u1)
        u0, u1 = series_cache[t]
        u_trunc.append(u0 + eta * u1)
        n_steps.append(n)
    return build_weak_error_curve(
        eta_grid, horizon, n_steps, estimates, u_trunc, _certificate_flags(eta_grid, certificate)
    )


def uniformity_check(
    family: StochasticGradientFamily,
    phi: TestFunction,
    x: float,
    eta: float,
    n_list: Sequence[int],
    n_samples: int,
    seed: int = 0,
    antithetic: bool = True,
    growth_factor: float = 2.0,
    method=ExpansionMethod.NUMERIC,
    certificate: Optional[ConvexityCertificate] = None,
    threads: Optional[int] = None,
    reference_time: float = 5.0,
) -> UniformityReport:
    """Per-n errors |U^n - u^1(x, n eta)| with two no-growth checks.

    `growth_ok` compares the error at the largest n with the median of the
    errors above the noise floor. `bounded_by_reference` compares the largest
    error with the error at n eta = reference_time, which is estimated on its
    own when that n is not in n_list. A reference inside the noise floor is
    raised to the floor.
    """

    def measure(n: int) -> Tuple[float, float]:
        cfg = ChainConfig(eta=eta, n_steps=n, x0=x, seed=seed)
        est = mc_estimate(cfg, family, phi, n_samples, antithetic=antithetic, certificate=certificate, threads=threads)
        u_trunc = truncated_series(x, n * eta, eta, phi, family, method).u_trunc
        return abs(est.value - u_trunc), est.std_error

    errors, std, floor = [], [], []
    for n in n_list:
        err, se = measure(n)
        errors.append(err)
        std.append(se)
        floor.append(bool(err < NOISE_FLOOR_SIGMAS * se))
        logger.info(f"uniformity: n={n} error={err:.3g} std_error={se:.3g}")
    kept = [e for e, f in zip(errors, floor) if not f]
    if floor[-1] or not kept:
        growth_ok = True
    else:
        growth_ok = errors[-1] <= growth_factor * float(np.median(kept))
    reference_n = int(round(reference_time / eta))
    if reference_n in n_list:
        i = list(n_list).index(reference_n)
        reference_error, reference_se = errors[i], std[i]
    else:
        reference_error, reference_se = measure(reference_n)
    reference = max(reference_error, NOISE_FLOOR_SIGMAS * reference_se)
    return UniformityReport(
        eta=eta,
        n_list=list(n_list),
        errors=errors,
        std_errors=std,
        noise_floor=floor,
        max_error=max(errors),
        median_error=float(np.median(kept)) if kept else 0.0,
        growth_ok=growth_ok,
        reference_n=reference_n,
        reference_error=reference_error,
        bounded_by_reference=max(errors) <= growth_factor * reference,
    )


def systematic_resample(samples: np.ndarray, size: int) -> np.ndarray:
    """Deterministic quantile resampling of sorted samples to `size` points."""
    ordered = np.sort(np.asarray(samples, dtype=float).ravel())
    idx = np.floor((np.arange(size) + 0.5) * len(ordered) / size).astype(np.int64)
    return ordered[np.minimum(idx, len(ordered) - 1)]


def w2_empirical_1d(samples_a, samples_b) -> float:
    """W2 between two 1D empirical measures via the sorted coupling."""
    a = np.sort(np.asarray(samples_a, dtype=float).ravel())
    b = np.sort(np.asarray(samples_b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("empirical measures must be nonempty")
    if a.size != b.size:
        size = min(a.size, b.size)
        a, b = systematic_resample(a, size), systematic_resample(b, size)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def contraction_rate(gamma: float, L: float, eta: float) -> float:
    """(1 - 2 gamma eta + eta^2 L^2)^{1/2}, the coupled-chain contraction per step."""
    return math.sqrt(max(1.0 - 2.0 * gamma * eta + eta**2 * L**2, 0.0))


def _laws_at(family, eta: float, x0: float, n_grid: Sequence[int], n_samples: int, seed: int, threads) -> np.ndarray:
    if any(n < 0 for n in n_grid):
        raise ValueError(f"step counts must be non-negative, got {list(n_grid)}")
    cfg = ChainConfig(eta=eta, n_steps=max(n_grid), x0=x0, seed=seed)
    grid = list(n_grid)

    def chunk(start: int, stop: int) -> np.ndarray:
        return run_batch(cfg, family, np.arange(start, stop), record_path=True).path[grid, :, 0]

    return np.concatenate(map_chunks(chunk, n_samples, threads=threads), axis=1)


def w2_decay_experiment(
    family: StochasticGradientFamily,
    eta: float,
    x0_a: float,
    x0_b: float,
    n_grid: Sequence[int],
    n_samples: int,
    seed: int = 0,
    radius: Optional[float] = None,
    threads: Optional[int] = None,
) -> W2DecayCurve:
    """Empirical W2 between the time-n laws of chains started at x0_a and x0_b."""
    if family.dim != 1:
        raise ValueError("w2 decay is measured for one-dimensional families")
    constants = local_constants(family, radius or family.radius)
    rho = contraction_rate(constants.gamma, constants.L, eta)
    laws_a = _laws_at(family, eta, x0_a, n_grid, n_samples, seed, threads)
    laws_b = _laws_at(family, eta, x0_b, n_grid, n_samples, seed, threads)
    w2 = [w2_empirical_1d(a, b) for a, b in zip(laws_a, laws_b)]
    distance = abs(x0_a - x0_b)
    reference = [rho**n * distance for n in n_grid]
    usable = [(n, v) for n, v in zip(n_grid, w2) if v > 0]
    fitted = None
    if len(usable) >= 2:
        ns, vs = zip(*usable)
        fitted = float(stats.linregress(ns, np.log(vs)).slope)
    logger.info(f"w2 decay: rho_ref={rho:.6g} fitted log-rate={fitted}")
    return W2DecayCurve(
        eta=eta,
        n_grid=list(n_grid),
        w2_values=w2,
        rho_ref=rho,
        initial_distance=distance,
        reference=reference,
        fitted_rate=fitted,
    )


def descent_time(eta: float) -> int:
    if not 0 < eta < 1:
        raise ValueError(f"descent time needs 0 < eta < 1, got {eta}")
    return math.ceil(math.log(1.0 / eta) / eta)


def descent_time_experiment(
    family: StochasticGradientFamily,
    eta_grid: Sequence[float],
    n_samples: int,
    x0: float = 1.0,
    seed: int = 0,
    max_ratio_spread: float = 3.0,
    plateau_factor: int = 4,
    threads: Optional[int] = None,
) -> DescentTimeReport:
    """E f(X_{n*}) - f(x*) at n* = ceil(log(1/eta) / eta), with the gap at plateau_factor * n*."""
    phi = objective_observable(family.objective)
    f_star = float(family.objective.f(family.objective.x_star))
    rows = []
    for eta in eta_grid:
        n_star = descent_time(eta)
        at_n_star = mc_estimate(
            ChainConfig(eta=eta, n_steps=n_star, x0=x0, seed=seed), family, phi, n_samples, threads=threads
        )
        plateau = mc_estimate(
            ChainConfig(eta=eta, n_steps=plateau_factor * n_star, x0=x0, seed=seed), family, phi, n_samples,
            threads=threads,
        )
        gap = at_n_star.value - f_star
        rows.append(
            DescentTimeRow(
                eta=eta,
                n_star=n_star,
                gap=gap,
                gap_std_error=at_n_star.std_error,
                ratio=gap / eta,
                plateau_gap=plateau.value - f_star,
            )
        )
        logger.info(f"descent time: eta={eta} n*={n_star} gap={gap:.6g}")
    ratios = [r.ratio for r in rows]
    spread = max(ratios) / min(ratios) if min(ratios) > 0 else math.inf
    return DescentTimeReport(rows=rows, ratio_spread=spread, stable=spread <= max_ratio_spread)


def ks_distance(samples, reference: str = "uniform01") -> float:
    """Kolmogorov-Smirnov statistic of 1D samples against a named reference law."""
    if reference != "uniform01":
        raise ValueError(f"unknown reference law: {reference}")
    return float(stats.kstest(np.asarray(samples, dtype=float).ravel(), stats.uniform.cdf).statistic)
