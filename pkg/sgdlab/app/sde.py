# sgdlab/app/sde.py
"""Weak Euler-Maruyama for the modified SDE

    dX = -grad[f + eta/4 |grad f|^2](X) dt + sqrt(eta Sigma(X)) dW

and the closed-form Ornstein-Uhlenbeck benchmark it is checked against.
"""
import logging
from typing import TYPE_CHECKING, Callable, NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd

from .errors import CovarianceError
from .quadrature import gaussian_expectation
from .rng import CounterRng
from .schemas import EstimateWithError, SdeConfig
from .workers import map_chunks, moments_of, reduce_moments, std_error

if TYPE_CHECKING:
    from .models import StochasticGradientFamily, TestFunction

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-10


class EmResult(NamedTuple):
    final: np.ndarray
    clamp_events: int
    path: Optional[np.ndarray] = None


def modified_drift(family: "StochasticGradientFamily", eta: float) -> Callable[[np.ndarray], np.ndarray]:
    """-grad f - (eta/4) grad|grad f|^2, with grad|grad f|^2 = 2 hess f grad f."""
    objective = family.objective

    def drift(x):
        g = objective.grad(x)
        return -g - 0.5 * eta * np.einsum("...ij,...j->...i", objective.hess(x), g)

    return drift


def linear_drift(rate: float) -> Callable[[np.ndarray], np.ndarray]:
    return lambda x: -rate * x


def sqrt_psd(sigma: np.ndarray) -> Tuple[np.ndarray, int]:
    """Symmetric square root by eigendecomposition; negative eigenvalues are clamped to 0."""
    sigma = np.asarray(sigma, dtype=float)
    if not np.all(np.isfinite(sigma)):
        raise CovarianceError("covariance not PSD: non-finite entries")
    scale = max(1.0, float(np.max(np.abs(sigma))))
    if np.max(np.abs(sigma - np.swapaxes(sigma, -1, -2))) > SYMMETRY_TOL * scale:
        raise CovarianceError("covariance not PSD: matrix is not symmetric")
    try:
        lam, vec = np.linalg.eigh(sigma)
    except np.linalg.LinAlgError as e:
        raise CovarianceError(f"covariance not PSD: {e}")
    clamped = int(np.count_nonzero(lam < 0))
    root = np.einsum("...ik,...k,...jk->...ij", vec, np.sqrt(np.maximum(lam, 0.0)), vec)
    return root, clamped


def em_batch(
    cfg: SdeConfig,
    family: "StochasticGradientFamily",
    trajectories,
    drift: Optional[Callable] = None,
    record_path: bool = False,
) -> EmResult:
    d = family.dim
    rng = CounterRng(cfg.seed, trajectories)
    drift = drift or modified_drift(family, cfg.eta)
    x = np.tile(cfg.x0_array(d), (len(rng), 1))
    noise_scale = np.sqrt(cfg.dt * cfg.eta)
    clamps = 0
    path = [x.copy()] if record_path else None
    for k in range(cfg.n_steps):
        x_next = x + cfg.dt * drift(x)
        if noise_scale > 0:
            root, clamped = sqrt_psd(family.sigma(x))
            clamps += clamped
            zeta = np.stack([rng.normal(k, lane) for lane in range(d)], axis=-1)
            x_next = x_next + noise_scale * np.einsum("...ij,...j->...i", root, zeta)
        x = x_next
        if record_path:
            path.append(x.copy())
    return EmResult(final=x, clamp_events=clamps, path=None if path is None else np.stack(path))


def em_run(
    cfg: SdeConfig,
    family: "StochasticGradientFamily",
    trajectory: int = 0,
    drift: Optional[Callable] = None,
) -> np.ndarray:
    """Final point of one Euler-Maruyama path."""
    result = em_batch(cfg, family, [trajectory], drift=drift)
    if result.clamp_events:
        logger.warning(f"Sigma clamp: {result.clamp_events} negative eigenvalues clamped on path {trajectory}")
    return result.final[0]


def em_estimate(
    cfg: SdeConfig,
    family: "StochasticGradientFamily",
    phi: "TestFunction",
    n_samples: int,
    drift: Optional[Callable] = None,
    threads: Optional[int] = None,
    chunk_size: Optional[int] = None,
) -> Tuple[EstimateWithError, int]:
    """Monte Carlo E[phi(X_T)] over n_samples paths, plus the Sigma clamp count."""
    def chunk(start: int, stop: int):
        result = em_batch(cfg, family, np.arange(start, stop), drift=drift)
        return moments_of(phi.phi(result.final)), result.clamp_events

    parts = map_chunks(chunk, n_samples, threads=threads, chunk_size=chunk_size)
    total = reduce_moments([m for m, _ in parts])
    clamps = sum(c for _, c in parts)
    if clamps:
        logger.warning(f"Sigma clamp: {clamps} negative eigenvalues clamped")
    estimate = EstimateWithError(
        value=float(total.mean),
        std_error=float(std_error(total)),
        n_samples=total.count,
    )
    return estimate, clamps


def ou_moments(x, t, eta: float, rate: Optional[float] = None):
    """Mean and variance of the Gaussian law at time t started from x.

    rate defaults to 1 + 2 eta; the noise variance per unit time is eta.
    """
    rate = 1.0 + 2.0 * eta if rate is None else rate
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    mean = x * np.exp(-rate * t)
    variance = eta / (2.0 * rate) * -np.expm1(-2.0 * rate * t)
    return mean, variance


def ou_exact(phi: "TestFunction", x, t: float, eta: float, rate: Optional[float] = None):
    """E[phi(X_t) | X_0 = x] by 64-node Gauss-Hermite; t = 0 returns phi(x) exactly."""
    x = np.asarray(x, dtype=float)
    if t == 0:
        value = phi.phi(x[..., None])
    else:
        mean, variance = ou_moments(x, t, eta, rate)
        value = gaussian_expectation(lambda w: phi.phi(w[..., None]), mean, variance)
    return float(value) if np.ndim(value) == 0 else value


def em_paths_frame(path: np.ndarray, dt: float, path_ids) -> pd.DataFrame:
    """Long-format table (path_id, t, x_0, ..., x_{d-1})."""
    n_plus_1, n_paths, dim = path.shape
    frame = pd.DataFrame(
        {
            "path_id": np.tile(np.asarray(path_ids), n_plus_1),
            "t": np.repeat(np.arange(n_plus_1) * dt, n_paths),
        }
    )
    for i in range(dim):
        frame[f"x_{i}"] = path[:, :, i].ravel()
    return frame
