# sgdlab/app/sgd.py
"""The SGD Markov chain X_{n+1} = X_n - eta * grad f(X_n; xi_n).

Trajectory i always draws its noise from CounterRng(seed, i), so batches,
chunks and thread counts never change what a trajectory sees.
"""
import logging
from typing import Iterator, List, NamedTuple, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, model_validator

from .errors import SupportError
from .models import StochasticGradientFamily, TestFunction, as_points
from .rng import INITIAL_STEP, CounterRng
from .schemas import ChainConfig, ConvexityCertificate, EstimateWithError
from .workers import Moments, map_chunks, moments_of, reduce_moments, std_error

logger = logging.getLogger(__name__)

MAX_ENUMERATED_ATOMS = 2**24


class InitialMeasure(BaseModel):
    """Discrete initial law mu0 = sum_k w_k delta_{p_k}."""

    model_config = ConfigDict(frozen=True)

    points: List[Union[float, List[float]]]
    weights: Optional[List[float]] = None

    @model_validator(mode="after")
    def check_weights(self):
        if not self.points:
            raise ValueError("initial measure needs at least one point")
        if self.weights is not None:
            if len(self.weights) != len(self.points):
                raise ValueError("one weight per point required")
            if any(w < 0 for w in self.weights) or sum(self.weights) <= 0:
                raise ValueError("weights must be non-negative with positive sum")
        return self

    @classmethod
    def dirac(cls, x) -> "InitialMeasure":
        return cls(points=[np.atleast_1d(np.asarray(x, dtype=float)).tolist()])

    def support(self, dim: int) -> Tuple[np.ndarray, np.ndarray]:
        pts = np.asarray(self.points, dtype=float).reshape(len(self.points), -1)
        if pts.shape[1] == 1 and dim > 1:
            pts = np.repeat(pts, dim, axis=1)
        if pts.shape[1] != dim:
            raise ValueError(f"initial points have dimension {pts.shape[1]}, family has {dim}")
        w = np.ones(len(pts)) if self.weights is None else np.asarray(self.weights, dtype=float)
        return pts, w / w.sum()

    def sample(self, rng: CounterRng, dim: int) -> np.ndarray:
        pts, w = self.support(dim)
        if len(pts) == 1:
            return np.repeat(pts, len(rng), axis=0)
        idx = np.searchsorted(np.cumsum(w), rng.uniform(INITIAL_STEP), side="right")
        return pts[np.minimum(idx, len(pts) - 1)]


class BatchResult(NamedTuple):
    final: np.ndarray
    escaped: np.ndarray
    path: Optional[np.ndarray] = None


class TrajectoryResult(NamedTuple):
    final: np.ndarray
    escaped: bool
    path: Optional[np.ndarray] = None


class CoupledDistances(NamedTuple):
    mean_sq: np.ndarray
    std_error: np.ndarray
    n_samples: int


def step(x, eta: float, xi, family: StochasticGradientFamily) -> np.ndarray:
    return x - eta * family.stochastic_grad(x, xi)


def _start_points(cfg: ChainConfig, family, rng: CounterRng, initial: Optional[InitialMeasure]) -> np.ndarray:
    if initial is not None:
        return initial.sample(rng, family.dim)
    return np.tile(cfg.x0_array(family.dim), (len(rng), 1))


def run_batch(
    cfg: ChainConfig,
    family: StochasticGradientFamily,
    trajectories,
    initial: Optional[InitialMeasure] = None,
    certificate: Optional[ConvexityCertificate] = None,
    mirrored: bool = False,
    record_path: bool = False,
) -> BatchResult:
    """Advance the given trajectory indices n_steps times.

    `mirrored` replaces every token by its antithetic partner, giving the
    second half of an antithetic pair on the same stream.
    """
    rng = CounterRng(cfg.seed, trajectories)
    x = _start_points(cfg, family, rng, initial)
    escaped = np.zeros(len(rng), dtype=bool)
    x_star = family.objective.x_star
    path = [x.copy()] if record_path else None
    for k in range(cfg.n_steps):
        xi = family.sample_xi(rng, k)
        if mirrored:
            xi = family.antithetic(xi)
        x = step(x, cfg.eta, xi, family)
        if certificate is not None:
            escaped |= np.linalg.norm(x - x_star, axis=-1) > certificate.R
        if record_path:
            path.append(x.copy())
    return BatchResult(final=x, escaped=escaped, path=None if path is None else np.stack(path))


def run_trajectory(
    cfg: ChainConfig,
    family: StochasticGradientFamily,
    trajectory: int = 0,
    certificate: Optional[ConvexityCertificate] = None,
    return_path: bool = False,
) -> TrajectoryResult:
    result = run_batch(cfg, family, [trajectory], certificate=certificate, record_path=return_path)
    escaped = bool(result.escaped[0])
    if escaped:
        logger.warning(f"escaped ball: trajectory {trajectory} left B(x*, {certificate.R}) at eta={cfg.eta}")
    return TrajectoryResult(
        final=result.final[0],
        escaped=escaped,
        path=None if result.path is None else result.path[:, 0, :],
    )


def mc_estimate(
    cfg: ChainConfig,
    family: StochasticGradientFamily,
    phi: TestFunction,
    n_samples: int,
    initial: Optional[InitialMeasure] = None,
    antithetic: bool = False,
    certificate: Optional[ConvexityCertificate] = None,
    threads: Optional[int] = None,
    chunk_size: Optional[int] = None,
) -> EstimateWithError:
    """Monte Carlo estimate of E[phi(X_n)].

    With `antithetic`, trajectories are run in mirrored pairs on one stream
    and the n_samples // 2 pair averages are the independent samples.
    """
    if antithetic and family.antithetic is None:
        logger.warning(f"{family.family_id}: noise has no antithetic partner, sampling plainly")
        antithetic = False
    n_units = n_samples // 2 if antithetic else n_samples
    if n_units < 2:
        raise ValueError(f"need at least two independent samples, got n_samples={n_samples}")

    def chunk(start: int, stop: int):
        ids = np.arange(start, stop)
        run = run_batch(cfg, family, ids, initial=initial, certificate=certificate)
        values = phi.phi(run.final)
        escaped = int(run.escaped.sum())
        if antithetic:
            mirror = run_batch(cfg, family, ids, initial=initial, certificate=certificate, mirrored=True)
            values = 0.5 * (values + phi.phi(mirror.final))
            escaped += int(mirror.escaped.sum())
        logger.debug(f"chunk [{start}, {stop}) done")
        return moments_of(values), escaped

    parts = map_chunks(chunk, n_units, threads=threads, chunk_size=chunk_size)
    total = reduce_moments([p for p, _ in parts])
    escaped = sum(e for _, e in parts)
    if escaped:
        logger.warning(f"escaped ball: {escaped} trajectories left B(x*, R) at eta={cfg.eta}")
    return EstimateWithError(
        value=float(total.mean),
        std_error=float(std_error(total)),
        n_samples=total.count,
        escaped=escaped,
    )


# --- exact enumeration -------------------------------------------------------


def enumerate_steps(x0, eta: float, n: int, family: StochasticGradientFamily) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Yield the exact joint law (atoms, probabilities) after 0, 1, ..., n steps.

    x0 may hold several points; all of them are driven by the same noise
    sequence, so atoms have shape (K, P, dim).
    """
    if not family.finite_support:
        raise SupportError(f"{family.family_id}: noise support is not finite, cannot enumerate")
    tokens, p_tokens = family.support()
    m = len(tokens)
    if m**n > MAX_ENUMERATED_ATOMS:
        raise SupportError(f"enumeration of {m}^{n} noise sequences exceeds {MAX_ENUMERATED_ATOMS} atoms")
    points = as_points(x0, family.dim).reshape(1, -1, family.dim)
    probs = np.ones(1)
    expanded = tokens[None, :, None]
    yield points, probs
    for _ in range(n):
        nxt = step(points[:, None], eta, expanded, family)
        points = nxt.reshape((-1,) + points.shape[1:])
        probs = np.outer(probs, p_tokens).ravel()
        yield points, probs


def enumerate_law(x0, eta: float, n: int, family: StochasticGradientFamily) -> Tuple[np.ndarray, np.ndarray]:
    """Exact law of X_n from a single point: atoms (K, dim) and probabilities."""
    *_, (atoms, probs) = enumerate_steps(x0, eta, n, family)
    return atoms[:, 0, :], probs


def law_expectation(atoms: np.ndarray, probs: np.ndarray, phi: TestFunction) -> float:
    return float(np.dot(probs, phi.phi(atoms)))


# --- coupling and stationarity -----------------------------------------------


def coupled_pair(
    cfg: ChainConfig,
    family: StochasticGradientFamily,
    y0,
    z0,
    n_samples: int,
    threads: Optional[int] = None,
    chunk_size: Optional[int] = None,
) -> CoupledDistances:
    """E|Y_n - Z_n|^2 for n = 0..n_steps with both chains on the same xi_n."""
    if n_samples < 2:
        raise ValueError(f"need at least two pairs, got {n_samples}")
    y0 = as_points(y0, family.dim).reshape(family.dim)
    z0 = as_points(z0, family.dim).reshape(family.dim)

    def chunk(start: int, stop: int) -> Moments:
        rng = CounterRng(cfg.seed, np.arange(start, stop))
        y = np.tile(y0, (len(rng), 1))
        z = np.tile(z0, (len(rng), 1))
        sq = [np.sum((y - z) ** 2, axis=-1)]
        for k in range(cfg.n_steps):
            xi = family.sample_xi(rng, k)
            y = step(y, cfg.eta, xi, family)
            z = step(z, cfg.eta, xi, family)
            sq.append(np.sum((y - z) ** 2, axis=-1))
        return moments_of(np.stack(sq, axis=-1))

    total = reduce_moments(map_chunks(chunk, n_samples, threads=threads, chunk_size=chunk_size))
    return CoupledDistances(mean_sq=total.mean, std_error=std_error(total), n_samples=total.count)


def coupled_pair_exact(y0, z0, eta: float, n: int, family: StochasticGradientFamily) -> np.ndarray:
    """E|Y_k - Z_k|^2 for k = 0..n by enumerating every noise sequence."""
    start = np.stack([as_points(y0, family.dim).reshape(-1), as_points(z0, family.dim).reshape(-1)])
    return np.array(
        [
            np.dot(probs, np.sum((atoms[:, 0] - atoms[:, 1]) ** 2, axis=-1))
            for atoms, probs in enumerate_steps(start, eta, n, family)
        ]
    )


def stationary_sample(
    family: StochasticGradientFamily,
    eta: float,
    burn_in: int,
    n_samples: int,
    seed: int,
    x0=None,
    threads: Optional[int] = None,
    chunk_size: Optional[int] = None,
) -> np.ndarray:
    """X_{burn_in} of n_samples independent chains, shape (n_samples, dim)."""
    recommended = int(np.ceil(np.log(1.0 / eta) / eta)) if 0 < eta < 1 else 0
    if burn_in < recommended:
        logger.warning(f"burn_in={burn_in} is below the recommended {recommended} for eta={eta}")
    start = family.objective.x_star if x0 is None else x0
    cfg = ChainConfig(eta=eta, n_steps=burn_in, x0=np.atleast_1d(start).tolist(), seed=seed)
    chunks = map_chunks(
        lambda lo, hi: run_batch(cfg, family, np.arange(lo, hi)).final,
        n_samples,
        threads=threads,
        chunk_size=chunk_size,
    )
    return np.concatenate(chunks, axis=0)


def paths_frame(path: np.ndarray, trajectory_ids) -> pd.DataFrame:
    """Long-format table (trajectory_id, n, x_0, ..., x_{d-1}) of a (n+1, N, d) path."""
    n_plus_1, n_traj, dim = path.shape
    frame = pd.DataFrame(
        {
            "trajectory_id": np.tile(np.asarray(trajectory_ids), n_plus_1),
            "n": np.repeat(np.arange(n_plus_1), n_traj),
        }
    )
    for i in range(dim):
        frame[f"x_{i}"] = path[:, :, i].ravel()
    return frame
