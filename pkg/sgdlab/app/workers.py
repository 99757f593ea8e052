# sgdlab/app/workers.py
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, NamedTuple, Optional, Tuple, TypeVar

import numpy as np

from .config import get_chunk_size, get_threads

logger = logging.getLogger(__name__)

T = TypeVar("T")


def chunk_ranges(n_items: int, chunk_size: Optional[int] = None) -> List[Tuple[int, int]]:
    """Fixed [start, stop) chunks; boundaries depend only on n_items and chunk size."""
    chunk_size = chunk_size or get_chunk_size()
    return [(start, min(start + chunk_size, n_items)) for start in range(0, n_items, chunk_size)]


def map_chunks(
    fn: Callable[[int, int], T],
    n_items: int,
    threads: Optional[int] = None,
    chunk_size: Optional[int] = None,
) -> List[T]:
    """Run fn(start, stop) over every chunk and return results in chunk order.

    Reductions over the returned list are therefore independent of the
    number of threads. numpy releases the GIL inside the vector kernels, which
    is where the chains spend their time.
    """
    ranges = chunk_ranges(n_items, chunk_size)
    workers = min(get_threads(threads), max(len(ranges), 1))
    logger.debug(f"Dispatching {len(ranges)} chunks of {n_items} items on {workers} threads")
    if workers <= 1:
        return [fn(start, stop) for start, stop in ranges]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, start, stop) for start, stop in ranges]
        return [future.result() for future in futures]


class Moments(NamedTuple):
    count: int
    mean: np.ndarray
    m2: np.ndarray


def moments_of(values: np.ndarray) -> Moments:
    """Count, mean and centred sum of squares along axis 0.

    Columns that are constant keep their exact value and a zero m2.
    """
    values = np.asarray(values, dtype=float)
    first = values[0]
    constant = np.all(values == first, axis=0)
    mean = np.where(constant, first, values.mean(axis=0))
    m2 = np.where(constant, 0.0, np.sum((values - mean) ** 2, axis=0))
    return Moments(len(values), mean, m2)


def merge_moments(a: Moments, b: Moments) -> Moments:
    if a.count == 0:
        return b
    if b.count == 0:
        return a
    n = a.count + b.count
    delta = b.mean - a.mean
    mean = a.mean + delta * (b.count / n)
    m2 = a.m2 + b.m2 + delta**2 * (a.count * b.count / n)
    return Moments(n, mean, m2)


def reduce_moments(parts: List[Moments]) -> Moments:
    """Merge chunk moments left to right, in chunk order."""
    total = Moments(0, np.zeros(()), np.zeros(()))
    for part in parts:
        total = merge_moments(total, part)
    return total


def std_error(m: Moments) -> np.ndarray:
    return np.sqrt(m.m2 / (m.count - 1) / m.count)
