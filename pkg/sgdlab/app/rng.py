# sgdlab/app/rng.py
"""Counter-based random streams.

Every draw is a pure function of (seed, trajectory index, step index, lane),
so trajectory i sees the same numbers whether it runs alone, in a batch, or in
any worker of a thread pool. Reusing a seed across step sizes gives common
random numbers for free.
"""
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_STEP = np.uint64(0xD1B54A32D192ED03)
_LANE = np.uint64(0x8CB92BA72F3D8DD7)
_S30, _S27, _S31, _S11, _S63 = (np.uint64(s) for s in (30, 27, 31, 11, 63))

# Step index reserved for drawing initial points from an initial measure.
INITIAL_STEP = 2**62
_TWO_53 = 2.0**-53


def splitmix64(z: np.ndarray) -> np.ndarray:
    """splitmix64 finaliser on a uint64 array (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _S30)) * _MIX1
        z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


class CounterRng:
    """Stream for a fixed set of trajectory indices under one seed."""

    def __init__(self, seed: int, trajectories):
        if not 0 <= int(seed) < 2**64:
            raise ValueError(f"seed must fit in 64 bits, got {seed}")
        self.seed = int(seed)
        self.trajectories = np.atleast_1d(np.asarray(trajectories, dtype=np.uint64))
        base = splitmix64(np.array([self.seed], dtype=np.uint64) ^ _GOLDEN)
        with np.errstate(over="ignore"):
            self._keys = splitmix64(base + self.trajectories * _GOLDEN)

    def __len__(self) -> int:
        return self.trajectories.size

    def bits(self, step: int, lane: int = 0) -> np.ndarray:
        counter = np.array([step], dtype=np.uint64)
        with np.errstate(over="ignore"):
            salt = splitmix64(counter * _STEP + np.uint64(lane) * _LANE)
        return splitmix64(self._keys ^ salt)

    def uniform(self, step: int, lane: int = 0) -> np.ndarray:
        """Doubles in [0, 1) built from the top 53 bits."""
        return (self.bits(step, lane) >> _S11).astype(np.float64) * _TWO_53

    def rademacher(self, step: int, lane: int = 0) -> np.ndarray:
        """+1 or -1 from one output bit."""
        return 1.0 - 2.0 * (self.bits(step, lane) >> _S63).astype(np.float64)

    def normal(self, step: int, lane: int = 0) -> np.ndarray:
        """Standard Gaussians by Box-Muller on lanes (2*lane, 2*lane + 1)."""
        u1 = 1.0 - self.uniform(step, 2 * lane)
        u2 = self.uniform(step, 2 * lane + 1)
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)

    def subset(self, step: int, population: int, size: int) -> np.ndarray:
        """`size` distinct indices out of range(population) per trajectory.

        Partial Fisher-Yates: lane k picks the k-th element among the
        population - k not yet chosen.
        """
        if not 0 < size <= population:
            raise ValueError(f"cannot draw {size} of {population} without replacement")
        rows = np.arange(len(self))
        idx = np.tile(np.arange(population), (len(self), 1))
        for k in range(size):
            offset = (self.uniform(step, k) * (population - k)).astype(np.int64)
            j = k + np.minimum(offset, population - k - 1)
            picked = idx[rows, j].copy()
            idx[rows, j] = idx[rows, k]
            idx[rows, k] = picked
        return idx[:, :size]
