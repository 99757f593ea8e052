# sgdlab/tests/test_rng.py
import math

import numpy as np
import pytest

from sgdlab.app.rng import INITIAL_STEP, CounterRng, splitmix64


def test_draws_depend_only_on_trajectory_index():
    batch = CounterRng(seed=7, trajectories=[0, 1, 2, 3])
    single = CounterRng(seed=7, trajectories=[2])
    for step in (0, 1, 17, INITIAL_STEP):
        assert batch.bits(step, lane=1)[2] == single.bits(step, lane=1)[0]
        assert batch.uniform(step)[2] == single.uniform(step)[0]


def test_seeds_steps_and_lanes_give_different_streams():
    rng = CounterRng(seed=7, trajectories=np.arange(1000))
    assert not np.array_equal(rng.bits(0), CounterRng(seed=8, trajectories=np.arange(1000)).bits(0))
    assert not np.array_equal(rng.bits(0), rng.bits(1))
    assert not np.array_equal(rng.bits(0, lane=0), rng.bits(0, lane=1))


def test_splitmix64_is_deterministic():
    z = np.arange(5, dtype=np.uint64)
    np.testing.assert_array_equal(splitmix64(z), splitmix64(z.copy()))
    assert len(set(splitmix64(z).tolist())) == 5


def test_uniform_range_and_moments():
    u = CounterRng(seed=1, trajectories=np.arange(10**5)).uniform(3)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 4 * math.sqrt(1 / 12 / 10**5)


def test_rademacher_signs_are_balanced():
    s = CounterRng(seed=2, trajectories=np.arange(10**5)).rademacher(0)
    assert set(np.unique(s)) == {-1.0, 1.0}
    assert abs(s.mean()) < 4 / math.sqrt(10**5)


def test_normal_moments():
    z = CounterRng(seed=3, trajectories=np.arange(10**5)).normal(5)
    assert np.all(np.isfinite(z))
    assert abs(z.mean()) < 4 / math.sqrt(10**5)
    assert abs(z.var() - 1.0) < 4 * math.sqrt(2 / 10**5)


def test_subset_draws_distinct_indices_uniformly():
    n = 40_000
    idx = CounterRng(seed=4, trajectories=np.arange(n)).subset(0, population=8, size=3)
    assert idx.shape == (n, 3)
    assert idx.min() >= 0 and idx.max() < 8
    assert np.all(np.diff(np.sort(idx, axis=1), axis=1) > 0)
    frequency = np.bincount(idx.ravel(), minlength=8) / n
    p = 3 / 8
    assert np.all(np.abs(frequency - p) < 4 * math.sqrt(p * (1 - p) / n))


def test_subset_rejects_impossible_sizes():
    with pytest.raises(ValueError):
        CounterRng(seed=0, trajectories=[0]).subset(0, population=3, size=4)


def test_seed_must_fit_in_64_bits():
    with pytest.raises(ValueError):
        CounterRng(seed=2**64, trajectories=[0])
    assert len(CounterRng(seed=2**64 - 1, trajectories=[0, 1])) == 2
