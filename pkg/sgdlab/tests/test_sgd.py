# sgdlab/tests/test_sgd.py
import numpy as np
import pytest

from sgdlab.app import models
from sgdlab.app.analysis import ks_distance
from sgdlab.app.errors import SupportError
from sgdlab.app.rng import CounterRng
from sgdlab.app.schemas import ChainConfig
from sgdlab.app.sgd import (
    InitialMeasure,
    coupled_pair,
    coupled_pair_exact,
    enumerate_law,
    enumerate_steps,
    law_expectation,
    mc_estimate,
    paths_frame,
    run_batch,
    run_trajectory,
    stationary_sample,
    step,
)

from .conftest import example1_sin_mean


def test_single_steps(example1, example2):
    assert step(np.array([1.0]), 0.1, np.array([1.0]), example1)[0] == pytest.approx(0.9)
    assert step(np.array([1.0]), 0.0, np.array([1.0]), example1)[0] == 1.0
    assert step(np.array([0.0]), 0.1, np.array([-1.0]), example2)[0] == pytest.approx(0.05)


def test_zero_steps_returns_start(example1):
    result = run_trajectory(ChainConfig(eta=0.25, n_steps=0, x0=1.3, seed=7), example1)
    assert result.final[0] == 1.3
    assert not result.escaped


def test_trajectory_matches_a_direct_recursion(example1):
    result = run_trajectory(ChainConfig(eta=0.25, n_steps=4, x0=1.0, seed=7), example1, return_path=True)
    rng = CounterRng(seed=7, trajectories=[0])
    x = 1.0
    for k in range(4):
        xi = rng.rademacher(k, 0)[0]
        x = x - 0.25 * ((x - 0.5) + 0.5 * xi)
    assert result.final[0] == x
    assert result.path.shape == (5, 1)


def test_trajectory_is_independent_of_its_batch(example1):
    cfg = ChainConfig(eta=0.1, n_steps=30, x0=2.0, seed=11)
    batch = run_batch(cfg, example1, np.arange(50)).final
    alone = run_trajectory(cfg, example1, trajectory=37).final
    assert batch[37, 0] == alone[0]


def test_constant_observable_has_zero_error(example1):
    cfg = ChainConfig(eta=0.2, n_steps=10, x0=1.0, seed=3)
    est = mc_estimate(cfg, example1, models.constant_observable(2.5), 1000)
    assert est.value == 2.5
    assert est.std_error == 0.0


def test_zero_step_size_returns_phi_of_start(example1, sin_phi):
    est = mc_estimate(ChainConfig(eta=0.0, n_steps=25, x0=1.0, seed=3), example1, sin_phi, 500)
    assert est.value == np.sin(1.0)
    assert est.std_error == 0.0


def test_enumeration_matches_characteristic_function(example1, sin_phi):
    atoms, probs = enumerate_law(1.0, 0.25, 16, example1)
    assert len(atoms) == 2**16
    assert probs.sum() == pytest.approx(1.0)
    assert law_expectation(atoms, probs, sin_phi) == pytest.approx(example1_sin_mean(1.0, 0.25, 16), abs=1e-12)


def test_monte_carlo_agrees_with_exact_law(example1, sin_phi):
    cfg = ChainConfig(eta=0.25, n_steps=10, x0=1.0, seed=5)
    exact = example1_sin_mean(1.0, 0.25, 10)
    plain = mc_estimate(cfg, example1, sin_phi, 100_000)
    assert plain.within(exact)
    paired = mc_estimate(cfg, example1, sin_phi, 100_000, antithetic=True)
    assert paired.n_samples == 50_000
    assert paired.within(exact)


def test_estimate_is_independent_of_threads_and_chunks(example1, sin_phi):
    cfg = ChainConfig(eta=0.1, n_steps=20, x0=1.0, seed=9)
    one = mc_estimate(cfg, example1, sin_phi, 5000, threads=1, chunk_size=333)
    many = mc_estimate(cfg, example1, sin_phi, 5000, threads=4, chunk_size=333)
    assert one == many


def test_too_few_samples_is_rejected(example1, sin_phi):
    with pytest.raises(ValueError):
        mc_estimate(ChainConfig(eta=0.1, n_steps=1), example1, sin_phi, 3, antithetic=True)


def test_certified_chains_never_leave_the_ball(example1, sin_phi):
    certificate = models.certify(example1, R=3.0)
    eta = certificate.eta0
    for x0 in (-2.4, 3.4):
        est = mc_estimate(
            ChainConfig(eta=eta, n_steps=200, x0=x0, seed=1), example1, sin_phi, 1000, certificate=certificate
        )
        assert est.escaped == 0
        for atoms, _ in enumerate_steps(x0, eta, 12, example1):
            assert np.all(np.abs(atoms - 0.5) <= certificate.R)


def test_enumeration_needs_finite_support(ou):
    with pytest.raises(SupportError):
        next(enumerate_steps(0.0, 0.1, 3, ou))


def test_enumeration_refuses_huge_laws(minibatch):
    with pytest.raises(SupportError, match="exceeds"):
        next(enumerate_steps(0.0, 0.1, 6, minibatch))


def test_minibatch_enumeration_matches_monte_carlo(minibatch, sin_phi):
    atoms, probs = enumerate_law(1.0, 0.2, 3, minibatch)
    exact = law_expectation(atoms, probs, sin_phi)
    est = mc_estimate(ChainConfig(eta=0.2, n_steps=3, x0=1.0, seed=2), minibatch, sin_phi, 50_000)
    assert est.within(exact)


def test_synchronous_coupling_of_example1_is_deterministic(example1):
    eta, n = 0.2, 15
    exact = coupled_pair_exact(1.5, -0.5, eta, n, example1)
    expected = 4.0 * (1 - eta) ** (2 * np.arange(n + 1))
    np.testing.assert_allclose(exact, expected, rtol=1e-10)
    sampled = coupled_pair(ChainConfig(eta=eta, n_steps=n, seed=1), example1, 1.5, -0.5, 200)
    np.testing.assert_allclose(sampled.mean_sq, expected, rtol=1e-10)


def test_identical_starts_stay_together(example2):
    sampled = coupled_pair(ChainConfig(eta=0.3, n_steps=10, seed=1), example2, 0.2, 0.2, 100)
    assert np.all(sampled.mean_sq == 0.0)
    assert np.all(sampled.std_error == 0.0)


def test_coupled_distance_contracts_on_example2(example2):
    constants = models.local_constants(example2, 1.0)
    eta, n = 0.1, 20
    rho_sq = 1 - 2 * constants.gamma * eta + constants.L**2 * eta**2
    sampled = coupled_pair(ChainConfig(eta=eta, n_steps=n, seed=4), example2, 0.5, -0.5, 10_000)
    bound = rho_sq ** np.arange(n + 1)
    assert np.all(sampled.mean_sq <= bound + 4 * sampled.std_error + 1e-12)


@pytest.mark.slow
@pytest.mark.parametrize("eta", [0.1, 0.2])
def test_coupled_distance_contracts_on_example2_at_scale(example2, eta):
    constants = models.local_constants(example2, 1.0)
    n = 40
    rho_sq = 1 - 2 * constants.gamma * eta + constants.L**2 * eta**2
    sampled = coupled_pair(ChainConfig(eta=eta, n_steps=n, seed=9), example2, 0.5, -0.5, 100_000)
    assert sampled.n_samples == 100_000
    bound = rho_sq ** np.arange(n + 1)
    assert np.all(sampled.mean_sq <= bound + 4 * sampled.std_error + 1e-12)


def test_stationary_mean_of_example1(example1):
    samples = stationary_sample(example1, eta=0.25, burn_in=100, n_samples=20_000, seed=3, x0=[2.0])
    assert samples.shape == (20_000, 1)
    se = samples.std(ddof=1) / np.sqrt(len(samples))
    assert abs(samples.mean() - 0.5) <= 4 * se


def test_stationary_law_at_half_step_is_uniform(example1):
    samples = stationary_sample(example1, eta=0.5, burn_in=100, n_samples=100_000, seed=7, x0=[1.0])
    assert ks_distance(samples[:, 0], "uniform01") <= 0.01


def test_zero_step_size_stationary_sample_is_the_start(example1):
    samples = stationary_sample(example1, eta=0.0, burn_in=5, n_samples=10, seed=0, x0=[0.3])
    assert np.all(samples == 0.3)


def test_initial_measure_sampling(example1):
    measure = InitialMeasure(points=[0.25, 0.75])
    draws = measure.sample(CounterRng(seed=0, trajectories=np.arange(20_000)), 1)
    assert set(np.unique(draws)) == {0.25, 0.75}
    assert abs((draws == 0.25).mean() - 0.5) < 4 * np.sqrt(0.25 / 20_000)
    pts, w = InitialMeasure(points=[0.0, 1.0], weights=[1.0, 3.0]).support(1)
    np.testing.assert_allclose(w, [0.25, 0.75])
    with pytest.raises(ValueError):
        InitialMeasure(points=[0.0], weights=[1.0, 2.0])


def test_paths_frame_layout(example1):
    result = run_batch(ChainConfig(eta=0.1, n_steps=3, x0=1.0), example1, [4, 5], record_path=True)
    frame = paths_frame(result.path, [4, 5])
    assert list(frame.columns) == ["trajectory_id", "n", "x_0"]
    assert len(frame) == 8
    assert frame.loc[frame.n == 0, "x_0"].tolist() == [1.0, 1.0]
