# sgdlab/tests/test_analysis.py
import itertools
import math

import numpy as np
import pytest

from sgdlab.app import models
from sgdlab.app.analysis import (
    _certificate_flags,
    build_weak_error_curve,
    contraction_rate,
    descent_time,
    descent_time_experiment,
    fit_slope,
    ks_distance,
    systematic_resample,
    uniformity_check,
    w2_decay_experiment,
    w2_empirical_1d,
    weak_error_experiment,
)
from sgdlab.app.schemas import EstimateWithError

ETA_GRID = [0.5, 0.25, 0.125, 0.0625]


def test_slope_of_a_pure_power_law():
    eta = np.array(ETA_GRID)
    fit = fit_slope(eta, 0.3 * eta**2)
    assert fit.slope == pytest.approx(2.0, abs=1e-12)
    assert fit.intercept == pytest.approx(math.log2(0.3), abs=1e-12)
    assert fit.ci[0] == pytest.approx(2.0, rel=1e-6) and fit.ci[1] == pytest.approx(2.0, rel=1e-6)


def test_slope_is_invariant_under_error_scaling():
    eta = np.array(ETA_GRID)
    errors = eta**2 * (1 + 0.1 * np.array([1.0, -1.0, 0.5, -0.3]))
    assert fit_slope(eta, 7.0 * errors).slope == pytest.approx(fit_slope(eta, errors).slope, abs=1e-12)


def test_slope_needs_two_points():
    fit = fit_slope([0.5, 0.25], [0.1, 0.0])
    assert math.isnan(fit.slope)


def _estimates(values, std):
    return [EstimateWithError(value=v, std_error=std, n_samples=1000) for v in values]


def test_weak_error_curve_from_synthetic_estimates():
    u_trunc = [0.2, 0.3, 0.4, 0.5]
    estimates = _estimates([u + 0.4 * eta**2 for u, eta in zip(u_trunc, ETA_GRID)], 1e-9)
    curve = build_weak_error_curve(ETA_GRID, 5.0, [10, 20, 40, 80], estimates, u_trunc, [True] * 4)
    assert curve.slope == pytest.approx(2.0, abs=1e-6)
    assert not any(curve.noise_floor)
    assert curve.slope_certified_only is None


def test_noise_floor_points_are_excluded():
    u_trunc = [0.0] * 4
    values = [0.4 * eta**2 for eta in ETA_GRID[:3]] + [1e-4]
    estimates = _estimates(values, 1e-4)
    curve = build_weak_error_curve(ETA_GRID, 5.0, [10, 20, 40, 80], estimates, u_trunc, [True] * 4)
    assert curve.noise_floor == [False, False, False, True]
    assert curve.slope == pytest.approx(2.0, abs=1e-6)


def test_certified_only_slope_is_reported_separately():
    u_trunc = [0.0] * 4
    values = [0.05, 0.3 * 0.25**2, 0.3 * 0.125**2, 0.3 * 0.0625**2]
    curve = build_weak_error_curve(ETA_GRID, 5.0, [10, 20, 40, 80], _estimates(values, 1e-9), u_trunc,
                                   [False, True, True, True])
    assert curve.slope_certified_only == pytest.approx(2.0, abs=1e-9)
    assert curve.slope != pytest.approx(2.0, abs=1e-3)


def test_certificate_flags():
    certificate = models.certify(models.make_example1(), R=3.0)
    assert _certificate_flags(ETA_GRID, certificate) == [False, False, False, True]
    assert _certificate_flags(ETA_GRID, models.certify(models.make_example1(), R=20.0)) == [True] * 4
    assert _certificate_flags(ETA_GRID, None) == [True] * 4


def test_weak_error_experiment_structure(example1, sin_phi):
    curve = weak_error_experiment(example1, sin_phi, 1.0, 1.0, [0.5, 0.25], 2000, seed=3)
    assert curve.n_steps == [2, 4]
    assert len(curve.errors) == 2
    assert all(e >= 0 for e in curve.errors)
    assert all(s > 0 for s in curve.std_errors)


def test_w2_of_simple_measures():
    assert w2_empirical_1d([0.0, 1.0], [1.0, 0.0]) == 0.0
    assert w2_empirical_1d([0.0], [1.0]) == 1.0
    assert w2_empirical_1d([0.0, 2.0], [1.0, 3.0]) == 1.0
    assert w2_empirical_1d([0.0, 1.0], [0.0, 0.0, 1.0, 1.0]) == 0.0
    with pytest.raises(ValueError):
        w2_empirical_1d([], [1.0])


def test_w2_matches_brute_force_over_couplings():
    rng = np.random.default_rng(0)
    for _ in range(50):
        size = rng.integers(1, 7)
        a, b = rng.normal(size=size), rng.normal(size=size)
        brute = min(np.sqrt(np.mean((a - b[list(p)]) ** 2)) for p in itertools.permutations(range(size)))
        assert w2_empirical_1d(a, b) == pytest.approx(brute, abs=1e-12)


def test_systematic_resample_keeps_quantiles():
    np.testing.assert_array_equal(systematic_resample(np.arange(10.0), 5), [1.0, 3.0, 5.0, 7.0, 9.0])


def test_contraction_rate():
    assert contraction_rate(1.0, 1.0, 0.2) == pytest.approx(0.8)
    assert contraction_rate(0.4, 1.6, 0.1) == pytest.approx(math.sqrt(1 - 0.08 + 0.0256))


def test_w2_decay_of_example1_is_deterministic(example1):
    eta = 0.1
    curve = w2_decay_experiment(example1, eta, 1.0, -1.0, [0, 5, 10, 20], 2000, seed=1)
    expected = [2.0 * (1 - eta) ** n for n in curve.n_grid]
    np.testing.assert_allclose(curve.w2_values, expected, rtol=1e-9)
    assert curve.rho_ref == pytest.approx(1 - eta)
    assert curve.fitted_rate == pytest.approx(math.log(1 - eta), abs=1e-9)


def test_w2_decay_rejects_negative_step_counts(example2):
    with pytest.raises(ValueError, match="non-negative"):
        w2_decay_experiment(example2, 0.1, 0.5, -0.5, [-1, 5], 100)


def test_w2_decay_with_equal_starts(example2):
    curve = w2_decay_experiment(example2, 0.1, 0.3, 0.3, [0, 10], 500, seed=1)
    assert curve.w2_values == [0.0, 0.0]
    assert curve.fitted_rate is None


def test_w2_decay_bound_on_example2(example2):
    curve = w2_decay_experiment(example2, 0.1, 0.5, -0.5, [0, 5, 10, 20, 40], 5000, seed=2)
    assert all(w <= r + 1e-12 for w, r in zip(curve.w2_values, curve.reference))


def test_uniformity_at_zero_error(noiseless):
    identity = models.get_observable("identity")
    report = uniformity_check(noiseless, identity, 1.0, 0.1, [1, 10, 50], 100, antithetic=False)
    assert report.growth_ok
    assert len(report.errors) == 3
    assert all(s == 0.0 for s in report.std_errors)


def test_uniformity_reference_is_the_error_at_the_reference_time(noiseless):
    identity = models.get_observable("identity")
    listed = uniformity_check(noiseless, identity, 1.0, 0.1, [1, 10, 50], 100, antithetic=False)
    assert listed.reference_n == 50
    assert listed.reference_error == listed.errors[2]
    separate = uniformity_check(noiseless, identity, 1.0, 0.1, [1, 10], 100, antithetic=False)
    assert separate.reference_n == 50
    assert separate.reference_error == pytest.approx(listed.reference_error, abs=1e-15)
    shifted = uniformity_check(noiseless, identity, 1.0, 0.1, [1, 10], 100, antithetic=False, reference_time=1.0)
    assert shifted.reference_n == 10
    assert shifted.reference_error == shifted.errors[1]
    assert shifted.bounded_by_reference == (max(shifted.errors) <= 2.0 * shifted.errors[1])


def test_descent_time():
    assert descent_time(0.25) == math.ceil(4 * math.log(4))
    assert descent_time(0.5) == 2
    for eta in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError, match="0 < eta < 1"):
            descent_time(eta)


def test_descent_time_of_gradient_descent(noiseless):
    report = descent_time_experiment(noiseless, [0.25, 0.125], 50, x0=1.0)
    for row in report.rows:
        assert row.gap == pytest.approx(0.5 * (1 - row.eta) ** (2 * row.n_star), rel=1e-9)
        assert row.gap <= row.eta**2 * 0.5
        assert row.gap_std_error == 0.0


def test_descent_time_ratio_is_stable_on_example1(example1):
    report = descent_time_experiment(example1, [0.25, 0.125, 0.0625], 20_000, x0=1.0, seed=4)
    assert report.stable
    assert all(row.plateau_gap > 0 for row in report.rows)


def test_ks_distance():
    assert ks_distance((np.arange(1000) + 0.5) / 1000) == pytest.approx(0.0005)
    with pytest.raises(ValueError):
        ks_distance([0.5], "normal")


@pytest.mark.slow
def test_weak_error_slope_of_example1(example1, sin_phi):
    curve = weak_error_experiment(example1, sin_phi, 1.0, 5.0, ETA_GRID, 10**6, seed=7)
    assert 1.6 <= curve.slope <= 2.4


@pytest.mark.slow
def test_weak_error_slope_of_example2(example2, sin_phi):
    curve = weak_error_experiment(example2, sin_phi, 1.0, 5.0, ETA_GRID, 10**6, seed=7)
    assert 1.6 <= curve.slope <= 2.4


@pytest.mark.slow
def test_uniformity_on_example1(example1, sin_phi):
    report = uniformity_check(example1, sin_phi, 1.0, 0.125, [1, 5, 20, 100, 500, 2000], 10**6, seed=7)
    assert report.growth_ok
