import math

import numpy as np
import pytest

from esfem.lsq import FitError, fit_recovery, levenberg_marquardt, recovery_model


def _samples(A, B, n=10, t_max=None):
    t = np.linspace(0, t_max if t_max is not None else 5 * B, n)
    return t, A * (1 - np.exp(-t / B))


def test_exact_data_recovered():
    t, y = _samples(0.8, 2.3)
    fit = fit_recovery(t, y)
    assert fit.converged and not fit.degenerate
    assert fit.A == pytest.approx(0.8, abs=1e-6)
    assert fit.B == pytest.approx(2.3, abs=1e-6)


def test_unit_half_life():
    t, y = _samples(0.5, 1.0, n=25)
    fit = fit_recovery(t, y)
    assert abs(fit.A - 0.5) < 1e-8 and abs(fit.B - 1.0) < 1e-8
    assert fit.t_half == pytest.approx(math.log(2), abs=1e-8)


def test_half_life_relation():
    t, y = _samples(0.8, 2.3, n=40)
    fit = fit_recovery(t, y)
    assert fit.t_half == pytest.approx(2.3 * math.log(2), rel=1e-8)
    assert round(fit.t_half, 1) == 1.6


def test_constant_zero_is_degenerate():
    t = np.linspace(0, 3, 12)
    fit = fit_recovery(t, np.zeros_like(t))
    assert fit.degenerate
    assert fit.A == pytest.approx(0.0, abs=1e-12)


def test_constant_series_is_degenerate():
    t = np.linspace(0, 3, 12)
    fit = fit_recovery(t, np.ones_like(t))
    assert fit.degenerate
    assert math.isnan(fit.B)


def test_generic_lm_flags_unidentifiable_parameter():
    # B has no influence once A is zero
    t = np.linspace(0, 3, 12)
    fit = levenberg_marquardt(recovery_model, t, np.zeros_like(t), np.array([0.0, 1.0]))
    assert fit.degenerate
    assert np.all(np.isinf(fit.stderr))


def test_noisy_fit_within_three_sigma():
    A, B = 0.73, 0.54
    t, y = _samples(A, B, n=60, t_max=4.0)
    rng = np.random.default_rng(7)
    fit = fit_recovery(t, y + 0.01 * A * rng.normal(size=t.size))
    assert abs(fit.A - A) <= 3 * fit.stderr[0]
    assert abs(fit.B - B) <= 3 * fit.stderr[1]


def test_standard_errors_match_monte_carlo_spread():
    A, B, sigma = 0.73, 0.54, 0.0073
    t, y = _samples(A, B, n=60, t_max=4.0)
    rng = np.random.default_rng(11)
    params, errs = [], []
    for _ in range(300):
        fit = fit_recovery(t, y + sigma * rng.normal(size=t.size))
        params.append(fit.params)
        errs.append(fit.stderr)
    params, errs = np.array(params), np.array(errs)
    spread = params.std(axis=0)
    mean_err = errs.mean(axis=0)
    assert np.allclose(mean_err, spread, rtol=0.15)
    inside = (np.abs(params - [A, B]) <= 3 * errs).all(axis=1).mean()
    assert inside >= 0.97


def test_fit_window_restricts_samples():
    t = np.linspace(0, 10, 101)
    y = 0.6 * (1 - np.exp(-t / 0.9))
    y[t > 5] = 99.0  # garbage outside the window
    fit = fit_recovery(t, y, window=5.0)
    assert fit.A == pytest.approx(0.6, abs=1e-8)


def test_too_few_samples():
    with pytest.raises(FitError):
        fit_recovery(np.array([0.0, 1.0]), np.array([0.0, 0.5]))


def test_non_convergence_carries_last_iterate():
    t, y = _samples(0.8, 2.3, n=30)
    with pytest.raises(FitError) as info:
        levenberg_marquardt(recovery_model, t, y, np.array([0.1, 20.0]), max_iter=1)
    assert info.value.result is not None
    assert info.value.result.iterations == 1


def test_rss_never_increases():
    t, y = _samples(0.8, 2.3, n=30)
    y = y + 0.002 * np.random.default_rng(0).normal(size=t.size)
    fit = levenberg_marquardt(recovery_model, t, y, np.array([0.3, 8.0]))
    h = np.array(fit.rss_history)
    assert np.all(np.diff(h) <= 0)


def test_jacobian_matches_finite_differences():
    p = np.array([0.7, 1.3])
    t = np.linspace(0, 4, 9)
    _, J = recovery_model(p, t)
    eps = 1e-7
    for k in range(2):
        dp = np.zeros(2)
        dp[k] = eps
        fd = (recovery_model(p + dp, t)[0] - recovery_model(p - dp, t)[0]) / (2 * eps)
        assert np.allclose(J[:, k], fd, atol=1e-7)
