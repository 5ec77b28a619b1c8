import math

import numpy as np
import pytest

from pta import (ConfigurationError, ContractError, ConvergenceCriterion,
                 FineState, HObservable, Measurement, NoConvergence, Trajectory,
                 extrapolate, rate_of_change, running_average,
                 simpson_observable, support_max, window_average)


def stream_of(values):
    for v in values:
        yield FineState(np.array([v]), np.empty(0))


M_X = Measurement("x", lambda x, l: x[0])


def test_running_average_constant_converges_at_n_min():
    crit = ConvergenceCriterion(k=100, n_min=500)
    r, n, last = running_average(stream_of([3.0] * 2000), M_X, crit)
    assert r == 3.0 and n == 500
    assert last.x[0] == 3.0


def test_running_average_cosine_absolute_branch():
    dsigma = 2 * math.pi / 500
    crit = ConvergenceCriterion(tol2=1e-5, k=500, n_min=500)
    samples = np.cos(dsigma * np.arange(1, 20_001))
    r, n, _ = running_average(stream_of(samples), M_X, crit)
    assert abs(r) < 1e-3


def test_running_average_cosine_squared():
    dsigma = 2 * math.pi / 500
    crit = ConvergenceCriterion(tol1=1e-2, k=500, n_min=500)
    samples = np.cos(dsigma * np.arange(1, 20_001)) ** 2
    r, n, _ = running_average(stream_of(samples), M_X, crit)
    assert r == pytest.approx(0.5, abs=1e-2)


def test_running_average_exhausted_raises():
    crit = ConvergenceCriterion(k=100, n_min=500)
    values = np.linspace(0, 1, 300)  # drifts, and too short anyway
    with pytest.raises(NoConvergence) as err:
        running_average(stream_of(values), M_X, crit)
    assert err.value.n_samples == 300
    assert err.value.last_state is not None


def test_running_average_normalization_invariance():
    dsigma = 2 * math.pi / 500
    samples = 2.5 + np.cos(dsigma * np.arange(1, 20_001))
    crit = ConvergenceCriterion(k=500, n_min=500)
    r1, n1, _ = running_average(stream_of(samples), M_X, crit)
    m_scaled = Measurement("x", lambda x, l: x[0], normalization=7.3)
    r2, n2, _ = running_average(stream_of(samples), m_scaled, crit)
    assert n1 == n2
    assert r2 == pytest.approx(r1 / 7.3, rel=1e-12)


def test_rate_of_change_examples():
    assert rate_of_change(2.0, 1.0, 0.05) == pytest.approx(20.0)
    assert rate_of_change(0.7, 0.7, 0.01) == 0.0
    assert rate_of_change(0.5, 0.5 + 1e-10, 0.001) == pytest.approx(-1e-7)
    with pytest.raises(ConfigurationError):
        rate_of_change(1.0, 1.0, 0.0)


def test_extrapolate_examples():
    assert extrapolate(1.0, 2.0, 0.25) == 1.5
    assert extrapolate(0.7, 0.0, 0.1) == 0.7
    assert extrapolate(0.5, 20.0, 0.25) == 5.5


def window_from(values):
    arr = np.asarray(values, dtype=float).reshape(-1, 1)
    return Trajectory(dsigma=0.1, sigma0=0.0, x=arr, l=np.zeros((len(arr), 0)))


def test_window_average_examples():
    assert window_average(window_from([4.2] * 7), M_X) == pytest.approx(4.2)
    assert window_average(window_from([1.0, 3.0]), M_X) == 2.0
    with pytest.raises(ContractError):
        window_average(window_from([1.0, 3.0]), M_X, n_expected=5)


def test_window_average_cosine_squared_over_periods():
    sigmas = 2 * math.pi / 500 * np.arange(500 * 4)
    m = Measurement("w", lambda x, l: x[0] ** 2)
    assert window_average(window_from(np.cos(sigmas)), m) == pytest.approx(
        0.5, abs=1e-3)


def test_window_average_cyclic_invariance():
    vals = np.sin(np.linspace(0, 5, 31))
    rolled = np.roll(vals, 7)
    assert window_average(window_from(vals), M_X) == pytest.approx(
        window_average(window_from(rolled), M_X), rel=1e-14)


def test_window_average_affine_in_sample_mean():
    vals = np.random.default_rng(7).normal(size=100)
    m_aff = Measurement("a", lambda x, l: 3.0 * x[0] - 1.25)
    assert window_average(window_from(vals), m_aff) == pytest.approx(
        3.0 * vals.mean() - 1.25, rel=1e-12)


def test_simpson_observable_examples():
    assert simpson_observable([2.0, 2.0, 2.0]) == 2.0
    assert simpson_observable([0.0, 0.5, 1.0]) == pytest.approx(0.5)
    assert simpson_observable([0.0, 0.125, 1.0]) == pytest.approx(0.25)
    with pytest.raises(ContractError):
        simpson_observable([1.0, 2.0])


def test_simpson_cubic_exactness():
    rng = np.random.default_rng(3)
    a, b, c, d = rng.normal(size=4)
    f = lambda t: a + b * t + c * t ** 2 + d * t ** 3
    t0, t1 = 0.4, 0.9
    nodes = [f(t0), f(0.5 * (t0 + t1)), f(t1)]
    exact = (a * (t1 - t0) + b * (t1 ** 2 - t0 ** 2) / 2
             + c * (t1 ** 3 - t0 ** 3) / 3
             + d * (t1 ** 4 - t0 ** 4) / 4) / (t1 - t0)
    assert simpson_observable(nodes) == pytest.approx(exact, rel=1e-12)


def circle_window(n=2000):
    theta = np.linspace(0, 2 * math.pi, n, endpoint=False)
    xs = np.zeros((n, 4))
    xs[:, 0] = np.cos(theta)
    xs[:, 2] = np.sin(theta)
    return Trajectory(dsigma=2 * math.pi / n, sigma0=0.0, x=xs,
                      l=np.zeros((n, 0)))


def test_support_max_examples():
    pt = Trajectory(0.1, 0.0, np.array([[0.3, -0.2, 0.5, 0.1]]),
                    np.zeros((1, 0)))
    e = np.array([0.0, 0.0, 1.0, 0.0])
    assert support_max(pt, e) == pytest.approx(0.5)
    win = circle_window()
    assert support_max(win, np.array([1.0, 0, 0, 0])) == pytest.approx(1.0, abs=1e-3)
    shift = np.array([0.7, 0.0, -0.4, 0.0])
    shifted = Trajectory(win.dsigma, 0.0, win.x + shift, win.l)
    e1 = np.array([1.0, 0, 0, 0])
    assert support_max(shifted, e1) == pytest.approx(
        support_max(win, e1) + shift @ e1, rel=1e-12)


def test_support_max_requires_unit_direction():
    with pytest.raises(ConfigurationError):
        support_max(circle_window(16), np.array([2.0, 0, 0, 0]))


def test_hobservable_wraps_measurement():
    obs = HObservable(Measurement("w", lambda x, l: x[0] ** 2), delta=0.05)
    assert obs.value(window_from([1.0, 3.0])) == pytest.approx(5.0)
    assert obs.rate(1.0, 0.5) == pytest.approx(10.0)
    with pytest.raises(ConfigurationError):
        HObservable(M_X, delta=0.0)


def test_criterion_validation():
    with pytest.raises(ConfigurationError):
        ConvergenceCriterion(tol1=-1.0)
    with pytest.raises(ConfigurationError):
        ConvergenceCriterion(k=0)
    assert ConvergenceCriterion().lookback() == 500
