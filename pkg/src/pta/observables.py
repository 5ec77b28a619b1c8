"""Measurements, windowed time-averages, and their convergence detection.

A slow observable here is the window average of a pointwise measurement
m(x, l) over the trailing interval [t - Delta, t] of the fast trajectory;
its rate is the difference of two such averages divided by Delta, and the
extrapolation rule is the induced forward-Euler prediction. Running averages
stop when the mean has stopped moving: the relative spread of the running
mean over a trailing comparison window falls below tol1 (or everything in the
window is below the absolute tolerance tol2, for means near zero).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import (ConfigurationError, ContractError, FineState, NoConvergence,
                   Trajectory)


@dataclass(frozen=True)
class Measurement:
    """Scalar measurement of the fine state, with a nondimensionalizing scale.

    Averages, rates, and tolerances all act on f(x, l) / normalization, so
    relative convergence decisions are unchanged by the choice of scale.
    ``load_index`` marks measurements that read off a component of the
    drifting load itself: they are averaged like any other but excluded from
    convergence gating (a moving load never has a stagnating running mean),
    and their rate comes from the measure-averaged load equation rather than
    from differences of trailing averages.
    """

    name: str
    f: Callable[[np.ndarray, np.ndarray], float]
    normalization: float = 1.0
    load_index: int | None = None

    @property
    def is_load(self):
        return self.load_index is not None

    def __post_init__(self):
        if not (self.normalization > 0):
            raise ConfigurationError("normalization must be positive")

    def __call__(self, x, l):
        return float(self.f(x, l)) / self.normalization


@dataclass(frozen=True)
class ConvergenceCriterion:
    """Stopping rule for running averages of oscillatory signals.

    The mean at sample I is converged when, for all j in [0, p],
    |m_{I-jk} - m_{I-pk}| <= tol1 * |m_{I-pk}|, falling back to the absolute
    test |m_{I-jk}| <= tol2 when the anchor mean is itself below tol2.
    Checks run at multiples of the stride k only, from I >= n_min on;
    lookbacks earlier than the first sample are clamped to it. With k equal
    to one fast period of samples, the compared means sit on whole-period
    boundaries where discrete oscillation sums cancel, so the rule fires at
    I ~ (p + 1) k for both decaying and zero-mean oscillatory measurements.
    """

    tol1: float = 1e-2
    tol2: float = 1e-5
    k: int = 100
    p: int = 5
    n_min: int = 500
    n_max: int = 50_000

    def __post_init__(self):
        if self.tol1 <= 0 or self.tol2 <= 0:
            raise ConfigurationError("tolerances must be positive")
        if self.k < 1 or self.p < 1 or self.n_min < 1:
            raise ConfigurationError("k, p, n_min must be >= 1")

    def lookback(self):
        return self.p * self.k


@dataclass(frozen=True)
class HObservable:
    """A measurement together with its trailing averaging window Delta."""

    measurement: Measurement
    delta: float

    def __post_init__(self):
        if self.delta <= 0:
            raise ConfigurationError("delta must be positive")

    def value(self, window: Trajectory, n_expected: int | None = None) -> float:
        return window_average(window, self.measurement, n_expected)

    def rate(self, r_t: float, r_tminusdelta: float) -> float:
        return rate_of_change(r_t, r_tminusdelta, self.delta)


class _MeanHistory:
    """Ring buffer of running means supporting clamped stride lookbacks."""

    def __init__(self, k: int, p: int, n_cols: int):
        self.size = p * k + 1
        self.buf = np.empty((self.size, n_cols))
        self.count = 0

    def push(self, means):
        self.buf[self.count % self.size] = means
        self.count += 1

    def at(self, i):
        # i is a 1-based sample index, clamped callers guarantee it is in window
        return self.buf[(i - 1) % self.size]


def _check_converged(hist: _MeanHistory, crit: ConvergenceCriterion, n_cols: int):
    """Apply the stopping rule at the current sample; all columns must pass."""
    i = hist.count
    if i < crit.n_min:
        return False
    anchor = hist.at(max(1, i - crit.p * crit.k))
    ok = np.ones(n_cols, dtype=bool)
    small = np.abs(anchor) < crit.tol2
    for j in range(crit.p + 1):
        m_j = hist.at(max(1, i - j * crit.k))
        rel = np.abs(m_j - anchor) <= crit.tol1 * np.abs(anchor)
        absf = np.abs(m_j) <= crit.tol2
        ok &= np.where(small, absf, rel)
        if not ok.any():
            return False
    return bool(ok.all())


def running_average(stream, measurement: Measurement,
                    criterion: ConvergenceCriterion):
    """Mean of the measurement over a fine-state stream, stopped at convergence.

    Returns (R, N, x_last): the converged running mean (nondimensional), the
    number of samples consumed, and the fine state at the convergence sample
    (the re-initialization anchor for later bursts). Raises NoConvergence if
    the stream ends first.
    """
    hist = _MeanHistory(criterion.k, criterion.p, 1)
    total = 0.0
    n = 0
    last = None
    for state in stream:
        last = state
        n += 1
        total += measurement(state.x, state.l)
        mean = total / n
        hist.push(mean)
        if n % criterion.k == 0 and _check_converged(hist, criterion, 1):
            return mean, n, state
        if n >= criterion.n_max:
            break
    mean = total / n if n else float("nan")
    raise NoConvergence(
        f"running average of '{measurement.name}' did not converge in {n} samples",
        partial_mean=mean, n_samples=n, last_state=last)


def rate_of_change(r_t: float, r_tminusdelta: float, delta: float) -> float:
    """Windowed derivative (R_t - R_{t-Delta}) / Delta."""
    if delta <= 0:
        raise ConfigurationError("delta must be positive")
    return (r_t - r_tminusdelta) / delta


def extrapolate(v: float, dvdt: float, h: float) -> float:
    """Forward prediction v + h * dv/dt."""
    return v + h * dvdt


def window_average(window: Trajectory, measurement: Measurement,
                   n_expected: int | None = None) -> float:
    """Arithmetic mean of the measurement over a trajectory window."""
    if n_expected is not None and len(window) != n_expected:
        raise ContractError(
            f"window has {len(window)} samples, expected {n_expected}")
    vals = [measurement(window.x[i], window.l[i]) for i in range(len(window))]
    return float(np.mean(vals))


def simpson_observable(r_nodes: Sequence[float]) -> float:
    """Window mean from running averages at t-Delta, t-Delta/2, t.

    Simpson's rule on the three nodes, normalized by the window length:
    (R0 + 4 R1 + R2) / 6. Exact for node values cubic in t.
    """
    if len(r_nodes) != 3:
        raise ContractError("simpson_observable needs exactly 3 node values")
    r0, r1, r2 = r_nodes
    return (r0 + 4.0 * r1 + r2) / 6.0


def support_max(window: Trajectory, direction) -> float:
    """Largest projection x . e over the window samples (support extent)."""
    e = np.asarray(direction, dtype=np.float64).reshape(-1)
    if len(window) == 0:
        raise ContractError("window must be non-empty")
    if abs(np.linalg.norm(e) - 1.0) > 1e-9:
        raise ConfigurationError("direction must be a unit vector")
    return float(np.max(window.x @ e))
