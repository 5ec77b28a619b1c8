"""Slow-fast system abstractions shared by the whole toolkit.

A system couples a fast state x in R^n to a slowly evolving load l in R^m:

    dx/dt = (1/eps) F(x, l) + G(x, l),      dl/dt = L(x, l),

with eps the fast/slow time-scale ratio. All fine integration happens on the
fast clock sigma = t/eps, where the same dynamics read

    dx/dsigma = F + eps G,      dl/dsigma = eps L.

Everything here is immutable after construction and safe to share across
concurrent integrations; right-hand sides must be reentrant pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class PtaError(Exception):
    """Base class for toolkit errors."""


class ConfigurationError(PtaError, ValueError):
    """Inconsistent dimensions, parameters, or run configuration."""


class NumericError(PtaError, ArithmeticError):
    """A right-hand side or update produced a non-finite value."""


class ContractError(PtaError, ValueError):
    """An operation was fed data violating its stated contract."""


class NormalizationUndefined(PtaError, ValueError):
    """Nondimensionalization requested but the reference scale is zero."""


class NoConvergence(PtaError, RuntimeError):
    """A running average ran out of samples before converging.

    Carries the partial result so the caller can decide whether to extend
    the burst or abort.
    """

    def __init__(self, message, partial_mean=None, n_samples=0, last_state=None):
        super().__init__(message)
        self.partial_mean = partial_mean
        self.n_samples = n_samples
        self.last_state = last_state


class StepFailed(PtaError, RuntimeError):
    """A coarse step exhausted its retries without a match or a jump."""

    def __init__(self, message, diagnostics=None, partial_report=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
        self.partial_report = partial_report


def _as_vector(v, dim, name):
    arr = np.asarray(v, dtype=np.float64).reshape(-1)
    if arr.size != dim:
        raise ConfigurationError(f"{name} has size {arr.size}, expected {dim}")
    return arr


@dataclass(frozen=True)
class FineState:
    """Fast state x, load l, and the fast time sigma they belong to."""

    x: np.ndarray
    l: np.ndarray
    sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "l", np.asarray(self.l, dtype=np.float64).reshape(-1))
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.l))
                and np.isfinite(self.sigma)):
            raise NumericError("FineState components must be finite")


@dataclass(frozen=True)
class TimeScales:
    """Fast and slow periods in seconds; epsilon is their exact ratio."""

    T_f: float
    T_s: float

    def __post_init__(self):
        if self.T_f <= 0 or self.T_s <= 0:
            raise ConfigurationError("time scales must be positive")

    @property
    def epsilon(self):
        return self.T_f / self.T_s


@dataclass(frozen=True)
class SlowFastSystem:
    """The triple (F, G, L) with dimensions, epsilon, and a label.

    F, G map (x, l) -> R^n in fast-time units; L maps (x, l) -> R^m (slow-form
    load rate, so that dl/dsigma = eps * L). m = 0 encodes the loadless form.

    ``kernel_id``/``kernel_params`` are an optional fast-integration hook used
    by the built-in models; generic systems leave them unset and integrate
    through the pure-Python path.
    """

    n: int
    m: int
    F: Callable[[np.ndarray, np.ndarray], np.ndarray]
    G: Callable[[np.ndarray, np.ndarray], np.ndarray]
    L: Callable[[np.ndarray, np.ndarray], np.ndarray]
    epsilon: float
    label: str = ""
    kernel_id: int | None = None
    kernel_params: np.ndarray | None = field(default=None, repr=False)
    verlet_params: object | None = field(default=None, repr=False)
    # per-component scales for state-space distances (length n + m);
    # mixed-unit states (positions vs velocities) need them so projections
    # compare nondimensional coordinates
    projection_weights: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.n < 1:
            raise ConfigurationError("fast dimension n must be >= 1")
        if self.m < 0:
            raise ConfigurationError("load dimension m must be >= 0")
        if not (self.epsilon > 0):
            raise ConfigurationError("epsilon must be positive")

    def state(self, x, l=(), sigma=0.0) -> FineState:
        """Build a FineState with this system's dimensions checked."""
        return FineState(_as_vector(x, self.n, "x"),
                         _as_vector(l, self.m, "l"), float(sigma))


def _check_finite(vec, label, state):
    bad = np.flatnonzero(~np.isfinite(vec))
    if bad.size:
        raise NumericError(
            f"{label} produced non-finite component {bad[0]} at sigma={state.sigma}")
    return vec


def eval_fine_rhs(system: SlowFastSystem, state: FineState):
    """Fast-clock derivatives (dx/dsigma, dl/dsigma) = (F + eps G, eps L)."""
    if state.x.size != system.n or state.l.size != system.m:
        raise ConfigurationError(
            f"state dims ({state.x.size}, {state.l.size}) do not match "
            f"system ({system.n}, {system.m})")
    f = _as_vector(system.F(state.x, state.l), system.n, "F(x,l)")
    g = _as_vector(system.G(state.x, state.l), system.n, "G(x,l)")
    dx = f + system.epsilon * g
    _check_finite(dx, "dx/dsigma", state)
    if system.m == 0:
        return dx, np.empty(0)
    dl = system.epsilon * _as_vector(system.L(state.x, state.l), system.m, "L(x,l)")
    _check_finite(dl, "dl/dsigma", state)
    return dx, dl


def eval_fine_rhs_frozen_load(system: SlowFastSystem, state: FineState):
    """As eval_fine_rhs but with the load held fixed (dl/dsigma = 0)."""
    dx, dl = eval_fine_rhs(system, state)
    return dx, np.zeros_like(dl)


@dataclass(frozen=True)
class Trajectory:
    """Uniformly spaced fine-time samples; the occupational-measure proxy.

    ``x`` has shape (N, n) and ``l`` shape (N, m); sample i sits at
    sigma0 + i * dsigma.
    """

    dsigma: float
    sigma0: float
    x: np.ndarray
    l: np.ndarray

    def __post_init__(self):
        if self.dsigma <= 0:
            raise ConfigurationError("dsigma must be positive")
        if self.x.ndim != 2 or self.x.shape[0] == 0:
            raise ConfigurationError("trajectory must be non-empty")
        if self.l.shape[0] != self.x.shape[0]:
            raise ConfigurationError("x and l sample counts differ")

    def __len__(self):
        return self.x.shape[0]

    @property
    def sigmas(self):
        return self.sigma0 + self.dsigma * np.arange(len(self))

    def state(self, i) -> FineState:
        return FineState(self.x[i].copy(), self.l[i].copy(),
                         self.sigma0 + self.dsigma * (i % len(self) if i < 0 else i))

    def tail(self, n) -> "Trajectory":
        """Last n samples as a trajectory window."""
        if n < 1 or n > len(self):
            raise ContractError(f"cannot take tail of {n} from {len(self)} samples")
        start = len(self) - n
        return Trajectory(self.dsigma, self.sigma0 + start * self.dsigma,
                          self.x[start:], self.l[start:])
