"""Fixed-step fine-time integrators.

Classical RK4 for the generic slow-fast form, and a damped velocity-Verlet
for the spring-dashpot chain (two-stage velocity correction so the dashpot
force, which depends on the velocities being solved for, is handled without
energy blow-up). Both steppers are pure: identical inputs give bitwise
identical outputs, so concurrent integrations on distinct states are safe.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .core import (ConfigurationError, FineState, NumericError, SlowFastSystem,
                   Trajectory, eval_fine_rhs, eval_fine_rhs_frozen_load)


class IntegratorKind(Enum):
    RK4 = "rk4"
    VERLET_DAMPED = "verlet_damped"


def rk4_step(rhs, state: FineState, dsigma: float) -> FineState:
    """One classical fourth-order Runge-Kutta update of (x, l) jointly.

    ``rhs`` maps a FineState to (dx/dsigma, dl/dsigma).
    """
    if dsigma <= 0:
        raise ConfigurationError("dsigma must be positive")
    x, l, s = state.x, state.l, state.sigma

    def stage(xs, ls, ss):
        dx, dl = rhs(FineState(xs, ls, ss))
        if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dl))):
            raise NumericError(f"non-finite RK4 stage at sigma={ss}")
        return dx, dl

    k1x, k1l = stage(x, l, s)
    k2x, k2l = stage(x + 0.5 * dsigma * k1x, l + 0.5 * dsigma * k1l, s + 0.5 * dsigma)
    k3x, k3l = stage(x + 0.5 * dsigma * k2x, l + 0.5 * dsigma * k2l, s + 0.5 * dsigma)
    k4x, k4l = stage(x + dsigma * k3x, l + dsigma * k3l, s + dsigma)
    xn = x + (dsigma / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
    ln = l + (dsigma / 6.0) * (k1l + 2.0 * k2l + 2.0 * k3l + k4l)
    return FineState(xn, ln, s + dsigma)


def _spring_accels(p, x1, y1, x2, y2, w1, w2):
    a1 = -p.T_f * (p.k1 / p.m1 * (x1 - w1) - p.eta / p.m1 * (y2 - y1))
    a2 = -p.T_f * (p.k2 / p.m2 * (x2 - w2) + p.eta / p.m2 * (y2 - y1))
    return a1, a2


def verlet_damped_step(params, state: FineState, dsigma: float,
                       epsilon: float = 0.0, frozen_load: bool = False) -> FineState:
    """Damped velocity-Verlet update of the spring chain state.

    State layout is (x1, y1, x2, y2) with loads (w1, w2). Positions advance
    with dx/dsigma = T_f * y; velocities via an Euler predictor followed by
    one corrector pass, both re-evaluating the dashpot force. Loads advance
    as dw/dsigma = eps * T_s * (c1, c2) unless frozen.
    """
    if dsigma <= 0:
        raise ConfigurationError("dsigma must be positive")
    if state.x.size != 4 or state.l.size != 2:
        raise ConfigurationError("verlet stepper expects (x1,y1,x2,y2) and (w1,w2)")
    p = params
    ds = dsigma
    x1, y1, x2, y2 = state.x
    w1, w2 = state.l

    a1, a2 = _spring_accels(p, x1, y1, x2, y2, w1, w2)
    x1n = x1 + ds * p.T_f * y1 + 0.5 * ds * ds * p.T_f * a1
    x2n = x2 + ds * p.T_f * y2 + 0.5 * ds * ds * p.T_f * a2
    # predictor velocities from an Euler estimate of (y1, y2)
    b1, b2 = _spring_accels(p, x1n, y1 + ds * a1, x2n, y2 + ds * a2, w1, w2)
    y1h = y1 + 0.5 * ds * (a1 + b1)
    y2h = y2 + 0.5 * ds * (a2 + b2)
    a1c, a2c = _spring_accels(p, x1n, y1h, x2n, y2h, w1, w2)
    y1n = y1 + 0.5 * ds * (a1 + a1c)
    y2n = y2 + 0.5 * ds * (a2 + a2c)

    if frozen_load:
        w1n, w2n = w1, w2
    else:
        w1n = w1 + ds * epsilon * p.T_s * p.c1
        w2n = w2 + ds * epsilon * p.T_s * p.c2
    out = np.array([x1n, y1n, x2n, y2n])
    if not np.all(np.isfinite(out)):
        raise NumericError(f"non-finite verlet update at sigma={state.sigma}")
    return FineState(out, np.array([w1n, w2n]), state.sigma + ds)


def integrate(kind: IntegratorKind, system: SlowFastSystem, state0: FineState,
              dsigma: float, n_steps: int, sink=None, keep: int | None = None,
              frozen_load: bool = False) -> Trajectory:
    """Apply the chosen stepper n_steps times from state0.

    Every post-step sample is streamed to ``sink`` (if given) so running
    averages can be computed without storing the trajectory. Returns the
    trajectory including the initial sample, or only the last ``keep``
    samples when requested.
    """
    if n_steps < 1:
        raise ConfigurationError("n_steps must be >= 1")
    if kind is IntegratorKind.VERLET_DAMPED and system.verlet_params is None:
        raise ConfigurationError("verlet stepper is only valid for the springs system")

    if sink is None and system.kernel_id is not None:
        from . import _kernels
        integ = (_kernels.INTEG_VERLET if kind is IntegratorKind.VERLET_DAMPED
                 else _kernels.INTEG_RK4)
        xs, ls, _, _ = _kernels.k_collect(
            system.kernel_id, integ, system.kernel_params, system.n, system.m,
            system.epsilon, True, frozen_load, state0.x, state0.l, dsigma,
            n_steps, 1)
        if not np.all(np.isfinite(xs[-1])):
            raise NumericError("non-finite state in fine integration")
        traj = Trajectory(dsigma, state0.sigma, xs, ls)
        return traj.tail(min(keep, len(traj))) if keep is not None else traj

    if kind is IntegratorKind.RK4:
        rhs = (lambda s: eval_fine_rhs_frozen_load(system, s)) if frozen_load \
            else (lambda s: eval_fine_rhs(system, s))
        stepper = lambda st: rk4_step(rhs, st, dsigma)
    else:
        stepper = lambda st: verlet_damped_step(system.verlet_params, st, dsigma,
                                                epsilon=system.epsilon,
                                                frozen_load=frozen_load)

    xs = np.empty((n_steps + 1, system.n))
    ls = np.empty((n_steps + 1, system.m))
    xs[0], ls[0] = state0.x, state0.l
    state = state0
    for i in range(1, n_steps + 1):
        try:
            state = stepper(state)
        except NumericError as err:
            raise NumericError(f"step {i}: {err}") from err
        xs[i], ls[i] = state.x, state.l
        if sink is not None:
            sink(state)
    traj = Trajectory(dsigma, state0.sigma, xs, ls)
    if keep is not None:
        traj = traj.tail(min(keep, len(traj)))
    return traj
