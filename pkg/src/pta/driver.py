"""The coarse-stepping driver: practical time averaging.

March in slow-time steps of size h. Each step measures the rate of the slow
observables from two convergence-stopped fine averages Delta apart,
extrapolates, re-initializes a short fine burst from an intelligent guess of
a support point of the drifting measure (closest-point projection plus linear
extrapolation), and accepts the burst when its observable values match the
prediction. A mismatch with a large relative change of the running averages
against their recent history is declared a jump of the measure and the burst
value is accepted as-is; other mismatches trigger perturbed re-guesses.

The coarse loop is strictly sequential; within a step, candidate guesses are
independent and may be evaluated concurrently (PTA_THREADS).
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import _kernels
from .core import (ConfigurationError, FineState, NoConvergence, SlowFastSystem,
                   StepFailed, Trajectory)
from .integrators import IntegratorKind, rk4_step, verlet_damped_step
from .observables import ConvergenceCriterion, Measurement, simpson_observable
from .report import RunReport

ACCEPTED = "accepted"
RETRIED = "retried_then_accepted"
JUMP = "jump_detected"

_CANONICAL_NAMES = {
    _kernels.MODEL_ROTATING: ["x1", "x2", "x3", "x4", "w1", "w2", "w3", "w4"],
    _kernels.MODEL_SPRINGS: ["K", "U", "R2", "w1", "w2"],
    _kernels.MODEL_RELAX: ["y", "z", "w", "x"],
}


@dataclass(frozen=True)
class PtaConfig:
    """All knobs of a coarse-graining run (slow-time units)."""

    h: float
    delta: float
    dsigma: float
    t_end: float
    criterion: ConvergenceCriterion = field(default_factory=ConvergenceCriterion)
    jump_factor: float = 10.0
    match_rtol: float = 5e-2
    match_floor: float = 5e-2
    max_retries: int = 4
    slow_value_rule: str = "window"
    frozen_load_in_bursts: bool = False
    eps_zero_rates: bool = False
    on_jump: str = "declare"
    burn_samples: int = 500
    jump_rel_floor: float = 1e-3
    jump_history_cap: int = 8
    cp_budget_cap: int = 2500

    def __post_init__(self):
        if not (0 < self.delta < self.h <= self.t_end):
            raise ConfigurationError("need 0 < delta < h <= t_end")
        if self.dsigma <= 0:
            raise ConfigurationError("dsigma must be positive")
        if self.jump_factor <= 1:
            raise ConfigurationError("jump_factor must exceed 1")
        if self.max_retries < 1:
            raise ConfigurationError("max_retries must be >= 1")
        if self.slow_value_rule not in ("window", "simpson"):
            raise ConfigurationError("slow_value_rule must be 'window' or 'simpson'")
        if self.on_jump not in ("declare", "resolve_fine"):
            raise ConfigurationError("on_jump must be 'declare' or 'resolve_fine'")

    def n_prime(self, epsilon: float) -> int:
        """Fine samples per averaging window, N' = Delta / (eps * dsigma)."""
        n = int(round(self.delta / (epsilon * self.dsigma)))
        if n < 2:
            raise ConfigurationError("window shorter than two fine steps")
        return n

    def n_rounds(self) -> int:
        n = int(round(self.t_end / self.h))
        if abs(n * self.h - self.t_end) > 1e-9 * self.t_end:
            raise ConfigurationError("t_end must be an integer multiple of h")
        return n


@dataclass
class CoarseStepMemory:
    """Carry-over state between coarse steps.

    Entering the step at slow time t this holds the accepted values v(t), the
    pending support guess x_guess(t - Delta) (seed of this step's trailing
    average), the converged anchors and lengths of the previous step's two
    fine runs (projection seeds and budgets), the previous rate averages, and
    the jump-detection history of relative changes.
    """

    t: float
    v_acc: np.ndarray
    x_guess_support: FineState
    x_arb_prev: FineState
    n_arb_prev: int
    x_conv_rate_prev: FineState
    n_rate_prev: int
    r_rate_prev: np.ndarray | None
    x_cp_prev: FineState | None
    r_history: list
    last_was_jump: bool = False
    prepared: dict | None = None


@dataclass
class StepOutcome:
    """Per-coarse-step record: prediction, acceptance, and diagnostics."""

    t: float
    v_pred: np.ndarray
    v_acc: np.ndarray
    status: str
    retries: int
    jumps: np.ndarray
    n_rate: int
    n_burst: int
    wall_burst: float
    wall_overhead: float
    diagnostics: dict = field(default_factory=dict)


class _Runner:
    """Fine-run executor; dispatches to compiled kernels for built-in models."""

    def __init__(self, system: SlowFastSystem, measurements: Sequence[Measurement],
                 config: PtaConfig):
        self.system = system
        self.measurements = list(measurements)
        self.config = config
        self.norms = np.array([m.normalization for m in self.measurements])
        self.gate = np.array([not m.is_load for m in self.measurements])
        self.n_prime = config.n_prime(system.epsilon)
        names = [m.name for m in self.measurements]
        self.kernel = (system.kernel_id is not None
                       and names == _CANONICAL_NAMES.get(system.kernel_id))
        self.integ = (_kernels.INTEG_VERLET if system.verlet_params is not None
                      else _kernels.INTEG_RK4)

    # ---- generic python stepping (fallback for custom systems) ----

    def _py_step(self, state: FineState, coupled: bool, frozen: bool) -> FineState:
        sys_ = self.system
        if self.integ == _kernels.INTEG_VERLET:
            if not coupled:
                frozen = True
            return verlet_damped_step(sys_.verlet_params, state, self.config.dsigma,
                                      epsilon=sys_.epsilon, frozen_load=frozen)

        def rhs(st):
            f = np.asarray(sys_.F(st.x, st.l), dtype=float)
            dx = f + sys_.epsilon * np.asarray(sys_.G(st.x, st.l), dtype=float) \
                if coupled else f
            if sys_.m and coupled and not frozen:
                dl = sys_.epsilon * np.asarray(sys_.L(st.x, st.l), dtype=float)
            else:
                dl = np.zeros(sys_.m)
            return dx, dl

        return rk4_step(rhs, state, self.config.dsigma)

    def _meas(self, state: FineState) -> np.ndarray:
        return np.array([m(state.x, state.l) for m in self.measurements])

    # ---- primitives ----

    def converged_average(self, state: FineState, coupled: bool, frozen: bool,
                          burn: int, what: str = "average",
                          required: bool = False):
        """Run until all running averages converge.

        Returns (R, n_total, end_state, converged, load_rate), where
        load_rate is the averaged slow-form load rate over the same samples
        (the measure average of L driving the limit load motion). Extends the
        sample budget once (doubled) before giving up; an unconverged average
        is returned as a usable estimate unless ``required``, in which case
        NoConvergence is raised (initialization has no downstream safety net,
        coarse steps do: the burst match test arbitrates anyway).
        """
        crit = self.config.criterion
        # budgets are slow-time bounded: an averaging run that spans a large
        # fraction of the window lets the measure itself drift (and near a
        # discontinuity, slide across it), which no stagnation test survives
        base = max(min(crit.n_max, self.n_prime // 8),
                   crit.n_min + (crit.p + 1) * crit.k)
        for n_max in (base, 2 * base):
            r, lbar, total, end, ok = self._converge_once(state, coupled,
                                                          frozen, burn, n_max)
            if ok:
                return r, total, end, True, lbar
        if required:
            raise NoConvergence(
                f"{what} did not converge within {total} samples",
                partial_mean=r, n_samples=total, last_state=end)
        return r, total, end, False, lbar

    def _converge_once(self, state, coupled, frozen, burn, n_max):
        crit = self.config.criterion
        if self.kernel:
            r, lbar, total, x, l, ok = _kernels.k_converge(
                self.system.kernel_id, self.integ, self.system.kernel_params,
                self.norms, self.system.n, self.system.m, len(self.norms),
                self.system.epsilon, coupled, frozen, state.x, state.l,
                self.config.dsigma, burn, crit.n_min, n_max, crit.k, crit.p,
                crit.tol1, crit.tol2, self.gate)
            end = FineState(x, l, state.sigma + total * self.config.dsigma)
            return r, lbar, total, end, bool(ok)
        n_meas = len(self.measurements)
        hist = np.empty((crit.p * crit.k + 1, n_meas))
        sums = np.zeros(n_meas)
        lr_sums = np.zeros(self.system.m)
        st = state
        total = 0
        for _ in range(burn):
            st = self._py_step(st, coupled, frozen)
            total += 1
        count = 0
        while count < n_max:
            st = self._py_step(st, coupled, frozen)
            total += 1
            count += 1
            sums += self._meas(st)
            if self.system.m:
                lr_sums += np.asarray(self.system.L(st.x, st.l), dtype=float)
            hist[(count - 1) % hist.shape[0]] = sums / count
            if (count >= crit.n_min and count % crit.k == 0
                    and _kernels._conv_check.py_func(
                        hist, count, n_meas, crit.k, crit.p, crit.tol1,
                        crit.tol2, self.gate)):
                return sums / count, lr_sums / count, total, st, True
        return sums / max(count, 1), lr_sums / max(count, 1), total, st, False

    def window_means(self, state: FineState, n_steps: int, coupled: bool,
                     frozen: bool, burn: int = 0):
        if self.kernel:
            means, x, l = _kernels.k_window(
                self.system.kernel_id, self.integ, self.system.kernel_params,
                self.norms, self.system.n, self.system.m, len(self.norms),
                self.system.epsilon, coupled, frozen, state.x, state.l,
                self.config.dsigma, n_steps, burn)
            return means, FineState(x, l, state.sigma + n_steps * self.config.dsigma)
        sums = np.zeros(len(self.measurements))
        st = state
        for i in range(n_steps):
            st = self._py_step(st, coupled, frozen)
            if i >= burn:
                sums += self._meas(st)
        return sums / (n_steps - burn), st

    def _weights(self):
        w = self.system.projection_weights
        if w is None:
            return np.ones(self.system.n + self.system.m)
        return np.asarray(w, dtype=float)

    def project(self, start: FineState, ref: FineState, max_steps: int,
                coupled: bool, frozen: bool):
        w = self._weights()
        if self.kernel:
            x, l, idx, d2 = _kernels.k_project(
                self.system.kernel_id, self.integ, self.system.kernel_params,
                self.system.n, self.system.m, self.system.epsilon, coupled,
                frozen, start.x, start.l, self.config.dsigma, max_steps,
                ref.x, ref.l, w)
            return FineState(x, l, start.sigma + idx * self.config.dsigma), d2, idx
        wx, wl = w[:self.system.n], w[self.system.n:]
        st = start
        best = start
        best_d2 = float(np.sum((wx * (start.x - ref.x)) ** 2)
                        + np.sum((wl * (start.l - ref.l)) ** 2))
        best_i = 0
        for i in range(1, max_steps + 1):
            st = self._py_step(st, coupled, frozen)
            d2 = float(np.sum((wx * (st.x - ref.x)) ** 2)
                       + np.sum((wl * (st.l - ref.l)) ** 2))
            if d2 < best_d2:
                best, best_d2, best_i = st, d2, i
        return best, best_d2, best_i

    def advance(self, state: FineState, n_steps: int, coupled: bool, frozen: bool):
        if self.kernel:
            xs, ls, x, l = _kernels.k_collect(
                self.system.kernel_id, self.integ, self.system.kernel_params,
                self.system.n, self.system.m, self.system.epsilon, coupled,
                frozen, state.x, state.l, self.config.dsigma, n_steps, n_steps)
            return FineState(x, l, state.sigma + n_steps * self.config.dsigma)
        st = state
        for _ in range(n_steps):
            st = self._py_step(st, coupled, frozen)
        return st

    def collect(self, state: FineState, n_steps: int, stride: int = 1,
                coupled: bool = True, frozen: bool = False) -> Trajectory:
        if self.kernel:
            xs, ls, _, _ = _kernels.k_collect(
                self.system.kernel_id, self.integ, self.system.kernel_params,
                self.system.n, self.system.m, self.system.epsilon, coupled,
                frozen, state.x, state.l, self.config.dsigma, n_steps, stride)
            return Trajectory(self.config.dsigma * stride, state.sigma, xs, ls)
        xs = [state.x]
        ls = [state.l]
        st = state
        for i in range(1, n_steps + 1):
            st = self._py_step(st, coupled, frozen)
            if i % stride == 0:
                xs.append(st.x)
                ls.append(st.l)
        return Trajectory(self.config.dsigma * stride, state.sigma,
                          np.array(xs), np.array(ls))

    def fine_window_series(self, state: FineState, total_steps: int,
                           starts: np.ndarray, n_prime: int):
        if self.kernel:
            means, _, _ = _kernels.k_fine_windows(
                self.system.kernel_id, self.integ, self.system.kernel_params,
                self.norms, self.system.n, self.system.m, len(self.norms),
                self.system.epsilon, state.x, state.l, self.config.dsigma,
                total_steps, starts, n_prime)
            return means
        means = np.zeros((len(starts), len(self.measurements)))
        st = state
        g = 0
        for step in range(1, total_steps + 1):
            st = self._py_step(st, coupled=True, frozen=False)
            while g < len(starts) and step > starts[g] + n_prime:
                g += 1
            if g < len(starts) and starts[g] < step <= starts[g] + n_prime:
                means[g] += self._meas(st)
        return means / n_prime


# ---- the scheme's elementary moves ----


def guess_next_support(x_arb: FineState, x_cp: FineState, retry: int = 0,
                       max_retries: int = 4, load=None) -> FineState:
    """Support guess 2 * x_arb - x_cp, componentwise on the fast state.

    The load is not extrapolated through support points: it follows its own
    evolution (the caller supplies the value advanced by the measured load
    rate; default keeps x_arb's load). Retry r shrinks the extrapolation
    back toward the last known support point:
    candidate = guess + (r / max_retries) * (x_arb - guess).
    """
    gx = 2.0 * x_arb.x - x_cp.x
    if retry:
        gx = gx + (retry / max_retries) * (x_arb.x - gx)
    gl = x_arb.l if load is None else np.asarray(load, dtype=float)
    return FineState(gx, gl.copy(), x_arb.sigma)


def guess_rate_ic(x_arb: FineState, x_cp_rate: FineState, h: float,
                  delta: float, load_rate=None) -> FineState:
    """Seed for the rate average at t: extrapolate x_arb by Delta along the
    support drift measured between t - h and t - Delta; the load advances by
    the measured load rate."""
    if h == delta:
        raise ConfigurationError("h must differ from delta")
    w = delta / (h - delta)
    if load_rate is None:
        gl = x_arb.l + w * (x_arb.l - x_cp_rate.l)
    else:
        gl = x_arb.l + delta * np.asarray(load_rate, dtype=float)
    return FineState(x_arb.x + w * (x_arb.x - x_cp_rate.x), gl, x_arb.sigma)


def detect_jump(r_new: float, r_old: float, history: Sequence[float],
                jump_factor: float, rel_floor: float = 1e-3,
                denom_floor: float = 1e-3) -> bool:
    """Is the change of a running average far outside its recent history?

    True iff |R_new - R_old| / max(|R_old|, denom_floor) exceeds both
    jump_factor times the mean historical relative change and the absolute
    floor. Empty history cannot assess a jump and returns False.
    """
    if len(history) == 0:
        return False
    rel = abs(r_new - r_old) / max(abs(r_old), denom_floor)
    return rel > jump_factor * float(np.mean(history)) and rel > rel_floor


def closest_point_projection(x_ref: FineState, start: FineState, max_steps: int,
                             runner: _Runner, coupled: bool = True,
                             frozen: bool = False) -> FineState:
    """Sample of the trajectory from ``start`` nearest to ``x_ref``.

    Distance is Euclidean over fast state and load jointly; ties break toward
    the earliest sample.
    """
    if max_steps < 1:
        raise ConfigurationError("max_steps must be >= 1")
    best, _, _ = runner.project(start, x_ref, max_steps, coupled, frozen)
    return best


# ---- driver ----


def _history_arrays(history, n_obs):
    per_obs = [[] for _ in range(n_obs)]
    for entry in history:
        for i in range(n_obs):
            per_obs[i].append(entry[i])
    return per_obs


def _burst_values(runner: _Runner, config: PtaConfig, cand: FineState,
                  drift_x, drift_l, n_prime: int):
    """Evaluate the burst side of the match test for one candidate guess.

    Window rule: one epsilon-coupled run of N' steps, mean per observable.
    Simpson rule: three convergence-stopped averages at the window's ends and
    midpoint, node seeds marched along the support drift, fast-time equation
    only (order-epsilon terms off); combined as (R0 + 4 R1 + R2) / 6.
    Returns (v_burst, r_new, n_burst).
    """
    if config.slow_value_rule == "window":
        means, _ = runner.window_means(cand, n_prime, coupled=True,
                                       frozen=config.frozen_load_in_bursts)
        return means, means, n_prime
    nodes = []
    n_total = 0
    for i in range(3):
        s = 0.5 * i * config.delta
        ic = FineState(cand.x + s * drift_x, cand.l + s * drift_l, cand.sigma)
        r, n, _, _, _ = runner.converged_average(ic, coupled=False, frozen=True,
                                                 burn=config.burn_samples,
                                                 what=f"simpson node {i}")
        nodes.append(r)
        n_total += n
    v = np.array([simpson_observable([nodes[0][i], nodes[1][i], nodes[2][i]])
                  for i in range(len(nodes[0]))])
    return v, nodes[2], n_total


def _match(v_burst, v_pred, config: PtaConfig):
    tol = config.match_rtol * np.maximum(np.abs(v_pred), config.match_floor)
    return np.abs(v_burst - v_pred) <= tol


def initialize(system: SlowFastSystem, x0, l0, config: PtaConfig,
               observables: Sequence[Measurement]):
    """Set up the coarse loop from fine initial data given at slow time -Delta.

    One coupled fine run over [-Delta, 0] supplies the t = 0 observable
    values (mean over the window's trailing half, so decay transients drop
    out), the trailing running average R_{-Delta}, and the t = 0 rate seed
    (the run's final state). A first support guess for h - Delta is then
    extrapolated through the closest-point projection onto the initial run.

    Returns (memory, v0, wall_seconds).
    """
    t0 = time.perf_counter()
    runner = _Runner(system, observables, config)
    eps = system.epsilon
    n_prime = config.n_prime(eps)
    state0 = FineState(np.asarray(x0, float), np.asarray(l0, float),
                       -config.delta / eps)

    # full-equation pass over [-Delta, 0]: slow values at t = 0 (trailing
    # half of the window, so decay transients drop out) and the t = 0 seed
    win, zero = runner.window_means(state0, n_prime, coupled=True, frozen=False,
                                    burn=n_prime // 2)
    frozen = config.frozen_load_in_bursts
    coupled = not config.eps_zero_rates
    # trailing average at -Delta, run with the rate-run load semantics
    r_md, n_md, x_arb_init, _, _ = runner.converged_average(
        state0, coupled=coupled, frozen=frozen, burn=n_prime // 2,
        what="initial average", required=True)
    r_0, n_0, x_conv_rate, _, lbar_0 = runner.converged_average(
        zero, coupled=coupled, frozen=frozen, burn=config.burn_samples,
        what="rate average at t=0", required=True)
    if config.slow_value_rule == "simpson":
        # trapezoid over [-Delta, 0]: unbiased for linearly drifting loads
        v0 = 0.5 * (r_md + r_0)
    else:
        v0 = win

    budget = max(1, min(2 * n_md, config.cp_budget_cap))
    x_cp, _, _ = runner.project(x_arb_init, x_conv_rate, budget, coupled, frozen)
    scale = (config.h - config.delta) / config.delta
    gx = x_conv_rate.x + scale * (x_conv_rate.x - x_cp.x)
    # the load follows its own evolution: measured average load rate from
    # the slow time the t = 0 anchor actually reached
    lt_rate = 0.0 if frozen or not coupled else n_0 * eps * config.dsigma
    gl = x_conv_rate.l + ((config.h - config.delta) - lt_rate) * lbar_0
    guess = FineState(gx, gl, (config.h - config.delta) / eps)
    drift_x = (x_conv_rate.x - x_cp.x) / config.delta
    drift_l = lbar_0.copy()

    memory = CoarseStepMemory(
        t=0.0, v_acc=v0, x_guess_support=guess,
        x_arb_prev=x_arb_init, n_arb_prev=n_md,
        x_conv_rate_prev=x_conv_rate, n_rate_prev=n_0,
        r_rate_prev=None, x_cp_prev=x_cp, r_history=[],
        prepared={
            "r_tmd": r_md, "x_arb": x_arb_init, "n_arb": n_md,
            "r_t": r_0, "x_conv_rate": x_conv_rate, "n_rate": n_0,
            "x_guess_sup": guess, "x_cp_sup": x_cp,
            "drift_x": drift_x, "drift_l": drift_l, "lbar_t": lbar_0,
        })
    return memory, v0, time.perf_counter() - t0


def coarse_step(system: SlowFastSystem, memory: CoarseStepMemory,
                config: PtaConfig, observables: Sequence[Measurement]):
    """One coarse increment from memory.t to memory.t + h.

    Computes the observable rates from two trailing averages, extrapolates,
    guesses a support point at t + h - Delta, runs the acceptance burst, and
    applies the match/retry/jump policy. Returns (StepOutcome, new memory).
    """
    runner = _Runner(system, observables, config)
    eps = system.epsilon
    h, delta = config.h, config.delta
    n_prime = config.n_prime(eps)
    frozen = config.frozen_load_in_bursts
    coupled = not config.eps_zero_rates
    t = memory.t
    wall0 = time.perf_counter()

    ok_tmd = ok_t = True
    if memory.prepared is not None:
        p = memory.prepared
        r_tmd, x_arb, n_arb = p["r_tmd"], p["x_arb"], p["n_arb"]
        r_t, x_conv_rate, n_rate = p["r_t"], p["x_conv_rate"], p["n_rate"]
        x_guess_sup, x_cp_sup = p["x_guess_sup"], p["x_cp_sup"]
        drift_x, drift_l = p["drift_x"], p["drift_l"]
        lbar_t = p["lbar_t"]
    else:
        # trailing average at t - Delta from the stored support guess
        r_tmd, n_arb, x_arb, ok_tmd, lbar_tmd = runner.converged_average(
            memory.x_guess_support, coupled=coupled, frozen=frozen,
            burn=config.burn_samples, what=f"average at t={t - delta:g}")
        # each anchor's load sits at the slow time its run reached: frozen
        # runs hold the load at their start, coupled runs advance it
        lt_arb = (t - delta) + (0.0 if frozen or not coupled
                                else n_arb * eps * config.dsigma)
        # rate seed at t via projection onto the previous rate trajectory
        budget = max(1, min(2 * memory.n_rate_prev, config.cp_budget_cap))
        x_cp_rate, _, _ = runner.project(memory.x_conv_rate_prev, x_arb,
                                         budget, coupled, frozen)
        seed_t = guess_rate_ic(x_arb, x_cp_rate, h, delta)
        seed_t = FineState(seed_t.x, x_arb.l + (t - lt_arb) * lbar_tmd,
                           t / eps)
        r_t, n_rate, x_conv_rate, ok_t, lbar_t = runner.converged_average(
            seed_t, coupled=coupled, frozen=frozen, burn=config.burn_samples,
            what=f"rate average at t={t:g}")
        # a non-stagnating rate run may have slid across a discontinuity;
        # its load rate is then untrustworthy, fall back to the trailing one
        if not ok_t:
            lbar_t = lbar_tmd
        lt_rate = t + (0.0 if frozen or not coupled
                       else n_rate * eps * config.dsigma)
        # support guess for t + h - Delta; load advances by its measured rate
        budget = max(1, min(2 * memory.n_arb_prev, config.cp_budget_cap))
        x_cp_sup, _, _ = runner.project(memory.x_arb_prev, x_arb,
                                        budget, coupled, frozen)
        load_sup = x_conv_rate.l + ((t + h - delta) - lt_rate) * lbar_t
        x_guess_sup = guess_next_support(x_arb, x_cp_sup, load=load_sup)
        x_guess_sup = FineState(x_guess_sup.x, x_guess_sup.l,
                                (t + h - delta) / eps)
        drift_x = (x_arb.x - x_cp_sup.x) / h
        drift_l = lbar_t.copy()

    dvdt = (r_t - r_tmd) / delta
    # load observables extrapolate by the measured average load rate, the
    # limit equation for the load motion (trailing-average differences of a
    # drifting quantity depend on where each run sampled its window)
    for i, meas in enumerate(observables):
        if meas.load_index is not None and meas.load_index < len(lbar_t):
            dvdt[i] = lbar_t[meas.load_index] / meas.normalization
    v_pred = memory.v_acc + h * dvdt

    # jump history entry spanning [t - h, t]; skipped across declared jumps
    # and when either average failed to stagnate (untrustworthy statistics)
    history = list(memory.r_history)
    if (memory.r_rate_prev is not None and not memory.last_was_jump
            and ok_tmd and ok_t):
        denom = np.maximum(np.abs(memory.r_rate_prev), config.jump_rel_floor)
        history.append(np.abs(r_t - memory.r_rate_prev) / denom)
        history = history[-config.jump_history_cap:]
    hist_per_obs = _history_arrays(history, len(observables))

    candidates = [guess_next_support(x_arb, x_cp_sup, retry=r,
                                     max_retries=config.max_retries,
                                     load=x_guess_sup.l)
                  if r else x_guess_sup for r in range(config.max_retries + 1)]
    candidates = [FineState(c.x, c.l, (t + h - delta) / eps) for c in candidates]

    n_threads = int(os.environ.get("PTA_THREADS", "1") or "1")
    wall_burst0 = time.perf_counter()
    overhead = wall_burst0 - wall0

    def evaluate(cand):
        return _burst_values(runner, config, cand, drift_x, drift_l, n_prime)

    status = None
    retries = 0
    jumps = np.zeros(len(observables), dtype=bool)
    diagnostics = {"candidates": [], "v_pred": v_pred,
                   "unconverged_rates": not (ok_tmd and ok_t)}
    results = None
    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(evaluate, candidates))

    v_acc = None
    accepted = None
    n_burst = 0
    for r, cand in enumerate(candidates):
        v_burst, r_new, n_b = results[r] if results else evaluate(cand)
        diagnostics["candidates"].append(v_burst)
        if bool(np.all(_match(v_burst, v_pred, config))):
            status = ACCEPTED if r == 0 else RETRIED
            retries = r
            v_acc, accepted, n_burst = v_burst, cand, n_b
            break
        if r == 0:
            jumps = np.array([detect_jump(r_new[i], r_t[i], hist_per_obs[i],
                                          config.jump_factor,
                                          config.jump_rel_floor,
                                          config.jump_rel_floor)
                              for i in range(len(observables))])
            if not jumps.any() and not (ok_tmd and ok_t):
                # a non-stagnating rate average may itself have slid across
                # the discontinuity; test against the trailing average too
                jumps = np.array([detect_jump(r_new[i], r_tmd[i],
                                              hist_per_obs[i],
                                              config.jump_factor,
                                              config.jump_rel_floor,
                                              config.jump_rel_floor)
                                  for i in range(len(observables))])
            if jumps.any():
                status = JUMP
                if config.on_jump == "resolve_fine":
                    v_burst, cand, n_b = _resolve_fine(runner, config,
                                                       x_conv_rate, n_prime)
                v_acc, accepted, n_burst = v_burst, cand, n_b
                break

    if status is None:
        raise StepFailed(
            f"coarse step at t={t:g} exhausted {config.max_retries} retries",
            diagnostics=diagnostics)

    wall1 = time.perf_counter()
    outcome = StepOutcome(
        t=t + h, v_pred=v_pred, v_acc=v_acc, status=status, retries=retries,
        jumps=jumps, n_rate=n_rate, n_burst=n_burst,
        wall_burst=wall1 - wall_burst0, wall_overhead=overhead,
        diagnostics=diagnostics)
    new_memory = CoarseStepMemory(
        t=t + h, v_acc=v_acc, x_guess_support=accepted,
        x_arb_prev=x_arb, n_arb_prev=n_arb,
        x_conv_rate_prev=x_conv_rate, n_rate_prev=n_rate,
        r_rate_prev=r_t, x_cp_prev=x_cp_sup, r_history=history,
        last_was_jump=(status == JUMP), prepared=None)
    return outcome, new_memory


def _resolve_fine(runner: _Runner, config: PtaConfig, support_at_t: FineState,
                  n_prime: int):
    """Escape hatch across a jump: re-run the full equation over [t, t + h]
    from a support point at t and read the slow value off its last window."""
    eps = runner.system.epsilon
    total = int(round(config.h / (eps * config.dsigma)))
    lead = max(total - n_prime, 0)
    at_window = runner.advance(support_at_t, lead, coupled=True, frozen=False)
    means, _ = runner.window_means(at_window, n_prime, coupled=True, frozen=False)
    return means, at_window, total


def run_pta(system: SlowFastSystem, x0, l0, config: PtaConfig,
            observables: Sequence[Measurement]) -> RunReport:
    """Initialize and coarse-step to t_end; collect the full run report."""
    n_rounds = config.n_rounds()
    memory, v0, wall_init = initialize(system, x0, l0, config, observables)
    names = [m.name for m in observables]
    grid = [0.0]
    series = [v0]
    outcomes = []
    step_walls = []
    report = None
    try:
        for i in range(n_rounds):
            outcome, memory = coarse_step(system, memory, config, observables)
            # snap accumulated slow times onto the exact coarse grid
            outcome.t = memory.t = (i + 1) * config.h
            grid.append(outcome.t)
            series.append(outcome.v_acc)
            outcomes.append(outcome)
            step_walls.append(outcome.wall_burst + outcome.wall_overhead)
    except StepFailed as err:
        err.partial_report = RunReport.from_series(
            system.label, config, names, np.array(grid), np.array(series),
            outcomes, {"init_s": wall_init, "step_s": step_walls})
        raise
    return RunReport.from_series(
        system.label, config, names, np.array(grid), np.array(series),
        outcomes, {"init_s": wall_init, "step_s": step_walls})


def run_fine_reference(system: SlowFastSystem, x0, l0, config: PtaConfig,
                       observables: Sequence[Measurement]) -> RunReport:
    """Ground truth: one fine run over the whole horizon, windowed means on
    the same coarse grid. Wall time is recorded for speedup accounting."""
    t0 = time.perf_counter()
    runner = _Runner(system, observables, config)
    eps = system.epsilon
    n_prime = config.n_prime(eps)
    n_rounds = config.n_rounds()
    grid = np.array([i * config.h for i in range(n_rounds + 1)])
    starts = np.array([int(round((t + config.delta) / (eps * config.dsigma)))
                       for t in grid], dtype=np.int64)
    total = int(starts[-1] + n_prime)
    state0 = FineState(np.asarray(x0, float), np.asarray(l0, float),
                       -config.delta / eps)
    means = runner.fine_window_series(state0, total, starts, n_prime)
    wall = time.perf_counter() - t0
    names = [m.name for m in observables]
    return RunReport.from_series(
        system.label, config, names, grid, means, [],
        {"fine_total_s": wall, "fine_per_step_s": wall / max(n_rounds, 1)},
        kind="fine")
