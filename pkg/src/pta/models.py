"""The three built-in slow-fast systems with their canonical measurements.

Desk-scale defaults keep every run's averaging window an exact whole number
of fast periods (epsilon tuned accordingly, always <= 1e-5); the spring
chain also ships with the original paper-scale parameters (T_s = 1e4 s,
eps ~ 2e-7) behind ``desk_scale=False``. The product T_s * c2, the total
wall travel per unit slow time, is held fixed across scales.

Known failure mode: the averaging scheme assumes eps is small compared with
Delta; for the spring chain it stops giving accurate results once eps grows
to the order of 1e-3.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .core import ConfigurationError, ContractError, SlowFastSystem, TimeScales, Trajectory
from .driver import PtaConfig
from .integrators import IntegratorKind
from .observables import ConvergenceCriterion, Measurement

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class SpringParams:
    """Spring-dashpot chain parameters (SI units)."""

    k1: float = 1.0e7
    k2: float = 1.0e7
    m1: float = 1.0
    m2: float = 2.0
    eta: float = 5.0e3
    c1: float = 0.0
    c2: float = 1.0e-6
    T_s: float = 1.0e4
    T_f: float = field(default=0.0)

    def __post_init__(self):
        for name in ("k1", "k2", "m1", "m2", "T_s"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.eta < 0:
            raise ConfigurationError("eta must be non-negative")
        # fast period = period of the left spring-mass pair
        tf = TWO_PI * math.sqrt(self.m1 / self.k1)
        if self.T_f == 0.0:
            object.__setattr__(self, "T_f", tf)
        elif not math.isclose(self.T_f, tf, rel_tol=1e-12):
            raise ConfigurationError("T_f must equal 2*pi*sqrt(m1/k1)")

    @property
    def timescales(self) -> TimeScales:
        return TimeScales(self.T_f, self.T_s)

    @property
    def alpha(self) -> float:
        return self.k1 / self.m1

    def packed(self) -> np.ndarray:
        return np.array([self.k1, self.m1, self.k2, self.m2, self.eta,
                         self.c1, self.c2, self.T_f, self.T_s])


@dataclass(frozen=True)
class ModelBundle:
    """A ready-to-run system: dynamics, observables, and default run setup."""

    name: str
    system: SlowFastSystem
    measurements: tuple
    integrator: IntegratorKind
    config: PtaConfig
    x0: np.ndarray
    l0: np.ndarray
    params: object = None
    sweep_eps: tuple = ()
    sweep_config: PtaConfig | None = None

    @property
    def measurement_names(self):
        return [m.name for m in self.measurements]


def rotating_planes(epsilon: float = 1e-3 / (32.0 * math.pi)) -> SlowFastSystem:
    """Four-dimensional rotating-planes system (no load).

    The fast flow pulls states onto the unit sphere and rotates them in the
    plane spanned by x0 and gamma(x0); the drift slowly turns that plane.
    """

    def gamma(x):
        return np.array([x[2], x[3], -x[0], -x[1]])

    def F(x, l):
        return (1.0 - np.linalg.norm(x)) * x + gamma(x)

    def G(x, l):
        return np.array([-x[1], x[0], 0.0, 0.0])

    def L(x, l):
        return np.empty(0)

    return SlowFastSystem(n=4, m=0, F=F, G=G, L=L, epsilon=epsilon,
                          label="rotating_planes",
                          kernel_id=_kernels.MODEL_ROTATING,
                          kernel_params=np.empty(0))


def springs(params: SpringParams, case: int) -> SlowFastSystem:
    """Spring-dashpot chain between two slowly moving walls.

    Case 1 has k1/m1 != k2/m2 (all energy dissipates for fixed walls);
    case 2 has k1/m1 == k2/m2 (oscillations generically persist).
    State is (x1, y1, x2, y2) with loads (w1, w2).
    """
    r1, r2 = params.k1 / params.m1, params.k2 / params.m2
    if case == 1 and math.isclose(r1, r2, rel_tol=1e-9):
        raise ConfigurationError("case 1 requires k1/m1 != k2/m2")
    if case == 2 and not math.isclose(r1, r2, rel_tol=1e-9):
        raise ConfigurationError("case 2 requires k1/m1 == k2/m2")
    p = params

    def F(x, l):
        dash = p.eta * (x[3] - x[1])
        return np.array([
            p.T_f * x[1],
            -p.T_f * ((p.k1 * (x[0] - l[0]) - dash) / p.m1),
            p.T_f * x[3],
            -p.T_f * ((p.k2 * (x[2] - l[1]) + dash) / p.m2),
        ])

    def G(x, l):
        return np.zeros(4)

    def L(x, l):
        return np.array([p.T_s * p.c1, p.T_s * p.c2])

    # positions and velocities live on scales C1 and C1*sqrt(k1/m1);
    # weight velocities down so state-space distances compare phases fairly
    inv_freq = math.sqrt(p.m1 / p.k1)
    weights = np.array([1.0, inv_freq, 1.0, inv_freq, 1.0, 1.0])
    return SlowFastSystem(n=4, m=2, F=F, G=G, L=L,
                          epsilon=p.timescales.epsilon,
                          label=f"springs_case{case}",
                          kernel_id=_kernels.MODEL_SPRINGS,
                          kernel_params=p.packed(), verlet_params=p,
                          projection_weights=weights)


def relaxation_oscillator(epsilon: float = 1e-2 / (320.0 * math.pi)) -> SlowFastSystem:
    """Relaxation-oscillation system: fast (y, z, w), slow load x.

    y relaxes to a stable branch of x = y - y^3; (z, w) circles (y, 0) with
    radius 1/sqrt(8); the load moves as dx/dt = z, so the branch ends (folds)
    at x = +-2/(3*sqrt(3)) force jumps of the whole measure.
    """

    def F(x, l):
        y, z, w = x
        zy = z - y
        ring = 0.125 - w * w - zy * zy
        return np.array([-l[0] + y - y ** 3, w + zy * ring, -zy + w * ring])

    def G(x, l):
        return np.zeros(3)

    def L(x, l):
        return np.array([x[1]])

    return SlowFastSystem(n=3, m=1, F=F, G=G, L=L, epsilon=epsilon,
                          label="relaxation",
                          kernel_id=_kernels.MODEL_RELAX,
                          kernel_params=np.empty(0))


def spring_energy_scales(params: SpringParams, x0) -> tuple[float, float, float]:
    """Nondimensionalization scales (K_max, U_max, R2_max) from the ICs.

    C1 is the mass-weighted mean initial position; zero C1 means the scales
    are undefined and callers fall back to raw units.
    """
    c1 = (params.m1 * x0[0] + params.m2 * x0[2]) / (params.m1 + params.m2)
    if c1 == 0.0:
        return 0.0, 0.0, 0.0
    e = 0.5 * c1 * c1 * (params.k1 + params.k2)
    return e, e, abs(c1) * params.k2


def spring_measurements(params: SpringParams, x0) -> tuple:
    """Kinetic energy, potential energy, right-wall reaction, and the loads."""
    p = params
    kmax, umax, r2max = spring_energy_scales(p, x0)
    wscale = abs(p.T_s * p.c2) or 1.0
    return (
        Measurement("K", lambda x, l: 0.5 * (p.m1 * x[1] ** 2 + p.m2 * x[3] ** 2),
                    kmax or 1.0),
        Measurement("U", lambda x, l: 0.5 * p.k1 * (x[0] - l[0]) ** 2
                    + 0.5 * p.k2 * (x[2] - l[1]) ** 2, umax or 1.0),
        Measurement("R2", lambda x, l: -p.k2 * (x[2] - l[1]), r2max or 1.0),
        Measurement("w1", lambda x, l: l[0], wscale, load_index=0),
        Measurement("w2", lambda x, l: l[1], wscale, load_index=1),
    )


def rotating_measurements() -> tuple:
    meas = [Measurement(f"x{i + 1}", (lambda i: lambda x, l: x[i])(i))
            for i in range(4)]
    meas += [Measurement(f"w{i + 1}", (lambda i: lambda x, l: x[i] ** 2)(i))
             for i in range(4)]
    return tuple(meas)


def relaxation_measurements() -> tuple:
    return (
        Measurement("y", lambda x, l: x[0]),
        Measurement("z", lambda x, l: x[1]),
        Measurement("w", lambda x, l: x[2]),
        Measurement("x", lambda x, l: l[0], load_index=0),
    )


def power_balance_residual(params: SpringParams, window: Trajectory) -> float:
    """Windowed residual of the energy balance for the spring chain.

    Rate of change of kinetic plus potential energy, minus wall input power,
    plus dashpot dissipation, averaged over the window; zero for exact
    dynamics. Differences are taken on the window samples.
    """
    if len(window) < 3:
        raise ContractError("power balance needs at least 3 samples")
    p = params
    x1, y1, x2, y2 = window.x.T
    w1, w2 = window.l.T
    energy = (0.5 * (p.m1 * y1 ** 2 + p.m2 * y2 ** 2)
              + 0.5 * p.k1 * (x1 - w1) ** 2 + 0.5 * p.k2 * (x2 - w2) ** 2)
    span = (len(window) - 1) * window.dsigma * p.T_f
    dedt = (energy[-1] - energy[0]) / span
    r1 = -p.k1 * (x1 - w1)
    r2 = -p.k2 * (x2 - w2)
    supplied = r1 * p.c1 + r2 * p.c2 - p.eta * (y2 - y1) ** 2
    return float(dedt - np.mean(supplied))


def _desk_spring_params(case: int, desk_epsilon: float = 1e-5) -> SpringParams:
    # T_s * c2 = 0.01 is held fixed across time scales
    k2 = 1.0e7 if case == 1 else 2.0e7
    tf = TWO_PI * math.sqrt(1.0 / 1.0e7)
    ts = tf / desk_epsilon
    return SpringParams(k2=k2, c2=0.01 / ts, T_s=ts)


def _spring_bundle(case: int, desk_scale: bool = True, epsilon: float | None = None,
                   x0=(0.5, 0.0, -0.1, 0.0), l0=None,
                   params: SpringParams | None = None,
                   **config_overrides) -> ModelBundle:
    if params is None:
        if epsilon is not None:
            params = _desk_spring_params(case, epsilon)
        else:
            params = _desk_spring_params(case) if desk_scale \
                else SpringParams(k2=1.0e7 if case == 1 else 2.0e7)
    system = springs(params, case)
    config = PtaConfig(
        h=0.25, delta=0.05, dsigma=1.0 / 500.0, t_end=1.0,
        criterion=ConvergenceCriterion(tol1=1e-2, tol2=1e-5, k=500, p=5,
                                       n_min=500, n_max=50_000),
        burn_samples=500, slow_value_rule="simpson", frozen_load_in_bursts=True,
    )
    config = replace(config, **config_overrides) if config_overrides else config
    if l0 is None:
        # initial data are given at slow time -Delta; walls cross zero at t = 0
        l0 = (-params.c1 * params.T_s * config.delta,
              -params.c2 * params.T_s * config.delta)
    return ModelBundle(
        name=f"springs_case{case}", system=system,
        measurements=spring_measurements(params, x0),
        integrator=IntegratorKind.VERLET_DAMPED, config=config,
        x0=np.asarray(x0, dtype=float), l0=np.asarray(l0, dtype=float),
        params=params,
        sweep_eps=(1e-5, 5e-6, 2e-6, 1e-6),
        sweep_config=replace(config, t_end=0.25),
    )


def _rotating_bundle(epsilon: float | None = None, x0=(0.5, 0.5, 0.5, 0.5),
                     l0=(), **config_overrides) -> ModelBundle:
    system = rotating_planes() if epsilon is None else rotating_planes(epsilon)
    config = PtaConfig(
        h=0.002, delta=0.001, dsigma=TWO_PI / 500.0, t_end=0.02,
        criterion=ConvergenceCriterion(tol1=1e-2, tol2=1e-5, k=500, p=5,
                                       n_min=500, n_max=50_000),
        burn_samples=500, slow_value_rule="window",
    )
    config = replace(config, **config_overrides) if config_overrides else config
    return ModelBundle(
        name="rotating_planes", system=system,
        measurements=rotating_measurements(),
        integrator=IntegratorKind.RK4, config=config,
        x0=np.asarray(x0, dtype=float), l0=np.asarray(l0, dtype=float),
        sweep_eps=(1e-5, 5e-6, 2e-6, 1e-6),
        sweep_config=replace(config, h=0.01, t_end=0.02,
                             slow_value_rule="simpson"),
    )


def _relaxation_bundle(epsilon: float | None = None, x0=None, l0=(0.0,),
                       **config_overrides) -> ModelBundle:
    system = relaxation_oscillator() if epsilon is None \
        else relaxation_oscillator(epsilon)
    if x0 is None:
        x0 = (1.0, 1.0 + 1.0 / math.sqrt(8.0), 0.0)
    # burn covers the slowest fast transient: the (z, w) ring re-forms at
    # rate 1/4 per sigma unit, ~3000 samples to contraction
    config = PtaConfig(
        h=0.02, delta=0.01, dsigma=TWO_PI / 500.0, t_end=2.0,
        criterion=ConvergenceCriterion(tol1=1e-2, tol2=1e-5, k=500, p=5,
                                       n_min=500, n_max=50_000),
        burn_samples=3000, slow_value_rule="window", match_rtol=8e-2,
    )
    config = replace(config, **config_overrides) if config_overrides else config
    return ModelBundle(
        name="relaxation", system=system,
        measurements=relaxation_measurements(),
        integrator=IntegratorKind.RK4, config=config,
        x0=np.asarray(x0, dtype=float), l0=np.asarray(l0, dtype=float),
        sweep_eps=(1e-5, 5e-6, 2e-6, 1e-6),
        sweep_config=replace(config, t_end=0.2, slow_value_rule="simpson"),
    )


MODEL_BUILDERS = {
    "rotating_planes": _rotating_bundle,
    "springs_case1": lambda **kw: _spring_bundle(1, **kw),
    "springs_case2": lambda **kw: _spring_bundle(2, **kw),
    "relaxation": _relaxation_bundle,
}


def build_model(name: str, **kwargs) -> ModelBundle:
    """Look up and construct a registered model by name."""
    if name not in MODEL_BUILDERS:
        raise ConfigurationError(
            f"unknown model '{name}'; available: {sorted(MODEL_BUILDERS)}")
    return MODEL_BUILDERS[name](**kwargs)
