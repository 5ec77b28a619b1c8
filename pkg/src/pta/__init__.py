"""Coarse-graining of slow-fast ODE systems by practical time averaging."""

from .core import (ConfigurationError, ContractError, FineState, NoConvergence,
                   NormalizationUndefined, NumericError, PtaError, SlowFastSystem,
                   StepFailed, TimeScales, Trajectory, eval_fine_rhs,
                   eval_fine_rhs_frozen_load)
from .driver import (CoarseStepMemory, PtaConfig, StepOutcome, coarse_step,
                     closest_point_projection, detect_jump, guess_next_support,
                     guess_rate_ic, initialize, run_fine_reference, run_pta)
from .integrators import IntegratorKind, integrate, rk4_step, verlet_damped_step
from .models import (ModelBundle, SpringParams, build_model, power_balance_residual,
                     relaxation_oscillator, rotating_planes, springs)
from .observables import (ConvergenceCriterion, HObservable, Measurement,
                          extrapolate, rate_of_change, running_average,
                          simpson_observable, support_max, window_average)
from .report import (RunReport, SpeedupResult, error_percent, fit_cubic, read_csv,
                     speedup, write_csv, write_run_json)

__version__ = "0.1.0"
