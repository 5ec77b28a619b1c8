import numpy as np
import pytest

from pta import (ConfigurationError, FineState, NumericError, SlowFastSystem,
                 TimeScales, Trajectory, eval_fine_rhs, eval_fine_rhs_frozen_load)
from pta.models import relaxation_oscillator, rotating_planes, springs, SpringParams


def test_fine_rhs_rotating_substitution():
    sys_ = rotating_planes(epsilon=1e-3)
    state = sys_.state([1.0, 0.0, 0.0, 0.0])
    dx, dl = eval_fine_rhs(sys_, state)
    # |x| = 1 kills the radial term; gamma and the drift remain
    np.testing.assert_allclose(dx, [0.0, 1e-3, -1.0, 0.0], atol=1e-15)
    assert dl.size == 0


def test_fine_rhs_loadless_empty_load():
    sys_ = rotating_planes()
    _, dl = eval_fine_rhs(sys_, sys_.state([0.3, 0.1, -0.2, 0.5]))
    assert dl.shape == (0,)


def test_fine_rhs_relaxation_origin_stationary():
    sys_ = relaxation_oscillator()
    dx, dl = eval_fine_rhs(sys_, sys_.state([0.0, 0.0, 0.0], [0.0]))
    np.testing.assert_array_equal(dx, np.zeros(3))
    np.testing.assert_array_equal(dl, np.zeros(1))


def test_frozen_load_zeroes_load_rate():
    sys_ = springs(SpringParams(), case=1)
    state = sys_.state([0.1, 0.2, -0.3, 0.4], [0.0, 1.0])
    dx, dl = eval_fine_rhs_frozen_load(sys_, state)
    np.testing.assert_array_equal(dl, np.zeros(2))
    dx_full, _ = eval_fine_rhs(sys_, state)
    np.testing.assert_array_equal(dx, dx_full)


def test_frozen_load_matches_full_when_loadless():
    sys_ = rotating_planes()
    state = sys_.state([0.5, 0.5, 0.5, 0.5])
    np.testing.assert_array_equal(eval_fine_rhs(sys_, state)[0],
                                  eval_fine_rhs_frozen_load(sys_, state)[0])


def test_relaxation_frozen_load_ignores_z():
    sys_ = relaxation_oscillator()
    state = sys_.state([0.1, 0.9, 0.2], [0.05])
    _, dl = eval_fine_rhs_frozen_load(sys_, state)
    np.testing.assert_array_equal(dl, np.zeros(1))


def test_fine_rhs_deterministic_bitwise():
    sys_ = relaxation_oscillator()
    state = sys_.state([0.3, 1.1, -0.2], [0.17])
    dx1, dl1 = eval_fine_rhs(sys_, state)
    dx2, dl2 = eval_fine_rhs(sys_, state)
    assert np.array_equal(dx1, dx2) and np.array_equal(dl1, dl2)


def test_vanishing_epsilon_reduces_to_fast_equation():
    # eps -> 0 gives exactly the fast-time equation with the load held fixed
    sys_ = relaxation_oscillator(epsilon=5e-324)
    state = sys_.state([0.2, 0.9, 0.1], [0.3])
    dx, dl = eval_fine_rhs(sys_, state)
    f = sys_.F(state.x, state.l)
    np.testing.assert_allclose(dx, f, rtol=0, atol=1e-300)
    np.testing.assert_allclose(dl, np.zeros(1), atol=1e-300)


def test_dimension_mismatch_is_configuration_error():
    sys_ = rotating_planes()
    with pytest.raises(ConfigurationError):
        eval_fine_rhs(sys_, FineState(np.zeros(3), np.empty(0)))
    with pytest.raises(ConfigurationError):
        sys_.state([1.0, 0.0, 0.0])


def test_non_finite_rhs_names_component():
    bad = SlowFastSystem(
        n=2, m=0,
        F=lambda x, l: np.array([np.inf, 0.0]),
        G=lambda x, l: np.zeros(2),
        L=lambda x, l: np.empty(0), epsilon=1e-3)
    with pytest.raises(NumericError, match="component 0"):
        eval_fine_rhs(bad, bad.state([0.0, 0.0]))


def test_timescales_epsilon_exact():
    ts = TimeScales(T_f=0.002, T_s=1e4)
    assert ts.epsilon == 0.002 / 1e4
    with pytest.raises(ConfigurationError):
        TimeScales(T_f=-1.0, T_s=1.0)


def test_trajectory_invariants():
    xs = np.linspace(0, 1, 5).reshape(5, 1)
    traj = Trajectory(dsigma=0.1, sigma0=0.0, x=xs, l=np.zeros((5, 0)))
    assert len(traj) == 5
    np.testing.assert_allclose(traj.sigmas, [0.0, 0.1, 0.2, 0.3, 0.4])
    tail = traj.tail(2)
    assert len(tail) == 2 and tail.sigma0 == pytest.approx(0.3)
    with pytest.raises(ConfigurationError):
        Trajectory(dsigma=0.1, sigma0=0.0, x=np.empty((0, 1)), l=np.empty((0, 0)))


def test_system_invariants():
    with pytest.raises(ConfigurationError):
        SlowFastSystem(n=0, m=0, F=None, G=None, L=None, epsilon=1e-3)
    with pytest.raises(ConfigurationError):
        SlowFastSystem(n=1, m=0, F=None, G=None, L=None, epsilon=0.0)
