import math

import numpy as np
import pytest

from pta import ContractError, IntegratorKind, NormalizationUndefined, integrate
from pta.models import SpringParams, rotating_planes
from pta import oracles


def test_rotating_exact_substitution():
    x = oracles.rotating_planes_exact([1.0, 0.0, 0.0, 0.0], math.pi / 2)
    np.testing.assert_allclose(x, [0.0, 0.0, -1.0, 0.0], atol=1e-15)


def test_rotating_exact_periodicity():
    x0 = np.array([0.5, 0.5, 0.5, 0.5])
    np.testing.assert_allclose(
        oracles.rotating_planes_exact(x0, 2 * math.pi), x0, atol=1e-15)


def test_rotating_exact_mean_square():
    x0 = np.array([1.0, 0.0, 0.0, 0.0])
    sig = np.linspace(0.0, 2 * math.pi, 5000, endpoint=False)
    vals = oracles.rotating_planes_exact(x0, sig)
    assert np.mean(vals[:, 0] ** 2) == pytest.approx(0.5, abs=1e-3)


def test_rotating_exact_requires_unit_sphere():
    with pytest.raises(ContractError):
        oracles.rotating_planes_exact([2.0, 0.0, 0.0, 0.0], 0.1)


def test_fast_equation_matches_exact_over_period():
    # negligible drift: integrate the fast equation alone
    sys_ = rotating_planes(epsilon=1e-300)
    x0 = np.array([0.6, 0.0, 0.8, 0.0])
    dsigma = 2 * math.pi / 500
    traj = integrate(IntegratorKind.RK4, sys_, sys_.state(x0), dsigma, 500)
    exact = oracles.rotating_planes_exact(x0, traj.sigmas)
    assert np.max(np.abs(traj.x - exact)) < 1e-6


def case2_params(c2=None, ts=1e4):
    kw = {"k2": 2e7, "T_s": ts}
    if c2 is not None:
        kw["c2"] = c2
    return SpringParams(**kw)


@pytest.mark.parametrize("ics,c2", [
    ((1.0, 0.0, -0.5, 0.0), 0.0),
    ((0.5, 0.0, -0.1, 0.0), 0.0),
    ((1.0, 0.0, -0.5, 1e-4), 1e-6),
    ((0.5, 0.3, -0.1, -0.2), 1e-6),
])
def test_case2_exact_reproduces_initial_conditions(ics, c2):
    p = case2_params(c2=c2)
    x1, x2, y1, y2 = oracles.springs_case2_exact(p, ics, 0.0)
    np.testing.assert_allclose([x1, y1, x2, y2], ics, rtol=1e-9, atol=1e-12)


def test_case2_exact_satisfies_ode():
    p = case2_params(c2=1e-6)
    ics = (0.5, 0.0, -0.1, 0.0)
    rng = np.random.default_rng(11)
    t = rng.uniform(1e-7, 2e-6, size=16)
    assert oracles.case2_ode_residual(p, ics, t) < 1e-6


def test_case2_decay_rates_positive_and_ordered():
    co = oracles.case2_coefficients(case2_params(), (0.5, 0.0, -0.1, 0.0))
    assert co.p1 > co.p2 > 0
    # dimensional rates match the appendix decay table at T_s = 100
    assert co.p1 * 100 == pytest.approx(5.76e5, rel=1e-2)
    assert co.p2 * 100 == pytest.approx(1.73e5, rel=1e-2)


def test_case21_no_neutral_component_decays_to_rest():
    p = case2_params(c2=0.0)
    ics = (1.0, 0.0, -0.5, 0.0)
    k3, k4 = oracles.neutral_mode_coefficients(p, ics)
    assert abs(k3) < 1e-9 and abs(k4) < 1e-9
    x1, x2, y1, y2 = oracles.springs_case2_exact(p, ics, 0.1)
    assert max(abs(x1), abs(x2), abs(y1), abs(y2)) < 1e-6


def test_case22_kappa4_matches_reported_value():
    p = case2_params(c2=0.0)
    k3, k4 = oracles.neutral_mode_coefficients(p, (0.5, 0.0, -0.1, 0.0))
    assert abs(k3) < 1e-9
    assert round(k4, 4) == -0.4472


def test_case2_averages_steady_oscillation_level():
    p = case2_params(c2=1e-6)
    ics = (0.5, 0.0, -0.1, 0.0)
    for t in (0.25, 0.5, 1.0):
        k, u, r2 = oracles.springs_case2_averages(p, ics, t, 0.05,
                                                  n_quad=200_000)
        assert abs(k - 0.5) < 0.02
        assert abs(u - 0.5) < 0.02
        assert abs(r2) < 1e-4


def test_case2_averages_quadrature_self_convergence():
    ts = 198.69176531592201  # desk scale, eps = 1e-5
    p = SpringParams(k2=2e7, T_s=ts, c2=0.01 / ts)
    ics = (0.5, 0.0, -0.1, 0.0)
    a = oracles.springs_case2_averages(p, ics, 0.5, 0.05, n_quad=400_000)
    b = oracles.springs_case2_averages(p, ics, 0.5, 0.05, n_quad=800_000)
    for va, vb in zip(a[:2], b[:2]):
        assert abs(va - vb) / abs(vb) < 1e-6


def test_case2_averages_normalization_undefined():
    p = case2_params(c2=0.0)
    with pytest.raises(NormalizationUndefined):
        oracles.springs_case2_averages(p, (1.0, 0.0, -0.5, 0.0), 0.5, 0.05,
                                       n_quad=2000)


def test_tikhonov_limit_values():
    p = SpringParams()
    row = oracles.tikhonov_limit(p, 0.0)
    assert all(float(v) == 0.0 for v in row)
    x1, x2, y1, y2, w1, w2 = oracles.tikhonov_limit(p, 0.5)
    assert w2 == pytest.approx(p.c2 * p.T_s * 0.5)
    assert x2 == pytest.approx(w2) and y1 == 0.0 and y2 == 0.0


def test_tikhonov_disagrees_with_case2_oscillation():
    # negative control: with persistent oscillations the fast-equilibrium
    # limit (zero energies) is far from the closed-form averages (~0.5)
    p = case2_params(c2=0.0)
    ics = (0.5, 0.0, -0.1, 0.0)
    k_cf, u_cf, _ = oracles.springs_case2_averages(p, ics, 0.5, 0.05,
                                                   n_quad=100_000)
    assert k_cf > 0.4 and u_cf > 0.4  # tikhonov predicts exactly 0


def test_quasistatic_long_time_limits():
    p = SpringParams(T_s=200.0, c2=5e-5)
    x1, y1, x2, y2 = oracles.quasistatic_solution(p, alpha0=0.5, t=5.0)
    assert x1 == pytest.approx(p.c2 * p.eta / p.k1, rel=1e-9)
    assert y2 == pytest.approx(p.c2, rel=1e-9)
    assert y1 == pytest.approx(0.0, abs=1e-12)


def test_eigenvalues_case1_table():
    p = SpringParams(T_s=100.0)
    em = oracles.unforced_eigenmodes(p)
    lam = em.eigenvalues
    assert lam[0].real == pytest.approx(-6.17e5, rel=1e-2)
    assert lam[1].real == pytest.approx(-1.22e5, rel=1e-2)
    assert lam[2].real == pytest.approx(-5.63e3, rel=1e-2)
    assert lam[3].real == pytest.approx(-5.63e3, rel=1e-2)
    assert abs(lam[2].imag) == pytest.approx(2.58e5, rel=1e-2)
    assert not em.neutral.any()


def test_eigenvalues_case2_table():
    p = SpringParams(k2=2e7, T_s=100.0)
    em = oracles.unforced_eigenmodes(p)
    lam = em.eigenvalues
    assert lam[0].real == pytest.approx(-5.76e5, rel=1e-2)
    assert lam[1].real == pytest.approx(-1.73e5, rel=1e-2)
    assert abs(lam[2].real) < 1e-6 * abs(lam[2])
    assert abs(lam[2].imag) == pytest.approx(3.16e5, rel=1e-2)
    assert list(em.neutral) == [False, False, True, True]


def test_case2_neutral_modes_leave_dashpot_undeformed():
    p = SpringParams(k2=2e7, T_s=100.0)
    em = oracles.unforced_eigenmodes(p)
    for c in range(4):
        undeformed = (abs(em.modes[0, c] - em.modes[2, c]) <= 1e-3
                      and abs(em.modes[1, c] - em.modes[3, c]) <= 1e-3)
        assert em.dashpot_undeformed[c] == undeformed
        if em.neutral[c]:
            assert undeformed


def test_neutral_coefficients_independent_of_ts():
    ics = (0.5, 0.0, -0.1, 0.0)
    k_a = oracles.neutral_mode_coefficients(SpringParams(k2=2e7, T_s=100.0), ics)
    k_b = oracles.neutral_mode_coefficients(SpringParams(k2=2e7, T_s=1e4), ics)
    np.testing.assert_allclose(k_a, k_b, rtol=1e-9, atol=1e-12)


def test_case1_vs_case2_spectral_dichotomy():
    lam1 = oracles.unforced_eigenmodes(SpringParams(T_s=100.0)).eigenvalues
    lam2 = oracles.unforced_eigenmodes(SpringParams(k2=2e7, T_s=100.0)).eigenvalues
    assert np.all(lam1.real < 0)
    assert np.any(np.abs(lam2.real) <= 1e-9 * np.abs(lam2))
