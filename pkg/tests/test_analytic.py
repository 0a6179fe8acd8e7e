"""Closed forms against frozen independent oracles.

Frozen values come from computations that share no code with the package:
erf for Gaussian masses, adaptive quadrature of first-passage densities, and
``scipy.integrate.solve_bvp`` on ``u''/2 + a u' = lam u`` with the barrier
boundary values for every Laplace transform.
"""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from fdbisim import analytic as an
from fdbisim.core import DomainError

# erf(1/sqrt 2)
GAUSS_MASS_UNIT = 0.6826894921370859
# quadrature of |x| (2 pi s^3)^-1/2 exp(-x^2/2s) over (0, t)
HIT_1_1 = 0.3173105078627391
HIT_13_2 = 0.3579706726443285
# quadrature of the drifted first-passage density, z=1, a=0.5, t=2
DRIFT_HIT_1_05_2 = 0.26258932411075786
# boundary-value ODE solutions
BVP_TWO_BARRIER_025_1 = 0.843376681969937
BVP_TWO_BARRIER_03_2 = 0.7005935707098658
BVP_INTERVAL_09_1 = 0.8839607788422746
BVP_DRIFT_TWO_025_1_1 = 0.8280184536540465
BVP_DRIFT_TWO_03_1_2 = 0.6809039647918774
BVP_DRIFT_TWO_07_1_2 = 0.745190615145791
BVP_DRIFT_INTERVAL_05_1_1 = 0.7040014170983695
BVP_REACH_B_05 = 0.39663909087319343   # z=0.5, b=1, upper=4, lam=1
BVP_REACH_B_25 = 0.1181751213421437    # z=2.5, b=1, upper=4, lam=1
BVP_TWO_WALL_03 = 0.8252214147802241   # z=0.3, width=1, lam=1

ORACLE_TOL = 1e-8
ULP4 = 4 * np.finfo(float).eps


# -- Gaussian kernel ------------------------------------------------------


def test_gaussian_kernel_examples():
    assert an.gaussian_kernel(0.0, (-math.inf, 0.0), 1.0) == pytest.approx(0.5, abs=1e-15)
    assert an.gaussian_kernel(0.0, (-1.0, 1.0), 1.0) == pytest.approx(GAUSS_MASS_UNIT, abs=1e-12)
    assert an.gaussian_kernel(2.0, (-math.inf, math.inf), 5.0) == 1.0


def test_gaussian_kernel_far_from_origin():
    assert an.gaussian_kernel(1e6, (1e6 - 1, 1e6 + 1), 1.0) == pytest.approx(GAUSS_MASS_UNIT, abs=1e-9)
    tail = an.gaussian_kernel(1e6, (1e6 + 8, math.inf), 1.0)
    assert 0 < tail < 1e-14


def test_gaussian_kernel_rejects_nonpositive_time():
    with pytest.raises(DomainError):
        an.gaussian_kernel(0.0, (0.0, 1.0), 0.0)


@pytest.mark.parametrize("s,t,x,lo,hi", [(0.5, 0.5, 0.0, -1.0, 1.0), (1.0, 2.0, 0.7, 0.0, 3.0), (0.2, 1.3, -1.0, -0.5, 0.5)])
def test_chapman_kolmogorov(s, t, x, lo, hi):
    dens = lambda y: math.exp(-(x - y) ** 2 / (2 * s)) / math.sqrt(2 * math.pi * s)  # noqa: E731
    two_step = quad(lambda y: dens(y) * an.gaussian_kernel(y, (lo, hi), t), -math.inf, math.inf, epsabs=1e-11)[0]
    assert two_step == pytest.approx(an.gaussian_kernel(x, (lo, hi), s + t), abs=1e-6)


# -- hitting CDFs ---------------------------------------------------------


def test_bm_hit_zero_cdf_examples():
    assert an.bm_hit_zero_cdf(0.0, 1.0) == 1.0
    assert an.bm_hit_zero_cdf(1.0, 1.0) == pytest.approx(HIT_1_1, abs=ORACLE_TOL)
    assert an.bm_hit_zero_cdf(2.0, 1.0) < an.bm_hit_zero_cdf(1.0, 1.0)
    assert an.bm_hit_zero_cdf(-1.0, 1.0) == an.bm_hit_zero_cdf(1.0, 1.0)
    with pytest.raises(DomainError):
        an.bm_hit_zero_cdf(1.0, -1.0)


@given(st.floats(0.0, 10.0), st.floats(0.01, 10.0), st.floats(0.01, 10.0))
def test_bm_hit_cdf_monotone(x, t, dt):
    a = an.bm_hit_zero_cdf(x, t)
    assert 0.0 <= a <= 1.0
    assert an.bm_hit_zero_cdf(x, t + dt) >= a
    assert an.bm_hit_zero_cdf(x + dt, t) <= a


def test_absorbed_death_cdf():
    assert an.absorbed_bm_death_cdf(1e-12, 1.0) == pytest.approx(1.0, abs=1e-9)
    assert an.absorbed_bm_death_cdf(1.3, 2.0) == an.bm_hit_zero_cdf(1.3, 2.0)
    assert an.absorbed_bm_death_cdf(1.3, 2.0) == pytest.approx(HIT_13_2, abs=ORACLE_TOL)
    vals = np.array([an.absorbed_bm_death_cdf(x, 1.0) for x in np.linspace(0.01, 5, 500)])
    assert np.all(np.diff(vals) < 0)


def test_drifted_density_integrates_to_hitting_probability():
    total = an.integrate_density(lambda s: an.drifted_bm_hit_zero_density(-1.0, 1.0, s))
    assert total == pytest.approx(1.0, abs=1e-6)
    # drift away from the barrier: hitting probability exp(-2 a |z|)
    away = an.integrate_density(lambda s: an.drifted_bm_hit_zero_density(1.0, 1.0, s))
    assert away == pytest.approx(math.exp(-2.0), abs=1e-6)
    assert an.drifted_bm_hit_zero_density(1.0, 1.0, 0.7) == an.drifted_bm_hit_zero_density(1.0, 1.0, 0.7)
    with pytest.raises(DomainError):
        an.drifted_bm_hit_zero_density(1.0, 1.0, 0.0)


def test_drifted_cdf_matches_quadrature():
    assert an.drifted_bm_hit_zero_cdf(1.0, 0.5, 2.0) == pytest.approx(DRIFT_HIT_1_05_2, abs=ORACLE_TOL)
    assert an.drifted_bm_hit_zero_cdf(0.0, 0.5, 2.0) == 1.0


# -- Laplace transforms ---------------------------------------------------


def test_two_barrier_laplace():
    assert an.bm_two_barrier_laplace(0.5, 0.0) == 1.0
    assert an.bm_two_barrier_laplace(0.3, 2.0) == an.bm_two_barrier_laplace(0.7, 2.0)
    assert an.bm_two_barrier_laplace(0.25, 1.0) == pytest.approx(BVP_TWO_BARRIER_025_1, abs=ORACLE_TOL)
    assert an.bm_two_barrier_laplace(0.3, 2.0) == pytest.approx(BVP_TWO_BARRIER_03_2, abs=ORACLE_TOL)
    with pytest.raises(DomainError):
        an.bm_two_barrier_laplace(1.0, 1.0)


def test_interval_barrier_laplace():
    assert an.bm_interval_barrier_laplace(0.0, 0.0) == 1.0
    assert an.bm_interval_barrier_laplace(0.4, 3.0) == an.bm_interval_barrier_laplace(-0.4, 3.0)
    assert an.bm_interval_barrier_laplace(0.9, 1.0) == pytest.approx(BVP_INTERVAL_09_1, abs=ORACLE_TOL)


def test_drifted_two_barrier_laplace():
    assert an.drifted_two_barrier_laplace(0.5, 1.0, 0.0) == pytest.approx(1.0, abs=1e-12)
    assert an.drifted_two_barrier_laplace(0.3, 1.0, 2.0) != pytest.approx(an.drifted_two_barrier_laplace(0.7, 1.0, 2.0))
    assert an.drifted_two_barrier_laplace(0.25, 1.0, 1.0) == pytest.approx(BVP_DRIFT_TWO_025_1_1, abs=ORACLE_TOL)
    assert an.drifted_two_barrier_laplace(0.3, 1.0, 2.0) == pytest.approx(BVP_DRIFT_TWO_03_1_2, abs=ORACLE_TOL)
    assert an.drifted_two_barrier_laplace(0.7, 1.0, 2.0) == pytest.approx(BVP_DRIFT_TWO_07_1_2, abs=ORACLE_TOL)
    with pytest.raises(DomainError):
        an.drifted_two_barrier_laplace(0.5, 0.0, 1.0)


def test_drifted_interval_laplace():
    assert an.drifted_interval_barrier_laplace(0.5, 1.0, 1.0) == pytest.approx(BVP_DRIFT_INTERVAL_05_1_1, abs=ORACLE_TOL)


@pytest.mark.parametrize("z", [0.1, 0.3, 0.5, 0.85])
@pytest.mark.parametrize("lam", [0.1, 1.0, 5.0])
def test_small_drift_limit(z, lam):
    assert an.drifted_two_barrier_laplace(z, 1e-6, lam) == pytest.approx(an.bm_two_barrier_laplace(z, lam), abs=1e-4)


@given(st.floats(0.01, 0.99), st.floats(0.0, 50.0), st.floats(0.0, 5.0))
def test_laplace_monotone_in_rate(z, lam, dlam):
    for f in (an.bm_two_barrier_laplace, lambda z, l: an.drifted_two_barrier_laplace(z, 1.0, l)):
        a, b = f(z, lam), f(z, lam + dlam)
        assert 0.0 < b <= a + 1e-12
        assert a <= 1.0 + ULP4


@given(st.floats(0.01, 0.99), st.floats(0.0, 30.0))
def test_two_barrier_symmetry(z, lam):
    assert an.bm_two_barrier_laplace(z, lam) == pytest.approx(an.bm_two_barrier_laplace(1.0 - z, lam), rel=ULP4, abs=1e-300)


@pytest.mark.parametrize("f", [
    lambda l: an.bm_two_barrier_laplace(0.3, l),
    lambda l: an.bm_interval_barrier_laplace(-0.6, l),
    lambda l: an.drifted_two_barrier_laplace(0.3, 2.0, l),
    lambda l: an.drifted_interval_barrier_laplace(0.2, 0.5, l),
    lambda l: an.absorbed_two_wall_laplace(0.4, 2.0, l),
])
def test_laplace_tends_to_one(f):
    assert f(1e-12) == pytest.approx(1.0, abs=1e-5)


def test_large_arguments_do_not_overflow():
    assert math.isfinite(an.bm_two_barrier_laplace(0.5, 1e5))
    assert math.isfinite(an.drifted_two_barrier_laplace(0.5, 2.0, 1e5))
    assert math.isfinite(an.absorbed_bm_reach_b_laplace(3.0, 1.0, 4.0, 1e4))


# -- absorbed BM ----------------------------------------------------------


def test_reach_b_laplace_against_ode():
    assert an.absorbed_bm_reach_b_laplace(0.5, 1.0, 4.0, 1.0) == pytest.approx(BVP_REACH_B_05, abs=ORACLE_TOL)
    assert an.absorbed_bm_reach_b_laplace(2.5, 1.0, 4.0, 1.0) == pytest.approx(BVP_REACH_B_25, abs=ORACLE_TOL)
    assert an.absorbed_two_wall_laplace(0.3, 1.0, 1.0) == pytest.approx(BVP_TWO_WALL_03, abs=ORACLE_TOL)


def test_reach_b_limits_and_monotonicity():
    assert an.absorbed_bm_reach_b_laplace(1.0 - 1e-12, 1.0, 4.0, 1.0) == pytest.approx(1.0, abs=1e-9)
    assert an.absorbed_bm_reach_b_laplace(1.0 + 1e-12, 1.0, 4.0, 1.0) == pytest.approx(1.0, abs=1e-9)
    vals = [an.absorbed_bm_reach_b_laplace(z, 1.0, 4.0, 1.0) for z in np.linspace(1.01, 3.99, 300)]
    assert np.all(np.diff(vals) < 0)
    with pytest.raises(DomainError):
        an.absorbed_bm_reach_b_laplace(5.0, 1.0, 4.0, 1.0)


# -- injectivity checks ---------------------------------------------------


def test_g_injectivity_examples():
    grid = np.linspace(1.0, 10.0, 91)
    assert an.g_injectivity_check(0.3, 0.3, 1.0, grid, 1e-9)
    assert not an.g_injectivity_check(0.3, 0.7, 1.0, grid, 1e-3)


@pytest.mark.parametrize("a", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("z1", [0.137, 0.5, 0.901])
def test_g_scan_accepts_only_nearby(a, z1):
    z2 = np.round(np.arange(0.001, 1.0, 1e-3), 6)
    ok = an.g_injectivity_check(z1, z2, a)
    assert ok.any()
    assert np.all(np.abs(z2[ok] - z1) <= 2e-3)


@pytest.mark.parametrize("a", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("z1", [-0.77, 0.0, 0.42])
def test_h_scan_accepts_only_nearby(a, z1):
    z2 = np.round(np.arange(-0.999, 1.0, 1e-3), 6)
    ok = an.h_injectivity_check(z1, z2, a)
    assert ok.any()
    assert np.all(np.abs(z2[ok] - z1) <= 2e-3)
