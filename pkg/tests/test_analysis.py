import math
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from gradcode import analysis
from gradcode.analysis import Moments, ProblemConstants
from gradcode.errors import DomainError, InputError, ParameterError
from gradcode.verify import enumerate_moments

UNIT = ProblemConstants(mu=1.0, beta=2.0, sigma=1.0)
P, Q = 1 / 6, 1 / 3


def test_moment_examples():
    assert analysis.moments_fraction(4, 2, 2) == (Fraction(1, 6), Fraction(1, 3))
    assert analysis.moments_fraction(6, 1, 3) == (Fraction(1, 2), Fraction(4, 5))
    assert analysis.moments_exact(5, 5, 2) == Moments(0.0, 0.0)
    with pytest.raises(InputError):
        analysis.moments_exact(4, 2, 5)


def test_binom_convention():
    assert analysis.binom(3, 5) == 0
    assert analysis.binom(-1, 0) == 0
    assert analysis.binom(5, 2) == 10


@given(st.integers(1, 14).flatmap(lambda k: st.tuples(
    st.just(k), st.sampled_from([d for d in range(1, k + 1) if k % d == 0]), st.integers(1, k))))
@settings(max_examples=60, deadline=None)
def test_moments_equal_enumeration(args):
    k, ell, r = args
    assert analysis.moments_fraction(k, ell, r) == enumerate_moments(k, ell, r)


@given(st.integers(1, 300).flatmap(lambda k: st.tuples(
    st.just(k), st.sampled_from([d for d in range(1, k + 1) if k % d == 0]), st.integers(1, k))))
def test_q_between_p_and_2p(args):
    p, q = analysis.moments_fraction(*args)
    assert 0 <= p <= q <= 2 * p <= 2


def test_p_upper_bound_examples():
    assert analysis.p_upper_bound(6, 1, 3) == pytest.approx(math.exp(-0.5))
    assert analysis.moments_exact(6, 1, 3).p <= analysis.p_upper_bound(6, 1, 3)
    assert analysis.p_upper_bound(7, 2, 0) == 1.0
    assert analysis.moments_exact(30, 3, 10).p < analysis.p_upper_bound(30, 3, 10) == pytest.approx(math.exp(-1))


@given(st.integers(1, 60), st.data())
def test_p_upper_bound_property(n, data):
    c = data.draw(st.sampled_from([d for d in range(1, n + 1) if n % d == 0]))
    step = n // math.gcd(n, c)
    k = step * data.draw(st.integers(1, max(1, 120 // step)))
    r = data.draw(st.integers(1, k))
    assert analysis.moments_exact(k, k * c // n, r).p <= analysis.p_upper_bound(n, c, r) * (1 + 1e-12)


def _unit_step_oracle():
    # expanded form of the floor: p s^2/(2(1-p)mu) + (q-p) c s^2 / (2 (1-p)^2 mu n)
    p, q = Fraction(1, 6), Fraction(1, 3)
    floor = p / (2 * (1 - p)) + (q - p) * 2 / (2 * (1 - p) ** 2 * 4)
    return float(Fraction(1, 2) ** 10 + floor)


def test_unit_step_bound_example():
    value = analysis.convergence_bound_unit_step(UNIT, Moments(P, Q), 4, 2, 10, 1.0)
    assert value == pytest.approx(_unit_step_oracle(), rel=1e-12)
    assert value == pytest.approx(0.160977, abs=1e-6)


def test_scaled_step_bound_example():
    value = analysis.convergence_bound_scaled_step(UNIT, Moments(P, Q), 4, 2, 10, 1.0)
    assert value == pytest.approx((7 / 12) ** 10 + 0.05, rel=1e-12)
    assert value == pytest.approx(0.0546, abs=1e-4)


@pytest.mark.parametrize("fn", [analysis.convergence_bound_unit_step, analysis.convergence_bound_scaled_step])
def test_bounds_reduce_without_stragglers(fn):
    zero = Moments(0.0, 0.0)
    assert fn(UNIT, zero, 4, 2, 7, 3.0) == pytest.approx(0.5**7 * 3.0)
    assert fn(UNIT, zero, 4, 2, 0, 3.0) == 3.0
    with pytest.raises(DomainError):
        fn(UNIT, Moments(1.0, 1.0), 4, 2, 1, 1.0)


def test_perfectly_correlated_coverage_has_no_floor():
    assert analysis.rate_scaled_step(UNIT, Moments(0.3, 0.3), 4, 2).floor == 0


def test_simplified_bounds():
    n, c, r = 4, 2, 2
    e = math.exp(-1)
    assert analysis.simplified_bound_scaled_step(UNIT, n, c, r, 3, 1.0) == pytest.approx(
        (1 - (1 - e) / 2) ** 3 + 2 * 2 * e / 4)
    assert analysis.simplified_bound_unit_step(UNIT, n, c, r, 3, 1.0) == pytest.approx(
        0.5**3 + e + 4 * 2 * e / 4)
    with pytest.raises(DomainError):
        analysis.simplified_bound_scaled_step(UNIT, 30, 1, 10, 3, 1.0)


@given(st.integers(1, 50).flatmap(lambda n: st.tuples(
    st.just(n), st.sampled_from([d for d in range(1, n + 1) if n % d == 0]), st.integers(1, n))),
    st.integers(0, 50))
def test_simplified_dominates_moment_bound(args, T):
    n, c, r = args
    if c < n * math.log(2) / r:
        return
    mom = analysis.moments_exact(n, c, r)
    exact = analysis.convergence_bound_scaled_step(UNIT, mom, n, c, T, 1.0)
    assert exact <= analysis.simplified_bound_scaled_step(UNIT, n, c, r, T, 1.0) * (1 + 1e-12)


def test_noise_floor_examples():
    assert analysis.noise_floor(ProblemConstants(1, 1, 0), 4, 2, 4) == 0
    assert analysis.noise_floor(UNIT, 4, 2, 4) == pytest.approx(3 * 2 * math.exp(-2) / 4)
    assert analysis.noise_floor(UNIT, 4, 2, 4) == pytest.approx(0.2030, abs=1e-4)


def test_iterations_examples():
    half = ProblemConstants(1.0, 2.0, 1.0)
    assert analysis.iterations_to_eps(half, 0.8, 1.0, 3.0) == 0
    assert analysis.iterations_to_eps(half, 0.8, 1.0, 0.03) == 10
    assert analysis.iterations_to_eps(half, 1.0, 1.0, 0.01, factor=1.0) == 7
    with pytest.raises(InputError):
        analysis.iterations_to_eps(half, 1.0, 1.0, 0.0)


def test_time_bound_examples():
    half = ProblemConstants(1.0, 2.0, 1.0)
    t = analysis.expected_time_to_eps("uncoded", half, 100, 2, None, 1.0, 0.01)
    assert t == pytest.approx(7 * (2 * math.log(100) + 3) / 100)
    assert t == pytest.approx(0.855, abs=1e-3)
    assert analysis.time_per_iteration_bound("egc", 10, 10) == pytest.approx(1.1)
    agc = analysis.time_per_iteration_bound("agc", 100, 2, 0.5)
    assert agc == pytest.approx((4 * math.log(2) + 6) / 100)
    assert agc == pytest.approx(0.0877, abs=1e-4)
    assert agc < analysis.time_per_iteration_bound("uncoded", 100, 2)


def test_time_bound_rejects_eps_below_floor():
    tight = ProblemConstants(1.0, 2.0, 10.0)
    with pytest.raises(DomainError, match="noise floor"):
        analysis.expected_time_to_eps("agc", tight, 10, 2, 0.5, 1.0, 1e-3)
    with pytest.raises(DomainError):
        analysis.expected_time_to_eps("egc", tight, 10, 2, None, 1.0, 1e-3, lam=1.0)


def test_constants_validation():
    with pytest.raises(ParameterError):
        ProblemConstants(2.0, 1.0, 1.0)
    with pytest.raises(ParameterError):
        ProblemConstants(0.0, 1.0, 1.0)
