"""Closed-form analysis: straggler moments, convergence bounds, noise floor
and expected time-to-accuracy for uncoded, exact-coded and approximate-coded
gradient descent.

All logarithms are natural.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .errors import DomainError, InputError, ParameterError

METHODS = ("uncoded", "egc", "agc")


@dataclass(frozen=True)
class Moments:
    """p = P[block uncovered], q = P[at least one of two blocks uncovered]."""

    p: float
    q: float


@dataclass(frozen=True)
class ProblemConstants:
    mu: float
    beta: float
    sigma: float

    def __post_init__(self):
        if not 0 < self.mu <= self.beta:
            raise ParameterError(f"need 0 < mu <= beta, got mu={self.mu}, beta={self.beta}")
        if not self.sigma >= 0:
            raise ParameterError(f"sigma must be non-negative, got {self.sigma}")

    @property
    def kappa(self) -> float:
        return self.mu / self.beta


@dataclass(frozen=True)
class RateBound:
    contraction: float
    floor: float

    def at(self, T: int, delta0: float) -> float:
        return self.contraction**T * delta0 + self.floor


def binom(a: int, b: int) -> int:
    """Binomial coefficient with C(a, b) = 0 whenever a < b or a < 0."""
    if b < 0 or a < 0 or a < b:
        return 0
    return math.comb(a, b)


def moments_fraction(k: int, ell: int, r: int) -> tuple[Fraction, Fraction]:
    """Exact (p, q) as rationals for r uniformly random non-stragglers."""
    if not 1 <= r <= k:
        raise InputError(f"need 1 <= r <= k, got r={r}, k={k}")
    if not 1 <= ell <= k:
        raise InputError(f"need 1 <= ell <= k, got ell={ell}, k={k}")
    total = binom(k, r)
    miss_one = binom(k - ell, r)
    miss_two = binom(k - 2 * ell, r)
    return Fraction(miss_one, total), Fraction(2 * miss_one - miss_two, total)


def moments_exact(k: int, ell: int, r: int) -> Moments:
    p, q = moments_fraction(k, ell, r)
    return Moments(float(p), float(q))


def p_upper_bound(n: int, c: int, r: int) -> float:
    return math.exp(-c * r / n)


def _check_bound_args(moments, T, delta0):
    if moments.p >= 1:
        raise DomainError("p = 1: no block can ever be recovered")
    if T < 0 or delta0 < 0:
        raise InputError(f"need T >= 0 and delta0 >= 0, got T={T}, delta0={delta0}")


def rate_unit_step(constants: ProblemConstants, moments: Moments, n: int, c: int) -> RateBound:
    """Debiased updates with step 1/beta."""
    p, q = moments.p, moments.q
    s2, mu = constants.sigma**2, constants.mu
    floor = s2 / (2 * (1 - p) * mu) * (p + (q - p) * c / ((1 - p) * n))
    return RateBound(1 - constants.kappa, floor)


def rate_scaled_step(constants: ProblemConstants, moments: Moments, n: int, c: int) -> RateBound:
    """Debiased updates with step (1-p)/beta."""
    p, q = moments.p, moments.q
    floor = (q - p) * c * constants.sigma**2 / (2 * (1 - p) * constants.mu * n)
    return RateBound(1 - (1 - p) * constants.kappa, floor)


def convergence_bound_unit_step(constants, moments, n, c, T, delta0) -> float:
    _check_bound_args(moments, T, delta0)
    return rate_unit_step(constants, moments, n, c).at(T, delta0)


def convergence_bound_scaled_step(constants, moments, n, c, T, delta0) -> float:
    _check_bound_args(moments, T, delta0)
    return rate_scaled_step(constants, moments, n, c).at(T, delta0)


def _check_simplified(n, c, r):
    if c < n * math.log(2) / r:
        raise DomainError(f"simplified bounds need c >= n*ln(2)/r; got c={c}, n={n}, r={r}")


def simplified_bound_unit_step(constants, n, c, r, T, delta0) -> float:
    """Moment-free bound for step 1/beta, valid when c >= n ln2 / r."""
    _check_simplified(n, c, r)
    e = p_upper_bound(n, c, r)
    s2, mu = constants.sigma**2, constants.mu
    return (1 - constants.kappa) ** T * delta0 + e * s2 / mu + 4 * c * e * s2 / (mu * n)


def simplified_bound_scaled_step(constants, n, c, r, T, delta0) -> float:
    """Moment-free bound for step (1-p)/beta, valid when c >= n ln2 / r."""
    _check_simplified(n, c, r)
    e = p_upper_bound(n, c, r)
    contraction = 1 - (1 - e) * constants.kappa
    return contraction**T * delta0 + 2 * c * e * constants.sigma**2 / (constants.mu * n)


def noise_floor(constants: ProblemConstants, n: int, c: int, r: float) -> float:
    """Accuracy below which the approximate-code time bound does not apply."""
    return 3 * c * math.exp(-c * r / n) * constants.sigma**2 / (constants.mu * n)


def iterations_to_eps(constants: ProblemConstants, eta: float, delta0: float, eps: float,
                      factor: float = 3.0) -> int:
    """Smallest N with (1 - eta*kappa)^N * delta0 <= eps/factor.

    ``factor=3`` and ``eta = 1 - exp(-c*delta)`` give the approximate-code
    count; ``eta=1, factor=1`` give plain gradient descent.
    """
    if eps <= 0:
        raise InputError(f"eps must be positive, got {eps}")
    ratio = factor * delta0 / eps
    if ratio <= 1:
        return 0
    rate = eta * constants.kappa
    if rate >= 1:
        return 1
    if rate <= 0:
        raise DomainError(f"eta*kappa must be positive, got {rate}")
    return math.ceil(math.log(ratio) / -math.log1p(-rate) - 1e-12)


def time_per_iteration_bound(method: str, n: int, c: int, delta: float | None = None) -> float:
    """Per-iteration expected time bound with lam = 1/c and H_m <= ln(m) + 1."""
    if method == "uncoded":
        return (c * math.log(n) + c + 1) / n
    if method == "egc":
        return (c * math.log(n / c) + c + 1) / n
    if method == "agc":
        if delta is None or not 0 < delta < 1:
            raise DomainError(f"agc needs delta in (0, 1), got {delta}")
        return (c * c * math.log(1 / (1 - delta)) + c * c + c) / n
    raise InputError(f"unknown method {method!r}; expected one of {METHODS}")


def expected_time_to_eps(method: str, constants: ProblemConstants, n: int, c: int,
                         delta: float | None, delta0: float, eps: float,
                         lam: float | None = None) -> float:
    """Upper bound on expected wall time to reach accuracy eps."""
    if lam is not None and not math.isclose(lam, 1 / c):
        raise DomainError(f"time bounds assume lam = 1/c; got lam={lam}, c={c}")
    per_iter = time_per_iteration_bound(method, n, c, delta)
    if method in ("uncoded", "egc"):
        return iterations_to_eps(constants, 1.0, delta0, eps, factor=1.0) * per_iter
    floor = noise_floor(constants, n, c, delta * n)
    if eps < floor:
        raise DomainError(f"eps={eps} is below the noise floor {floor}")
    eta = 1 - math.exp(-c * delta)
    return iterations_to_eps(constants, eta, delta0, eps) * per_iter
