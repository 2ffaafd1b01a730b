"""Shifted-exponential straggler model and its expected-runtime formulas.

Time is measured in units of one uncoded full-gradient job. A worker holding
1/B of the job finishes after ``1/B + Exp(rate=B*lam)``. The closed forms
below assume as many tasks as workers (n == k).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .errors import InputError, ParameterError
from .rng import as_generator


@dataclass(frozen=True)
class DelayModel:
    lam: float
    B: int = 1

    def __post_init__(self):
        if not self.lam > 0:
            raise ParameterError(f"lambda must be positive, got {self.lam}")
        if int(self.B) != self.B or self.B < 1:
            raise ParameterError(f"B must be a positive integer, got {self.B}")

    @property
    def shift(self) -> float:
        return 1.0 / self.B

    @property
    def rate(self) -> float:
        return self.B * self.lam

    def cdf(self, t):
        t = np.asarray(t, dtype=np.float64)
        return np.where(t < self.shift, 0.0, -np.expm1(-self.rate * (t - self.shift)))


@dataclass(frozen=True)
class DelaySample:
    times: np.ndarray
    seed: int | None = None


def sample_times(model: DelayModel, k: int, rng=None, size=None) -> DelaySample:
    """Draw k i.i.d. completion times (or a ``size`` x k batch)."""
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    gen = as_generator(rng)
    shape = (k,) if size is None else (size, k)
    times = model.shift + gen.exponential(1.0 / model.rate, size=shape)
    return DelaySample(times, seed)


@lru_cache(maxsize=4096)
def _harmonic_fraction(m: int) -> Fraction:
    return sum((Fraction(1, i) for i in range(1, m + 1)), Fraction(0))


def harmonic(m: int) -> float:
    """H_m = 1 + 1/2 + ... + 1/m, with H_0 = 0."""
    if int(m) != m or m < 0:
        raise InputError(f"harmonic number needs an integer m >= 0, got {m}")
    m = int(m)
    if m <= 2000:
        return float(_harmonic_fraction(m))
    return math.fsum(1.0 / i for i in range(1, m + 1))


def expected_order_statistic(k: int, r: int, lam: float) -> float:
    """Mean of the r-th smallest of k i.i.d. Exp(lam) variables."""
    if not 1 <= r <= k:
        raise InputError(f"need 1 <= r <= k, got r={r}, k={k}")
    if not lam > 0:
        raise ParameterError(f"lambda must be positive, got {lam}")
    return (harmonic(k) - harmonic(k - r)) / lam


def _check_divides(n, c):
    if c < 1 or n < 1 or n % c:
        raise InputError(f"c | n violated: c={c}, n={n}")


def expected_runtime_uncoded(n: int, lam: float) -> float:
    """Uncoded GD: wait for the slowest of n single-task workers."""
    if n < 1:
        raise InputError(f"n must be >= 1, got {n}")
    return 1.0 / n + harmonic(n) / (lam * n)


def expected_runtime_egc(n: int, c: int, lam: float) -> float:
    """Exact-code runtime in the closed form c/n + (H_n - H_c)/(lam*n).

    This form underestimates the model it is meant to describe; see
    :func:`expected_block_max_runtime` for the value a simulation converges
    to.
    """
    _check_divides(n, c)
    return c / n + (harmonic(n) - harmonic(c)) / (lam * n)


def expected_block_max_runtime(n: int, c: int, lam: float) -> float:
    """Mean of max over n/c blocks of min over c replicas (n == k).

    Each replica finishes at c/n + Exp(lam*n/c); the fastest of c replicas
    is c/n + Exp(lam*n); the slowest of n/c such blocks adds H_{n/c}/(lam*n).
    """
    _check_divides(n, c)
    return c / n + harmonic(n // c) / (lam * n)


def expected_runtime_agc(n: int, c: int, r: int, lam: float) -> float:
    """Upper bound on the approximate-code runtime: the r-th order statistic."""
    _check_divides(n, c)
    if not 1 <= r <= n:
        raise InputError(f"need 1 <= r <= n, got r={r}, n={n}")
    return c / n + c / (lam * n) * (harmonic(n) - harmonic(n - r))
