"""Oracle suites: enumeration and Monte-Carlo checks of the closed forms.

Each suite returns a list of :class:`Check`; a check passes when the
observed value lies within its stated tolerance of the prediction.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import analysis, straggler
from .codes import build_frc
from .config import ExperimentConfig
from .rng import SUBSETS, stream
from .simulator import WaitPolicy, covered_before_threshold, iteration_times, run_experiment

SUITES = ("moments", "runtime", "convergence")
MIN_BUDGET = {"moments": 1000, "runtime": 1000, "convergence": 10}


@dataclass
class Check:
    name: str
    passed: bool
    observed: float = math.nan
    predicted: float = math.nan
    se: float = math.nan
    note: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"[{status}] {self.name}: observed={self.observed:.6g} "
                f"predicted={self.predicted:.6g} se={self.se:.3g} {self.note}").rstrip()


def enumerate_moments(k: int, ell: int, r: int) -> tuple[Fraction, Fraction]:
    """(p, q) by listing every size-r non-straggler set; blocks 0 and 1 probed."""
    groups = k // ell
    miss0 = miss01 = 0
    total = 0
    for subset in itertools.combinations(range(k), r):
        hit = {j // ell for j in subset}
        total += 1
        miss0 += 0 not in hit
        second = 1 if groups > 1 else 0
        miss01 += (0 not in hit) or (second not in hit)
    return Fraction(miss0, total), Fraction(miss01, total)


def random_subsets(k: int, r: int, draws: int, rng) -> np.ndarray:
    """Boolean (draws, k) mask of uniformly random size-r subsets."""
    order = rng.random((draws, k)).argsort(axis=1)
    mask = np.zeros((draws, k), dtype=bool)
    np.put_along_axis(mask, order[:, :r], True, axis=1)
    return mask


def coverage_batch(mask: np.ndarray, ell: int) -> np.ndarray:
    draws, k = mask.shape
    return mask.reshape(draws, k // ell, ell).any(axis=2)


def moments_suite(budget: int = 100_000, kmax: int = 12, seed: int = 0) -> list[Check]:
    checks = []
    mismatches = []
    order_violations = 0
    cases = 0
    for k in range(1, kmax + 1):
        for ell in (d for d in range(1, k + 1) if k % d == 0):
            for r in range(1, k + 1):
                cases += 1
                exact = analysis.moments_fraction(k, ell, r)
                if exact != enumerate_moments(k, ell, r):
                    mismatches.append((k, ell, r))
                p, q = exact
                if not p <= q <= 2 * p:
                    order_violations += 1
    checks.append(Check(f"closed-form p, q equal enumeration for all {cases} cases with k <= {kmax}",
                        not mismatches, len(mismatches), 0, note=str(mismatches[:3]) if mismatches else ""))
    checks.append(Check("p <= q <= 2p", order_violations == 0, order_violations, 0))

    rng = stream(seed, SUBSETS)
    violations = 0
    for n, k, c, r in _lemma4_grid(rng, 100):
        ell = k * c // n
        if analysis.moments_exact(k, ell, r).p > analysis.p_upper_bound(n, c, r):
            violations += 1
    checks.append(Check("p <= exp(-c r / n) on 100 grid points", violations == 0, violations, 0))

    k, ell, r = 30, 3, 10
    mom = analysis.moments_exact(k, ell, r)
    y = coverage_batch(random_subsets(k, r, budget, rng), ell).astype(float)
    for name, sample, target in (("E[Y_1]", y[:, 0], 1 - mom.p),
                                 ("E[Y_1 Y_2]", y[:, 0] * y[:, 1], 1 - mom.q)):
        mean, se = sample.mean(), sample.std(ddof=1) / math.sqrt(budget)
        checks.append(Check(f"Monte-Carlo {name} (k={k}, ell={ell}, r={r})",
                            abs(mean - target) <= 4 * se, mean, target, se))
    return checks


def _lemma4_grid(rng, count):
    points = []
    while len(points) < count:
        n = int(rng.integers(2, 61))
        divisors = [d for d in range(1, n + 1) if n % d == 0]
        c = int(rng.choice(divisors))
        step = n // math.gcd(n, c)
        k = step * int(rng.integers(1, max(2, 60 // step + 1)))
        if k < 1:
            continue
        r = int(rng.integers(1, k + 1))
        points.append((n, k, c, r))
    return points


def runtime_trials(n: int, c: int, lam: float, policy: WaitPolicy, trials: int, seed: int,
                   chunk: int = 20_000):
    """Mean and standard error of the simulated wall time per iteration (n == k).

    Also returns the fraction of trials where the agc threshold fired
    before full coverage.
    """
    matrix = build_frc(n, n, c)
    model = straggler.DelayModel(lam, n // c)
    rng = stream(seed, SUBSETS, n, c)
    total = total_sq = first = 0.0
    done = 0
    while done < trials:
        size = min(chunk, trials - done)
        times = straggler.sample_times(model, n, rng, size=size).times
        wall = iteration_times(matrix, policy, times)
        total += wall.sum()
        total_sq += (wall * wall).sum()
        first += (~covered_before_threshold(matrix, policy, times)).sum()
        done += size
    mean = total / trials
    var = max(total_sq / trials - mean * mean, 0.0) * trials / max(trials - 1, 1)
    return mean, math.sqrt(var / trials), first / trials


def runtime_suite(budget: int = 1_000_000, n: int = 100, cs=(1, 2, 4), delta: float = 0.3,
                  rel_tol: float = 0.02, seed: int = 0) -> list[Check]:
    checks = []
    for c in cs:
        lam = 1.0 / c
        mean, se, _ = runtime_trials(n, 1, lam, WaitPolicy("uncoded_all"), budget, seed)
        pred = straggler.expected_runtime_uncoded(n, lam)
        checks.append(Check(f"uncoded n={n} lam=1/{c}: mean time vs 1/n + H_n/(lam n)",
                            abs(mean - pred) <= rel_tol * pred, mean, pred, se))
        mean, se, _ = runtime_trials(n, c, lam, WaitPolicy("egc_all_blocks"), budget, seed)
        pred = straggler.expected_runtime_egc(n, c, lam)
        checks.append(Check(f"egc n={n} c={c} lam=1/{c}: mean time vs c/n + (H_n - H_c)/(lam n)",
                            abs(mean - pred) <= rel_tol * pred, mean, pred, se))
        pred = straggler.expected_block_max_runtime(n, c, lam)
        checks.append(Check(f"egc n={n} c={c} lam=1/{c}: mean time vs c/n + H_(n/c)/(lam n)",
                            abs(mean - pred) <= rel_tol * pred, mean, pred, se))
        policy = WaitPolicy("agc_fraction", delta)
        r = policy.threshold(n)
        mean, se, first = runtime_trials(n, c, lam, policy, budget, seed)
        pred = straggler.expected_runtime_agc(n, c, r, lam)
        ok = mean <= pred + 4 * se
        note = f"threshold-first fraction={first:.3f}"
        if first > 0.9:
            ok = ok and abs(mean - pred) <= 0.05 * pred
            note += " (tight: within 5%)"
        checks.append(Check(f"agc n={n} c={c} r={r} lam=1/{c}: mean time <= r-th order statistic",
                            ok, mean, pred, se, note))
    return checks


def convergence_suite(budget: int = 200, bound_scale: float = 1.0, seed: int = 0) -> list[Check]:
    """Simulated mean optimality gap against the convergence bounds.

    ``bound_scale`` multiplies every bound; values below 1 are a negative
    control that must make the suite fail.
    """
    checks = []
    base = ExperimentConfig(method="agc", n=24, k=24, c=2, T=40, seed=0, delta=0.5,
                            gamma_policy="scaled_inv_beta", debias=True, conditioning=5.0,
                            data_seed=seed)
    from .data import build_objective

    objective = build_objective(base)
    constants = objective.constants
    r = WaitPolicy("agc_fraction", base.delta).threshold(base.k)
    mom = analysis.moments_exact(base.k, base.k * base.c // base.n, r)

    runs = [run_experiment(base.replace(seed=s), objective, diagnostics=False) for s in range(budget)]
    gaps = np.array([run.gaps() for run in runs])
    # every seed starts elsewhere; the bound is linear in delta0, so use its mean
    delta0 = float(np.mean([run.initial_gap for run in runs]))
    mean = gaps.mean(axis=0)
    se = gaps.std(axis=0, ddof=1) / math.sqrt(budget) if budget > 1 else np.zeros_like(mean)
    T = np.arange(1, base.T + 1)
    for label, bound in (
        ("moment bound, step (1-p)/beta",
         [analysis.convergence_bound_scaled_step(constants, mom, base.n, base.c, t, delta0) for t in T]),
        ("exp(-cr/n) bound, step (1-p)/beta",
         [analysis.simplified_bound_scaled_step(constants, base.n, base.c, r, t, delta0) for t in T]),
    ):
        bound = np.array(bound) * bound_scale
        excess = mean - (bound + 4 * se)
        worst = int(np.argmax(excess))
        checks.append(Check(f"agc mean gap <= {label} at every T<= {base.T} ({budget} seeds)",
                            bool((excess <= 0).all()), mean[worst], bound[worst], se[worst],
                            f"worst at T={worst + 1}"))

    exact_run = run_experiment(base.replace(method="egc", gamma_policy="inv_beta", debias=False),
                               objective, diagnostics=False)
    exact, delta0 = exact_run.gaps(), exact_run.initial_gap
    lemma = np.array([(1 - constants.kappa) ** t * delta0 for t in T]) * bound_scale
    worst = int(np.argmax(exact - lemma))
    checks.append(Check("exact-code gap <= (1 - mu/beta)^T delta0", bool((exact <= lemma * (1 + 1e-12)).all()),
                        exact[worst], lemma[worst], 0.0, f"worst at T={worst + 1}"))
    return checks


def run_suite(name: str, budget: int | None = None, **kwargs) -> list[Check]:
    if name == "moments":
        return moments_suite(budget or 100_000, **kwargs)
    if name == "runtime":
        return runtime_suite(budget or 1_000_000, **kwargs)
    if name == "convergence":
        return convergence_suite(budget or 200, **kwargs)
    raise ValueError(f"unknown suite {name!r}; expected one of {SUITES}")
