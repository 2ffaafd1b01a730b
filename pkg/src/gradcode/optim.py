"""Decomposable objectives f = (1/n) sum_i f_i and the gradient step.

Every objective exposes ``grads(start, stop, x)``, the stacked component
gradients for the contiguous task range ``[start, stop)``. Master,
simulator and workers all reach component gradients through
:func:`block_sum`, so a block's sum is computed by the same code path
everywhere and comes out bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize

from .analysis import ProblemConstants
from .errors import DataError, InputError, ParameterError
from .rng import DATA, stream


class Objective:
    n: int
    dim: int
    constants: ProblemConstants | None = None
    optimum_value: float | None = None
    minimizer: np.ndarray | None = None

    def grads(self, start: int, stop: int, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def value(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def grad_i(self, i: int, x: np.ndarray) -> np.ndarray:
        if not 0 <= i < self.n:
            raise InputError(f"component {i} out of range [0, {self.n})")
        return self.grads(i, i + 1, x)[0]

    def all_grads(self, x: np.ndarray) -> np.ndarray:
        return self.grads(0, self.n, x)

    def full_grad(self, x: np.ndarray) -> np.ndarray:
        return self.all_grads(x).mean(axis=0)

    def gap(self, x: np.ndarray) -> float:
        if self.optimum_value is None:
            raise ParameterError("objective has no known optimum value")
        return self.value(x) - self.optimum_value

    def sigma_along(self, points) -> float:
        """Largest component-gradient norm over the given points."""
        return max(float(np.linalg.norm(self.all_grads(p), axis=1).max()) for p in points)


class QuadraticObjective(Objective):
    """f_i(x) = 1/2 ||A_i x - b_i||^2 with A of shape (n, m, dim)."""

    def __init__(self, A, b, constants=None, analyze=True):
        self.A = np.ascontiguousarray(A, dtype=np.float64)
        self.b = np.ascontiguousarray(b, dtype=np.float64)
        if self.A.ndim != 3 or self.b.shape != self.A.shape[:2]:
            raise InputError(f"A must be (n, m, dim) and b (n, m); got {self.A.shape}, {self.b.shape}")
        self.n, _, self.dim = self.A.shape
        self.constants = constants
        if analyze:
            self._analyze()

    def _analyze(self):
        self.hessian = np.einsum("imd,ime->de", self.A, self.A) / self.n
        eig = np.linalg.eigvalsh(self.hessian)
        mu, beta = float(eig[0]), float(eig[-1])
        if not (np.isfinite(eig).all() and mu > 1e-12 * max(beta, 1e-300)):
            raise ParameterError(f"degenerate conditioning: Hessian eigenvalues in [{mu}, {beta}]")
        self.mu, self.beta = mu, beta
        rhs = np.einsum("imd,im->d", self.A, self.b) / self.n
        self.minimizer = np.linalg.solve(self.hessian, rhs)
        self.optimum_value = self.value(self.minimizer)

    def grads(self, start, stop, x):
        A = self.A[start:stop]
        resid = np.einsum("imd,d->im", A, x) - self.b[start:stop]
        return np.einsum("imd,im->id", A, resid)

    def value(self, x):
        resid = np.einsum("imd,d->im", self.A, x) - self.b
        return 0.5 * float(np.mean(np.sum(resid * resid, axis=1)))

    def gap(self, x):
        # exact identity f(x) - f* = 1/2 e^T H e, free of cancellation
        e = np.asarray(x) - self.minimizer
        return 0.5 * float(e @ self.hessian @ e)

    def sigma_ball(self, radius: float) -> float:
        """Bound on max_i ||grad f_i|| over the ball of given radius around x*."""
        at_opt = np.linalg.norm(self.grads(0, self.n, self.minimizer), axis=1)
        curv = np.array([np.linalg.norm(a.T @ a, 2) for a in self.A])
        return float(np.max(at_opt + curv * radius))


class LogisticObjective(Objective):
    """f_i(x) = mean over task rows of log(1 + exp(-y a.x)), y in {-1, +1}."""

    def __init__(self, A, y):
        self.A = np.ascontiguousarray(A, dtype=np.float64)
        self.y = np.ascontiguousarray(y, dtype=np.float64)
        self.n, self.m, self.dim = self.A.shape
        rows = self.A.reshape(-1, self.dim)
        self.beta = float(np.linalg.eigvalsh(rows.T @ rows / len(rows))[-1]) / 4

    def grads(self, start, stop, x):
        A, y = self.A[start:stop], self.y[start:stop]
        z = np.einsum("imd,d->im", A, x)
        w = -y * _sigmoid(-y * z) / self.m
        return np.einsum("imd,im->id", A, w)

    def value(self, x):
        z = np.einsum("imd,d->im", self.A, x)
        return float(np.mean(np.logaddexp(0.0, -self.y * z)))

    def solve(self, x0=None, tol=1e-12):
        """Compute f* numerically (L-BFGS) and cache it."""
        x0 = np.zeros(self.dim) if x0 is None else x0
        res = optimize.minimize(self.value, x0, jac=self.full_grad, method="L-BFGS-B",
                                options={"gtol": tol, "ftol": 1e-15, "maxiter": 10000})
        self.minimizer = res.x
        self.optimum_value = float(res.fun)
        return self.optimum_value


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def make_quadratic(n: int, dim: int, conditioning: float, seed: int,
                   heterogeneity: float = 0.1, rows: int | None = None) -> QuadraticObjective:
    """Random strongly convex least-squares problem with known constants.

    The shared part of every A_i has singular values spread geometrically so
    that the Hessian condition number is close to ``conditioning``;
    ``heterogeneity`` scales the per-component perturbation of A_i and b_i,
    which controls how far the components disagree at the optimum. sigma
    is left unset; see :meth:`QuadraticObjective.sigma_ball`.
    """
    if n < 1 or dim < 1:
        raise ParameterError(f"need n, dim >= 1, got n={n}, dim={dim}")
    if not np.isfinite(conditioning) or conditioning < 1:
        raise ParameterError(f"degenerate conditioning {conditioning}; need finite value >= 1")
    if heterogeneity < 0:
        raise ParameterError(f"heterogeneity must be non-negative, got {heterogeneity}")
    rows = dim if rows is None else rows
    rng = stream(seed, DATA)
    Q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    spectrum = np.geomspace(1.0, 1.0 / conditioning, dim)
    base = np.zeros((rows, dim))
    base[: min(rows, dim)] = (np.sqrt(spectrum)[:, None] * Q.T)[: min(rows, dim)]
    noise = rng.standard_normal((n, rows, dim)) / np.sqrt(rows * dim)
    A = base[None] + heterogeneity * noise
    x_star = rng.standard_normal(dim)
    b = np.einsum("imd,d->im", A, x_star) + heterogeneity * rng.standard_normal((n, rows)) / np.sqrt(rows)
    return QuadraticObjective(A, b)


def with_sigma(objective: Objective, sigma: float) -> Objective:
    """Attach (mu, beta, sigma) constants to an objective with known mu and beta."""
    objective.constants = ProblemConstants(objective.mu, objective.beta, sigma)
    return objective


def _group_rows(features, labels, n):
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if features.ndim != 2 or labels.shape != features.shape[:1]:
        raise DataError(f"expected (rows, dim) features and (rows,) labels, got {features.shape}, {labels.shape}")
    if not (np.isfinite(features).all() and np.isfinite(labels).all()):
        raise DataError("dataset contains non-finite values")
    rows = len(labels)
    n = rows if n is None else n
    if n < 1 or rows < n:
        raise DataError(f"need at least n={n} rows, got {rows}")
    m = rows // n
    used = n * m
    return features[:used].reshape(n, m, -1), labels[:used].reshape(n, m)


def make_least_squares(features, labels, n: int | None = None, analyze: bool = True) -> QuadraticObjective:
    """Least squares with f_i the mean of 1/2 (a.x - y)^2 over task i's rows.

    Rows are grouped contiguously in their given order into n tasks; rows
    past ``n * (rows // n)`` are dropped. ``n`` defaults to one row per task.
    """
    A, y = _group_rows(features, labels, n)
    scale = 1.0 / np.sqrt(A.shape[1])
    return QuadraticObjective(A * scale, y * scale, analyze=analyze)


def make_logistic(features, labels, n: int | None = None) -> LogisticObjective:
    """Logistic regression on {0, 1} labels, mapped internally to {-1, +1}."""
    labels = np.asarray(labels, dtype=np.float64)
    if not np.isin(labels, (0.0, 1.0)).all():
        bad = labels[~np.isin(labels, (0.0, 1.0))][0]
        raise DataError(f"logistic labels must be 0 or 1, found {bad}")
    A, y = _group_rows(features, 2 * labels - 1, n)
    return LogisticObjective(A, y)


def block_sum(objective: Objective, block: int, x: np.ndarray, c: int) -> np.ndarray:
    """Unnormalised sum of the c component gradients of ``block``.

    Components are accumulated one at a time in task order.
    """
    if not 0 <= block < objective.n // c:
        raise InputError(f"block {block} out of range [0, {objective.n // c})")
    g = objective.grads(block * c, (block + 1) * c, x)
    total = g[0].copy()
    for row in g[1:]:
        total += row
    return total


def gd_step(x: np.ndarray, g: np.ndarray, gamma: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if x.shape != g.shape:
        raise InputError(f"dimension mismatch: x{x.shape} vs g{g.shape}")
    if not gamma > 0:
        raise InputError(f"step size must be positive, got {gamma}")
    return x - gamma * g


STEP_POLICIES = ("inv_beta", "scaled_inv_beta", "schedule")


@dataclass(frozen=True)
class StepPolicy:
    kind: str = "inv_beta"
    beta: float | None = None
    gamma0: float | None = None
    rho: float = 1.0

    def __post_init__(self):
        if self.kind not in STEP_POLICIES:
            raise ParameterError(f"unknown step policy {self.kind!r}; expected one of {STEP_POLICIES}")

    def with_beta(self, beta):
        return replace(self, beta=beta)

    def gamma(self, p: float, t: int) -> float:
        return step_size_policy(self.kind, self.beta, p, t, self.gamma0, self.rho)


def step_size_policy(policy: str, beta: float | None, p: float, t: int,
                     gamma0: float | None = None, rho: float = 1.0) -> float:
    """Step size at iteration t: 1/beta, (1-p)/beta, or gamma0 * rho**t."""
    if not 0 <= p < 1:
        raise InputError(f"need 0 <= p < 1, got {p}")
    if policy == "schedule":
        if gamma0 is None:
            raise ParameterError("schedule policy needs gamma0")
        return gamma0 * rho**t
    if beta is None or not beta > 0:
        raise ParameterError(f"policy {policy!r} needs a positive beta, got {beta}")
    if policy == "inv_beta":
        return 1.0 / beta
    if policy == "scaled_inv_beta":
        return (1.0 - p) / beta
    raise ParameterError(f"unknown step policy {policy!r}; expected one of {STEP_POLICIES}")
