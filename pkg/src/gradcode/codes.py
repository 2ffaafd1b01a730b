"""Fractional repetition codes: construction, block coverage and decoding.

Indices are 0-based throughout: tasks ``0..n-1``, workers ``0..k-1`` and
blocks ``0..n/c-1``. Block ``m`` holds tasks ``m*c .. m*c+c-1`` and is
replicated on the contiguous worker group ``m*ell .. m*ell+ell-1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, InputError, ParameterError


@dataclass(frozen=True)
class CodeParams:
    n: int
    k: int
    c: int

    def __post_init__(self):
        for name in ("n", "k", "c"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ParameterError(f"{name} must be a positive integer, got {value!r}")
        if self.c > self.n:
            raise ParameterError(f"c <= n violated: c={self.c}, n={self.n}")
        if self.n % self.c:
            raise ParameterError(f"c | n violated: c={self.c}, n={self.n}")
        if (self.k * self.c) % self.n:
            raise ParameterError(f"n | k*c violated: n={self.n}, k*c={self.k * self.c}")

    @property
    def ell(self) -> int:
        """Repetition factor: workers per block."""
        return self.k * self.c // self.n

    @property
    def blocks(self) -> int:
        return self.n // self.c


@dataclass(frozen=True)
class AssignmentMatrix:
    params: CodeParams
    support: tuple[tuple[int, ...], ...]

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def k(self) -> int:
        return self.params.k

    @property
    def c(self) -> int:
        return self.params.c

    @property
    def ell(self) -> int:
        return self.params.ell

    @property
    def blocks(self) -> int:
        return self.params.blocks

    def block_of(self, worker: int) -> int:
        self._check_worker(worker)
        return worker // self.ell

    def workers_of(self, block: int) -> range:
        if not 0 <= block < self.blocks:
            raise InputError(f"block {block} out of range [0, {self.blocks})")
        return range(block * self.ell, (block + 1) * self.ell)

    def tasks_of(self, block: int) -> range:
        if not 0 <= block < self.blocks:
            raise InputError(f"block {block} out of range [0, {self.blocks})")
        return range(block * self.c, (block + 1) * self.c)

    @cached_property
    def worker_blocks(self) -> np.ndarray:
        """Block id of every worker, as an int array of length k."""
        return np.arange(self.k) // self.ell

    def dense(self) -> np.ndarray:
        """The n x k 0/1 function-assignment matrix."""
        G = np.zeros((self.n, self.k))
        for j, tasks in enumerate(self.support):
            G[list(tasks), j] = 1.0
        return G

    def _check_worker(self, worker):
        if not 0 <= worker < self.k:
            raise InputError(f"worker id {worker} out of range [0, {self.k})")


def build_frc(n: int, k: int, c: int) -> AssignmentMatrix:
    """Build the block-diagonal fractional repetition code FRC(n, k, c)."""
    params = CodeParams(n, k, c)
    ell = params.ell
    support = tuple(
        tuple(range((j // ell) * c, (j // ell + 1) * c)) for j in range(k)
    )
    return AssignmentMatrix(params, support)


def coverage(matrix: AssignmentMatrix, non_stragglers: Iterable[int]) -> np.ndarray:
    """Indicator per block: 1 iff some non-straggler worker holds the block."""
    y = np.zeros(matrix.blocks, dtype=np.int8)
    for j in non_stragglers:
        matrix._check_worker(j)
        y[j // matrix.ell] = 1
    return y


def combine(block_sums: Sequence[np.ndarray], y: Sequence[int], n: int) -> np.ndarray:
    """Decode ``(1/n) * sum_i y_i * block_sums[i]``.

    Blocks are added in ascending order and uncovered entries are never
    touched, so they may hold anything (including ``None``). The fixed order
    makes the result bit-reproducible regardless of arrival order.
    """
    if len(block_sums) != len(y):
        raise InputError(f"{len(block_sums)} block sums but {len(y)} indicators")
    total = None
    dim = None
    for s, yi in zip(block_sums, y):
        if s is not None:
            s = np.asarray(s, dtype=np.float64)
            if dim is None:
                dim = s.shape
            elif s.shape != dim:
                raise InputError(f"gradient dimension mismatch: {s.shape} vs {dim}")
        if not yi:
            continue
        if s is None:
            raise InputError("covered block has no gradient")
        if total is None:
            total = np.zeros_like(s)
        total += s
    if total is None:
        if dim is None:
            raise InputError("cannot infer gradient dimension from an empty decode")
        return np.zeros(dim)
    return total / n


def debias(g: np.ndarray, p: float) -> np.ndarray:
    """Rescale by 1/(1-p) so the decoded gradient is unbiased."""
    if not 0.0 <= p < 1.0:
        raise DomainError(f"debiasing needs 0 <= p < 1, got p={p}")
    return np.asarray(g, dtype=np.float64) / (1.0 - p)
