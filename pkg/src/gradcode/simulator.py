"""Deterministic replay of coded distributed gradient descent.

One iteration: draw k completion times, walk the finishers in time order
(ties broken by worker id), keep the first output per block, stop when the
wait rule fires, decode, optionally debias, and take a gradient step.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import codes
from .analysis import moments_exact
from .codes import AssignmentMatrix, build_frc
from .config import ExperimentConfig
from .errors import InputError, ParameterError
from .optim import Objective, StepPolicy, block_sum, gd_step
from .rng import DELAYS, INIT, stream
from .straggler import DelayModel

WAIT_KINDS = ("uncoded_all", "egc_all_blocks", "agc_fraction")
CSV_COLUMNS = ("t", "wall_time", "covered_blocks", "finished_count", "loss", "grad_error")


@dataclass(frozen=True)
class WaitPolicy:
    kind: str
    delta: float = 1.0

    def __post_init__(self):
        if self.kind not in WAIT_KINDS:
            raise ParameterError(f"unknown wait policy {self.kind!r}; expected one of {WAIT_KINDS}")
        if not 0 < self.delta <= 1:
            raise ParameterError(f"delta must lie in (0, 1], got {self.delta}")

    @classmethod
    def for_method(cls, method: str, delta: float = 1.0) -> "WaitPolicy":
        kind = {"uncoded": "uncoded_all", "egc": "egc_all_blocks", "agc": "agc_fraction"}[method]
        return cls(kind, delta if method == "agc" else 1.0)

    def threshold(self, k: int) -> int:
        if self.kind != "agc_fraction":
            return k
        return max(1, math.ceil(self.delta * k - 1e-9))

    def check(self, matrix: AssignmentMatrix):
        if self.kind == "uncoded_all" and matrix.ell != 1:
            raise ParameterError(f"uncoded_all needs one copy per task, got ell={matrix.ell}")


def finish_order(times: np.ndarray) -> np.ndarray:
    """Worker ids sorted by completion time, ties by id."""
    return np.argsort(times, kind="stable")


def apply_wait_rule(matrix: AssignmentMatrix, policy: WaitPolicy, times: np.ndarray):
    """Return ``(finished, first_per_block, wall_time)`` for one iteration.

    ``finished`` lists the workers heard from before the rule fired, in
    arrival order; ``first_per_block`` maps block -> first worker heard.
    """
    threshold = policy.threshold(matrix.k)
    finished = []
    first = {}
    wall = 0.0
    for j in finish_order(times):
        j = int(j)
        finished.append(j)
        first.setdefault(j // matrix.ell, j)
        wall = float(times[j])
        if len(finished) >= threshold or len(first) == matrix.blocks:
            break
    return finished, first, wall


def iteration_times(matrix: AssignmentMatrix, policy: WaitPolicy, times: np.ndarray) -> np.ndarray:
    """Vectorised wall time of the wait rule for a (trials, k) batch.

    Equal to ``apply_wait_rule(...)[2]`` row by row: the rule fires at the
    earlier of full block coverage and the threshold-th arrival.
    """
    times = np.asarray(times, dtype=np.float64)
    blocks = times.reshape(len(times), matrix.blocks, matrix.ell)
    full_cover = blocks.min(axis=2).max(axis=1)
    threshold = policy.threshold(matrix.k)
    if threshold >= matrix.k:
        return full_cover
    rth = np.partition(times, threshold - 1, axis=1)[:, threshold - 1]
    return np.minimum(rth, full_cover)


def covered_before_threshold(matrix: AssignmentMatrix, policy: WaitPolicy, times: np.ndarray) -> np.ndarray:
    """Per trial: whether full coverage happened strictly before the threshold-th arrival."""
    blocks = times.reshape(len(times), matrix.blocks, matrix.ell)
    full_cover = blocks.min(axis=2).max(axis=1)
    threshold = policy.threshold(matrix.k)
    if threshold >= matrix.k:
        return np.ones(len(times), dtype=bool)
    rth = np.partition(times, threshold - 1, axis=1)[:, threshold - 1]
    return full_cover < rth


@dataclass
class IterationRecord:
    t: int
    finished_workers: tuple
    covered_blocks: int
    wall_time: float
    loss: float
    grad_error: float
    gap: float | None = None
    gamma: float = 0.0

    @property
    def finished_count(self) -> int:
        return len(self.finished_workers)


@dataclass
class RunResult:
    records: list
    config: dict
    seed: int
    initial_loss: float
    initial_gap: float | None
    final_x: np.ndarray
    iterates: list = field(default_factory=list)

    @property
    def total_time(self) -> float:
        return float(sum(r.wall_time for r in self.records))

    @property
    def final_loss(self) -> float:
        return self.records[-1].loss if self.records else self.initial_loss

    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    def gaps(self) -> np.ndarray:
        return np.array([r.gap for r in self.records], dtype=np.float64)

    def wall_times(self) -> np.ndarray:
        return np.array([r.wall_time for r in self.records])

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "config": self.config,
            "total_time": self.total_time,
            "initial_loss": self.initial_loss,
            "initial_gap": self.initial_gap,
            "final_loss": self.final_loss,
            "final_x": [float(v) for v in self.final_x],
            "records": [
                {**asdict(r), "finished_workers": list(r.finished_workers)} for r in self.records
            ],
        }

    def write_json(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n")

    def write_csv(self, path, digest: str | None = None):
        with open(path, "w", newline="") as fh:
            if digest:
                fh.write(f"# config_sha256={digest}\n")
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for r in self.records:
                writer.writerow([r.t, repr(r.wall_time), r.covered_blocks, r.finished_count,
                                 repr(r.loss), repr(r.grad_error)])


@dataclass
class Trainer:
    """Everything one iteration needs besides the iterate and the times."""

    matrix: AssignmentMatrix
    objective: Objective
    policy: WaitPolicy
    step: StepPolicy
    debias: bool = False

    def __post_init__(self):
        self.policy.check(self.matrix)
        if self.objective.n != self.matrix.n:
            raise InputError(f"objective has {self.objective.n} components, code has n={self.matrix.n}")
        threshold = self.policy.threshold(self.matrix.k)
        if threshold >= self.matrix.k:
            self.p = 0.0
        else:
            self.p = moments_exact(self.matrix.k, self.matrix.ell, threshold).p

    def gamma(self, t: int) -> float:
        return self.step.gamma(self.p, t)

    def update(self, x, block_outputs, y, t):
        """Decode block outputs and step; shared with the network master."""
        g = codes.combine(block_outputs, y, self.matrix.n)
        if self.debias:
            g = codes.debias(g, self.p)
        gamma = self.gamma(t)
        if not y.any():
            return np.array(x, dtype=np.float64), g, gamma
        return gd_step(x, g, gamma), g, gamma


def run_iteration(trainer: Trainer, x: np.ndarray, times: np.ndarray, t: int = 0,
                  diagnostics: bool = True):
    """Advance one iteration given the k completion times for it."""
    m = trainer.matrix
    finished, first, wall = apply_wait_rule(m, trainer.policy, times)
    y = np.zeros(m.blocks, dtype=np.int8)
    outputs = [None] * m.blocks
    for block in sorted(first):
        y[block] = 1
        outputs[block] = block_sum(trainer.objective, block, x, m.c)
    x_new, g, gamma = trainer.update(x, outputs, y, t)
    grad_error = float("nan")
    if diagnostics:
        grad_error = float(np.linalg.norm(g - trainer.objective.full_grad(x)))
    obj = trainer.objective
    record = IterationRecord(
        t=t + 1,
        finished_workers=tuple(finished),
        covered_blocks=int(y.sum()),
        wall_time=wall,
        loss=obj.value(x_new),
        grad_error=grad_error,
        gap=obj.gap(x_new) if obj.optimum_value is not None else None,
        gamma=gamma,
    )
    return x_new, record


def delay_model_for(config: ExperimentConfig) -> DelayModel:
    return DelayModel(config.lam, config.blocks)


def iteration_delays(config: ExperimentConfig, t: int) -> np.ndarray:
    """Completion times of all k workers in iteration t (seeded substream)."""
    model = delay_model_for(config)
    return model.shift + stream(config.seed, DELAYS, t).exponential(1.0 / model.rate, size=config.k)


def start_point(objective: Objective, config: ExperimentConfig) -> np.ndarray:
    """x* plus a seeded random direction of length x0_radius (origin if x* unknown)."""
    u = stream(config.seed, INIT).standard_normal(objective.dim)
    u *= config.x0_radius / np.linalg.norm(u)
    base = objective.minimizer if objective.minimizer is not None else np.zeros(objective.dim)
    return base + u


def make_trainer(config: ExperimentConfig, objective: Objective) -> Trainer:
    matrix = build_frc(config.n, config.k, config.c)
    beta = getattr(objective, "beta", None)
    step = StepPolicy(config.gamma_policy, beta, config.gamma0, config.rho)
    policy = WaitPolicy.for_method(config.method, config.delta)
    return Trainer(matrix, objective, policy, step, config.debias)


def run_experiment(config: ExperimentConfig, objective: Objective | None = None, *,
                   x0: np.ndarray | None = None, delay_table: np.ndarray | None = None,
                   record_iterates: bool = False, diagnostics: bool = True) -> RunResult:
    """Run T iterations; deterministic given the config seed.

    ``delay_table`` (T x k) replaces the sampled completion times.
    """
    if objective is None:
        from .data import build_objective

        objective = build_objective(config)
    trainer = make_trainer(config, objective)
    x = start_point(objective, config) if x0 is None else np.array(x0, dtype=np.float64)
    if delay_table is not None:
        delay_table = np.asarray(delay_table, dtype=np.float64)
        if delay_table.shape != (config.T, config.k):
            raise InputError(f"delay table must be {(config.T, config.k)}, got {delay_table.shape}")
    gap0 = objective.gap(x) if objective.optimum_value is not None else None
    result = RunResult([], config.to_dict(), config.seed, objective.value(x), gap0, x)
    for t in range(config.T):
        times = delay_table[t] if delay_table is not None else iteration_delays(config, t)
        x, record = run_iteration(trainer, x, times, t, diagnostics)
        result.records.append(record)
        if record_iterates:
            result.iterates.append(x.copy())
    result.final_x = x
    return result


@dataclass
class Summary:
    t: np.ndarray
    loss_mean: np.ndarray
    loss_lo: np.ndarray
    loss_hi: np.ndarray
    wall_mean: np.ndarray
    wall_lo: np.ndarray
    wall_hi: np.ndarray
    elapsed_mean: np.ndarray
    runs: int
    time_to_threshold: float | None = None

    def rows(self):
        for i in range(len(self.t)):
            yield (int(self.t[i]), self.loss_mean[i], self.loss_lo[i], self.loss_hi[i],
                   self.wall_mean[i], self.wall_lo[i], self.wall_hi[i], self.elapsed_mean[i])

    def write_csv(self, path, digest: str | None = None):
        with open(path, "w", newline="") as fh:
            if digest:
                fh.write(f"# config_sha256={digest}\n")
            writer = csv.writer(fh)
            writer.writerow(["t", "loss_mean", "loss_lo", "loss_hi", "wall_mean", "wall_lo",
                             "wall_hi", "elapsed_mean"])
            for row in self.rows():
                writer.writerow([row[0], *(repr(float(v)) for v in row[1:])])


def time_to_threshold(result: RunResult, threshold: float, use_gap: bool = True) -> float:
    """Elapsed simulated time at the first iterate at or below ``threshold``."""
    start = result.initial_gap if use_gap else result.initial_loss
    if start <= threshold:
        return 0.0
    values = result.gaps() if use_gap else result.losses()
    hit = np.flatnonzero(values <= threshold)
    if not len(hit):
        return math.inf
    return float(np.cumsum(result.wall_times())[hit[0]])


def summarize(results: Sequence[RunResult], threshold: float | None = None,
              use_gap: bool = False) -> Summary:
    """Per-iteration mean and 2.5-97.5 percentile band across runs."""
    if not results:
        raise InputError("summarize needs at least one result")
    lengths = {len(r.records) for r in results}
    if len(lengths) != 1:
        raise InputError(f"runs have different lengths: {sorted(lengths)}")
    loss = np.array([r.gaps() if use_gap else r.losses() for r in results])
    wall = np.array([r.wall_times() for r in results])
    T = lengths.pop()
    elapsed = np.cumsum(wall, axis=1) if T else wall
    band = lambda a, q: np.percentile(a, q, axis=0) if T else np.zeros(0)  # noqa: E731
    ttt = None
    if threshold is not None:
        ttt = float(np.mean([time_to_threshold(r, threshold, use_gap) for r in results]))
    return Summary(
        t=np.arange(1, T + 1),
        loss_mean=loss.mean(axis=0), loss_lo=band(loss, 2.5), loss_hi=band(loss, 97.5),
        wall_mean=wall.mean(axis=0), wall_lo=band(wall, 2.5), wall_hi=band(wall, 97.5),
        elapsed_mean=elapsed.mean(axis=0), runs=len(results), time_to_threshold=ttt,
    )


def speedups(times: dict, baseline: str = "uncoded") -> dict:
    """Ratio of the baseline's time-to-threshold to each method's."""
    base = times[baseline]
    return {method: (base / t if t > 0 else math.inf) for method, t in times.items()}
