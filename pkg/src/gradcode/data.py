"""Dataset loading, objective construction and task sharding."""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import numpy as np

from .codes import build_frc
from .config import ExperimentConfig
from .errors import DataError
from .optim import Objective, make_least_squares, make_logistic, make_quadratic, with_sigma

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"


def read_csv(path, label_column: str):
    """Return (features, labels, feature_names) from a numeric CSV."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        if label_column not in header:
            raise DataError(f"label column {label_column!r} not in {path} header {header}")
        li = header.index(label_column)
        rows = []
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric value in {row}") from None
    if not rows:
        raise DataError(f"{path} has no data rows")
    table = np.array(rows)
    labels = table[:, li]
    features = np.delete(table, li, axis=1)
    names = [h for i, h in enumerate(header) if i != li]
    return features, labels, names


def standardize(features):
    std = features.std(axis=0)
    std[std == 0] = 1.0
    return (features - features.mean(axis=0)) / std


def objective_from_arrays(kind: str, features, labels, n: int) -> Objective:
    if kind == "least_squares":
        return make_least_squares(features, labels, n)
    if kind == "logistic":
        obj = make_logistic(features, labels, n)
        obj.solve()
        return obj
    raise DataError(f"objective {kind!r} does not take a dataset")


def build_objective(config: ExperimentConfig) -> Objective:
    """Construct the objective a config describes.

    Quadratic problems get sigma bounded over the ball around x* that
    contains the whole sublevel set of the start point.
    """
    if config.objective == "quadratic":
        obj = make_quadratic(config.n, config.dim, config.conditioning, config.data_seed,
                             config.heterogeneity)
        from .simulator import start_point

        delta0 = obj.gap(start_point(obj, config))
        return with_sigma(obj, obj.sigma_ball(np.sqrt(2 * delta0 / obj.mu)))
    features, labels, _ = read_csv(config.dataset, config.label_column)
    if config.standardize:
        features = standardize(features)
    usable = (len(labels) // config.n) * config.n
    if usable < len(labels):
        log.warning("dropping %d trailing rows so that %d tasks have equal size",
                    len(labels) - usable, config.n)
    return objective_from_arrays(config.objective, features, labels, config.n)


def _fmt(v):
    return repr(float(v))


def shard(dataset, label_column: str, n: int, k: int, c: int, out_dir,
          objective: str = "least_squares", standardize_features: bool = False) -> dict:
    """Split a CSV into n task files plus a block/task/worker manifest."""
    features, labels, names = read_csv(dataset, label_column)
    if len(labels) < n:
        raise DataError(f"need at least n={n} rows, got {len(labels)}")
    if standardize_features:
        features = standardize(features)
    per_task = len(labels) // n
    dropped = len(labels) - per_task * n
    if dropped:
        log.warning("dropping %d trailing rows so that %d tasks have equal size", dropped, n)
    matrix = build_frc(n, k, c)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for i in range(n):
        name = f"task_{i:05d}.csv"
        files.append(name)
        lines = [",".join([*names, label_column])]
        for row in range(i * per_task, (i + 1) * per_task):
            lines.append(",".join([*(_fmt(v) for v in features[row]), _fmt(labels[row])]))
        (out / name).write_text("\n".join(lines) + "\n")
    manifest = {
        "n": n, "k": k, "c": c, "ell": matrix.ell,
        "objective": objective,
        "label_column": label_column,
        "rows_per_task": per_task,
        "files": files,
        "blocks": [
            {"block": b, "tasks": list(matrix.tasks_of(b)), "workers": list(matrix.workers_of(b))}
            for b in range(matrix.blocks)
        ],
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


class ShardObjective(Objective):
    """Objective over a contiguous range of tasks loaded from shard files.

    Task indices stay global; asking for a task outside the loaded range is
    an error.
    """

    def __init__(self, inner: Objective, first_task: int, n_total: int):
        self.inner = inner
        self.first = first_task
        self.n = n_total
        self.dim = inner.dim

    def grads(self, start, stop, x):
        lo, hi = start - self.first, stop - self.first
        if lo < 0 or hi > self.inner.n:
            raise DataError(f"tasks [{start}, {stop}) not in this shard")
        return self.inner.grads(lo, hi, x)

    def value(self, x):
        raise DataError("a shard cannot evaluate the full objective")


def load_shards(shard_dir, tasks) -> ShardObjective:
    """Load the given contiguous tasks of a sharded dataset."""
    shard_dir = Path(shard_dir)
    manifest = json.loads((shard_dir / MANIFEST).read_text())
    tasks = sorted(tasks)
    if tasks != list(range(tasks[0], tasks[-1] + 1)):
        raise DataError(f"tasks must be contiguous, got {tasks}")
    feats, labs = [], []
    for i in tasks:
        f, l, _ = read_csv(shard_dir / manifest["files"][i], manifest["label_column"])
        feats.append(f)
        labs.append(l)
    inner = objective_from_arrays_raw(manifest["objective"], np.vstack(feats),
                                      np.concatenate(labs), len(tasks))
    return ShardObjective(inner, tasks[0], manifest["n"])


def objective_from_arrays_raw(kind, features, labels, n):
    # no f* solve: shards only serve gradients
    if kind == "least_squares":
        return make_least_squares(features, labels, n, analyze=False)
    if kind == "logistic":
        return make_logistic(features, labels, n)
    raise DataError(f"unknown objective {kind!r} in manifest")
