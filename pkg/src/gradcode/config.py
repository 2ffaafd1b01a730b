"""Experiment configuration: a flat ``key = value`` text format.

Lines starting with ``#`` are comments. Unknown keys are rejected so typos
surface immediately.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .codes import CodeParams
from .errors import ConfigError, ParameterError
from .optim import STEP_POLICIES

METHODS = ("uncoded", "egc", "agc")
OBJECTIVES = ("quadratic", "least_squares", "logistic")
REQUIRED = ("method", "n", "k", "c", "T", "seed")
ALIASES = {"policy": "method", "lam": "lambda"}


@dataclass(frozen=True)
class ExperimentConfig:
    method: str
    n: int
    k: int
    c: int
    T: int
    seed: int
    delta: float = 1.0
    lam: float = 1.0
    gamma_policy: str = "inv_beta"
    gamma0: float | None = None
    rho: float = 1.0
    debias: bool = False
    objective: str = "quadratic"
    dim: int = 10
    conditioning: float = 10.0
    heterogeneity: float = 0.1
    data_seed: int = 0
    x0_radius: float = 1.0
    dataset: str | None = None
    label_column: str | None = None
    standardize: bool = False
    output: str | None = None
    time_scale: float = 0.0
    timeout: float = 60.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.method not in METHODS:
            raise ConfigError("method", f"must be one of {METHODS}, got {self.method!r}")
        for name in ("n", "k", "c"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be a positive integer")
        try:
            CodeParams(self.n, self.k, self.c)
        except ParameterError as exc:
            raise ConfigError("c", str(exc)) from None
        if self.T < 0:
            raise ConfigError("T", "must be >= 0")
        if not 0 < self.delta <= 1:
            raise ConfigError("delta", f"must lie in (0, 1], got {self.delta}")
        if not self.lam > 0:
            raise ConfigError("lambda", f"must be positive, got {self.lam}")
        if self.method == "uncoded" and self.k * self.c != self.n:
            raise ConfigError("c", "uncoded runs need one copy of each task (k*c == n)")
        if self.gamma_policy not in STEP_POLICIES:
            raise ConfigError("gamma_policy", f"must be one of {STEP_POLICIES}")
        if self.gamma_policy == "schedule" and self.gamma0 is None:
            raise ConfigError("gamma0", "required when gamma_policy = schedule")
        if self.objective not in OBJECTIVES:
            raise ConfigError("objective", f"must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.objective != "quadratic":
            if not self.dataset:
                raise ConfigError("dataset", f"required for objective {self.objective}")
            if not self.label_column:
                raise ConfigError("label_column", f"required for objective {self.objective}")

    @property
    def code(self) -> CodeParams:
        return CodeParams(self.n, self.k, self.c)

    @property
    def blocks(self) -> int:
        return self.n // self.c

    @property
    def threshold(self) -> int:
        """Number of finished workers after which an agc round stops."""
        if self.method != "agc":
            return self.k
        return max(1, math.ceil(self.delta * self.k - 1e-9))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    def dumps(self) -> str:
        lines = []
        for key, value in self.to_dict().items():
            if value is None:
                continue
            lines.append(f"{key} = {_format(value)}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]

    def replace(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _convert(key, raw):
    kind = _TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind in ("float", "float | None"):
            return float(raw)
        if kind == "bool":
            lowered = raw.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {kind}") from None
    return raw


def from_mapping(items: dict) -> ExperimentConfig:
    values = {}
    for key, raw in items.items():
        key = ALIASES.get(key, key)
        if key == "lambda":
            key = "lam"
        if key not in _TYPES:
            raise ConfigError(key, "unknown key")
        values[key] = _convert(key, raw) if isinstance(raw, str) else raw
    for key in REQUIRED:
        if key not in values:
            raise ConfigError(key, "missing required key")
    return ExperimentConfig(**values)


def loads(text: str) -> ExperimentConfig:
    items = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        items[key.strip()] = value.strip()
    return from_mapping(items)


def load(path) -> ExperimentConfig:
    return loads(Path(path).read_text())
