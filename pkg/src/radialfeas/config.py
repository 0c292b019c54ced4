"""Flat ``key=value`` experiment configuration.

A config file holds one ``key=value`` per line; blank lines and lines starting
with ``#`` are ignored, except ``# config key=value`` lines, which is how every
output CSV records its resolved configuration. Pointing ``--config`` at a result
file therefore re-runs it.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

from . import __version__
from .errors import InvalidInputError

__all__ = ["ExperimentConfig", "load_config", "parse_assignments", "header_lines"]

TASKS = ("toy2d", "portfolio", "dispatch")


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "portfolio"
    method: str = "soft-radial"
    methods: str = "soft-radial,orthogonal,softmax,hardnet,dc3"
    seeds: str = "0,1,2"
    # soft-radial contraction
    family: str = "rational"
    epsilon: float = 0.1
    lam: float = 1.0
    # baselines
    softmax_tau: float = 1.0
    allow_uncapped_softmax: bool = False
    hardnet_steps: int = 1
    dc3_steps: int = 3
    dc3_lr: float = 0.1
    dc3_momentum: float = 0.0
    # network and optimizer
    hidden: str = "32"
    activation: str = "tanh"
    dropout: float = 0.0
    optimizer: str = "adam"
    lr: float = 1e-3
    sgd_schedule: str = "constant"
    epochs: int = 50
    batch_size: int = 64
    train_frac: float = 0.7
    # data
    data: str = "synthetic"
    data_seed: int = 0
    lookback: int = 10
    # portfolio
    n_assets: int = 10
    horizon: int = 500
    factors: int = 3
    caps: float = 0.2
    gamma: float = 0.1
    delta: float = 1e-3
    train_gross: bool = False
    # dispatch
    n_zones: int = 20
    kappa: float = 0.1
    softmin_tau: float = 0.0  # 0 means 0.05 * mean training demand
    # toy2d
    toy_init: str = "3.0,0.5"
    toy_target: str = "0.9,0.5"
    toy_steps: int = 500
    toy_lr: float = 0.05
    plots: bool = True
    out: str = "out"

    def __post_init__(self):
        if self.task not in TASKS:
            raise InvalidInputError(f"unknown task {self.task!r}; choose from {', '.join(TASKS)}")

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    def seed_list(self) -> list[int]:
        return [int(s) for s in self.seeds.split(",") if s.strip()]

    def method_list(self) -> list[str]:
        return [m.strip() for m in self.methods.split(",") if m.strip()]

    def hidden_sizes(self) -> list[int]:
        return [int(h) for h in self.hidden.split(",") if h.strip()]

    def floats(self, name) -> tuple:
        return tuple(float(v) for v in getattr(self, name).split(","))


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key, raw: str):
    kind = _TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise InvalidInputError(f"bad value for {key}: {raw!r}") from exc
    return raw


def parse_assignments(pairs) -> dict:
    """``["a=1", "b=x"]`` -> typed dict, rejecting unknown keys."""
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        key = key.strip()
        if not sep:
            raise InvalidInputError(f"expected key=value, got {pair!r}")
        if key not in _TYPES:
            raise InvalidInputError(f"unknown config key {key!r}")
        out[key] = _coerce(key, value)
    return out


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    values = {}
    if path is not None:
        pairs = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line.startswith("# config "):
                    pairs.append(line[len("# config ") :])
                elif line and not line.startswith("#") and "=" in line:
                    pairs.append(line)
        values.update(parse_assignments(pairs))
    values.update(overrides or {})
    return ExperimentConfig(**values)


def header_lines(cfg: ExperimentConfig, **extra) -> list[str]:
    """Comment lines echoing the version and every resolved config value."""
    lines = [f"# radialfeas {__version__}"]
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"# config {f.name}={v}")
    for k, v in extra.items():
        lines.append(f"# {k}={v}")
    return lines
