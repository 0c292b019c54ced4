"""Multilayer perceptron on the tape, optimizers, and a text checkpoint format.

Checkpoint layout (UTF-8 text)::

    # radialfeas-checkpoint v1
    # meta <key>=<value>            (zero or more)
    tensor <name> <dim0> [<dim1>]
    <row of repr() floats separated by spaces>   (one line per row)
    ...

Floats are written with ``repr`` so a load/save round trip is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import InvalidInputError, TrainingDivergedError

__all__ = [
    "Mlp",
    "mlp_forward",
    "AdamState",
    "adam_step",
    "SgdSchedule",
    "sgd_step",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_HEADER",
]

CHECKPOINT_HEADER = "# radialfeas-checkpoint v1"
ACTIVATIONS = {"relu": ad.relu, "tanh": ad.tanh}


class Mlp:
    """Affine layers with an activation between them and none after the last.

    Weights are Glorot-uniform, ``U(-sqrt(6/(fan_in+fan_out)), +...)``, biases
    zero, all drawn from ``numpy.random.default_rng(seed)``.
    """

    def __init__(self, sizes, activation: str = "tanh", seed: int = 0, dropout: float = 0.0):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise InvalidInputError("need at least input and output sizes, all positive")
        if activation not in ACTIVATIONS:
            raise InvalidInputError(f"unknown activation {activation!r}")
        if not 0.0 <= dropout < 1.0:
            raise InvalidInputError("dropout must lie in [0, 1)")
        self.sizes = sizes
        self.activation = activation
        self.seed = seed
        self.dropout = dropout
        rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            self.params[f"layer{k}.W"] = rng.uniform(-limit, limit, size=(fan_out, fan_in))
            self.params[f"layer{k}.b"] = np.zeros(fan_out)

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def bind(self, tape: ad.Tape) -> dict:
        return {k: tape.var(v) for k, v in self.params.items()}

    def __call__(self, z):
        """Plain numpy forward pass (no tape, no dropout)."""
        tape = ad.Tape()
        return mlp_forward(self, self.bind(tape), tape.var(z)).value


def mlp_forward(net: Mlp, bound: dict, z, rng: np.random.Generator | None = None) -> ad.Var:
    """Forward pass on the tape. Dropout is applied only when ``rng`` is given."""
    width = z.shape[-1]
    if width != net.sizes[0]:
        raise InvalidInputError(f"input width {width} != {net.sizes[0]}")
    act = ACTIVATIONS[net.activation]
    h = z
    for k in range(net.n_layers):
        h = ad.affine(h, bound[f"layer{k}.W"], bound[f"layer{k}.b"])
        if k < net.n_layers - 1:
            h = act(h)
            if rng is not None and net.dropout > 0.0:
                keep = rng.random(h.shape) >= net.dropout
                h = h * (keep / (1.0 - net.dropout))
    return h


def _check_finite(grads: dict, step: int):
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient for {name} at step {step}", step=step)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict) -> dict:
    """Bias-corrected Adam; updates ``params`` in place and returns it."""
    _check_finite(grads, state.step)
    state.step += 1
    t = state.step
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        params[name] = params[name] - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


@dataclass(frozen=True)
class SgdSchedule:
    """``constant``: c; ``horizon``: c / sqrt(T) for every t; ``diminishing``: c / sqrt(t + 1)."""

    kind: str = "constant"
    c: float = 0.1

    def __post_init__(self):
        if self.kind not in ("constant", "horizon", "diminishing"):
            raise InvalidInputError(f"unknown schedule {self.kind!r}")

    def rate(self, t: int, T: int) -> float:
        if self.kind == "constant":
            return self.c
        if self.kind == "horizon":
            return self.c / math.sqrt(T)
        return self.c / math.sqrt(t + 1)


def sgd_step(params: dict, grads: dict, t: int, T: int, schedule: SgdSchedule = SgdSchedule()):
    _check_finite(grads, t)
    eta = schedule.rate(t, T)
    for name, g in grads.items():
        params[name] = params[name] - eta * g
    return params


def save_checkpoint(path, params: dict, meta: dict | None = None) -> None:
    lines = [CHECKPOINT_HEADER]
    for k, v in (meta or {}).items():
        lines.append(f"# meta {k}={v}")
    for name, arr in params.items():
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim not in (1, 2):
            raise InvalidInputError("only vectors and matrices can be checkpointed")
        lines.append(f"tensor {name} " + " ".join(str(s) for s in arr.shape))
        for row in np.atleast_2d(arr):
            lines.append(" ".join(repr(float(x)) for x in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path):
    """Return ``(params, meta)``."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CHECKPOINT_HEADER:
        raise InvalidInputError("not a radialfeas checkpoint (or unsupported version)")
    params, meta = {}, {}
    i = 1
    while i < len(lines):
        line = lines[i]
        if line.startswith("# meta "):
            key, _, value = line[len("# meta ") :].partition("=")
            meta[key] = value
            i += 1
        elif line.startswith("tensor "):
            parts = line.split()
            name, shape = parts[1], tuple(int(s) for s in parts[2:])
            rows = 1 if len(shape) == 1 else shape[0]
            data = [[float(x) for x in lines[i + 1 + r].split()] for r in range(rows)]
            params[name] = np.array(data).reshape(shape)
            i += 1 + rows
        elif not line.strip():
            i += 1
        else:
            raise InvalidInputError(f"malformed checkpoint line {i + 1}")
    return params, meta
