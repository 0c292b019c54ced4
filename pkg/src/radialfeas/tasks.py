"""End-to-end objectives, data, and the constraint operators they train through.

Three tasks:

* ``toy2d``: gradient descent on ``||Proj(u) - x*||^2`` over a box, used to
  show how each operator passes (or blocks) gradient signal.
* ``portfolio``: Sharpe ratio of net returns with a pseudo-Huber turnover cost
  charged against drifted weights, on the capped simplex.
* ``dispatch``: served rate of fleet allocations on a supply-scaled capped
  simplex, with SoftMin inside the training loss and the hard minimum for metrics.

CSV schemas::

    returns: date,asset_1,...,asset_N         (price relatives, e.g. 1.003)
    demand:  timestamp,zone_1,...,zone_N,supply
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import baselines
from .errors import InfeasibleSetError, InvalidInputError
from .radial import RadialContraction, SoftRadialLayer
from .sets import CappedSimplex, Polytope

__all__ = [
    "METHODS",
    "ConstraintOperator",
    "drift_weights",
    "pseudo_huber_turnover",
    "sharpe_trace",
    "sharpe_objective",
    "portfolio_metrics",
    "softmin",
    "softmin_trace",
    "served_rate",
    "served_rate_trace",
    "scaled_capped_projection",
    "scaled_trace",
    "PortfolioBatch",
    "DispatchBatch",
    "portfolio_batch_from_relatives",
    "dispatch_batch_from_arrays",
    "synth_market",
    "synth_demand",
    "load_returns_csv",
    "load_demand_csv",
    "write_returns_csv",
    "write_demand_csv",
    "split_and_normalize",
    "Toy2dConfig",
    "Toy2dTrace",
    "run_toy2d",
    "grid_warp",
    "EmptyDemandError",
]

METHODS = ("soft-radial", "orthogonal", "softmax", "hardnet", "dc3")
EPS_STD = 1e-8


class EmptyDemandError(ValueError):
    """A sample has zero total demand; callers skip it."""


# -- constraint operators -----------------------------------------------------


class ConstraintOperator:
    """One constraint-enforcement method on the unit capped simplex.

    ``trace`` builds the training graph on the tape; ``evaluate`` produces the
    evaluation-time output, which for HardNet and DC3 is followed by the exact
    projection. Softmax cannot honor caps below 1: it is rejected unless
    ``allow_uncapped_softmax`` is set, in which case it is checked against the
    plain simplex instead.
    """

    def __init__(
        self,
        method: str,
        caps,
        contraction: RadialContraction | None = None,
        softmax_tau: float = 1.0,
        hardnet_steps: int = 1,
        dc3: baselines.Dc3Config | None = None,
        allow_uncapped_softmax: bool = False,
    ):
        if method not in METHODS:
            raise InvalidInputError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
        caps = np.asarray(caps, dtype=np.float64).reshape(-1)
        self.method = method
        self.caps = caps
        self.n = caps.shape[0]
        self.eval_caps = caps
        if method == "softmax" and np.any(caps < 1.0):
            if not allow_uncapped_softmax:
                raise InvalidInputError(
                    f"softmax cannot satisfy the cap constraint w <= c (min cap {caps.min():.3g} < 1); "
                    "set allow_uncapped_softmax=true to run it on the plain simplex"
                )
            self.eval_caps = np.ones(self.n)
        self.softmax_tau = softmax_tau
        self.hardnet_steps = int(hardnet_steps)
        self.dc3 = dc3 or baselines.Dc3Config()
        self.layer = None
        if method == "soft-radial":
            self.layer = SoftRadialLayer(CappedSimplex(caps), contraction or RadialContraction())
        if method == "hardnet":
            self.bounds = baselines.capped_simplex_bounds(caps)
        ad.register_projection_primitives()

    def trace(self, u: ad.Var) -> ad.Var:
        m = self.method
        if m == "soft-radial":
            return ad.apply("soft_project", u, layer=self.layer)
        if m == "orthogonal":
            return ad.apply("project_capped_simplex", u, caps=self.caps)
        if m == "softmax":
            return ad.apply("softmax_temp", u, tau=self.softmax_tau)
        if m == "hardnet":
            w = u - ad.expand(ad.scale(ad.sum(u, axis=-1) - 1.0, 1.0 / self.n), self.n)
            for _ in range(self.hardnet_steps):
                w = ad.apply("hardnet_correct", w, bounds=self.bounds)
            return w
        return baselines.dc3_trace(u, self.caps, self.dc3)

    def train_output(self, u):
        tape = ad.Tape()
        return self.trace(tape.var(u)).value

    def evaluate(self, u):
        w = self.train_output(u)
        if self.method in ("hardnet", "dc3"):
            w = baselines.eval_feasibility_wrapper(w, self.caps)
        return w

    def margin(self, w):
        """Smallest bound slack per row (negative means infeasible)."""
        w = np.atleast_2d(w)
        return np.minimum(w, self.eval_caps - w).min(axis=1)

    def sum_error(self, w):
        return np.abs(np.atleast_2d(w).sum(axis=1) - 1.0)


# -- portfolio ----------------------------------------------------------------


def drift_weights(w, y):
    """Weights after one period of passive price moves: ``y * w / (y . w)``."""
    w = np.asarray(w, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    den = np.sum(y * w, axis=-1, keepdims=True)
    if np.any(den <= 0):
        raise InvalidInputError("portfolio value must stay positive")
    return y * w / den


def pseudo_huber_turnover(w, w_prev_drifted, delta: float):
    if not delta > 0:
        raise InvalidInputError("delta must be positive")
    d = np.asarray(w, dtype=np.float64) - np.asarray(w_prev_drifted, dtype=np.float64)
    return np.sum(np.sqrt(delta * delta + d * d) - delta, axis=-1)


def _turnover_terms(W: ad.Var, y, delta):
    """Pseudo-Huber distance of each row (after the first) to the drifted previous row."""
    n = W.shape[-1]
    prev = W[:-1]
    y_prev = y[:-1]
    drifted = (prev * y_prev) / ad.expand(ad.dot(prev, y_prev), n)
    diff = W[1:] - drifted
    return ad.sum(ad.sqrt(diff * diff + delta * delta) - delta, axis=-1)


def sharpe_trace(W: ad.Var, y, gamma: float, delta: float, baseline: float = 0.0) -> ad.Var:
    """Sharpe ratio of ``R_t = w_t . y_t - baseline - gamma/2 * L_delta(w_t, w_{t-1}^+)``.

    Row ``t`` of ``y`` is the price relative realized after deciding ``w_t``; the
    first row carries no trading cost. Population standard deviation, guarded by
    ``EPS_STD``.
    """
    y = np.asarray(y, dtype=np.float64)
    T = W.shape[0]
    if T < 2:
        raise InvalidInputError("Sharpe ratio needs at least two periods")
    R = ad.dot(W, y) - baseline
    if gamma != 0.0:
        cost = ad.concat([np.zeros(1), _turnover_terms(W, y, delta)])
        R = R - ad.scale(cost, 0.5 * gamma)
    m = ad.mean(R)
    dev = R - ad.expand(m, T)
    std = ad.sqrt(ad.mean(dev * dev))
    return m / (std + EPS_STD)


def sharpe_objective(w_path, batch_or_y, gamma=None, delta=None, baseline: float = 0.0) -> float:
    if isinstance(batch_or_y, PortfolioBatch):
        y = batch_or_y.y
        gamma = batch_or_y.gamma if gamma is None else gamma
        delta = batch_or_y.delta if delta is None else delta
    else:
        y = batch_or_y
    tape = ad.Tape()
    return float(sharpe_trace(tape.var(w_path), y, gamma or 0.0, delta or 1e-3, baseline).value)


def portfolio_metrics(W, y, gamma: float) -> dict:
    """Evaluation metrics with the exact L1 cost on excess returns ``w . y - 1``.

    ``turnover`` is the mean one-way turnover ``0.5 * ||w_t - w_{t-1}^+||_1``
    over rebalancing steps. Sharpe ratios are per period (not annualized).
    """
    W = np.asarray(W, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    gross = np.sum(W * y, axis=1) - 1.0
    one_way = np.zeros(len(W))
    one_way[1:] = 0.5 * np.abs(W[1:] - drift_weights(W[:-1], y[:-1])).sum(axis=1)
    net = gross - gamma * one_way

    def sharpe(r):
        return float(r.mean() / (r.std() + EPS_STD))

    return {
        "net_sharpe": sharpe(net),
        "gross_sharpe": sharpe(gross),
        "turnover": float(one_way[1:].mean()),
        "mean_net_return": float(net.mean()),
    }


# -- dispatch -----------------------------------------------------------------


def softmin(x, y, tau: float):
    """``-tau * log(exp(-x/tau) + exp(-y/tau))`` evaluated from the minimum outward."""
    if not tau > 0:
        raise InvalidInputError("tau must be positive")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    m = np.minimum(x, y)
    out = m - tau * np.log1p(np.exp(-np.abs(x - y) / tau))
    return float(out) if out.ndim == 0 else out


def softmin_trace(x: ad.Var, y, tau: float) -> ad.Var:
    diff = x - y
    low = x - ad.relu(diff)  # min(x, y)
    return low - ad.scale(ad.log1p(ad.exp(ad.scale(ad.absolute(diff), -1.0 / tau))), tau)


def served_rate(a, d, tau: float = 1.0, mode: str = "hard"):
    """``sum_i min(a_i, d_i) / sum_i d_i``; batches average over rows with demand.

    ``mode="soft"`` replaces the minimum by SoftMin. A single sample with zero
    demand raises :class:`EmptyDemandError`.
    """
    if mode not in ("soft", "hard"):
        raise InvalidInputError("mode must be 'soft' or 'hard'")
    a = np.asarray(a, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    served = np.minimum(a, d) if mode == "hard" else softmin(a, d, tau)
    total = d.sum(axis=-1)
    if a.ndim == 1:
        if total <= 0:
            raise EmptyDemandError("no demand in this sample")
        return float(np.sum(served) / total)
    ok = total > 0
    if not np.any(ok):
        raise EmptyDemandError("no demand in any sample")
    return float(np.mean(np.sum(served, axis=1)[ok] / total[ok]))


def served_rate_trace(A: ad.Var, d, tau: float) -> ad.Var:
    d = np.asarray(d, dtype=np.float64)
    total = d.sum(axis=1)
    ok = total > 0
    inv = np.where(ok, 1.0 / np.where(ok, total, 1.0), 0.0)
    per_row = ad.sum(softmin_trace(A, d, tau), axis=1) * inv
    return ad.scale(ad.sum(per_row), 1.0 / max(int(ok.sum()), 1))


def _check_kappa(kappa, n):
    if kappa * n <= 1.0:
        raise InfeasibleSetError(f"kappa * N = {kappa * n:.3g} must exceed 1")


def scaled_capped_projection(operator, u, S, kappa: float):
    """``S * Proj(u / S)`` where ``Proj`` maps onto the unit capped simplex with caps ``kappa``.

    ``operator`` is a :class:`ConstraintOperator` or any callable on unit-scale inputs.
    """
    u = np.asarray(u, dtype=np.float64)
    _check_kappa(kappa, u.shape[-1])
    S = np.asarray(S, dtype=np.float64)
    if np.any(S <= 0):
        raise InvalidInputError("supply must be positive")
    fn = operator.evaluate if isinstance(operator, ConstraintOperator) else operator
    Sc = S[..., None] if S.ndim else S
    return Sc * fn(u / Sc)


def scaled_trace(operator: ConstraintOperator, u: ad.Var, S) -> ad.Var:
    S = np.asarray(S, dtype=np.float64)
    Sm = np.repeat(S[:, None], u.shape[-1], axis=1)
    return operator.trace(u * (1.0 / Sm)) * Sm


# -- data ---------------------------------------------------------------------


@dataclass
class PortfolioBatch:
    z: np.ndarray
    y: np.ndarray
    gamma: float
    delta: float
    caps: np.ndarray
    lookback: int

    def __post_init__(self):
        if np.any(self.y <= 0):
            raise InvalidInputError("price relatives must be positive")


@dataclass
class DispatchBatch:
    z: np.ndarray
    demand: np.ndarray
    supply: np.ndarray
    kappa: float
    tau: float
    time_features: np.ndarray
    lookback: int

    def __post_init__(self):
        if np.any(self.supply <= 0):
            raise InvalidInputError("supply must be positive")
        if np.any(self.demand < 0):
            raise InvalidInputError("demand must be nonnegative")
        _check_kappa(self.kappa, self.demand.shape[1])


def _windows(x, h):
    """Rows ``x[t-h:t]`` for ``t = h .. len(x)-1``, shape ``(len(x)-h, h, N)``."""
    w = np.lib.stride_tricks.sliding_window_view(x, h, axis=0)  # (T-h+1, N, h)
    return np.moveaxis(w, -1, 1)[:-1]


def portfolio_batch_from_relatives(y_full, lookback=10, gamma=0.1, delta=1e-3, caps=None):
    """Features from the ``lookback`` returns before each decision.

    Per decision: the raw window, each asset's rolling volatility, and its
    rolling correlation with the cross-sectional mean return.
    """
    y_full = np.asarray(y_full, dtype=np.float64)
    T_all, n = y_full.shape
    if T_all <= lookback + 1:
        raise InvalidInputError("series too short for the lookback window")
    r = y_full - 1.0
    win = _windows(r, lookback)  # (T, H, N)
    vol = win.std(axis=1)
    mkt = win.mean(axis=2, keepdims=True)
    a = win - win.mean(axis=1, keepdims=True)
    b = mkt - mkt.mean(axis=1, keepdims=True)
    den = np.sqrt((a * a).sum(axis=1) * (b * b).sum(axis=1))
    corr = np.where(den > 0, (a * b).sum(axis=1) / np.where(den > 0, den, 1.0), 0.0)
    z = np.concatenate([win.reshape(len(win), -1), vol, corr], axis=1)
    caps = np.full(n, min(1.0, 2.0 / n)) if caps is None else np.broadcast_to(caps, (n,)).astype(float)
    return PortfolioBatch(z, y_full[lookback:], float(gamma), float(delta), caps, lookback)


def _time_features(t, steps_per_day):
    day = 2.0 * np.pi * t / steps_per_day
    week = 2.0 * np.pi * t / (7 * steps_per_day)
    return np.stack([np.sin(day), np.cos(day), np.sin(week), np.cos(week)], axis=1)


def dispatch_batch_from_arrays(demand, supply, kappa=0.1, tau=None, lookback=4, steps_per_day=24):
    """Features: the last ``lookback`` demand rows, cyclical time encodings, current supply."""
    demand = np.asarray(demand, dtype=np.float64)
    supply = np.asarray(supply, dtype=np.float64)
    T_all, n = demand.shape
    if T_all <= lookback + 1:
        raise InvalidInputError("series too short for the lookback window")
    t = np.arange(lookback, T_all)
    tf = _time_features(t, steps_per_day)
    win = _windows(demand, lookback).reshape(len(t), -1)
    z = np.concatenate([win, tf, supply[lookback:, None]], axis=1)
    d = demand[lookback:]
    if tau is None:
        tau = 0.05 * float(d.mean())
    return DispatchBatch(z, d, supply[lookback:], float(kappa), float(tau), tf, lookback)


def split_and_normalize(z, train_frac: float):
    """Split rows chronologically and standardize with training statistics only."""
    k = int(round(train_frac * len(z)))
    mu = z[:k].mean(axis=0)
    sd = z[:k].std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    zn = (z - mu) / sd
    return k, zn


def synth_market(seed, N=10, T=500, factor_count=3, lookback=10, gamma=0.1, delta=1e-3, caps=None):
    """Low-rank factor returns with persistent (AR(1)) factors plus idiosyncratic noise."""
    if min(N, T, factor_count) < 1:
        raise InvalidInputError("dimensions must be positive")
    rng = np.random.default_rng(seed)
    total = T + lookback
    phi = rng.uniform(0.05, 0.25, size=factor_count)
    f = np.zeros((total, factor_count))
    shocks = rng.normal(0.0, 0.01, size=(total, factor_count))
    for t in range(1, total):
        f[t] = phi * f[t - 1] + shocks[t]
    loadings = rng.normal(0.0, 0.7, size=(N, factor_count))
    loadings[:, 0] = np.abs(loadings[:, 0]) + 0.5  # a common market factor
    drift = rng.normal(3e-4, 3e-4, size=N)
    idio = rng.uniform(0.005, 0.02, size=N)
    r = drift + f @ loadings.T + rng.normal(size=(total, N)) * idio
    y = np.maximum(1.0 + r, 1e-3)
    return portfolio_batch_from_relatives(y, lookback, gamma, delta, caps)


def synth_demand_arrays(seed, N=20, T=1000, steps_per_day=24, lookback=4, supply_frac=0.8):
    rng = np.random.default_rng(seed)
    total = T + lookback
    t = np.arange(total)[:, None]
    base = rng.lognormal(mean=2.0, sigma=0.8, size=N)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=N)
    daily = 1.0 + 0.6 * np.sin(2.0 * np.pi * t / steps_per_day + phase)
    weekly = 1.0 + 0.3 * np.sin(2.0 * np.pi * t / (7 * steps_per_day) + rng.uniform(0, 2 * np.pi))
    demand = rng.poisson(base * daily * weekly).astype(np.float64)
    totals = demand.sum(axis=1)
    smooth = np.empty(total)
    smooth[0] = totals[0]
    for k in range(1, total):
        smooth[k] = 0.7 * smooth[k - 1] + 0.3 * totals[k - 1]
    supply = np.maximum(supply_frac * smooth, 1.0)
    return demand, supply


def synth_demand(seed, N=20, T=1000, kappa=0.1, tau=None, lookback=4, steps_per_day=24):
    """Zone base rates with daily and weekly seasonality and Poisson counts.

    Supply is a smoothed fraction of recent total demand.
    """
    if min(N, T) < 1:
        raise InvalidInputError("dimensions must be positive")
    demand, supply = synth_demand_arrays(seed, N, T, steps_per_day, lookback)
    return dispatch_batch_from_arrays(demand, supply, kappa, tau, lookback, steps_per_day)


def _read_rows(path, first, last_extra=None):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise InvalidInputError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if header[0] != first:
        raise InvalidInputError(f"{path}: first column must be {first!r}")
    if last_extra is not None and header[-1] != last_extra:
        raise InvalidInputError(f"{path}: last column must be {last_extra!r}")
    keys = [r[0] for r in body]
    try:
        values = np.array([[float(x) for x in r[1:]] for r in body])
    except ValueError as exc:
        raise InvalidInputError(f"{path}: non-numeric entry ({exc})") from exc
    if values.ndim != 2 or values.shape[1] != len(header) - 1:
        raise InvalidInputError(f"{path}: ragged rows")
    return header, keys, values


def load_returns_csv(path):
    """Return ``(dates, relatives)`` from a ``date,asset_1..asset_N`` file."""
    _, dates, y = _read_rows(path, "date")
    if np.any(y <= 0):
        raise InvalidInputError(f"{path}: price relatives must be positive")
    return dates, y


def load_demand_csv(path):
    """Return ``(timestamps, demand, supply)`` from a ``timestamp,zone_1..zone_N,supply`` file."""
    _, stamps, v = _read_rows(path, "timestamp", "supply")
    return stamps, v[:, :-1], v[:, -1]


def write_returns_csv(path, y):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["date"] + [f"asset_{i + 1}" for i in range(y.shape[1])])
        for t, row in enumerate(y):
            w.writerow([t] + [repr(float(x)) for x in row])


def write_demand_csv(path, demand, supply):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp"] + [f"zone_{i + 1}" for i in range(demand.shape[1])] + ["supply"])
        for t, (row, s) in enumerate(zip(demand, supply)):
            w.writerow([t] + [repr(float(x)) for x in row] + [repr(float(s))])


# -- 2-D demo -----------------------------------------------------------------


@dataclass
class Toy2dConfig:
    """Defaults form a saturating setup: exterior start level with a boundary-adjacent target."""

    method: str = "soft-radial"
    target: tuple = (0.9, 0.5)
    init: tuple = (3.0, 0.5)
    steps: int = 500
    lr: float = 0.05
    lower: tuple = (-1.0, -1.0)
    upper: tuple = (1.0, 1.0)
    contraction: RadialContraction = field(default_factory=RadialContraction)


@dataclass
class Toy2dTrace:
    u: np.ndarray
    p: np.ndarray
    loss: np.ndarray
    grad_norm: np.ndarray


def _box_clip_vjp(u, lo, hi, g):
    return g * ((u > lo) & (u < hi))


def run_toy2d(cfg: Toy2dConfig) -> Toy2dTrace:
    if cfg.method not in ("soft-radial", "orthogonal"):
        raise InvalidInputError("toy2d supports soft-radial and orthogonal only")
    box = Polytope.box(cfg.lower, cfg.upper)
    target = np.asarray(cfg.target, dtype=np.float64)
    if not box.contains(target):
        raise InvalidInputError("target must lie in the box")
    lo, hi = np.asarray(cfg.lower, float), np.asarray(cfg.upper, float)
    layer = SoftRadialLayer(box, cfg.contraction)
    u = np.asarray(cfg.init, dtype=np.float64)
    us, ps, losses, gnorms = [], [], [], []
    for _ in range(cfg.steps + 1):
        if cfg.method == "soft-radial":
            p = layer.soft_project(u)
            grad = layer.vjp(u, 2.0 * (p - target))
        else:
            p = np.clip(u, lo, hi)
            grad = _box_clip_vjp(u, lo, hi, 2.0 * (p - target))
        us.append(u)
        ps.append(p)
        losses.append(float(np.sum((p - target) ** 2)))
        gnorms.append(float(np.linalg.norm(grad)))
        u = u - cfg.lr * grad
    return Toy2dTrace(np.array(us), np.array(ps), np.array(losses), np.array(gnorms))


def grid_warp(layer: SoftRadialLayer, extent: float = 3.0, n: int = 13):
    """Grid points ``u`` on ``[-extent, extent]^2`` and their images ``p(u)``."""
    g = np.linspace(-extent, extent, n)
    U = np.array([(a, b) for a in g for b in g])
    return U, layer.soft_project(U)


def annualize(sharpe: float, periods: int = 252) -> float:
    return sharpe * math.sqrt(periods)
