"""Seeded training runs and multi-seed sweeps for the portfolio and dispatch tasks."""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import tasks
from .baselines import Dc3Config
from .config import ExperimentConfig, header_lines
from .errors import InvalidInputError, TrainingDivergedError
from .nets import AdamState, Mlp, SgdSchedule, adam_step, mlp_forward, save_checkpoint, sgd_step
from .radial import RadialContraction

__all__ = [
    "RunResult",
    "build_operator",
    "load_task_data",
    "train_run",
    "sweep",
    "write_csv",
    "worker_count",
]

FEAS_TOL = 1e-8


@dataclass
class RunResult:
    method: str
    seed: int
    step_rows: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    eval_outputs: np.ndarray | None = None


def build_operator(cfg: ExperimentConfig, method: str, caps) -> tasks.ConstraintOperator:
    return tasks.ConstraintOperator(
        method,
        caps,
        contraction=RadialContraction(cfg.family, cfg.epsilon, cfg.lam),
        softmax_tau=cfg.softmax_tau,
        hardnet_steps=cfg.hardnet_steps,
        dc3=Dc3Config(cfg.dc3_steps, cfg.dc3_lr, cfg.dc3_momentum),
        allow_uncapped_softmax=cfg.allow_uncapped_softmax,
    )


def load_task_data(cfg: ExperimentConfig):
    """Synthetic data from ``data_seed`` or the CSV at ``cfg.data``."""
    if cfg.task == "portfolio":
        if cfg.data == "synthetic":
            return tasks.synth_market(
                cfg.data_seed, cfg.n_assets, cfg.horizon, cfg.factors, cfg.lookback,
                cfg.gamma, cfg.delta, cfg.caps,
            )
        _, y = tasks.load_returns_csv(cfg.data)
        return tasks.portfolio_batch_from_relatives(y, cfg.lookback, cfg.gamma, cfg.delta, cfg.caps)
    if cfg.task == "dispatch":
        tau = cfg.softmin_tau or None
        if cfg.data == "synthetic":
            return tasks.synth_demand(cfg.data_seed, cfg.n_zones, cfg.horizon, cfg.kappa, tau, cfg.lookback)
        _, demand, supply = tasks.load_demand_csv(cfg.data)
        return tasks.dispatch_batch_from_arrays(demand, supply, cfg.kappa, tau, cfg.lookback)
    raise InvalidInputError(f"task {cfg.task!r} has no training data")


def _caps_for(cfg, batch):
    if cfg.task == "portfolio":
        return batch.caps
    return np.full(batch.demand.shape[1], batch.kappa)


def _violations(op, method, W):
    margin = op.margin(W)
    bad = (margin < -FEAS_TOL) | (op.sum_error(W) > FEAS_TOL)
    if method == "soft-radial":
        bad |= margin <= 0.0  # strictly interior
    return int(bad.sum()), float(margin.min())


def train_run(cfg: ExperimentConfig, method: str, seed: int) -> RunResult:
    batch = load_task_data(cfg)
    caps = _caps_for(cfg, batch)
    op = build_operator(cfg, method, caps)
    portfolio = cfg.task == "portfolio"
    k, z = tasks.split_and_normalize(batch.z, cfg.train_frac)
    n_out = len(caps)
    net = Mlp([z.shape[1]] + cfg.hidden_sizes() + [n_out], cfg.activation, seed, cfg.dropout)
    rng = np.random.default_rng(seed)
    if portfolio:
        target = batch.y
        gamma_train = 0.0 if cfg.train_gross else batch.gamma
    else:
        target = batch.demand
        S = batch.supply
        tau = batch.tau
    if cfg.optimizer == "adam":
        state = AdamState(lr=cfg.lr)
    elif cfg.optimizer == "sgd":
        schedule = SgdSchedule(cfg.sgd_schedule, cfg.lr)
    else:
        raise InvalidInputError(f"unknown optimizer {cfg.optimizer!r}")

    starts = list(range(0, k - 1, cfg.batch_size))
    total_steps = cfg.epochs * len(starts)
    result = RunResult(method, seed)
    step = 0
    last_good = {n: v.copy() for n, v in net.params.items()}
    for _ in range(cfg.epochs):
        for s0 in rng.permutation(starts):
            sl = slice(int(s0), min(int(s0) + cfg.batch_size, k))
            if sl.stop - sl.start < 2:
                continue
            tape = ad.Tape()
            bound = net.bind(tape)
            drop_rng = rng if cfg.dropout > 0 else None
            u = mlp_forward(net, bound, tape.var(z[sl]), drop_rng)
            if portfolio:
                W = op.trace(u)
                obj = tasks.sharpe_trace(W, target[sl], gamma_train, batch.delta, baseline=1.0)
                out = W.value
                aux = float(np.mean(0.5 * np.abs(out[1:] - tasks.drift_weights(out[:-1], target[sl][:-1])).sum(axis=1)))
                margin = float(op.margin(out).min())
            else:
                Sm = np.repeat(S[sl, None], n_out, axis=1)
                # the network emits fleet fractions, so u = S * net(z) and S * Proj(u / S) = S * Proj(net(z))
                A = op.trace(u) * Sm
                obj = tasks.served_rate_trace(A, target[sl], tau)
                out = A.value
                aux = tasks.served_rate(out, target[sl], mode="hard")
                margin = float(op.margin(out / Sm).min())
            loss = -obj.value
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at step {step}", step=step, last_good=last_good)
            names = list(bound)
            # minimize the negated objective
            grads = {n: -g for n, g in zip(names, tape.gradient(obj, [bound[n] for n in names]))}
            try:
                if cfg.optimizer == "adam":
                    adam_step(state, net.params, grads)
                else:
                    sgd_step(net.params, grads, step, total_steps, schedule)
            except TrainingDivergedError as exc:
                exc.last_good = last_good
                raise
            last_good = {n: v.copy() for n, v in net.params.items()}
            result.step_rows.append((step, float(loss), float(obj.value), aux, margin))
            step += 1

    z_test = z[k:]
    u_test = net(z_test)
    if portfolio:
        W = op.evaluate(u_test)
        metrics = tasks.portfolio_metrics(W, target[k:], batch.gamma)
        n_bad, worst = _violations(op, method, W)
    else:
        W = op.evaluate(u_test) * batch.supply[k:, None]
        metrics = {"served_rate": tasks.served_rate(W, target[k:], mode="hard")}
        n_bad, worst = _violations(op, method, W / batch.supply[k:, None])
    metrics["feasibility_violations"] = n_bad
    metrics["min_margin"] = worst
    result.metrics = metrics
    result.params = net.params
    result.eval_outputs = W
    return result


def write_csv(path, header: list[str], columns: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header:
            fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def run_outputs(cfg: ExperimentConfig, res: RunResult, directory: str) -> None:
    """Per-run ``metrics.csv`` and ``checkpoint.txt``."""
    os.makedirs(directory, exist_ok=True)
    aux = "turnover" if cfg.task == "portfolio" else "served_rate"
    head = header_lines(cfg.replace(method=res.method, seeds=str(res.seed)))
    write_csv(
        os.path.join(directory, "metrics.csv"),
        head,
        ["step", "loss", "objective", aux, "feasibility_margin"],
        res.step_rows,
    )
    meta = {"method": res.method, "seed": res.seed, "task": cfg.task}
    save_checkpoint(os.path.join(directory, "checkpoint.txt"), res.params, meta)


def worker_count(jobs: int) -> int:
    env = os.environ.get("RADIALFEAS_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(cap, jobs))


def _job(args):
    cfg, method, seed = args
    return train_run(cfg, method, seed)


def sweep(cfg: ExperimentConfig, methods=None, seeds=None, write_runs: bool = True):
    """Train every method for every seed; returns ``(per-seed rows, aggregate rows)``.

    Rows are sorted by method order then seed, so results do not depend on
    worker scheduling.
    """
    methods = methods or cfg.method_list()
    seeds = sorted(seeds or cfg.seed_list())
    jobs = [(cfg, m, s) for m in methods for s in seeds]
    workers = worker_count(len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_job, jobs))
    else:
        results = [_job(j) for j in jobs]
    per_seed, agg = [], []
    for m in methods:
        runs = sorted((r for r in results if r.method == m), key=lambda r: r.seed)
        for r in runs:
            if write_runs:
                run_outputs(cfg, r, os.path.join(cfg.out, cfg.task, m, f"seed_{r.seed}"))
            for key in sorted(r.metrics):
                per_seed.append((m, r.seed, key, float(r.metrics[key])))
        for key in sorted(runs[0].metrics):
            vals = np.array([float(r.metrics[key]) for r in runs])
            std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
            agg.append((m, len(vals), key, float(vals.mean()), std))
    return per_seed, agg
