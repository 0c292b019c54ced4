"""Command-line entry point: ``radialfeas {demo2d,train,sweep,verify,oracle}``.

Every CSV starts with ``#`` comment lines carrying the library version and the
fully resolved configuration; passing such a file back via ``--config`` reruns it.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import __version__, oracles, tasks
from .config import ExperimentConfig, header_lines, load_config, parse_assignments
from .errors import InvalidInputError, TrainingDivergedError
from .experiments import build_operator, run_outputs, sweep, train_run, write_csv
from .nets import save_checkpoint
from .radial import FAMILIES, RadialContraction, SoftRadialLayer
from .sets import Polytope

WARP_LAMBDAS = (0.5, 1.0, 2.0)
WARP_EPSILONS = (0.001, 0.01, 0.1)


def _parser():
    p = argparse.ArgumentParser(prog="radialfeas", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"radialfeas {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("demo2d", "train", "sweep", "verify", "oracle"):
        s = sub.add_parser(name)
        s.add_argument("--config", help="key=value file (or a result CSV) to start from")
        s.add_argument("--seed", type=int)
        s.add_argument("--seeds", help="comma-separated seeds for sweeps")
        s.add_argument("--method", help="method name (comma-separated list for sweep)")
        s.add_argument("--task")
        s.add_argument("--out")
        s.add_argument("--data", help="CSV path instead of synthetic data")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key (repeatable)")
        s.add_argument("--no-plots", action="store_true", help="write CSVs only")
        if name == "verify":
            s.add_argument("--count", type=int, default=100, help="samples per check")
    return p


def _resolve(args) -> ExperimentConfig:
    over = parse_assignments(args.set)
    for key in ("method", "task", "out", "data", "seeds"):
        v = getattr(args, key)
        if v is not None:
            over[key] = v
    if args.command == "sweep" and args.method is not None:
        # a sweep takes a comma-separated method list
        over["methods"] = over.pop("method")
    if args.seed is not None:
        over["seeds"] = str(args.seed)
    if args.no_plots:
        over["plots"] = False
    return load_config(args.config, over)


def cmd_demo2d(cfg: ExperimentConfig) -> int:
    os.makedirs(cfg.out, exist_ok=True)
    base = tasks.Toy2dConfig(
        target=cfg.floats("toy_target"),
        init=cfg.floats("toy_init"),
        steps=cfg.toy_steps,
        lr=cfg.toy_lr,
        contraction=RadialContraction(cfg.family, cfg.epsilon, cfg.lam),
    )
    traces = {}
    rows = []
    for method in ("soft-radial", "orthogonal"):
        tr = tasks.run_toy2d(dataclasses.replace(base, method=method))
        traces[method] = tr
        for k in range(len(tr.loss)):
            rows.append((method, k, *map(float, tr.u[k]), *map(float, tr.p[k]), float(tr.loss[k])))
    head = header_lines(cfg.replace(task="toy2d"))
    write_csv(os.path.join(cfg.out, "trajectory.csv"), head,
              ["method", "step", "u1", "u2", "p1", "p2", "loss"], rows)

    box = Polytope.box(base.lower, base.upper)
    warps, wrows = {}, []
    for fam in FAMILIES:
        for lam in WARP_LAMBDAS:
            for eps in WARP_EPSILONS:
                U, P = tasks.grid_warp(SoftRadialLayer(box, RadialContraction(fam, eps, lam)))
                warps[(fam, lam, eps)] = (U, P)
                for u, p in zip(U, P):
                    wrows.append((fam, lam, eps, *map(float, u), *map(float, p)))
    write_csv(os.path.join(cfg.out, "warp.csv"), head,
              ["family", "lambda", "epsilon", "u1", "u2", "p1", "p2"], wrows)
    for m, tr in traces.items():
        print(f"{m}: final loss {tr.loss[-1]:.6g}, first-step gradient norm {tr.grad_norm[0]:.6g}")
    if cfg.plots:
        from .plotting import demo2d_figures

        demo2d_figures(cfg.out, traces, base.target, base.lower, base.upper, warps)
    return 0


def cmd_train(cfg: ExperimentConfig) -> int:
    if cfg.task == "toy2d":
        return cmd_demo2d(cfg)
    seed = cfg.seed_list()[0]
    directory = os.path.join(cfg.out, cfg.task, cfg.method, f"seed_{seed}")
    try:
        res = train_run(cfg, cfg.method, seed)
    except TrainingDivergedError as exc:
        os.makedirs(directory, exist_ok=True)
        if exc.last_good:
            save_checkpoint(os.path.join(directory, "checkpoint.txt"), exc.last_good,
                            {"method": cfg.method, "seed": seed, "diverged_at": exc.step})
        print(f"error: training diverged: {exc}; last good checkpoint saved in {directory}", file=sys.stderr)
        return 3
    run_outputs(cfg, res, directory)
    head = header_lines(cfg.replace(seeds=str(seed)))
    write_csv(os.path.join(directory, "eval.csv"), head, ["metric", "value"],
              [(k, float(v)) for k, v in sorted(res.metrics.items())])
    for k, v in sorted(res.metrics.items()):
        print(f"{k}: {v:.6g}")
    if cfg.plots:
        from .plotting import training_figure

        aux = "turnover" if cfg.task == "portfolio" else "served_rate"
        training_figure(os.path.join(directory, "training.png"), res.step_rows, aux)
    return 0 if res.metrics["feasibility_violations"] == 0 else 4


def _supported(cfg, methods):
    from .experiments import _caps_for, load_task_data

    caps = _caps_for(cfg, load_task_data(cfg))
    keep, skipped = [], {}
    for m in methods:
        try:
            build_operator(cfg, m, caps)
            keep.append(m)
        except InvalidInputError as exc:
            skipped[m] = str(exc)
    return keep, skipped


def cmd_sweep(cfg: ExperimentConfig) -> int:
    if cfg.task == "toy2d":
        raise InvalidInputError("sweep supports the portfolio and dispatch tasks")
    methods, skipped = _supported(cfg, cfg.method_list())
    for m, why in skipped.items():
        print(f"note: skipping {m}: {why}", file=sys.stderr)
    if not methods:
        raise InvalidInputError("no runnable methods")
    per_seed, agg = sweep(cfg, methods)
    directory = os.path.join(cfg.out, cfg.task)
    os.makedirs(directory, exist_ok=True)
    extra = {f"skipped_{m}": why for m, why in skipped.items()}
    head = header_lines(cfg, **extra)
    write_csv(os.path.join(directory, "summary.csv"), head, ["method", "seed", "metric", "value"], per_seed)
    write_csv(os.path.join(directory, "aggregate.csv"), head,
              ["method", "n_seeds", "metric", "mean", "std"], agg)
    for row in agg:
        print(f"{row[0]:<12} {row[2]:<24} {row[3]:+.4f} +- {row[4]:.4f}")
    if cfg.plots:
        from .plotting import sweep_figure

        keys = ["net_sharpe", "turnover"] if cfg.task == "portfolio" else ["served_rate"]
        sweep_figure(os.path.join(directory, "sweep.png"), agg, keys)
    bad = sum(r[3] for r in agg if r[2] == "feasibility_violations")
    return 0 if bad == 0 else 4


def _report_csv(path, cfg, reports):
    rows = [(r.quantity, r.analytic, r.oracle, r.abs_err, r.rel_err, r.tol, "pass" if r.passed else "fail")
            for r in reports]
    cols = ["quantity", "analytic", "oracle", "abs_err", "rel_err", "tol", "status"]
    if path is None:
        sys.stdout.write(",".join(cols) + "\n")
        for row in rows:
            sys.stdout.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")
    else:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        write_csv(path, header_lines(cfg), cols, rows)


def cmd_verify(cfg: ExperimentConfig, count: int = 100) -> int:
    from .verify import run_all

    reports = run_all(cfg.seed_list()[0], count)
    _report_csv(os.path.join(cfg.out, "verify.csv"), cfg, reports)
    failed = [r for r in reports if not r.passed]
    for r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.quantity}  rel_err={r.rel_err:.3g}")
    print(f"{len(reports) - len(failed)}/{len(reports)} checks passed")
    return 1 if failed else 0


def derived_reports() -> list:
    """Reference values for hand-checkable examples, each from an independent oracle."""
    from . import baselines
    from .sets import Ball

    out = []
    out.append(oracles.compare("capped_projection(1,0,0;caps=0.5)",
                               baselines.project_capped_simplex([1.0, 0.0, 0.0], 0.5),
                               oracles.qp_projection_oracle([1.0, 0.0, 0.0], 0.5), 1e-7))
    out.append(oracles.compare("softmin(1,2;tau=1)", tasks.softmin(1.0, 2.0, 1.0),
                               oracles.mp_softmin(1, 2, 1), 1e-12))
    out.append(oracles.compare("pseudo_huber((3,4);delta=1)",
                               tasks.pseudo_huber_turnover([3.0, 4.0], [0.0, 0.0], 1.0),
                               oracles.mp_pseudo_huber([3, 4], 1), 1e-12))
    layer = SoftRadialLayer(Ball([0.0, 0.0], 1.0), RadialContraction("rational", 0.5, 1.0))
    g = oracles.fd_gradient(lambda u: float(np.sum(layer.soft_project(u) ** 2)), np.array([2.0, 0.0]))
    out.append(oracles.compare("pl_gradient_norm(t=2)", 0.144, np.linalg.norm(g), 1e-4))
    J = layer.jacobian(np.array([0.5, 0.0]))
    F = oracles.fd_jacobian(layer.soft_project, np.array([0.5, 0.0]))
    out.append(oracles.compare("jacobian_interior(0.5,0)", J, F, 1e-8))
    bounds = baselines.AffineBounds([[1.0]], [0.0], [1.0])
    out.append(oracles.compare("hardnet_scalar(1.5)", baselines.hardnet_correct([1.5], bounds),
                               np.linalg.lstsq(np.array([[1.0]]), np.array([-0.5]), rcond=None)[0] + 1.5, 1e-12))
    out.append(oracles.compare("orth_vjp(1,0,0;g=e1)",
                               baselines.orth_projection_vjp([1.0, 0.0, 0.0], 0.5, [1.0, 0.0, 0.0]),
                               oracles.fd_jacobian(lambda u: baselines.project_capped_simplex(u, 0.5),
                                                   np.array([1.0, 0.0, 0.0])).T @ np.array([1.0, 0.0, 0.0]),
                               1e-8))
    return out


def cmd_oracle(cfg: ExperimentConfig) -> int:
    reports = derived_reports()
    path = os.path.join(cfg.out, "oracle.csv") if cfg.out else None
    _report_csv(path, cfg, reports)
    for r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.quantity}  analytic={r.analytic:.10g}  oracle={r.oracle:.10g}")
    return 0 if all(r.passed for r in reports) else 1


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _resolve(args)
        if args.command == "demo2d":
            return cmd_demo2d(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg)
        if args.command == "verify":
            return cmd_verify(cfg, args.count)
        return cmd_oracle(cfg)
    except (InvalidInputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
