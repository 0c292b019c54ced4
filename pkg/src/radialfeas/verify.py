"""Invariant suite behind ``radialfeas verify``.

Each check compares a closed form with an independent oracle on seeded random
samples and yields :class:`~radialfeas.oracles.OracleReport` rows.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import baselines, oracles
from .radial import FAMILIES, RadialContraction, SoftRadialLayer
from .sets import Ball, CappedSimplex, Polytope, ray_boundary_time

__all__ = ["geometries", "sample_points", "smooth_mask", "tangent_basis", "jacobian_errors", "run_all", "JAC_RADIUS"]

# Beyond rho ~ 11 lam the hyperbolic radial slope 4(1-eps)e^(-2 rho/lam)/lam is
# below 1e-10 in exact arithmetic, so the singular-value floor is checked inside this radius.
JAC_RADIUS = 2.5


def geometries():
    """Representative sets: an off-center ball, a random polytope and a capped simplex."""
    rng = np.random.default_rng(1234)
    A = rng.normal(size=(7, 3))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    b = rng.uniform(0.5, 1.5, size=7)
    return {
        "ball": Ball([0.5, -0.2, 0.1], 1.5, anchor=[0.7, -0.1, 0.3]),
        "polytope": Polytope(np.vstack([A, -A]), np.concatenate([b, b]), np.zeros(3)),
        "capped_simplex": CappedSimplex([0.3, 0.35, 0.4, 0.5, 0.6]),
    }


def sample_points(set_, rng, count, r_min=0.01, r_max=10.0):
    """Anchor plus random directions at log-uniform radii (projected into the hull if needed)."""
    n = set_.dim
    V = rng.normal(size=(count, n))
    if set_.in_hull:
        V -= V.mean(axis=1, keepdims=True)
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    radii = np.exp(rng.uniform(np.log(r_min), np.log(r_max), size=count))
    return set_.anchor + radii[:, None] * V


def smooth_mask(layer, U, band=1e-4):
    """Points at least ``band`` away (in gauge value) from the boundary and from face switches."""
    D = layer.set.reduce(U) - layer.anchor
    lam, _ = layer.set.gauge_grad(D)
    ok = np.abs(lam - 1.0) >= band
    if isinstance(layer.set, Polytope):
        ok &= layer.set.gauge_gap(D) >= band
    return ok


def tangent_basis(set_):
    n = set_.dim
    if not set_.in_hull:
        return np.eye(n)
    q, _ = np.linalg.qr(np.eye(n)[:, : n - 1] - 1.0 / n)
    return q


def jacobian_errors(layer, U, J, B):
    """Worst relative FD mismatch and smallest tangent singular value over a batch."""
    h = 1e-6 * (1.0 + np.linalg.norm(U, axis=1))
    F = oracles.fd_jacobian(layer.soft_project, U, h)
    worst = float((np.abs(J - F) / np.maximum(1.0, np.abs(F))).max()) if len(U) else 0.0
    sv = np.linalg.svd(B.T @ J @ B, compute_uv=False)
    return worst, float(sv.min()) if len(U) else np.inf


def _geometry_checks(rng, count):
    out = []
    geo = geometries()
    for name in ("ball", "polytope"):
        s = geo[name]
        U = sample_points(s, rng, count, 0.05, 5.0)
        closed = ray_boundary_time(s, U)
        ref = np.array([oracles.bisect_boundary(s, u, 200) for u in U])
        rel = np.abs(closed - ref) / np.abs(ref)
        out.append(oracles.OracleReport(f"boundary_time[{name}]", float(closed[np.argmax(rel)]),
                                        float(ref[np.argmax(rel)]), float(np.abs(closed - ref).max()),
                                        float(rel.max()), 1e-10, bool(rel.max() <= 1e-10)))
    return out


def _jacobian_checks(rng, count):
    out = []
    for gname, s in geometries().items():
        B = tangent_basis(s)
        for fam in FAMILIES:
            layer = SoftRadialLayer(s, RadialContraction(fam, 0.1, 1.0))
            U = sample_points(s, rng, count, 0.01, JAC_RADIUS)
            U = U[smooth_mask(layer, U)]
            J = layer.jacobian(U)
            G = rng.normal(size=U.shape)
            vj = layer.vjp(U, G)
            vj_err = np.abs(vj - np.einsum("bij,bi->bj", J, G)).max()
            worst, worst_sv = jacobian_errors(layer, U, J, B)
            out.append(oracles.OracleReport(f"jacobian_fd[{gname},{fam}]", 0.0, 0.0, worst, worst, 1e-5, worst <= 1e-5))
            out.append(oracles.OracleReport(f"min_singular_value[{gname},{fam}]", worst_sv, 1e-10,
                                            0.0, 0.0, 1e-10, worst_sv >= 1e-10))
            out.append(oracles.compare(f"vjp_vs_jacobian[{gname},{fam}]", vj_err, 0.0, 1e-12))
    return out


def _radial_checks(rng, count):
    out = []
    for gname, s in geometries().items():
        layer = SoftRadialLayer(s, RadialContraction("rational", 0.1, 1.0))
        U = sample_points(s, rng, count, 0.01, 3.0)
        back = layer.inverse(layer.soft_project(U))
        out.append(oracles.compare(f"round_trip[{gname}]", back, U, 1e-8))
        far = sample_points(s, rng, count, 1e6, 1e6)
        slack = s.slack(layer.soft_project(far)).min()
        out.append(oracles.OracleReport(f"strict_feasibility[{gname}]", float(slack), 0.0, 0.0, 0.0, 0.0, bool(slack > 0)))
        G = rng.normal(size=(count, s.dim))
        at_anchor = layer.vjp(np.repeat(s.anchor[None], count, axis=0), G)
        expect = 0.1 * (G @ tangent_basis(s) @ tangent_basis(s).T)
        out.append(oracles.compare(f"anchor_vjp[{gname}]", at_anchor, expect, 1e-15))
    ball = SoftRadialLayer(Ball([0.0, 0.0], 1.0), RadialContraction("rational", 0.5, 1.0))
    for t in (2.0, 5.0, 10.0):
        g = oracles.fd_gradient(lambda u: float(np.sum(ball.soft_project(u) ** 2)), np.array([t, 0.0]), 1e-6)
        r, rp = ball.contraction(t * t)
        out.append(oracles.compare(f"pl_gradient_norm[t={t:g}]", np.linalg.norm(g), 4 * t * r * rp, 1e-4))
    return out


def _baseline_checks(rng, count):
    out = []
    n = 6
    caps = rng.uniform(1.0 / n + 0.02, 0.6, size=n)
    U = rng.normal(scale=1.5, size=(count, n))
    W = baselines.project_capped_simplex(U, caps)
    out.append(oracles.compare("capped_projection_vs_dykstra", W, oracles.qp_projection_oracle(U, caps), 1e-7))
    bounds = baselines.capped_simplex_bounds(caps)
    H = baselines.eval_feasibility_wrapper(baselines.hardnet_correct(U, bounds), caps)
    D = baselines.eval_feasibility_wrapper(baselines.dc3_project(U, caps, baselines.Dc3Config(5, 0.1, 0.0)), caps)
    for name, X in (("hardnet", H), ("dc3", D)):
        viol = max(float(np.abs(X.sum(axis=1) - 1).max()), float(np.maximum(-X, X - caps).max()))
        out.append(oracles.OracleReport(f"feasible_after_wrapper[{name}]", viol, 0.0, viol, viol, 1e-10, viol <= 1e-10))
    energies = []
    baselines.dc3_trace(ad.Tape().var(U), caps, baselines.Dc3Config(10, 0.1, 0.0), energies)
    rises = float(np.max(np.diff(np.array(energies), axis=0)))
    out.append(oracles.OracleReport("dc3_energy_nonincreasing", rises, 0.0, max(rises, 0.0), max(rises, 0.0), 0.0, rises <= 0.0))
    return out


def _autodiff_checks(rng, count):
    ad.register_projection_primitives()
    out = []
    ball = SoftRadialLayer(Ball([0.0, 0.0, 0.0], 1.0), RadialContraction("exponential", 0.2, 1.5))
    caps = np.array([0.4, 0.5, 0.6])
    bounds = baselines.capped_simplex_bounds(caps)
    cases = {
        "soft_project": lambda x: ad.apply("soft_project", x, layer=ball),
        "project_capped_simplex": lambda x: ad.apply("project_capped_simplex", x, caps=caps),
        "softmax_temp": lambda x: ad.apply("softmax_temp", x, tau=0.7),
        "hardnet_correct": lambda x: ad.apply("hardnet_correct", x, bounds=bounds),
    }
    weights = rng.normal(size=3)
    for name, op in cases.items():
        worst = 0.0
        for _ in range(count):
            x = rng.normal(scale=1.5, size=3)
            if not _away_from_kinks(x, ball, caps, bounds):
                continue
            worst = max(worst, ad.grad_check(lambda t, v: ad.dot(op(v), weights), x))
        out.append(oracles.OracleReport(f"grad_check[{name}]", worst, 0.0, worst, worst, 1e-5, worst <= 1e-5))
    return out


def _away_from_kinks(x, ball, caps, bounds, h=1e-4):
    w = baselines.project_capped_simplex(x, caps)
    Ax = x @ bounds.A.T
    return (
        abs(np.linalg.norm(x) - ball.set.radius) > h
        and np.all((w > h) | (w == 0.0))
        and np.all(np.abs(w - caps) > h)
        and np.abs(Ax - bounds.lower).min() > h
        and np.abs(Ax - bounds.upper).min() > h
    )


def run_all(seed: int = 0, count: int = 100) -> list:
    rng = np.random.default_rng(seed)
    reports = []
    for check in (_geometry_checks, _jacobian_checks, _radial_checks, _baseline_checks, _autodiff_checks):
        reports.extend(check(rng, count))
    return reports
