"""Competing constraint layers for the capped simplex, each with a backward rule.

* temperature softmax (ignores caps),
* exact Euclidean projection onto ``{1'w = 1, 0 <= w <= c}``,
* least-squares HardNet correction,
* symmetric DC3: hyperplane initialization, completion of the last coordinate and
  unrolled descent on a squared-hinge energy, traced on the autodiff tape.

Functions act on the last axis, so ``(N,)`` and ``(B, N)`` inputs both work.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import InvalidInputError
from .sets import hyperplane_project

__all__ = [
    "Dc3Config",
    "AffineBounds",
    "softmax_temp",
    "softmax_vjp",
    "project_capped_simplex",
    "orth_projection_vjp",
    "capped_simplex_bounds",
    "hardnet_correct",
    "hardnet_vjp",
    "hardnet_capped",
    "dc3_energy",
    "dc3_trace",
    "dc3_project",
    "eval_feasibility_wrapper",
]

SUM_TOL = 1e-12


@dataclass(frozen=True)
class Dc3Config:
    steps: int = 3
    step_size: float = 0.1
    momentum: float = 0.0

    def __post_init__(self):
        if int(self.steps) != self.steps or self.steps < 0:
            raise InvalidInputError("steps must be a nonnegative integer")
        if not (np.isfinite(self.step_size) and self.step_size > 0):
            raise InvalidInputError("step_size must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidInputError("momentum must lie in [0, 1)")


@dataclass(frozen=True)
class AffineBounds:
    """``lower <= A w <= upper``."""

    A: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        lo = np.asarray(self.lower, dtype=np.float64).reshape(-1)
        hi = np.asarray(self.upper, dtype=np.float64).reshape(-1)
        if lo.shape != (A.shape[0],) or hi.shape != (A.shape[0],):
            raise InvalidInputError("bounds must have one entry per row of A")
        if np.any(lo > hi):
            raise InvalidInputError("lower bound exceeds upper bound")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)


def _finite(u, name="u"):
    u = np.asarray(u, dtype=np.float64)
    if not np.all(np.isfinite(u)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return u


# -- softmax ------------------------------------------------------------------


def softmax_temp(u, tau: float):
    if not tau > 0:
        raise InvalidInputError("temperature must be positive")
    z = _finite(u) / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_vjp_from_output(w, tau, g):
    return (w * g - w * np.sum(w * g, axis=-1, keepdims=True)) / tau


def softmax_vjp(u, tau: float, g):
    return softmax_vjp_from_output(softmax_temp(u, tau), tau, np.asarray(g, dtype=np.float64))


# -- exact projection ---------------------------------------------------------


def _check_caps(caps, n):
    caps = _finite(caps, "caps")
    caps = np.broadcast_to(caps, (n,)) if caps.ndim == 0 else caps
    if caps.shape != (n,):
        raise InvalidInputError(f"caps must have length {n}")
    if np.any(caps <= 0) or np.any(caps > 1):
        raise InvalidInputError("caps must lie in (0, 1]")
    if caps.sum() < 1.0 - SUM_TOL:
        raise InvalidInputError(f"infeasible caps: sum {caps.sum():.6g} < 1")
    return caps


def project_capped_simplex(u, caps):
    """Euclidean projection onto the capped simplex.

    Bisection on the shift ``mu`` in ``w = clip(u - mu, 0, c)`` followed by an
    exact solve for ``mu`` on the detected free set.
    """
    u = _finite(u)
    single = u.ndim == 1
    U = np.atleast_2d(u)
    c = _check_caps(caps, U.shape[1])

    def total(mu):
        return np.clip(U - mu[:, None], 0.0, c).sum(axis=1)

    def free_set_solve(mu):
        # on the free set of a given shift, sum(w) = 1 is linear in mu
        shifted = U - mu[:, None]
        free = (shifted > 0.0) & (shifted < c)
        fixed = ((shifted >= c) * c).sum(axis=1)
        return ((U * free).sum(axis=1) + fixed - 1.0) / np.maximum(free.sum(axis=1), 1)

    lo = (U - c).min(axis=1)  # every coordinate at its cap: sum >= 1
    hi = U.max(axis=1)  # every coordinate at zero
    mu = 0.5 * (lo + hi)
    best = np.abs(total(mu) - 1.0)
    for k in range(200):
        mid = 0.5 * (lo + hi)
        s = total(mid)
        cands = [(mid, s)]
        if k % 4 == 3:
            mx = free_set_solve(mid)
            cands.append((mx, total(mx)))
        for m, sm in cands:
            err = np.abs(sm - 1.0)
            take = err < best
            mu = np.where(take, m, mu)
            best = np.where(take, err, best)
        big = s > 1.0
        lo = np.where(big, mid, lo)
        hi = np.where(big, hi, mid)
        if np.all(best <= SUM_TOL) or np.all(hi - lo <= 1e-17 * (1 + np.abs(hi))):
            break
    # final polish on the detected free set
    mx = free_set_solve(mu)
    better = np.abs(total(mx) - 1.0) <= best
    mu = np.where(better, mx, mu)
    W = np.clip(U - mu[:, None], 0.0, c)
    return W[0] if single else W


def orth_projection_vjp_from_output(w, caps, g):
    c = np.broadcast_to(np.asarray(caps, dtype=np.float64), np.shape(w))
    g = np.asarray(g, dtype=np.float64)
    free = (w > 0.0) & (w < c)  # ties count as clamped
    nfree = free.sum(axis=-1, keepdims=True)
    mean_free = (g * free).sum(axis=-1, keepdims=True) / np.maximum(nfree, 1)
    return np.where(free, g - mean_free, 0.0)


def orth_projection_vjp(u, caps, g):
    """Transpose-Jacobian product of the projection (defined almost everywhere).

    The Jacobian is the projector onto ``{sum = 0}`` restricted to the free
    coordinates, so any cotangent along a clamped coordinate is annihilated.
    """
    return orth_projection_vjp_from_output(project_capped_simplex(u, caps), caps, g)


# -- HardNet ------------------------------------------------------------------


def capped_simplex_bounds(caps) -> AffineBounds:
    """The sum-one row stacked over the identity: ``[1; 0] <= [1'; I] w <= [1; c]``."""
    caps = np.asarray(caps, dtype=np.float64).reshape(-1)
    n = caps.shape[0]
    A = np.vstack([np.ones((1, n)), np.eye(n)])
    return AffineBounds(A, np.concatenate([[1.0], np.zeros(n)]), np.concatenate([[1.0], caps]))


def _left_pinv(A):
    gram = A.T @ A
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("A^T A is singular; A needs full column rank") from exc
    return np.linalg.solve(chol.T, np.linalg.solve(chol, A.T))


def _violation(u, bounds):
    Au = u @ bounds.A.T
    return np.maximum(bounds.lower - Au, 0.0) - np.maximum(Au - bounds.upper, 0.0), Au


def hardnet_correct(u, bounds: AffineBounds):
    """``u + (A'A)^-1 A' v`` with ``v`` the signed bound violation of ``A u``."""
    u = _finite(u)
    v, _ = _violation(u, bounds)
    return u + v @ _left_pinv(bounds.A).T


def hardnet_vjp(u, bounds: AffineBounds, g):
    u = np.asarray(u, dtype=np.float64)
    _, Au = _violation(u, bounds)
    active = ((Au < bounds.lower) | (Au > bounds.upper)).astype(np.float64)
    # J = I - P D A with P the left pseudoinverse and D the active-row mask
    Pg = np.asarray(g, dtype=np.float64) @ _left_pinv(bounds.A)
    return g - (active * Pg.reshape(active.shape)) @ bounds.A


# -- DC3 ----------------------------------------------------------------------


def dc3_energy(w, caps):
    c = np.asarray(caps, dtype=np.float64)
    return np.sum(np.maximum(-w, 0.0) ** 2 + np.maximum(w - c, 0.0) ** 2, axis=-1)


def _complete(xi):
    n1 = xi.shape[-1]
    last = ad.expand(1.0 - ad.sum(xi, axis=-1), 1)
    return ad.concat([xi, last], axis=-1) if n1 else last


def dc3_trace(u: ad.Var, caps, cfg: Dc3Config, energies: list | None = None) -> ad.Var:
    """DC3 on the tape; gradients flow through every unrolled step and the completion.

    When ``energies`` is a list, the energy before each step and after the last
    one is appended to it.
    """
    n = u.shape[-1]
    if n < 2:
        raise InvalidInputError("DC3 needs at least two coordinates")
    c = np.broadcast_to(np.asarray(caps, dtype=np.float64), u.shape)
    w0 = u - ad.expand(ad.scale(ad.sum(u, axis=-1) - 1.0, 1.0 / n), n)
    lead = (slice(None),) * (u.value.ndim - 1)
    xi = w0[lead + (slice(0, n - 1),)]
    vel = None
    for _ in range(cfg.steps):
        w = _complete(xi)
        if energies is not None:
            energies.append(dc3_energy(w.value, c))
        # dV/dw, then chain through the completion: dV/dxi_j = s_j - s_N
        s = ad.scale(ad.relu(w - c) - ad.relu(-w), 2.0)
        grad = s[lead + (slice(0, n - 1),)] - ad.expand(s[lead + (n - 1,)], n - 1)
        step = ad.scale(grad, -cfg.step_size)
        if cfg.momentum > 0.0:
            vel = step if vel is None else ad.scale(vel, cfg.momentum) + step
            step = vel
        xi = xi + step
    w = _complete(xi)
    if energies is not None:
        energies.append(dc3_energy(w.value, c))
    return w


def dc3_project(u, caps, cfg: Dc3Config | None = None):
    cfg = cfg or Dc3Config()
    tape = ad.Tape()
    return dc3_trace(tape.var(_finite(u)), caps, cfg).value


def eval_feasibility_wrapper(w, caps):
    """Exact projection applied to HardNet/DC3 outputs at evaluation time only."""
    return project_capped_simplex(w, caps)


def hardnet_capped(u, caps, steps: int = 1):
    """Hyperplane projection followed by ``steps`` least-squares corrections."""
    bounds = capped_simplex_bounds(caps)
    w = hyperplane_project(u)
    for _ in range(steps):
        w = hardnet_correct(w, bounds)
    return w
