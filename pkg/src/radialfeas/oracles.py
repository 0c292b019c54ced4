"""Independent reference computations used to check the closed forms.

None of these share code paths with the routines they check: Jacobians come from
central differences, boundary times from bisection on membership, capped-simplex
projections from Dykstra's alternating projections, and scalar objectives from
arbitrary-precision arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import mpmath
import numpy as np

from .errors import DegenerateRayError, InvalidInputError
from .sets import ConvexSet

__all__ = [
    "OracleReport",
    "compare",
    "fd_jacobian",
    "fd_gradient",
    "bisect_boundary",
    "qp_projection_oracle",
    "mp_softmin",
    "mp_pseudo_huber",
]

BRACKET_CAP = 1e12


@dataclass(frozen=True)
class OracleReport:
    quantity: str
    analytic: float
    oracle: float
    abs_err: float
    rel_err: float
    tol: float
    passed: bool

    def row(self) -> dict:
        return asdict(self)


def compare(quantity: str, analytic, oracle, tol: float) -> OracleReport:
    """Worst-case comparison; relative error uses a ``max(1, |oracle|)`` denominator."""
    a = np.atleast_1d(np.asarray(analytic, dtype=np.float64))
    o = np.atleast_1d(np.asarray(oracle, dtype=np.float64))
    diff = np.abs(a - o)
    rel = diff / np.maximum(1.0, np.abs(o))
    k = int(np.argmax(rel)) if rel.size else 0
    rel_err = float(rel.flat[k]) if rel.size else 0.0
    ok = bool(np.all(np.isfinite(rel))) and rel_err <= tol
    return OracleReport(
        quantity,
        float(a.flat[k]) if a.size else math.nan,
        float(o.flat[k]) if o.size else math.nan,
        float(diff.max()) if diff.size else 0.0,
        rel_err,
        tol,
        ok,
    )


def fd_jacobian(f: Callable, u, h=1e-6):
    """Central-difference Jacobian, one column per coordinate of ``u``.

    ``u`` may be a batch ``(B, n)`` when ``f`` is batched; ``h`` may then be a
    per-row array of step sizes. Returns ``(n_out, n)`` or ``(B, n_out, n)``.
    """
    u = np.asarray(u, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    hcol = h[..., None] if h.ndim else h
    cols = []
    for i in range(u.shape[-1]):
        e = np.zeros_like(u)
        e[..., i] = 1.0
        e = e * hcol
        cols.append((np.asarray(f(u + e)) - np.asarray(f(u - e))) / (2.0 * hcol))
    return np.stack(cols, axis=-1)


def fd_gradient(f: Callable, u, h: float = 1e-6):
    """Central-difference gradient of a scalar function."""
    return fd_jacobian(lambda x: np.asarray([f(x)]), u, h)[0]


def bisect_boundary(set_: ConvexSet, u, iters: int = 80) -> float:
    """Boundary time along ``u0 + t (u - u0)`` found by bisection on the inequality slacks.

    Returns ``inf`` when the ray is still inside at ``t = 1e12``.
    """
    u = np.asarray(u, dtype=np.float64)
    d = u - set_.anchor
    if not np.any(d):
        raise DegenerateRayError("ray direction is zero")

    def inside(t):
        return bool(np.all(set_.slack(set_.anchor + t * d) >= 0.0))

    hi = 1.0
    while inside(hi):
        hi *= 2.0
        if hi > BRACKET_CAP:
            return math.inf
    lo = 0.0 if hi == 1.0 else 0.5 * hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if inside(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def qp_projection_oracle(u, caps, iters: int = 100_000, tol: float = 1e-9):
    """Euclidean projection onto the capped simplex by Dykstra's algorithm.

    Alternates the sum-one hyperplane and the box with Dykstra's correction terms
    (plain alternation only finds *a* feasible point, not the nearest one).
    Accepts ``(N,)`` or ``(B, N)``; raises ``RuntimeError`` if not converged.
    """
    u = np.asarray(u, dtype=np.float64)
    single = u.ndim == 1
    U = np.atleast_2d(u)
    n = U.shape[1]
    c = np.broadcast_to(np.asarray(caps, dtype=np.float64), (n,))
    if c.sum() < 1.0:
        raise InvalidInputError("infeasible caps")
    x = U.copy()
    p = np.zeros_like(U)
    q = np.zeros_like(U)
    for _ in range(iters):
        xp = x + p
        y = xp - (xp.sum(axis=1, keepdims=True) - 1.0) / n
        p = xp - y
        yq = y + q
        x_new = np.clip(yq, 0.0, c)
        q = yq - x_new
        step = np.abs(x_new - x).max()
        x = x_new
        if step <= 1e-15 and np.abs(x.sum(axis=1) - 1.0).max() <= tol:
            break
    else:
        raise RuntimeError(
            f"projection oracle did not converge in {iters} iterations "
            f"(sum residual {np.abs(x.sum(axis=1) - 1.0).max():.3g})"
        )
    return x[0] if single else x


def mp_softmin(x, y, tau, dps: int = 50) -> float:
    with mpmath.workdps(dps):
        x, y, tau = mpmath.mpf(x), mpmath.mpf(y), mpmath.mpf(tau)
        return float(-tau * mpmath.log(mpmath.exp(-x / tau) + mpmath.exp(-y / tau)))


def mp_pseudo_huber(delta_vec, delta, dps: int = 50) -> float:
    with mpmath.workdps(dps):
        dl = mpmath.mpf(delta)
        return float(mpmath.fsum(mpmath.sqrt(dl**2 + mpmath.mpf(v) ** 2) - dl for v in delta_vec))
