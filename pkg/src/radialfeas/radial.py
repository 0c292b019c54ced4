"""The soft-radial projection layer.

``p(u) = u0 + r(||u - u0||^2) * (q(u) - u0)`` where ``q`` is the hard radial
projection (identity inside the set, ray-boundary point outside) and ``r`` is a
radial contraction with ``r(0) = eps > 0`` increasing to 1. ``p`` maps all of
R^n onto the interior of the set, is invertible, and has an invertible Jacobian
wherever it is differentiable.

All operations accept a single point ``(n,)`` or a batch ``(B, n)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NotInvertibleError
from .sets import ConvexSet

__all__ = [
    "FAMILIES",
    "RadialContraction",
    "SoftRadialLayer",
    "contraction_eval",
    "hard_project",
    "soft_project",
    "jacobian",
    "vjp",
    "inverse",
]

FAMILIES = ("rational", "exponential", "hyperbolic")

# 1 - r is never allowed below this; in double precision the exponential and
# hyperbolic families otherwise round to r == 1 and land exactly on the boundary.
DEFICIT_FLOOR = 1e-13

BOUNDARY_TOL = 1e-12


@dataclass(frozen=True)
class RadialContraction:
    family: str = "rational"
    epsilon: float = 0.1
    lam: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidInputError(f"unknown contraction family {self.family!r}")
        if not 0.0 < self.epsilon < 1.0:
            raise InvalidInputError("epsilon must lie in (0, 1)")
        if not self.lam > 0.0:
            raise InvalidInputError("lambda must be positive")

    def __call__(self, rho):
        """Return ``(r(rho), r'(rho))``; works elementwise on arrays."""
        rho = np.asarray(rho, dtype=np.float64)
        if np.any(rho < 0) or np.any(np.isnan(rho)):
            raise InvalidInputError("rho must be nonnegative")
        eps = self.epsilon
        scale = 1.0 - eps
        lam = self.lam
        # r = eps + (1 - eps) * s with s rising from 0 to 1, so r(0) == eps exactly
        if self.family == "rational":
            with np.errstate(over="ignore"):
                s = rho / (rho + lam)
                slope = scale * lam / (rho + lam) ** 2
        elif self.family == "exponential":
            s = -np.expm1(-rho / lam)
            slope = scale / lam * np.exp(-rho / lam)
        else:
            s = np.tanh(rho / lam)
            e = np.exp(-2.0 * rho / lam)
            slope = scale / lam * 4.0 * e / (1.0 + e) ** 2
        r = np.minimum(eps + scale * s, 1.0 - DEFICIT_FLOOR)
        if r.ndim == 0:
            return float(r), float(slope)
        return r, slope


def contraction_eval(rc: RadialContraction, rho):
    rho_arr = np.asarray(rho, dtype=np.float64)
    if not np.all(np.isfinite(rho_arr)):
        raise InvalidInputError("rho must be finite")
    return rc(rho)


class SoftRadialLayer:
    """Soft-radial projection onto ``set_`` from its anchor."""

    def __init__(self, set_: ConvexSet, contraction: RadialContraction | None = None):
        self.set = set_
        self.contraction = contraction or RadialContraction()
        self.anchor = set_.anchor

    def _prepare(self, u):
        u = np.asarray(u, dtype=np.float64)
        if not np.all(np.isfinite(u)):
            raise InvalidInputError("input contains non-finite entries")
        single = u.ndim == 1
        U = np.atleast_2d(self.set.reduce(u))
        if U.shape[1] != self.set.dim:
            raise InvalidInputError(f"expected dimension {self.set.dim}, got {U.shape[1]}")
        D = U - self.anchor
        nonzero = np.any(D != 0.0, axis=1)
        tbar = np.full(len(D), np.inf)
        if np.any(nonzero):
            tbar[nonzero] = self.set.boundary_time(D[nonzero])
        rho = np.einsum("ij,ij->i", D, D)
        r, rp = self.contraction(rho)
        return single, U, D, tbar, np.atleast_1d(r), np.atleast_1d(rp)

    @staticmethod
    def _out(arr, single):
        return arr[0] if single else arr

    def hard_project(self, u):
        single, U, D, tbar, _, _ = self._prepare(u)
        alpha = np.minimum(1.0, tbar)
        Q = np.where((tbar >= 1.0)[:, None], U, self.anchor + alpha[:, None] * D)
        return self._out(Q, single)

    def soft_project(self, u):
        single, _, D, tbar, r, _ = self._prepare(u)
        alpha = np.minimum(1.0, tbar)
        P = self.anchor + (r * alpha)[:, None] * D
        return self._out(P, single)

    __call__ = soft_project

    def _exterior_terms(self, D, tbar, ext):
        lam = np.ones(len(D))
        grad = np.zeros_like(D)
        if np.any(ext):
            lam[ext], grad[ext] = self.set.gauge_grad(D[ext])
        return lam, grad

    def jacobian(self, u, with_flag=False):
        """Jacobian of ``p``; on the boundary the exterior branch is used and flagged."""
        single, _, D, tbar, r, rp = self._prepare(u)
        n = D.shape[1]
        ext = tbar <= 1.0
        lam, grad = self._exterior_terms(D, tbar, ext)
        eye = np.eye(n)
        outer_dd = D[:, :, None] * D[:, None, :]
        J = r[:, None, None] * eye + 2.0 * rp[:, None, None] * outer_dd
        if np.any(ext):
            l, g = lam[ext][:, None, None], grad[ext]
            Jq = eye / l - (D[ext][:, :, None] * g[:, None, :]) / l**2
            J[ext] = r[ext][:, None, None] * Jq + 2.0 * rp[ext][:, None, None] * outer_dd[ext] / l
        if self.set.in_hull:
            J = J @ self.set.tangent_projector()
        flag = np.abs(tbar - 1.0) <= BOUNDARY_TOL
        J = self._out(J, single)
        if with_flag:
            return J, (bool(flag[0]) if single else flag)
        return J

    def vjp(self, u, g):
        """``J_p(u)^T g`` without forming the Jacobian."""
        single, _, D, tbar, r, rp = self._prepare(u)
        G = np.atleast_2d(np.asarray(g, dtype=np.float64))
        if G.shape != D.shape:
            raise InvalidInputError(f"cotangent shape {G.shape} does not match {D.shape}")
        ext = tbar <= 1.0
        lam, grad = self._exterior_terms(D, tbar, ext)
        dg = np.einsum("ij,ij->i", D, G)
        out = r[:, None] * G + (2.0 * rp * dg)[:, None] * D
        if np.any(ext):
            l = lam[ext]
            # (q - u0)^T g = (D^T g) / lam on the exterior branch
            out[ext] = (
                (r[ext] / l)[:, None] * G[ext]
                - (r[ext] * dg[ext] / l**2)[:, None] * grad[ext]
                + (2.0 * rp[ext] * dg[ext] / l)[:, None] * D[ext]
            )
        if self.set.in_hull:
            out = out @ self.set.tangent_projector().T
        return self._out(out, single)

    def radial_profile(self, direction, t):
        """``psi_v(t) = r(t^2) * min(t, tbar(v))`` along the unit vector ``v``."""
        v = np.asarray(direction, dtype=np.float64)
        v = v / np.linalg.norm(v)
        tb = float(self.set.boundary_time(v[None, :])[0])
        t = np.asarray(t, dtype=np.float64)
        r, _ = self.contraction(t * t)
        return r * np.minimum(t, tb)

    def inverse(self, x):
        """Unique ``u`` with ``p(u) = x`` for ``x`` strictly inside the set."""
        x = np.asarray(x, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("input contains non-finite entries")
        single = x.ndim == 1
        X = np.atleast_2d(x)
        Xr = self.set.reduce(X)
        if np.any(np.abs(Xr - X) > 1e-9 * (1.0 + np.abs(X))):
            raise NotInvertibleError("point is off the affine hull of the set")
        if np.any(self.set.slack(Xr).min(axis=-1) <= 1e-12):
            raise NotInvertibleError("point is not strictly interior")
        D = Xr - self.anchor
        s = np.linalg.norm(D, axis=1)
        nz = s > 0
        V = np.zeros_like(D)
        V[nz] = D[nz] / s[nz, None]
        T = np.full(len(D), np.inf)
        if np.any(nz):
            T[nz] = self.set.boundary_time(V[nz])

        def psi(t):
            r, _ = self.contraction(t * t)
            return r * np.minimum(t, T)

        lo = np.zeros_like(s)
        hi = s.copy()
        for _ in range(2000):
            short = psi(hi) < s
            if not np.any(short):
                break
            hi[short] *= 2.0
            if np.any(hi > 1e150):
                raise NotInvertibleError("contraction saturated before reaching the point")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            below = psi(mid) < s
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo <= 2.0 * np.finfo(float).eps * hi):
                break
        t = 0.5 * (lo + hi)
        U = self.anchor + t[:, None] * V
        return self._out(U, single)


def hard_project(layer: SoftRadialLayer, u):
    return layer.hard_project(u)


def soft_project(layer: SoftRadialLayer, u):
    return layer.soft_project(u)


def jacobian(layer: SoftRadialLayer, u, with_flag=False):
    return layer.jacobian(u, with_flag=with_flag)


def vjp(layer: SoftRadialLayer, u, g):
    return layer.vjp(u, g)


def inverse(layer: SoftRadialLayer, x):
    return layer.inverse(x)
