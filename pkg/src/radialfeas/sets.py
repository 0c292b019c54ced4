"""Convex-set geometry: membership, ray-boundary intersection and the anchored gauge.

Every set carries an interior anchor ``u0``. Rays are parameterized in units of the
direction vector ``d = u - u0``, so the boundary time ``tbar`` satisfies
``u0 + tbar * d in boundary`` and the anchored gauge is exactly ``1 / tbar``.

Batched methods take ``(B, n)`` arrays of directions; the module-level functions
accept single points or batches.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .errors import DegenerateRayError, InfeasibleSetError, InvalidInputError

__all__ = [
    "ConvexSet",
    "Polytope",
    "Ball",
    "CappedSimplex",
    "LevelSet",
    "contains",
    "ray_boundary_time",
    "gauge_and_gradient",
    "hyperplane_project",
    "alpha_star",
    "slack",
]

_BRACKET_CAP = 1e12


def _as_finite(x, name="x"):
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


def hyperplane_project(u):
    """Orthogonal projection onto ``{w : sum(w) = 1}``, row-wise for 2-D input."""
    u = _as_finite(u, "u")
    n = u.shape[-1]
    return u - (u.sum(axis=-1, keepdims=True) - 1.0) / n


class ConvexSet:
    """Base class. Subclasses define slacks, boundary times and gauge gradients."""

    anchor: np.ndarray
    in_hull = False

    @property
    def dim(self) -> int:
        return self.anchor.shape[0]

    # Hooks for sets living in an affine hull; identity for full-dimensional sets.
    def reduce(self, u):
        return u

    def tangent_projector(self):
        return np.eye(self.dim)

    def slack(self, x):
        """Inequality slacks (nonnegative inside), shape ``(..., m)``."""
        raise NotImplementedError

    def contains(self, x, tol=0.0):
        x = _as_finite(x)
        return bool(np.all(self.slack(x) >= -tol))

    def boundary_time(self, d):
        """Boundary times for directions ``d`` of shape ``(B, n)``; ``inf`` if unbounded."""
        raise NotImplementedError

    def gauge_grad(self, d):
        """Return ``(lam, grad)`` with ``lam = 1 / tbar`` and the a.e. gauge gradient."""
        raise NotImplementedError

    def interior_radius(self):
        """Radius of a ball around the anchor contained in the set (within the hull)."""
        raise NotImplementedError

    def _check_anchor(self):
        s = self.slack(self.anchor)
        if not np.all(s > 0):
            raise InfeasibleSetError(
                f"anchor is not strictly interior (min slack {float(np.min(s)):.3g})"
            )


class Polytope(ConvexSet):
    """``{x : A x <= b}`` with a strictly interior anchor."""

    def __init__(self, A, b, anchor):
        A = _as_finite(A, "A")
        b = _as_finite(b, "b")
        if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
            raise InvalidInputError(f"A must be a nonempty matrix, got shape {A.shape}")
        if b.shape != (A.shape[0],):
            raise InvalidInputError("b must have one entry per row of A")
        if np.any(np.all(A == 0.0, axis=1)):
            raise InvalidInputError("A has an all-zero row")
        self.A = A
        self.b = b
        self.anchor = _as_finite(anchor, "anchor").reshape(A.shape[1])
        self._check_anchor()
        self.offsets = self.b - self.A @ self.anchor

    @classmethod
    def box(cls, lower, upper, anchor=None):
        lower = np.asarray(lower, dtype=np.float64)
        upper = np.asarray(upper, dtype=np.float64)
        n = lower.shape[0]
        A = np.vstack([np.eye(n), -np.eye(n)])
        b = np.concatenate([upper, -lower])
        if anchor is None:
            anchor = 0.5 * (lower + upper)
        return cls(A, b, anchor)

    def slack(self, x):
        return self.b - x @ self.A.T

    def boundary_time(self, d):
        ad = d @ self.A.T
        pos = ad > 0
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            times = np.where(pos, self.offsets / np.where(pos, ad, 1.0), np.inf)
        return times.min(axis=1)

    def gauge_grad(self, d):
        ratios = (d @ self.A.T) / self.offsets
        j = np.argmax(ratios, axis=1)  # first maximizer: smallest index on ties
        lam = np.maximum(ratios[np.arange(len(j)), j], 0.0)
        grad = self.A[j] / self.offsets[j][:, None]
        return lam, grad

    def gauge_gap(self, d):
        """Relative gap between the two largest face ratios (0 at face switches)."""
        ratios = np.sort((d @ self.A.T) / self.offsets, axis=1)
        if ratios.shape[1] < 2:
            return np.full(len(ratios), np.inf)
        top = np.maximum(np.abs(ratios[:, -1]), 1e-300)
        return (ratios[:, -1] - ratios[:, -2]) / top

    def interior_radius(self):
        return float(np.min(self.offsets / np.linalg.norm(self.A, axis=1)))


class CappedSimplex(Polytope):
    """``{w : sum(w) = 1, 0 <= w <= caps}`` handled inside the sum-one hyperplane.

    The anchor is the uniform vector; inputs are hyperplane-projected before any
    ray query, so rays never leave the hyperplane.
    """

    def __init__(self, caps):
        caps = _as_finite(caps, "caps").reshape(-1)
        n = caps.shape[0]
        if n < 2:
            raise InvalidInputError("capped simplex needs at least two coordinates")
        if np.any(caps > 1.0) or np.any(caps <= 1.0 / n):
            raise InfeasibleSetError("caps must lie in (1/N, 1]")
        if caps.sum() <= 1.0:
            raise InfeasibleSetError("sum of caps must exceed 1")
        self.caps = caps
        A = np.vstack([-np.eye(n), np.eye(n)])
        b = np.concatenate([np.zeros(n), caps])
        super().__init__(A, b, np.full(n, 1.0 / n))

    in_hull = True

    def reduce(self, u):
        return hyperplane_project(u)

    def tangent_projector(self):
        n = self.dim
        return np.eye(n) - np.full((n, n), 1.0 / n)

    def contains(self, x, tol=0.0):
        x = _as_finite(x)
        if np.any(np.abs(x.sum(axis=-1) - 1.0) > tol):
            return False
        return super().contains(x, tol)

    def interior_radius(self):
        n = self.dim
        return float(np.min(self.offsets) / math.sqrt(1.0 - 1.0 / n))


class Ball(ConvexSet):
    """Euclidean ball ``||x - center|| <= radius``; the anchor defaults to the center."""

    def __init__(self, center, radius, anchor=None):
        self.center = _as_finite(center, "center").reshape(-1)
        if not (np.isfinite(radius) and radius > 0):
            raise InvalidInputError("radius must be positive")
        self.radius = float(radius)
        self.anchor = (
            self.center.copy() if anchor is None else _as_finite(anchor, "anchor").reshape(-1)
        )
        self._check_anchor()
        self._offset = self.anchor - self.center
        self._centered = bool(np.all(self._offset == 0.0))

    def slack(self, x):
        return (self.radius - np.linalg.norm(x - self.center, axis=-1))[..., None]

    def boundary_time(self, d):
        a = np.einsum("ij,ij->i", d, d)
        b = 2.0 * (d @ self._offset)
        c = float(self._offset @ self._offset) - self.radius**2
        disc = np.sqrt(b * b - 4.0 * a * c)
        with np.errstate(divide="ignore", invalid="ignore"):
            # pick the cancellation-free form of the positive root
            t = np.where(b <= 0, (-b + disc) / (2.0 * a), (-2.0 * c) / (b + disc))
        return np.where(a > 0, t, np.inf)

    def gauge_grad(self, d):
        if self._centered:
            norms = np.linalg.norm(d, axis=1)
            lam = norms / self.radius
            with np.errstate(divide="ignore", invalid="ignore"):
                grad = d / (self.radius * norms)[:, None]
            return lam, grad
        t = self.boundary_time(d)
        z = self.anchor + t[:, None] * d
        gh = 2.0 * (z - self.center)
        grad = gh / (t * np.einsum("ij,ij->i", gh, d))[:, None]
        return 1.0 / t, grad

    def interior_radius(self):
        return float(self.radius - np.linalg.norm(self._offset))


class LevelSet(ConvexSet):
    """``{x : h(x) <= 0}`` for a convex ``h`` returning ``(value, gradient)``."""

    def __init__(self, h: Callable, anchor, max_iter: int = 200):
        self.h = h
        self.anchor = _as_finite(anchor, "anchor").reshape(-1)
        self.max_iter = max_iter
        val, _ = h(self.anchor)
        if not val < 0:
            raise InfeasibleSetError(f"h(anchor) = {val} is not negative")
        self._scale = max(1.0, abs(float(val)))

    def slack(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            return np.array([-self.h(x)[0]])
        return np.array([[-self.h(row)[0]] for row in x])

    def _root(self, d):
        if not np.any(d):
            return math.inf
        u0, h = self.anchor, self.h
        tol = 1e-12 * self._scale
        hi = 1.0
        while h(u0 + hi * d)[0] <= 0.0:
            hi *= 2.0
            if hi > _BRACKET_CAP:
                return math.inf
        lo = 0.0
        t = hi
        for _ in range(self.max_iter):
            val, grad = h(u0 + t * d)
            if val > 0:
                hi = t
            else:
                lo = t
            slope = float(np.dot(grad, d))
            newton = t - val / slope if slope > 0 else math.nan
            converged = abs(val) <= tol
            if lo < newton < hi:
                t = newton
            elif converged:
                break
            else:
                t = 0.5 * (lo + hi)
            if converged or hi - lo <= 4.0 * np.finfo(float).eps * hi:
                break
        return t

    def boundary_time(self, d):
        return np.array([self._root(row) for row in d])

    def gauge_grad(self, d):
        t = self.boundary_time(d)
        lam = np.zeros(len(d))
        grad = np.zeros_like(d)
        for i, (ti, di) in enumerate(zip(t, d)):
            if not np.isfinite(ti):
                continue
            _, gh = self.h(self.anchor + ti * di)
            lam[i] = 1.0 / ti
            grad[i] = gh / (ti * float(np.dot(gh, di)))
        return lam, grad


def _directions(set_, u):
    u = _as_finite(u, "u")
    single = u.ndim == 1
    d = np.atleast_2d(set_.reduce(u)) - set_.anchor
    return d, single


def contains(set_: ConvexSet, x, tol: float = 0.0) -> bool:
    """True iff every defining (in)equality holds within additive ``tol``."""
    return set_.contains(x, tol)


def slack(set_: ConvexSet, x):
    return set_.slack(_as_finite(x))


def ray_boundary_time(set_: ConvexSet, u):
    """``sup {t >= 0 : u0 + t (u - u0) in C}``; ``inf`` when ``u == u0`` or unbounded."""
    d, single = _directions(set_, u)
    t = set_.boundary_time(d)
    t = np.where(np.any(d != 0, axis=1), t, np.inf)
    return float(t[0]) if single else t


def alpha_star(set_: ConvexSet, u):
    return np.minimum(1.0, ray_boundary_time(set_, u))


def gauge_and_gradient(set_: ConvexSet, u):
    """Anchored gauge value and its a.e. gradient at ``u != u0``."""
    d, single = _directions(set_, u)
    if np.any(np.all(d == 0, axis=1)):
        raise DegenerateRayError("gauge gradient undefined at the anchor")
    lam, grad = set_.gauge_grad(d)
    if single:
        return float(lam[0]), grad[0]
    return lam, grad
