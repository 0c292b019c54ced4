import math

import numpy as np
import pytest

from radialfeas.errors import DegenerateRayError
from radialfeas.oracles import (
    bisect_boundary,
    compare,
    fd_gradient,
    fd_jacobian,
    mp_pseudo_huber,
    mp_softmin,
    qp_projection_oracle,
)
from radialfeas.radial import RadialContraction, SoftRadialLayer
from radialfeas.sets import Ball, Polytope


def test_fd_jacobian_of_linear_map(rng):
    M = rng.normal(size=(3, 4))
    np.testing.assert_allclose(fd_jacobian(lambda x: M @ x, rng.normal(size=4)), M, atol=1e-9)
    np.testing.assert_allclose(fd_jacobian(lambda x: x, np.zeros(3)), np.eye(3), atol=1e-10)


def test_fd_jacobian_batched_with_row_steps(rng):
    M = rng.normal(size=(2, 2))
    U = rng.normal(size=(5, 2))
    J = fd_jacobian(lambda X: X @ M.T, U, h=np.linspace(1e-7, 1e-5, 5))
    assert J.shape == (5, 2, 2)
    np.testing.assert_allclose(J, np.broadcast_to(M, (5, 2, 2)), atol=1e-8)


def test_fd_jacobian_of_interior_soft_projection():
    layer = SoftRadialLayer(Ball([0.0, 0.0], 1.0), RadialContraction("rational", 0.5, 1.0))
    np.testing.assert_allclose(fd_jacobian(layer.soft_project, np.array([0.5, 0.0])), np.diag([0.76, 0.6]), atol=1e-9)


def test_fd_gradient():
    g = fd_gradient(lambda x: float(x @ x), np.array([1.0, -2.0]))
    np.testing.assert_allclose(g, [2.0, -4.0], atol=1e-8)


def test_bisect_boundary_examples():
    assert bisect_boundary(Ball([0.0, 0.0], 1.0), [5.0, 0.0], iters=60) == pytest.approx(0.2, abs=1e-12)
    box = Polytope.box([-1.0, -1.0], [1.0, 1.0])
    assert bisect_boundary(box, [2.0, 1.0], iters=60) == pytest.approx(0.5, abs=1e-12)
    half_plane = Polytope([[1.0, 0.0]], [1.0], [0.0, 0.0])
    assert bisect_boundary(half_plane, [-1.0, 0.0]) == math.inf
    with pytest.raises(DegenerateRayError):
        bisect_boundary(box, box.anchor)


def test_dykstra_examples():
    w = np.array([0.2, 0.3, 0.5])
    np.testing.assert_allclose(qp_projection_oracle(w, 0.6), w, atol=1e-12)
    np.testing.assert_allclose(qp_projection_oracle([1.0, 0.0, 0.0], 0.5), [0.5, 0.25, 0.25], atol=1e-8)
    np.testing.assert_allclose(qp_projection_oracle(np.full(4, 3.0), 0.5), np.full(4, 0.25), atol=1e-12)


def test_dykstra_reports_non_convergence():
    with pytest.raises(RuntimeError):
        qp_projection_oracle([5.0, -3.0, 0.7, 2.0], [0.3, 0.3, 0.3, 0.3], iters=2)


def test_compare_semantics():
    ok = compare("x", [1.0, 2.0], [1.0, 2.0 + 1e-9], 1e-8)
    assert ok.passed and ok.rel_err == pytest.approx(5e-10, rel=1e-3)
    bad = compare("x", [100.0], [101.0], 1e-3)
    assert not bad.passed and bad.abs_err == 1.0 and bad.rel_err == pytest.approx(1 / 101)
    # small magnitudes fall back to absolute error
    assert compare("x", [1e-12], [0.0], 1e-11).passed
    assert not compare("x", [np.nan], [0.0], 1.0).passed
    assert set(ok.row()) == {"quantity", "analytic", "oracle", "abs_err", "rel_err", "tol", "passed"}


def test_arbitrary_precision_references():
    assert mp_softmin(1.0, 2.0, 1.0) == pytest.approx(1.0 - math.log1p(math.exp(-1.0)), abs=1e-15)
    assert mp_pseudo_huber([3.0, 4.0], 1.0) == pytest.approx(math.sqrt(10) + math.sqrt(17) - 2, abs=1e-14)
