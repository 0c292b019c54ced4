import math

import numpy as np
import pytest

from radialfeas import autodiff as ad
from radialfeas.errors import InvalidInputError, TrainingDivergedError
from radialfeas.nets import (
    AdamState,
    Mlp,
    SgdSchedule,
    adam_step,
    load_checkpoint,
    mlp_forward,
    save_checkpoint,
    sgd_step,
)
from radialfeas.radial import SoftRadialLayer
from radialfeas.sets import CappedSimplex


def test_glorot_init_shapes_and_bounds():
    net = Mlp([5, 7, 3], seed=4)
    assert net.params["layer0.W"].shape == (7, 5)
    assert net.params["layer1.W"].shape == (3, 7)
    assert np.abs(net.params["layer0.W"]).max() <= math.sqrt(6 / 12)
    np.testing.assert_array_equal(net.params["layer1.b"], np.zeros(3))


def test_init_is_seeded():
    a, b, c = Mlp([4, 8, 2], seed=1), Mlp([4, 8, 2], seed=1), Mlp([4, 8, 2], seed=2)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])
    assert not np.array_equal(a.params["layer0.W"], c.params["layer0.W"])


def test_forward_examples():
    net = Mlp([3, 4, 2])
    for k in net.params:
        net.params[k] = np.zeros_like(net.params[k])
    net.params["layer1.b"] = np.array([0.3, -0.7])
    np.testing.assert_array_equal(net(np.ones(3)), [0.3, -0.7])
    ident = Mlp([3, 3])
    ident.params["layer0.W"] = np.eye(3)
    z = np.array([1.0, -2.0, 0.5])
    np.testing.assert_array_equal(ident(z), z)


def test_forward_is_bitwise_reproducible(rng):
    z = rng.normal(size=(16, 5))
    assert np.array_equal(Mlp([5, 8, 3], seed=7)(z), Mlp([5, 8, 3], seed=7)(z))


def test_forward_rejects_wrong_width():
    with pytest.raises(InvalidInputError):
        Mlp([3, 2])(np.ones(4))


def test_invalid_architecture():
    with pytest.raises(InvalidInputError):
        Mlp([3])
    with pytest.raises(InvalidInputError):
        Mlp([3, 2], activation="gelu")
    with pytest.raises(InvalidInputError):
        Mlp([3, 2], dropout=1.0)


def test_dropout_only_with_rng(rng):
    net = Mlp([4, 16, 2], seed=0, dropout=0.5)
    z = rng.normal(size=(3, 4))
    tape = ad.Tape()
    bound = net.bind(tape)
    plain = mlp_forward(net, bound, tape.var(z)).value
    np.testing.assert_array_equal(plain, net(z))
    dropped = mlp_forward(net, bound, tape.var(z), np.random.default_rng(0)).value
    assert not np.array_equal(plain, dropped)


def test_adam_first_step():
    params = {"p": np.array([0.0])}
    adam_step(AdamState(lr=0.1), params, {"p": np.array([1.0])})
    assert params["p"][0] == pytest.approx(-0.1, abs=1e-8)


def test_adam_zero_gradient_keeps_params():
    params = {"p": np.array([0.5, -1.0])}
    state = AdamState(lr=0.1)
    for _ in range(5):
        adam_step(state, params, {"p": np.zeros(2)})
    np.testing.assert_array_equal(params["p"], [0.5, -1.0])
    assert state.step == 5


def test_adam_rejects_non_finite():
    with pytest.raises(TrainingDivergedError):
        adam_step(AdamState(), {"p": np.zeros(1)}, {"p": np.array([np.nan])})


def test_sgd_examples():
    params = {"p": np.array([0.0, 0.0])}
    sgd_step(params, {"p": np.zeros(2)}, 0, 10)
    np.testing.assert_array_equal(params["p"], [0.0, 0.0])
    sgd_step(params, {"p": np.array([1.0, 0.0])}, 0, 10, SgdSchedule("constant", 0.1))
    np.testing.assert_allclose(params["p"], [-0.1, 0.0])
    q = {"q": np.array([0.0])}
    sched = SgdSchedule("horizon", 0.5)
    for t in range(10):
        sgd_step(q, {"q": np.array([1.0])}, t, 100, sched)
    assert q["q"][0] == pytest.approx(-10 * 0.5 / math.sqrt(100), abs=1e-15)


def test_sgd_diminishing_schedule():
    sched = SgdSchedule("diminishing", 1.0)
    assert [sched.rate(t, 5) for t in (0, 3)] == [1.0, 0.5]
    with pytest.raises(InvalidInputError):
        SgdSchedule("cosine")


def _train(seed, steps=100):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(32, 3))
    target = np.full((32, 4), 0.25)
    net = Mlp([3, 8, 4], seed=seed)
    layer = SoftRadialLayer(CappedSimplex(np.full(4, 0.5)))
    ad.register_projection_primitives()
    state = AdamState(lr=1e-2)
    for _ in range(steps):
        tape = ad.Tape()
        bound = net.bind(tape)
        p = ad.apply("soft_project", mlp_forward(net, bound, tape.var(z)), layer=layer)
        loss = ad.mean(ad.sum(ad.square(p - target), axis=1))
        names = list(bound)
        adam_step(state, net.params, dict(zip(names, tape.gradient(loss, [bound[n] for n in names]))))
    return net.params


def test_training_is_bitwise_reproducible():
    a, b = _train(3), _train(3)
    for k in a:
        assert np.array_equal(a[k], b[k])


def test_full_composite_passes_grad_check(rng):
    net = Mlp([3, 5, 4], seed=1)
    layer = SoftRadialLayer(CappedSimplex(np.full(4, 0.5)))
    ad.register_projection_primitives()
    z = rng.normal(size=(6, 3))
    target = rng.dirichlet(np.ones(4), size=6)

    def f(tape, w):
        bound = net.bind(tape)
        bound["layer0.W"] = w
        p = ad.apply("soft_project", mlp_forward(net, bound, tape.var(z)), layer=layer)
        return ad.mean(ad.sum(ad.square(p - target), axis=1))

    assert ad.grad_check(f, net.params["layer0.W"]) <= 1e-4


def test_checkpoint_round_trip(tmp_path):
    net = Mlp([3, 4, 2], seed=9)
    path = tmp_path / "ck.txt"
    save_checkpoint(path, net.params, {"method": "soft-radial", "seed": 9})
    text = path.read_text().splitlines()
    assert text[0] == "# radialfeas-checkpoint v1"
    assert "# meta method=soft-radial" in text
    assert "tensor layer0.W 4 3" in text
    params, meta = load_checkpoint(path)
    assert meta == {"method": "soft-radial", "seed": "9"}
    for k in net.params:
        assert np.array_equal(params[k], net.params[k])


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("hello\n")
    with pytest.raises(InvalidInputError):
        load_checkpoint(path)
