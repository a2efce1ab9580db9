import math

import numpy as np
import pytest

from carlab.errors import ShapeMismatch
from carlab.nn import SGD, Adam, Dense, ParamStore, bce_loss, corrupt, mse_loss


def numeric_loss_grad(loss, pred, target, h=1e-6):
    g = np.zeros_like(pred)
    for i in range(pred.size):
        orig = pred.flat[i]
        pred.flat[i] = orig + h
        lp = loss(pred, target)[0]
        pred.flat[i] = orig - h
        lm = loss(pred, target)[0]
        pred.flat[i] = orig
        g.flat[i] = (lp - lm) / (2 * h)
    return g


def rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)))


# -- losses -------------------------------------------------------------------

def test_mse_values():
    assert mse_loss(np.ones(4), np.ones(4))[0] == 0.0
    assert mse_loss(np.array([2.0]), np.array([0.0]))[0] == 4.0
    with pytest.raises(ShapeMismatch):
        mse_loss(np.ones(3), np.ones(4))


def test_mse_gradient():
    rng = np.random.default_rng(0)
    pred, target = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
    assert rel_err(mse_loss(pred, target)[1], numeric_loss_grad(mse_loss, pred, target)) < 1e-6


def test_bce_values():
    for y in (0, 1):
        assert bce_loss(np.array([0.5]), np.array([y]))[0] == pytest.approx(math.log(2), abs=1e-12)
    assert bce_loss(np.array([1.0, 0.0]), np.array([1, 0]))[0] <= -math.log(1 - 1e-7) + 1e-15
    assert np.isfinite(bce_loss(np.array([0.0]), np.array([1]))[0])


def test_bce_gradient():
    rng = np.random.default_rng(1)
    pred = rng.uniform(0.05, 0.95, size=12)
    labels = rng.integers(0, 2, size=12).astype(float)
    analytic = bce_loss(pred, labels)[1]
    assert rel_err(analytic, numeric_loss_grad(bce_loss, pred, labels)) < 1e-5


@pytest.mark.parametrize("seed", range(5))
def test_losses_are_non_negative(seed):
    rng = np.random.default_rng(seed)
    p = rng.uniform(size=10)
    assert mse_loss(p, rng.normal(size=10))[0] >= 0
    assert bce_loss(p, rng.integers(0, 2, size=10))[0] >= 0


# -- optimizers -------------------------------------------------------------------

def scalar_store(value):
    layer = Dense(1, 1, dtype=np.float64)
    layer.params["W"][...] = value
    store = ParamStore()
    store.add_layer("p", layer)
    return store, layer


def test_sgd_single_step_and_zero_gradient():
    store, layer = scalar_store(1.0)
    opt = SGD(store, 0.1)
    opt.step()
    assert layer.params["W"][0, 0] == 1.0 and layer.params["b"][0] == 0.0
    layer.grads["W"][...] = 2.0
    opt.step()
    assert layer.params["W"][0, 0] == pytest.approx(0.8, abs=1e-15)


def test_sgd_quadratic_recursion():
    store, layer = scalar_store(1.0)
    opt = SGD(store, 0.1)
    for _ in range(100):
        store.zero_grad()
        layer.grads["W"][...] = 2.0 * layer.params["W"]
        opt.step()
    assert abs(layer.params["W"][0, 0] / 0.8**100 - 1.0) < 1e-9


def reference_adam(p, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    return p


def test_adam_zero_gradient_is_a_no_op():
    store, layer = scalar_store(0.3)
    Adam(store).step()
    assert abs(layer.params["W"][0, 0] - 0.3) < 1e-12


@pytest.mark.parametrize("g", [2.0, -0.01, 1e3])
def test_adam_first_step_is_about_lr(g):
    store, layer = scalar_store(0.0)
    layer.grads["W"][...] = g
    Adam(store, 1e-3).step()
    assert abs(abs(layer.params["W"][0, 0]) - 1e-3) < 1e-6
    assert np.sign(layer.params["W"][0, 0]) == -np.sign(g)


def test_adam_matches_scalar_reference():
    grads = [0.7, 0.7, -1.3, 0.2, 5.0]
    store, layer = scalar_store(0.5)
    opt = Adam(store, 0.01)
    for g in grads:
        store.zero_grad()
        layer.grads["W"][...] = g
        opt.step()
    assert abs(layer.params["W"][0, 0] - reference_adam(0.5, grads, lr=0.01)) < 1e-12
    assert opt.state.m["p.W"].shape == layer.params["W"].shape


def test_learning_rate_must_be_positive():
    store, _ = scalar_store(0.0)
    with pytest.raises(ValueError):
        SGD(store, 0.0)
    with pytest.raises(ValueError):
        Adam(store, -1.0)


# -- corruption -------------------------------------------------------------------

def test_corruption_extremes():
    x = np.random.default_rng(0).normal(size=(3, 4))
    rng = np.random.default_rng(1)
    assert np.array_equal(corrupt(x, 0.0, rng), x)
    assert np.all(corrupt(x, 1.0, rng) == 0)
    with pytest.raises(ValueError):
        corrupt(x, 1.5, rng)


def test_corruption_rate_monte_carlo():
    x = np.ones(1_000_000, dtype=np.float32)
    out = corrupt(x, 0.1, np.random.default_rng(42))
    assert abs(np.mean(out == 0) - 0.1) < 0.002
    assert set(np.unique(out).tolist()) == {0.0, 1.0}
    assert np.all(x == 1)
