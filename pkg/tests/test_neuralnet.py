import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evmarket.neuralnet import (AdamState, ModelParams, adam_step, dropout_mask, forward,
                                gradient, init_params, loss)


def finite_difference(params, X, y, mask_seed=None, step=1e-5):
    flat = params.flatten()
    out = np.empty_like(flat)
    for k in range(flat.size):
        e = np.zeros_like(flat)
        e[k] = step
        lp = params.with_flat(flat + e)
        lm = params.with_flat(flat - e)
        if mask_seed is None:
            fp, fm = loss(lp, X, y), loss(lm, X, y)
        else:
            rp = forward(lp, X, True, mask_seed) - y
            rm = forward(lm, X, True, mask_seed) - y
            fp, fm = rp @ rp, rm @ rm
        out[k] = (fp - fm) / (2 * step)
    return out


def max_rel_error(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)))


def test_zero_params_give_zero_output():
    p = init_params([4, 3, 1])
    z = p.with_flat(np.zeros(p.size))
    assert np.all(forward(z, np.random.default_rng(0).normal(size=(5, 4))) == 0.0)


def test_tanh_saturation():
    p = ModelParams([np.array([[10.0]]), np.array([[1.0]])], [np.array([0.0]), np.array([0.0])])
    assert abs(forward(p, np.array([[1.0]]))[0] - 1.0) < 1e-6
    assert abs(forward(p, np.array([[-1.5]]))[0] + 1.0) < 1e-6


def test_hand_evaluated_network():
    p = ModelParams([np.array([[1.0, 1.0]]), np.array([[2.0]])], [np.array([0.0]), np.array([1.0])])
    assert forward(p, np.array([[0.5, -0.5]]))[0] == pytest.approx(1.0, abs=1e-15)


def test_shape_mismatch_errors():
    p = init_params([3, 2, 1])
    with pytest.raises(ValueError):
        forward(p, np.zeros((2, 4)))
    with pytest.raises(ValueError):
        loss(p, np.zeros((2, 3)), np.zeros(3))
    with pytest.raises(ValueError):
        ModelParams([np.zeros((2, 3)), np.zeros((1, 3))], [np.zeros(2), np.zeros(1)])
    with pytest.raises(ValueError):
        init_params([3, 2, 1], dropout_rate=1.0)


def test_loss_examples():
    p = ModelParams([np.zeros((1, 1))], [np.array([0.0])])
    X = np.zeros((2, 1))
    assert loss(p, X, np.zeros(2)) == 0.0
    assert loss(p, X, np.array([3.0, 4.0])) == 25.0
    assert loss(p, X[:1], np.array([-2.5])) == 6.25


def test_zero_residual_gives_zero_gradient():
    p = init_params([3, 4, 1], seed=2)
    X = np.random.default_rng(1).normal(size=(6, 3))
    g = gradient(p, X, forward(p, X))
    assert np.all(g.grads == 0.0)


def test_gradient_matches_finite_differences_with_dropout():
    rng = np.random.default_rng(5)
    p = init_params([5, 6, 4, 1], dropout_rate=0.3, seed=3)
    X = rng.normal(size=(12, 5))
    y = rng.normal(size=12)
    g = gradient(p, X, y, training_mask_seed=11).grads
    assert max_rel_error(g, finite_difference(p, X, y, mask_seed=11)) < 1e-4
    assert dropout_mask(p, 12, 11) is not None


def test_output_bias_gradient_linear_in_residual():
    p = init_params([3, 4, 1], seed=0)
    X = np.random.default_rng(2).normal(size=(8, 3))
    base = forward(p, X)
    r = np.random.default_rng(3).normal(size=8)
    g1 = gradient(p, X, base - r).grads[-1]
    g2 = gradient(p, X, base - 2 * r).grads[-1]
    assert g2 == pytest.approx(2 * g1, rel=1e-12)
    assert g1 == pytest.approx(2 * r.sum(), rel=1e-12)


@given(st.integers(0, 10_000), st.lists(st.integers(1, 16), min_size=0, max_size=2),
       st.integers(1, 6))
@settings(max_examples=25, deadline=None)
def test_gradient_finite_difference_property(seed, hidden, width):
    rng = np.random.default_rng(seed)
    p = init_params([width, *hidden, 1], seed=seed)
    X = rng.normal(size=(7, width))
    y = rng.normal(size=7) * 3
    g = gradient(p, X, y).grads
    assert max_rel_error(g, finite_difference(p, X, y)) < 1e-4


@given(st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_loss_nonnegative_and_forward_pure(seed):
    rng = np.random.default_rng(seed)
    p = init_params([3, 5, 1], dropout_rate=0.5, seed=seed)
    X = rng.normal(size=(4, 3))
    y = rng.normal(size=4)
    assert loss(p, X, y) >= 0
    assert np.array_equal(forward(p, X), forward(p, X))
    assert loss(p, X, forward(p, X)) == 0.0


def test_gradient_descent_decreases_loss():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(10, 2))
    y = X @ np.array([1.0, -2.0]) + 0.5
    p = init_params([2, 4, 1], seed=1)
    previous = loss(p, X, y)
    for _ in range(50):
        p = p.with_flat(p.flatten() - 1e-3 * gradient(p, X, y).grads)
        current = loss(p, X, y)
        assert current < previous
        previous = current


def test_adam_zero_gradient_keeps_params():
    p = init_params([3, 2, 1], seed=0)
    state, q = adam_step(AdamState.zeros(p), p, np.zeros(p.size))
    assert np.array_equal(q.flatten(), p.flatten()) and state.tau == 1


def test_adam_first_step_magnitude():
    p = ModelParams([np.array([[0.0]])], [np.array([1.0])])
    state = AdamState.zeros(p)
    _, q = adam_step(state, p, np.array([0.0, 0.3]))
    # eta = 0.1 g, delta = 0.001 g^2, step = lam sqrt(1 - 0.999) / (1 - 0.9)
    # update = lam * g sqrt(0.001) / (g sqrt(0.001) + eps)
    gs = 0.3 * np.sqrt(0.001)
    expected = 0.01 * gs / (gs + 1e-8)
    assert 1.0 - q.biases[0][0] == pytest.approx(expected, rel=1e-12)
    assert 1.0 - q.biases[0][0] == pytest.approx(0.01, rel=1e-5)
    assert state.tau == 0 and p.biases[0][0] == 1.0


def test_adam_trajectory_deterministic():
    def run():
        rng = np.random.default_rng(4)
        X, y = rng.normal(size=(6, 2)), rng.normal(size=6)
        p = init_params([2, 3, 1], dropout_rate=0.2, seed=9)
        s = AdamState.zeros(p)
        for t in range(5):
            s, p = adam_step(s, p, gradient(p, X, y, training_mask_seed=t))
        return p.flatten()
    assert np.array_equal(run(), run())


def test_adam_state_validation():
    with pytest.raises(ValueError):
        AdamState(np.zeros(2), np.zeros(3))
    with pytest.raises(ValueError):
        AdamState(np.zeros(2), np.zeros(2), epsilon=0.0)
    with pytest.raises(ValueError):
        AdamState(np.zeros(2), np.zeros(2), gamma_eta=1.0)


def test_params_json_round_trip(tmp_path):
    p = init_params([4, 3, 2, 1], dropout_rate=0.15, seed=8)
    p.save(tmp_path / "m.json")
    q = ModelParams.load(tmp_path / "m.json")
    assert np.array_equal(p.flatten(), q.flatten())
    assert q.layer_sizes == [4, 3, 2, 1] and q.dropout_rate == 0.15
