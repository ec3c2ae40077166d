import numpy as np
import pytest

from backdoor_diffusion.errors import EmptyBatch, InvalidDim, ShapeMismatch
from backdoor_diffusion.net import AdamState, DenoiserNet, optimizer_step, param_count, time_embedding


def test_time_embedding_examples():
    e = time_embedding(0, 100, 8)
    np.testing.assert_array_equal(e[0::2], 0.0)
    np.testing.assert_array_equal(e[1::2], 1.0)
    assert time_embedding(3, 10, 2).shape == (2,)
    # t = T, dim = 4: frequencies T and T/100 on t/T = 1
    np.testing.assert_allclose(
        time_embedding(100, 100, 4),
        [-0.5063656411097588, 0.8623188722876839, 0.8414709848078965, 0.5403023058681398],
        atol=1e-12,
    )
    with pytest.raises(InvalidDim):
        time_embedding(1, 10, 3)


def test_param_count_closed_form():
    net = DenoiserNet(1, 4, 16, (64, 64))
    assert net.n_params == 21 * 64 + 64 + 64 * 64 + 64 + 64 * 1 + 1
    assert param_count([3, 2]) == 8


def test_forward_zero_weights_gives_bias():
    net = DenoiserNet(2, 1, 4, (8,))
    net.params[:] = 0.0
    net.params[-2:] = [0.7, -1.1]
    out = net(np.ones((3, 2)), np.ones((3, 1)), np.ones((3, 4)))
    np.testing.assert_array_equal(out, np.tile([0.7, -1.1], (3, 1)))


def test_forward_single_linear_layer():
    net = DenoiserNet(2, 0, 0, ())
    W = np.array([[1.0, 0.0], [0.0, 1.0]])
    net.params[:] = np.concatenate([W.ravel(), [0.0, 0.0]])
    x = np.array([[0.3, -2.0], [1.5, 4.0]])
    np.testing.assert_array_equal(net(x, np.zeros((2, 0)), np.zeros((2, 0))), x)


def test_seeded_forward_is_bit_stable():
    a = DenoiserNet(1, 2, 4, seed=5)
    b = DenoiserNet(1, 2, 4, seed=5)
    x = np.random.default_rng(0).normal(size=(10, 7))
    np.testing.assert_array_equal(a(x[:, :1], x[:, 1:3], x[:, 3:]), b(x[:, :1], x[:, 1:3], x[:, 3:]))


def test_loss_zero_at_own_output():
    net = DenoiserNet(2, 1, 4, (8, 8), seed=1)
    rng = np.random.default_rng(1)
    x, c, e = rng.normal(size=(5, 2)), rng.normal(size=(5, 1)), rng.normal(size=(5, 4))
    loss, grad = net.loss_and_grad(x, c, e, net(x, c, e))
    assert loss == 0.0
    assert np.all(grad == 0.0)
    with pytest.raises(EmptyBatch):
        net.loss_and_grad(x[:0], c[:0], e[:0], x[:0])


def test_linear_gradient_by_hand():
    net = DenoiserNet(1, 0, 0, ())
    w, b = 0.7, -0.2
    net.params[:] = [w, b]
    x = np.array([[1.0], [2.0], [-1.0]])
    y = np.array([[0.5], [1.0], [0.0]])
    r = w * x[:, 0] + b - y[:, 0]
    loss, grad = net.loss_and_grad(x, np.zeros((3, 0)), np.zeros((3, 0)), y)
    assert loss == pytest.approx(np.mean(r ** 2), abs=1e-15)
    np.testing.assert_allclose(grad, [np.mean(2 * r * x[:, 0]), np.mean(2 * r)], atol=1e-15)


def fd_max_rel_error(net, x, c, e, y, h=1e-5):
    _, grad = net.loss_and_grad(x, c, e, y)
    p0 = net.params.copy()
    worst = 0.0
    for i in range(p0.size):
        if abs(grad[i]) < 1e-8:
            continue
        net.params[:] = p0
        net.params[i] += h
        lp, _ = net.loss_and_grad(x, c, e, y)
        net.params[:] = p0
        net.params[i] -= h
        lm, _ = net.loss_and_grad(x, c, e, y)
        fd = (lp - lm) / (2 * h)
        worst = max(worst, abs(fd - grad[i]) / max(abs(grad[i]), abs(fd)))
    net.params[:] = p0
    return worst


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    for trial in range(5):
        net = DenoiserNet(int(rng.integers(1, 3)), int(rng.integers(0, 3)), 4, (6, 5), seed=trial)
        n = 7
        x = rng.normal(size=(n, net.x_dim))
        c = rng.normal(size=(n, net.cond_dim))
        e = rng.normal(size=(n, 4))
        y = rng.normal(size=(n, net.x_dim))
        assert fd_max_rel_error(net, x, c, e, y) < 1e-4


def test_optimizer_examples():
    st = AdamState.zeros(3, lr=0.01)
    p = np.array([1.0, -2.0, 0.5])
    p2, st2 = optimizer_step(st, p, np.zeros(3))
    np.testing.assert_array_equal(p2, p)
    assert st2.step == 1 and st.step == 0
    g = np.array([0.3, -5.0, 1e-3])
    p3, _ = optimizer_step(st, p, g)
    # bias-corrected first step moves each coordinate by lr * g / (|g| + eps)
    np.testing.assert_allclose(p - p3, 0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)
    a, sa = optimizer_step(st, p, g)
    b, sb = optimizer_step(st, p, g)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(sa.v, sb.v)
    with pytest.raises(ShapeMismatch):
        optimizer_step(st, p, np.zeros(2))


def test_full_batch_training_decreases_loss():
    rng = np.random.default_rng(0)
    net = DenoiserNet(1, 2, 16, seed=0)
    x, c, e = rng.normal(size=(64, 1)), rng.normal(size=(64, 2)), rng.normal(size=(64, 16))
    y = 0.5 * x - 0.3 * c[:, :1] + 0.1
    st = AdamState.zeros(net.n_params)
    losses = []
    for _ in range(50):
        loss, g = net.loss_and_grad(x, c, e, y)
        losses.append(loss)
        net.params, st = optimizer_step(st, net.params, g)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_serialization_round_trip():
    net = DenoiserNet(2, 3, 4, (5,), seed=9)
    back = DenoiserNet.from_dict(net.to_dict())
    np.testing.assert_array_equal(back.params, net.params)
    assert back.hidden == net.hidden
