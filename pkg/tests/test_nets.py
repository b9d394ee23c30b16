import numpy as np
import pytest

from stylerl.errors import CheckpointError
from stylerl.nets import ACTIVATIONS, Adam, Mlp


def rel_err(a, b):
    return abs(a - b) / max(1e-8, abs(a) + abs(b))


def fd_param_check(net, probes, rng, loss_fn, grads, h=1e-5):
    """Central finite differences on random parameter entries."""
    worst = 0.0
    params = net.param_list()
    for _ in range(probes):
        pi = rng.integers(0, len(params))
        p = params[pi]
        idx = tuple(rng.integers(0, s) for s in p.shape)
        old = p[idx]
        p[idx] = old + h
        lp = loss_fn()
        p[idx] = old - h
        lm = loss_fn()
        p[idx] = old
        worst = max(worst, rel_err((lp - lm) / (2 * h), grads[pi][idx]))
    return worst


def test_forward_zero_net_is_zero():
    net = Mlp.zeros([4, 8, 3])
    x = np.array([1.0, -2.0, 3.0, 4.0])
    assert np.all(net.forward(x) == 0.0)


def test_forward_single_affine_layer():
    net = Mlp.zeros([1, 1])
    net.weights[0][0, 0] = 2.0
    net.biases[0][0] = 1.0
    assert net.forward(np.array([3.0]))[0] == pytest.approx(7.0, abs=0)


def test_forward_tanh_zero_input():
    net = Mlp.zeros([1, 1, 1])
    net.weights[0][0, 0] = 1.0
    net.weights[1][0, 0] = 1.0
    assert net.forward(np.array([0.0]))[0] == 0.0


def test_forward_width_mismatch():
    net = Mlp.zeros([3, 2])
    with pytest.raises(ValueError):
        net.forward(np.zeros(4))


def test_param_count():
    net = Mlp(np.array([5, 7, 2]), rng=np.random.default_rng(0))
    assert net.n_params() == 5 * 7 + 7 + 7 * 2 + 2


def test_backward_linear_example():
    net = Mlp.zeros([1, 1])
    net.weights[0][0, 0] = 2.0
    net.biases[0][0] = 1.0
    grads, dx = net.backward(np.array([3.0]), np.array([1.0]))
    assert grads[0][0, 0] == 3.0
    assert grads[1][0] == 1.0
    assert dx[0] == 2.0


def test_backward_zero_upstream():
    rng = np.random.default_rng(1)
    net = Mlp([3, 6, 2], rng=rng)
    grads, dx = net.backward(rng.normal(size=(5, 3)), np.zeros((5, 2)))
    assert all(np.all(g == 0.0) for g in grads)
    assert np.all(dx == 0.0)


@pytest.mark.parametrize("hidden", ACTIVATIONS)
def test_input_gradient_matches_finite_differences(hidden):
    rng = np.random.default_rng(7)
    net = Mlp([6, 16, 8, 1], hidden=hidden, rng=rng)
    h = 1e-5
    worst = 0.0
    for _ in range(100):
        x = rng.normal(size=6)
        g = net.input_gradient(x)
        j = rng.integers(0, 6)
        xp = x.copy()
        xp[j] += h
        xm = x.copy()
        xm[j] -= h
        fd = (net.forward(xp)[0] - net.forward(xm)[0]) / (2 * h)
        worst = max(worst, rel_err(fd, g[j]))
    assert worst < 1e-4


@pytest.mark.parametrize("hidden", ACTIVATIONS)
def test_param_gradients_match_finite_differences(hidden):
    rng = np.random.default_rng(8)
    net = Mlp([5, 12, 3], hidden=hidden, rng=rng)
    x = rng.normal(size=(9, 5))
    up = rng.normal(size=(9, 3))
    grads, _ = net.backward(x, up)
    worst = fd_param_check(net, 100, rng, lambda: float(np.sum(up * net.forward(x))), grads)
    assert worst < 1e-4


def test_grad_norm_backward_value():
    rng = np.random.default_rng(9)
    net = Mlp([4, 10, 1], rng=rng)
    x = rng.normal(size=(6, 4))
    mean_sq, _ = net.grad_norm_backward(x)
    g = net.input_gradient(x)
    assert mean_sq == pytest.approx(float(np.mean(np.sum(g * g, axis=1))), rel=1e-14)


@pytest.mark.parametrize("hidden", ACTIVATIONS)
def test_grad_norm_backward_matches_finite_differences(hidden):
    rng = np.random.default_rng(10)
    net = Mlp([5, 14, 9, 1], hidden=hidden, rng=rng)
    x = rng.normal(size=(8, 5))

    def penalty():
        g = net.input_gradient(x)
        return float(np.mean(np.sum(g * g, axis=1)))

    _, grads = net.grad_norm_backward(x)
    worst = fd_param_check(net, 100, rng, penalty, grads)
    assert worst < 1e-3


def test_forward_backward_pure():
    rng = np.random.default_rng(11)
    net = Mlp([3, 8, 2], rng=rng)
    x = rng.normal(size=(4, 3))
    up = rng.normal(size=(4, 2))
    y1 = net.forward(x)
    g1, d1 = net.backward(x, up)
    y2 = net.forward(x)
    g2, d2 = net.backward(x, up)
    assert np.array_equal(y1, y2)
    assert np.array_equal(d1, d2)
    assert all(np.array_equal(a, b) for a, b in zip(g1, g2))


def test_serialization_roundtrip_bit_exact():
    rng = np.random.default_rng(12)
    net = Mlp([7, 20, 5], hidden="elu", rng=rng)
    restored = Mlp.from_bytes(net.to_bytes())
    assert restored.widths == net.widths
    assert restored.hidden == net.hidden
    for a, b in zip(net.param_list(), restored.param_list()):
        assert np.array_equal(a, b)


def test_serialization_rejects_garbage():
    with pytest.raises(CheckpointError):
        Mlp.from_bytes(b"not a net")


def test_adam_zero_grad_fixed_point():
    rng = np.random.default_rng(13)
    net = Mlp([2, 4, 1], rng=rng)
    before = [p.copy() for p in net.param_list()]
    opt = Adam(net.param_list(), lr=0.5)
    opt.step(net.param_list(), [np.zeros_like(p) for p in net.param_list()])
    assert all(np.array_equal(a, b) for a, b in zip(before, net.param_list()))


def test_adam_first_step_size():
    # constant unit gradient: first step moves by -lr/(1+eps) ~ -lr
    param = np.array([0.0])
    opt = Adam([param], lr=0.1)
    opt.step([param], [np.array([1.0])])
    assert param[0] == pytest.approx(-0.1, abs=1e-6)


def test_adam_skips_non_finite():
    param = np.array([1.0, 2.0])
    opt = Adam([param], lr=0.1)
    applied = opt.step([param], [np.array([np.nan, 0.0])])
    assert not applied
    assert opt.skipped_updates == 1
    assert np.array_equal(param, np.array([1.0, 2.0]))
    assert opt.t == 0


def test_adam_serialization_roundtrip():
    rng = np.random.default_rng(14)
    params = [rng.normal(size=(3, 2)), rng.normal(size=2)]
    opt = Adam(params, lr=1e-3)
    for _ in range(5):
        opt.step(params, [rng.normal(size=p.shape) for p in params])
    restored = Adam.from_bytes(opt.to_bytes(), params)
    assert restored.t == opt.t
    assert restored.lr == opt.lr
    for a, b in zip(opt.m + opt.v, restored.m + restored.v):
        assert np.array_equal(a, b)
    # both continue identically
    p1 = [p.copy() for p in params]
    p2 = [p.copy() for p in params]
    g = [rng.normal(size=p.shape) for p in params]
    opt.step(p1, g)
    restored.step(p2, g)
    assert all(np.array_equal(a, b) for a, b in zip(p1, p2))
