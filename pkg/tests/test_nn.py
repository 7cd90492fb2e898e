import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtrsim.nn import (
    Adam, Mlp, clip_by_global_norm, load_checkpoint, load_net_arrays, net_arrays, polyak_update,
    save_checkpoint,
)


def numeric_grads(net, loss, h=1e-6):
    out = []
    for p in net.params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            up = loss()
            p[i] = old - h
            down = loss()
            p[i] = old
            g[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def max_rel_err(a, b):
    # the floor keeps exactly-zero gradients (biases ahead of batch norm) from
    # dividing central-difference round-off, about 1e-9 here, by zero
    worst = 0.0
    for x, y in zip(a, b):
        denom = np.maximum(np.maximum(np.abs(x), np.abs(y)), 1e-3)
        worst = max(worst, float((np.abs(x - y) / denom).max()))
    return worst


def test_zero_weights_give_zero_output():
    net = Mlp([3, 4, 2])
    for p in net.params:
        p[...] = 0.0
    np.testing.assert_array_equal(net.forward(np.array([1.0, -2.0, 5.0])), [0.0, 0.0])


def test_single_unit_linear_net():
    net = Mlp([1, 1])
    net.param("W0")[...] = 2.0
    net.param("b0")[...] = 1.0
    assert net.forward(np.array([3.0]))[0] == 7.0


def test_batch_rows_match_single_calls():
    net = Mlp([3, 8, 2], rng=np.random.default_rng(1))
    x = np.random.default_rng(2).normal(size=(5, 3))
    batch = net.forward(x)
    for i in range(5):
        np.testing.assert_allclose(net.forward(x[i]), batch[i], rtol=0, atol=1e-14)


def test_input_width_checked():
    with pytest.raises(ValueError, match="width"):
        Mlp([3, 2]).forward(np.zeros(4))


def test_dropout_training_needs_rng():
    with pytest.raises(ValueError, match="rng"):
        Mlp([2, 4, 1], dropout=0.5).forward(np.zeros(2), train=True)


def test_bad_architecture_rejected():
    with pytest.raises(ValueError):
        Mlp([3])
    with pytest.raises(ValueError):
        Mlp([3, 2], dropout=1.0)


def test_linear_squared_loss_gradient_closed_form():
    net = Mlp([2, 1])
    net.param("W0")[...] = [[0.5], [-1.0]]
    net.param("b0")[...] = 0.25
    x = np.array([2.0, 3.0])
    target = 1.0
    pred = net.forward(x)[0]
    assert pred == pytest.approx(0.5 * 2 - 3 + 0.25)
    gW, gb = net.backward(np.array([2 * (pred - target)]))
    np.testing.assert_allclose(gW[:, 0], 2 * (pred - target) * x)
    np.testing.assert_allclose(gb, [2 * (pred - target)])


def test_backward_before_forward_raises():
    with pytest.raises(RuntimeError):
        Mlp([2, 2]).backward(np.zeros(2))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), batch_norm=st.booleans(), train=st.booleans())
def test_gradient_matches_finite_differences(seed, batch_norm, train):
    rng = np.random.default_rng(seed)
    net = Mlp([3, 6, 5, 2], batch_norm=batch_norm, rng=rng)
    # zero biases put dead rows exactly on the relu kink
    for k in range(3):
        net.param(f"b{k}")[...] = rng.normal(0, 0.3, net.sizes[k + 1])
    if batch_norm:
        # non-trivial affine and running statistics so eval mode is not the identity
        for k in (0, 1):
            net.param(f"gamma{k}")[...] = rng.uniform(0.5, 1.5, net.sizes[k + 1])
            net.param(f"beta{k}")[...] = rng.normal(0, 0.2, net.sizes[k + 1])
            net.running[k][0][...] = rng.normal(0, 0.2, net.sizes[k + 1])
            net.running[k][1][...] = rng.uniform(0.5, 2.0, net.sizes[k + 1])
    x = rng.normal(size=(7, 3))
    w = rng.normal(size=(7, 2))
    running = {k: [m.copy(), v.copy()] for k, (m, v) in net.running.items()}

    def loss():
        out = net.forward(x, train=train)
        for k, (m, v) in running.items():
            net.running[k][0][...] = m
            net.running[k][1][...] = v
        return float((w * out).sum())

    num = numeric_grads(net, loss)
    loss()
    analytic = net.backward(w)
    assert max_rel_err(analytic, num) < 1e-4


def test_dropout_gradient_with_fixed_mask():
    net = Mlp([3, 6, 2], dropout=0.3, rng=np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(4, 3))
    w = np.random.default_rng(2).normal(size=(4, 2))

    def loss():
        return float((w * net.forward(x, train=True, rng=np.random.default_rng(9))).sum())

    num = numeric_grads(net, loss)
    loss()
    assert max_rel_err(net.backward(w), num) < 1e-4


def test_adam_zero_gradient_is_a_no_op():
    p = [np.array([1.0, -2.0])]
    Adam(p, lr=0.1).step([np.zeros(2)])
    np.testing.assert_array_equal(p[0], [1.0, -2.0])


def test_adam_first_step_moves_by_lr_times_sign():
    p = [np.array([1.0, -2.0, 0.5])]
    Adam(p, lr=0.01).step([np.array([3.0, -0.2, 1e-3])])
    # bias-corrected first step is lr * g / (|g| + eps)
    np.testing.assert_allclose(p[0], [0.99, -1.99, 0.49], rtol=0, atol=1e-7)


def test_adam_decreases_quadratic():
    p = [np.array([4.0, -3.0])]
    opt = Adam(p, lr=0.05)
    start = float((p[0] ** 2).sum())
    for _ in range(200):
        opt.step([2 * p[0]])
    assert float((p[0] ** 2).sum()) < 0.01 * start


def test_adam_shape_mismatch():
    opt = Adam([np.zeros(2)])
    with pytest.raises(ValueError):
        opt.step([np.zeros(3)])
    with pytest.raises(ValueError):
        opt.step([])


def test_global_norm_clip():
    g = [np.array([3.0]), np.array([4.0])]
    clipped = clip_by_global_norm(g, 1.0)
    np.testing.assert_allclose([clipped[0][0], clipped[1][0]], [0.6, 0.8])
    assert clip_by_global_norm(g, 10.0) is g


def _pair():
    a = Mlp([2, 3, 1], batch_norm=True, rng=np.random.default_rng(0))
    b = a.copy()
    for p in a.params:
        p[...] = 0.0
    for p in b.params:
        p[...] = 1.0
    return a, b


def test_polyak_hard_copy():
    target, online = _pair()
    polyak_update(target, online, 1.0)
    for t, o in zip(target.params, online.params):
        np.testing.assert_array_equal(t, o)


def test_polyak_tau_zero_keeps_target():
    target, online = _pair()
    polyak_update(target, online, 0.0)
    for t in target.params:
        np.testing.assert_array_equal(t, 0.0)


def test_polyak_small_tau():
    target, online = _pair()
    polyak_update(target, online, 0.001)
    for t in target.params:
        np.testing.assert_allclose(t, 0.001, rtol=0, atol=1e-15)


def test_polyak_rejects_mismatch_and_bad_tau():
    with pytest.raises(ValueError):
        polyak_update(Mlp([2, 3, 1]), Mlp([2, 4, 1]), 0.5)
    with pytest.raises(ValueError):
        polyak_update(Mlp([2, 1]), Mlp([2, 1]), 1.5)


def test_copy_is_independent():
    a = Mlp([2, 2])
    b = a.copy()
    b.params[0][...] = 5.0
    assert not np.any(a.params[0] == 5.0)


def test_checkpoint_round_trip(tmp_path):
    net = Mlp([4, 5, 3], batch_norm=True, rng=np.random.default_rng(3))
    net.forward(np.random.default_rng(4).normal(size=(6, 4)), train=True)
    path = tmp_path / "net.dtrnn"
    save_checkpoint(path, net_arrays(net, "q."), {"note": "x"})
    arrays, meta = load_checkpoint(path)
    assert meta == {"note": "x"}
    other = load_net_arrays(Mlp([4, 5, 3], batch_norm=True, rng=np.random.default_rng(99)), arrays, "q.")
    x = np.random.default_rng(5).normal(size=(3, 4))
    np.testing.assert_array_equal(other.forward(x), net.forward(x))


def test_checkpoint_shape_mismatch(tmp_path):
    path = tmp_path / "net.dtrnn"
    save_checkpoint(path, net_arrays(Mlp([4, 5, 3])))
    arrays, _ = load_checkpoint(path)
    with pytest.raises(ValueError, match="shape"):
        load_net_arrays(Mlp([4, 6, 3]), arrays)


def test_checkpoint_rejects_bad_magic_and_trailing_bytes(tmp_path):
    path = tmp_path / "net.dtrnn"
    save_checkpoint(path, {"a": np.arange(3.0)})
    data = path.read_bytes()
    path.write_bytes(b"XXXXX" + data[5:])
    with pytest.raises(ValueError):
        load_checkpoint(path)
    path.write_bytes(data + b"\x00")
    with pytest.raises(ValueError):
        load_checkpoint(path)
    path.write_bytes(data[:-4])
    with pytest.raises(ValueError):
        load_checkpoint(path)
