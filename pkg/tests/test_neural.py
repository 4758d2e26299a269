import numpy as np
import pytest

from neural import (
    Mlp, AdamState, adam_step, TargetPair, soft_update, save_checkpoint, load_checkpoint,
    CHECKPOINT_VERSION
)


def _numeric_param_grad(net, X, y, h=1e-5):
    grads = []
    for p in net.params():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + h
            up = np.mean(np.sum((net.forward_batch(X) - y) ** 2, axis=1))
            p[idx] = old - h
            down = np.mean(np.sum((net.forward_batch(X) - y) ** 2, axis=1))
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def test_shapes_and_scalar_output():
    net = Mlp([4, 8, 1], seed=0)
    assert net.forward_batch(np.ones((5, 4))).shape == (5, 1)
    assert isinstance(net.forward(np.ones(4)), float)
    assert Mlp([3, 2], seed=0).forward(np.ones(3)).shape == (2,)


def test_wrong_input_length_raises():
    with pytest.raises(ValueError):
        Mlp([3, 4, 1], seed=0).forward(np.ones(2))


def test_invalid_layer_sizes():
    with pytest.raises(ValueError):
        Mlp([3])
    with pytest.raises(ValueError):
        Mlp([3, 0, 1])


def _random_fixture(i, outputs=1):
    """Small random network and batch; ≤ 12-unit hidden layers"""
    rng = np.random.default_rng(100 + i)
    hidden = [int(s) for s in rng.integers(2, 13, size=rng.integers(1, 4))]
    sizes = [int(rng.integers(1, 7)), *hidden, outputs]
    net = Mlp(sizes, seed=i)
    X = rng.normal(size=(5, sizes[0]))
    y = rng.normal(size=(5, outputs))
    return net, X, y


@pytest.mark.parametrize("fixture", range(20))
def test_parameter_gradient_matches_finite_differences(fixture):
    net, X, y = _random_fixture(fixture, outputs=1 + fixture % 2)
    loss, grads = net.grad_params(X, y)
    assert loss == pytest.approx(np.mean(np.sum((net.forward_batch(X) - y) ** 2, axis=1)))
    for analytic, numeric in zip(grads, _numeric_param_grad(net, X, y)):
        np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-7)


@pytest.mark.parametrize("fixture", range(20))
def test_input_gradient_matches_finite_differences(fixture):
    net, X, _ = _random_fixture(fixture)
    x = X[0]
    h = 1e-5
    numeric = np.array([(net.forward(x + h * e) - net.forward(x - h * e)) / (2 * h)
                        for e in np.eye(len(x))])
    np.testing.assert_allclose(net.grad_input(x), numeric, rtol=1e-4, atol=1e-8)


def test_input_gradient_of_a_slice():
    net = Mlp([5, 16, 16, 1], seed=2)
    x = np.random.default_rng(3).normal(size=5)
    full = net.grad_input(x)
    np.testing.assert_array_equal(net.grad_input(x, (2, 5)), full[2:])
    np.testing.assert_array_equal(net.grad_input(x, slice(2, None)), full[2:])


def test_bias_only_network_is_constant():
    net = Mlp([3, 4, 1], seed=0)
    for w in net.weights:
        w[:] = 0.0
    for b in net.biases:
        b[:] = 0.0
    net.biases[-1][:] = 0.7
    assert net.forward(np.array([1.0, -5.0, 2.0])) == 0.7
    np.testing.assert_array_equal(net.grad_input(np.ones(3)), np.zeros(3))


def test_rectifier_passes_positive_and_clamps_negative():
    net = Mlp([1, 1, 1], seed=0)
    for w, b in zip(net.weights, net.biases):
        w[:] = 1.0
        b[:] = 0.0
    assert net.forward(np.array([2.0])) == 2.0
    assert net.forward(np.array([-2.0])) == 0.0


def test_single_neuron_gradient_by_hand():
    net = Mlp([1, 1], seed=0)
    net.weights[0][:] = 1.0
    net.biases[0][:] = 0.0
    _, grads = net.grad_params(np.array([[1.0]]), np.array([2.0]))
    assert grads[0][0, 0] == pytest.approx(-2.0)


def test_output_scale_narrows_the_last_layer():
    net = Mlp([4, 8, 1], seed=0, output_scale=1e-3)
    assert np.max(np.abs(net.weights[-1])) <= 1e-3
    assert np.max(np.abs(net.biases[-1])) <= 1e-3
    assert np.max(np.abs(net.weights[0])) > 1e-3
    with pytest.raises(ValueError):
        Mlp([4, 1], output_scale=0.0)


@pytest.mark.parametrize("bad", [(3, 3), (0, 6), (-1, 2), slice(0, 4, 2)])
def test_invalid_input_slice(bad):
    with pytest.raises(ValueError):
        Mlp([5, 4, 1], seed=0).grad_input(np.zeros(5), bad)


def test_input_gradient_needs_scalar_output():
    with pytest.raises(ValueError):
        Mlp([3, 2], seed=0).grad_input(np.zeros(3))


# ── Adam ──────────────────────────────────────────────────────────────────────
def test_first_adam_step_moves_by_learning_rate():
    params = [np.array([1.0, -2.0, 0.5])]
    grads = [np.array([0.3, -4.0, 2.0])]
    adam_step(AdamState(lr=0.01), params, grads)
    np.testing.assert_allclose(params[0], [0.99, -1.99, 0.49], atol=1e-6)


def test_zero_gradient_leaves_parameters():
    params = [np.array([1.0, 2.0])]
    adam_step(AdamState(), params, [np.zeros(2)])
    np.testing.assert_array_equal(params[0], [1.0, 2.0])


def test_adam_shape_mismatch():
    state = AdamState()
    with pytest.raises(ValueError):
        adam_step(state, [np.zeros(3)], [np.zeros(2)])
    adam_step(state, [np.zeros(3)], [np.ones(3)])
    with pytest.raises(ValueError):
        adam_step(state, [np.zeros(4)], [np.ones(4)])


def test_adam_fits_a_linear_target():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(64, 2))
    y = X @ np.array([3.0, -1.0]) + 0.5
    net = Mlp([2, 1], seed=1)
    state = AdamState(lr=0.05)
    first, _ = net.grad_params(X, y)
    for _ in range(500):
        loss, grads = net.grad_params(X, y)
        adam_step(state, net.params(), grads)
    assert loss < first / 50


def test_adam_fits_a_smooth_quadratic():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1.0, 1.0, size=(200, 2))
    y = np.sum(X ** 2, axis=1)
    net = Mlp([2, 32, 32, 1], seed=3)
    state = AdamState(lr=0.001)
    first, _ = net.grad_params(X, y)
    for _ in range(5000):
        loss, grads = net.grad_params(X, y)
        adam_step(state, net.params(), grads)
    assert loss * 10 <= first


def test_invalid_adam_settings():
    with pytest.raises(ValueError):
        AdamState(lr=0.0)
    with pytest.raises(ValueError):
        AdamState(beta1=1.0)


# ── targets and checkpoints ───────────────────────────────────────────────────
def test_soft_update_interpolates():
    live = Mlp([2, 3, 1], seed=0)
    other = Mlp([2, 3, 1], seed=1)
    pair = TargetPair(live, tau=0.25, target=other.copy())
    soft_update(pair)
    for t, l, o in zip(pair.target.params(), live.params(), other.params()):
        np.testing.assert_allclose(t, 0.25 * l + 0.75 * o)


def test_soft_update_extremes():
    live = Mlp([2, 3, 1], seed=0)
    frozen = TargetPair(live, tau=0.0, target=Mlp([2, 3, 1], seed=1))
    before = [p.copy() for p in frozen.target.params()]
    frozen.soft_update()
    for t, b in zip(frozen.target.params(), before):
        np.testing.assert_array_equal(t, b)
    copy = TargetPair(live, tau=1.0, target=Mlp([2, 3, 1], seed=1))
    copy.soft_update()
    for t, l in zip(copy.target.params(), live.params()):
        np.testing.assert_array_equal(t, l)


def test_soft_update_contracts_toward_live():
    live = Mlp([3, 5, 1], seed=0)
    pair = TargetPair(live, tau=0.1, target=Mlp([3, 5, 1], seed=1))

    def gap():
        return np.sqrt(sum(np.sum((t - l) ** 2) for t, l in zip(pair.target.params(), live.params())))

    before = gap()
    pair.soft_update()
    assert gap() == pytest.approx(0.9 * before, rel=1e-12)


def test_target_pair_rejects_mismatch():
    with pytest.raises(ValueError):
        TargetPair(Mlp([2, 3, 1], seed=0), target=Mlp([2, 4, 1], seed=0))
    with pytest.raises(ValueError):
        TargetPair(Mlp([2, 1], seed=0), tau=1.5)


def test_target_starts_as_copy_not_alias():
    pair = TargetPair(Mlp([2, 3, 1], seed=0))
    pair.live.weights[0] += 1.0
    assert not np.array_equal(pair.live.weights[0], pair.target.weights[0])


def test_checkpoint_round_trip(tmp_path):
    net = Mlp([4, 7, 3, 1], seed=5)
    path = save_checkpoint(tmp_path / "nets" / "critic.npz", net, {"agent": "corl-fw", "step": 12})
    loaded, metadata = load_checkpoint(path)
    assert loaded.layer_sizes == net.layer_sizes
    for a, b in zip(loaded.params(), net.params()):
        np.testing.assert_array_equal(a, b)
    assert metadata == {"agent": "corl-fw", "step": 12}
    x = np.linspace(-1, 1, 4)
    assert loaded.forward(x) == net.forward(x)


def test_unknown_checkpoint_version(tmp_path):
    path = tmp_path / "old.npz"
    np.savez(path, format_version=np.array(CHECKPOINT_VERSION + 1),
             layer_sizes=np.array([2, 1]), metadata=np.array("{}"),
             W0=np.zeros((2, 1)), b0=np.zeros(1))
    with pytest.raises(ValueError):
        load_checkpoint(path)
