import numpy as np
import pytest

from gradcheck import max_rel_error
from indicator_rl.nn import (
    AdamState,
    ArchitectureMismatchError,
    DenseNet,
    StaleCacheError,
    adam_step,
    init_net,
    load_net,
    polyak_update,
    save_net,
)


def test_zero_net_outputs_zero():
    net = DenseNet([np.zeros((3, 4)), np.zeros((4, 2))], [np.zeros(4), np.zeros(2)])
    assert np.array_equal(net(np.ones(3)), np.zeros(2))


def test_identity_layer():
    net = DenseNet([np.eye(3)], [np.zeros(3)])
    x = np.array([0.3, -2.0, 5.0])
    assert np.array_equal(net(x), x)


def test_forward_matches_straightline_recomputation():
    rng = np.random.default_rng(0)
    w1, b1 = rng.normal(size=(5, 7)), rng.normal(size=7)
    w2, b2 = rng.normal(size=(7, 3)), rng.normal(size=3)
    net = DenseNet([w1, w2], [b1, b2], "tanh")
    x = rng.normal(size=(4, 5))
    expected = np.tanh(np.tanh(x @ w1 + b1) @ w2 + b2)
    assert np.max(np.abs(net(x) - expected)) < 1e-12
    assert np.max(np.abs(net(x[1]) - expected[1])) < 1e-12


def test_forward_dimension_mismatch():
    net = init_net((3, 4, 1), "linear", np.random.default_rng(0))
    with pytest.raises(ValueError):
        net(np.zeros(4))


@pytest.mark.parametrize("dims", [(4, 8, 1), (6, 16, 16, 2)])
@pytest.mark.parametrize("act", ["linear", "tanh"])
def test_gradients_match_finite_differences(dims, act):
    rng = np.random.default_rng(sum(dims))
    for _ in range(3):
        net = init_net(dims, act, rng, final_scale=1.0)
        x, g = rng.normal(size=dims[0]), rng.normal(size=dims[-1])
        assert max_rel_error(net, x, g) < 1e-4


def test_batched_gradients_equal_sum_of_single_gradients():
    rng = np.random.default_rng(1)
    net = init_net((3, 5, 2), "tanh", rng, final_scale=1.0)
    x, g = rng.normal(size=(4, 3)), rng.normal(size=(4, 2))
    batched = net.backward(net.forward(x)[1], g).flat()
    singles = sum(net.backward(net.forward(x[i])[1], g[i]).flat() for i in range(4))
    assert np.allclose(batched, singles, atol=1e-13)


def test_zero_output_gradient_gives_zero_gradients():
    net = init_net((3, 6, 2), "tanh", np.random.default_rng(2))
    grads = net.backward(net.forward(np.ones(3))[1], np.zeros(2))
    assert not grads.flat().any() and not grads.input.any()


def test_single_linear_layer_weight_gradient_is_outer_product():
    rng = np.random.default_rng(3)
    net = DenseNet([rng.normal(size=(4, 1))], [np.zeros(1)])
    x = rng.normal(size=4)
    grads = net.backward(net.forward(x)[1], np.array([2.5]))
    assert np.allclose(grads.weights[0], np.outer(x, [2.5]))
    assert np.allclose(grads.biases[0], [2.5])


def test_stale_cache_rejected():
    net = init_net((2, 3, 1), "linear", np.random.default_rng(0))
    _, cache = net.forward(np.ones(2))
    adam_step(net, net.backward(cache, np.ones(1)), AdamState.for_net(net))
    with pytest.raises(StaleCacheError):
        net.backward(cache, np.ones(1))


def test_adam_first_step_is_lr_times_sign():
    rng = np.random.default_rng(4)
    net = init_net((3, 4, 2), "linear", rng)
    before = [p.copy() for p in net.parameters()]
    _, cache = net.forward(rng.normal(size=3))
    grads = net.backward(cache, rng.normal(size=2))
    adam_step(net, grads, AdamState.for_net(net))
    flat_g = [g for pair in zip(grads.weights, grads.biases) for g in pair]
    for p, p0, g in zip(net.parameters(), before, flat_g):
        # hand-computed: m_hat = g, v_hat = g^2, delta = -lr * g / (|g| + eps)
        expected = -1e-3 * g / (np.abs(g) + 1e-8)
        assert np.allclose(p - p0, expected, rtol=1e-9, atol=1e-15)


def test_adam_matches_textbook_over_several_steps():
    rng = np.random.default_rng(5)
    net = init_net((2, 3, 1), "tanh", rng, final_scale=1.0)
    params = [p.copy() for p in net.parameters()]
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    state = AdamState.for_net(net)
    for k in range(1, 6):
        x = rng.normal(size=2)
        grads = net.backward(net.forward(x)[1], np.ones(1))
        flat = [g for pair in zip(grads.weights, grads.biases) for g in pair]
        for i, g in enumerate(flat):
            m[i] = 0.9 * m[i] + 0.1 * g
            v[i] = 0.999 * v[i] + 0.001 * g * g
            params[i] = params[i] - 1e-3 * (m[i] / (1 - 0.9 ** k)) / (np.sqrt(v[i] / (1 - 0.999 ** k)) + 1e-8)
        adam_step(net, grads, state)
    for p, ref in zip(net.parameters(), params):
        assert np.allclose(p, ref, rtol=0, atol=1e-14)


def test_adam_zero_gradient_leaves_parameters():
    net = init_net((2, 3, 1), "linear", np.random.default_rng(6))
    before = [p.copy() for p in net.parameters()]
    grads = net.backward(net.forward(np.ones(2))[1], np.zeros(1))
    adam_step(net, grads, AdamState.for_net(net))
    assert all(np.array_equal(a, b) for a, b in zip(net.parameters(), before))


def test_equal_seeds_equal_training():
    def train(seed):
        rng = np.random.default_rng(seed)
        net = init_net((3, 8, 1), "linear", rng)
        state = AdamState.for_net(net)
        for _ in range(20):
            x = rng.normal(size=(16, 3))
            out, cache = net.forward(x)
            adam_step(net, net.backward(cache, 2 * (out - 1.0) / 16), state)
        return np.concatenate([p.ravel() for p in net.parameters()])

    assert np.array_equal(train(9), train(9))


def test_polyak_identities_and_geometric_recursion():
    rng = np.random.default_rng(7)
    source = init_net((3, 4, 2), "tanh", rng)
    target = init_net((3, 4, 2), "tanh", rng)
    initial = [p.copy() for p in target.parameters()]

    polyak_update(target, source, tau=1.0)
    assert all(np.array_equal(a, b) for a, b in zip(target.parameters(), initial))

    k = 25
    for _ in range(k):
        polyak_update(target, source, tau=0.98)
    for p, p0, s in zip(target.parameters(), initial, source.parameters()):
        assert np.allclose(p, s + 0.98 ** k * (p0 - s), rtol=0, atol=1e-13)

    polyak_update(target, source, tau=0.0)
    assert all(np.array_equal(a, b) for a, b in zip(target.parameters(), source.parameters()))


def test_polyak_contracts_toward_source():
    rng = np.random.default_rng(8)
    source, target = init_net((2, 5, 1), "linear", rng), init_net((2, 5, 1), "linear", rng)

    def gap():
        return np.linalg.norm(np.concatenate([(a - b).ravel() for a, b in zip(target.parameters(), source.parameters())]))

    g0 = gap()
    polyak_update(target, source, tau=0.9)
    assert gap() == pytest.approx(0.9 * g0)


def test_polyak_architecture_mismatch():
    rng = np.random.default_rng(0)
    with pytest.raises(ArchitectureMismatchError):
        polyak_update(init_net((2, 4, 1), "linear", rng), init_net((2, 5, 1), "linear", rng))


def test_pessimistic_critic_init_range():
    rng = np.random.default_rng(0)
    critic = init_net((10, 256, 256, 256, 1), "linear", rng, output_bias=-50.0)
    q = critic(rng.normal(size=(1000, 10)) * 3)
    assert np.all(np.abs(q + 50.0) < 0.5)


def test_actor_init_near_zero():
    rng = np.random.default_rng(0)
    actor = init_net((6, 64, 64, 2), "tanh", rng)
    assert np.all(np.abs(actor(rng.normal(size=(500, 6)))) < 0.01)


def test_init_deterministic():
    a = init_net((3, 5, 1), "linear", np.random.default_rng(1))
    b = init_net((3, 5, 1), "linear", np.random.default_rng(1))
    assert all(np.array_equal(x, y) for x, y in zip(a.parameters(), b.parameters()))
    assert np.all(a.biases[0] == 0)


def test_forward_lipschitz_bound():
    rng = np.random.default_rng(10)
    net = init_net((5, 12, 12, 3), "linear", rng, final_scale=1.0)
    bound = np.prod([np.linalg.norm(w, 2) for w in net.weights])
    for _ in range(200):
        x, d = rng.normal(size=5), rng.normal(size=5)
        d *= 1e-3 / np.linalg.norm(d)
        assert np.linalg.norm(net(x + d) - net(x)) <= bound * 1e-3 * (1 + 1e-9)


def test_checkpoint_round_trip(tmp_path):
    net = init_net((4, 7, 2), "tanh", np.random.default_rng(11), output_bias=-3.0)
    save_net(net, tmp_path / "n.bin")
    back = load_net(tmp_path / "n.bin")
    assert back.dims == net.dims and back.output_activation == "tanh"
    assert all(np.array_equal(a, b) for a, b in zip(back.parameters(), net.parameters()))
    (tmp_path / "bad.bin").write_bytes(b"NOTANET!" + bytes(16))
    with pytest.raises(ValueError):
        load_net(tmp_path / "bad.bin")
