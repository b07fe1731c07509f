"""Autodiff kernel and policy-network tests.

Central finite differences are the ground truth for every gradient check;
the degenerate transformer forward pass is derived by hand.
"""

import json
import math

import numpy as np
import pytest

from vertiflow.neural import (
    ContextEmbedding,
    NetConfig,
    PolicyNetwork,
    TemporalTransformer,
    Tensor,
    concat,
    load_checkpoint,
    no_grad,
    save_checkpoint,
)


def fd_grad(f, x, eps=1e-5):
    """Central finite differences of scalar-valued f with respect to array x."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        keep = x[idx]
        x[idx] = keep + eps
        f_plus = f()
        x[idx] = keep - eps
        f_minus = f()
        x[idx] = keep
        g[idx] = (f_plus - f_minus) / (2 * eps)
        it.iternext()
    return g


def rel_err(a, b):
    # Floor the denominator: a true gradient of exactly zero (e.g. the key
    # bias, which softmax shift-invariance cancels) leaves only FD noise.
    denom = max(float(np.linalg.norm(a) + np.linalg.norm(b)), 1e-3)
    return float(np.linalg.norm(a - b)) / denom


# -- kernel basics -----------------------------------------------------------


def test_add_mul_backward_closed_form():
    x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    y = Tensor(np.array([4.0, 5.0, -6.0]), requires_grad=True)
    z = (x * y + x).sum()
    z.backward()
    np.testing.assert_allclose(x.grad, y.data + 1.0, rtol=0, atol=1e-12)
    np.testing.assert_allclose(y.grad, x.data, rtol=0, atol=1e-12)


def test_broadcast_add_unbroadcasts_grad():
    x = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.zeros(4), requires_grad=True)
    (x + b).sum().backward()
    np.testing.assert_allclose(b.grad, 3.0 * np.ones(4), atol=1e-12)
    np.testing.assert_allclose(x.grad, np.ones((3, 4)), atol=1e-12)


def test_relu_gradient_is_indicator():
    x = Tensor(np.array([-2.0, -0.5, 0.5, 3.0]), requires_grad=True)
    x.relu().sum().backward()
    np.testing.assert_allclose(x.grad, [0.0, 0.0, 1.0, 1.0], atol=1e-12)


def test_matmul_backward_matches_finite_differences():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))

    ta = Tensor(a.copy(), requires_grad=True)
    tb = Tensor(b.copy(), requires_grad=True)
    (ta @ tb).sum().backward()

    def f():
        return float((Tensor(a) @ Tensor(b)).sum().data)

    assert rel_err(ta.grad, fd_grad(f, a)) <= 1e-6
    assert rel_err(tb.grad, fd_grad(f, b)) <= 1e-6


def test_batched_matmul_with_shared_weight():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 3, 4))
    w = rng.normal(size=(4, 5))

    tx = Tensor(x.copy(), requires_grad=True)
    tw = Tensor(w.copy(), requires_grad=True)
    ((tx @ tw) * 0.5).sum().backward()

    def f():
        return float(((Tensor(x) @ Tensor(w)) * 0.5).sum().data)

    assert rel_err(tx.grad, fd_grad(f, x)) <= 1e-6
    assert rel_err(tw.grad, fd_grad(f, w)) <= 1e-6


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(2)
    x = Tensor(rng.normal(size=(5, 7)) * 10.0)
    s = x.softmax(axis=-1)
    np.testing.assert_allclose(s.data.sum(axis=-1), np.ones(5), atol=1e-12)


def test_softmax_backward_matches_finite_differences():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 5))
    w = rng.normal(size=(2, 5))

    tx = Tensor(x.copy(), requires_grad=True)
    (tx.softmax(axis=-1) * Tensor(w)).sum().backward()

    def f():
        return float((Tensor(x).softmax(axis=-1) * Tensor(w)).sum().data)

    assert rel_err(tx.grad, fd_grad(f, x)) <= 1e-6


def test_cross_entropy_gradient_is_probs_minus_onehot():
    logits = np.array([[2.0, -1.0, 0.5]])
    target = 2
    t = Tensor(logits.copy(), requires_grad=True)
    loss = -t.log_softmax(axis=-1)[0, target]
    loss.backward()
    probs = np.exp(logits[0]) / np.exp(logits[0]).sum()
    onehot = np.eye(3)[target]
    np.testing.assert_allclose(t.grad[0], probs - onehot, atol=1e-12)


def test_layer_norm_statistics_and_gradient():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(3, 6)) * 4.0 + 2.0
    t = Tensor(x.copy(), requires_grad=True)
    y = t.layer_norm()
    np.testing.assert_allclose(y.data.mean(axis=-1), np.zeros(3), atol=1e-10)
    np.testing.assert_allclose(y.data.std(axis=-1), np.ones(3), atol=1e-4)

    w = rng.normal(size=(3, 6))
    (t.layer_norm() * Tensor(w)).sum().backward()

    def f():
        return float((Tensor(x).layer_norm() * Tensor(w)).sum().data)

    assert rel_err(t.grad, fd_grad(f, x)) <= 1e-6


def test_reshape_transpose_slice_concat_gradients():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(2, 3, 4))

    tx = Tensor(x.copy(), requires_grad=True)
    a = tx.reshape((6, 4)).transpose((1, 0))
    b = concat([a[:, :3], a[:, 3:]], axis=1)
    (b * b).sum().backward()

    def f():
        t = Tensor(x)
        a2 = t.reshape((6, 4)).transpose((1, 0))
        b2 = concat([a2[:, :3], a2[:, 3:]], axis=1)
        return float((b2 * b2).sum().data)

    assert rel_err(tx.grad, fd_grad(f, x)) <= 1e-6


def test_fancy_index_accumulates_duplicate_rows():
    x = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
    rows = np.array([0, 0, 2])
    x[rows, np.array([1, 1, 0])].sum().backward()
    expected = np.array([[0.0, 2.0], [0.0, 0.0], [1.0, 0.0]])
    np.testing.assert_allclose(x.grad, expected, atol=1e-12)


def test_exp_log_div_pow_gradients():
    rng = np.random.default_rng(6)
    x = rng.uniform(0.5, 2.0, size=(4,))
    t = Tensor(x.copy(), requires_grad=True)
    y = (t.exp() / (t ** 2) + t.log()).sum()
    y.backward()

    def f():
        s = Tensor(x)
        return float((s.exp() / (s ** 2) + s.log()).sum().data)

    assert rel_err(t.grad, fd_grad(f, x)) <= 1e-6


def test_mean_matches_sum_over_n():
    x = Tensor(np.arange(8.0).reshape(2, 4), requires_grad=True)
    x.mean().backward()
    np.testing.assert_allclose(x.grad, np.full((2, 4), 1.0 / 8.0), atol=1e-15)


def test_no_grad_blocks_graph_construction():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = (x * 2.0).sum()
    assert not y.requires_grad
    with pytest.raises(ValueError):
        y.backward()


def test_no_grad_forward_values_match_grad_mode():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(2, 5))
    t = Tensor(x, requires_grad=True)
    y_grad = t.softmax(axis=-1).log().sum()
    with no_grad():
        y_plain = Tensor(x).softmax(axis=-1).log().sum()
    assert float(y_grad.data) == float(y_plain.data)


def test_backward_without_graph_raises():
    x = Tensor(np.ones(3))
    with pytest.raises(ValueError):
        x.backward()


def test_backward_on_nonscalar_needs_explicit_grad():
    x = Tensor(np.ones(3), requires_grad=True)
    y = x * 2.0
    with pytest.raises(ValueError):
        y.backward()
    y.backward(np.ones(3))
    np.testing.assert_allclose(x.grad, 2.0 * np.ones(3), atol=1e-12)


# -- embedding ---------------------------------------------------------------


def test_embedding_zero_params_give_zero_output():
    emb = ContextEmbedding(width_in=5, width_out=4, seed=0)
    emb.weight.data[:] = 0.0
    emb.bias.data[:] = 0.0
    out = emb.forward(Tensor(np.random.default_rng(0).normal(size=(2, 3, 5))))
    assert out.data.shape == (2, 3, 4)
    np.testing.assert_allclose(out.data, 0.0, atol=1e-15)


def test_embedding_relu_clips_negative_preactivations():
    emb = ContextEmbedding(width_in=2, width_out=2, seed=0)
    emb.weight.data[:] = np.array([[1.0, -1.0], [0.0, 0.0]])
    emb.bias.data[:] = np.array([0.0, 0.0])
    out = emb.forward(Tensor(np.array([[[3.0, 0.0]]])))
    np.testing.assert_allclose(out.data[0, 0], [3.0, 0.0], atol=1e-15)


def test_embedding_width_mismatch_raises():
    emb = ContextEmbedding(width_in=5, width_out=4, seed=0)
    with pytest.raises(ValueError, match="width"):
        emb.forward(Tensor(np.zeros((1, 3, 6))))


def test_embedding_maps_frames_independently():
    rng = np.random.default_rng(8)
    emb = ContextEmbedding(width_in=6, width_out=5, seed=1)
    frames = rng.normal(size=(1, 4, 6))
    out = emb.forward(Tensor(frames)).data

    # identical frames embed identically; permuting frames permutes rows
    same = np.repeat(frames[:, :1], 4, axis=1)
    out_same = emb.forward(Tensor(same)).data
    assert np.ptp(out_same, axis=1).max() == 0.0

    perm = np.array([2, 0, 3, 1])
    out_perm = emb.forward(Tensor(frames[:, perm])).data
    np.testing.assert_allclose(out_perm, out[:, perm], atol=1e-15)


# -- transformer -------------------------------------------------------------


def small_transformer(seed=0, **kw):
    args = dict(d_model=8, k_frames=3, n_layers=1, n_heads=2, d_ff=16, d_out=8)
    args.update(kw)
    return TemporalTransformer(seed=seed, **args)


def test_transformer_output_shape_and_finiteness():
    tr = small_transformer()
    x = Tensor(np.random.default_rng(0).normal(size=(4, 3, 8)))
    out = tr.forward(x)
    assert out.data.shape == (4, 8)
    assert np.all(np.isfinite(out.data))


def test_transformer_rejects_wrong_frame_count():
    tr = small_transformer()
    with pytest.raises(ValueError, match="frames"):
        tr.forward(Tensor(np.zeros((1, 5, 8))))


def test_attention_rows_sum_to_one():
    tr = small_transformer(seed=3, n_layers=2)
    x = Tensor(np.random.default_rng(1).normal(size=(2, 3, 8)) * 3.0)
    attn = []
    tr.forward(x, attn_out=attn)
    assert len(attn) == 2
    for a in attn:
        assert a.shape == (2, 2, 4, 4)
        np.testing.assert_allclose(a.sum(axis=-1), np.ones((2, 2, 4)), atol=1e-12)


def test_degenerate_transformer_reduces_to_cls_projection():
    # Zero attention and feed-forward weights leave every token untouched by
    # both residual blocks, so the CLS row reaching the final norm is exactly
    # h_cls + pos_0.
    tr = small_transformer(seed=5)
    for layer in tr.layers:
        for p in layer.values():
            p.data[:] = 0.0
        layer["ln1_gain"].data[:] = 1.0
        layer["ln2_gain"].data[:] = 1.0
    tr.final_gain.data[:] = 1.0
    tr.final_bias.data[:] = 0.0

    x = Tensor(np.random.default_rng(2).normal(size=(3, 3, 8)))
    out = tr.forward(x).data

    cls_row = tr.cls.data + tr.pos.data[0]
    normed = (cls_row - cls_row.mean()) / math.sqrt(cls_row.var() + 1e-5)
    expected = normed @ tr.out_weight.data + tr.out_bias.data
    np.testing.assert_allclose(out, np.tile(expected, (3, 1)), atol=1e-12)


def test_output_width_independent_of_frame_count():
    for k in (2, 3, 6):
        tr = small_transformer(k_frames=k, d_out=5)
        x = Tensor(np.zeros((2, k, 8)))
        assert tr.forward(x).data.shape == (2, 5)


def test_transformer_requires_head_divisibility():
    with pytest.raises(ValueError, match="heads"):
        small_transformer(d_model=9)


# -- policy network ----------------------------------------------------------


def tiny_net_config(**kw):
    args = dict(frame_width=10, n_actions=2, k_frames=3, d_model=8,
                n_layers=1, n_heads=2, d_ff=16, d_out=8)
    args.update(kw)
    return NetConfig(**args)


def test_policy_network_shapes():
    net = PolicyNetwork(tiny_net_config(), seed=0)
    stacks = np.random.default_rng(0).normal(size=(4, 3, 10))
    logits, values = net.forward(stacks)
    assert logits.data.shape == (4, 2)
    assert values.data.shape == (4,)


def test_zero_actor_head_gives_uniform_distribution():
    net = PolicyNetwork(tiny_net_config(), seed=0)
    net.actor_weight.data[:] = 0.0
    net.actor_bias.data[:] = 0.0
    logits, _ = net.forward(np.zeros((1, 3, 10)))
    probs = logits.softmax(axis=-1).data[0]
    np.testing.assert_allclose(probs, [0.5, 0.5], atol=1e-12)


def test_logit_shift_invariance_and_argmax_consistency():
    net = PolicyNetwork(tiny_net_config(), seed=1)
    stacks = np.random.default_rng(3).normal(size=(5, 3, 10))
    logits, _ = net.forward(stacks)
    p1 = logits.softmax(axis=-1).data
    p2 = (logits + 7.5).softmax(axis=-1).data
    np.testing.assert_allclose(p1, p2, atol=1e-12)
    np.testing.assert_array_equal(np.argmax(logits.data, axis=-1),
                                  np.argmax(p1, axis=-1))


def test_zero_critic_head_returns_bias():
    net = PolicyNetwork(tiny_net_config(), seed=0)
    net.critic_weight.data[:] = 0.0
    net.critic_bias.data[:] = 1.75
    _, values = net.forward(np.random.default_rng(1).normal(size=(3, 3, 10)))
    np.testing.assert_allclose(values.data, np.full(3, 1.75), atol=1e-12)


def test_critic_is_linear_in_features():
    net = PolicyNetwork(tiny_net_config(), seed=2)
    f1 = np.random.default_rng(4).normal(size=(1, 8))
    f2 = np.random.default_rng(5).normal(size=(1, 8))
    v = lambda f: float((Tensor(f) @ net.critic_weight + net.critic_bias).data[0, 0])
    assert v(f1) + v(f2) == pytest.approx(
        v(f1 + f2) + float(net.critic_bias.data[0]), abs=1e-10)


def test_forward_rejects_bad_stack_shape():
    net = PolicyNetwork(tiny_net_config(), seed=0)
    with pytest.raises(ValueError):
        net.forward(np.zeros((2, 4, 10)))
    with pytest.raises(ValueError):
        net.forward(np.zeros((2, 3, 11)))


def test_ablation_variants_forward():
    stacks = np.random.default_rng(6).normal(size=(2, 3, 10))
    for kw in ({"use_embedding": False}, {"use_transformer": False},
               {"use_embedding": False, "use_transformer": False}):
        net = PolicyNetwork(tiny_net_config(**kw), seed=0)
        logits, values = net.forward(stacks)
        assert logits.data.shape == (2, 2)
        assert values.data.shape == (2,)
        assert np.all(np.isfinite(logits.data))
        assert np.all(np.isfinite(values.data))


def test_forward_never_nan_across_shapes():
    rng = np.random.default_rng(7)
    for seed in range(3):
        cfg = tiny_net_config(frame_width=int(rng.integers(4, 20)),
                              n_actions=int(rng.integers(2, 5)),
                              k_frames=int(rng.integers(1, 6)))
        net = PolicyNetwork(cfg, seed=seed)
        stacks = rng.normal(size=(3, cfg.k_frames, cfg.frame_width)) * 5.0
        logits, values = net.forward(stacks)
        assert np.all(np.isfinite(logits.data))
        assert np.all(np.isfinite(values.data))


def network_scalar_loss(net, stacks, actions):
    """Scalar objective exercising both heads and the softmax path."""
    logits, values = net.forward(stacks)
    logp = logits.log_softmax(axis=-1)[np.arange(len(actions)), actions]
    return logp.mean() + (values * values).mean() * 0.5


def test_full_network_gradients_match_finite_differences():
    # D=8, K=3, L=1, H=2 network; every parameter, 5 seeds.
    for seed in range(5):
        net = PolicyNetwork(tiny_net_config(), seed=seed)
        rng = np.random.default_rng(100 + seed)
        stacks = rng.normal(size=(2, 3, 10))
        actions = np.array([0, 1])

        net.zero_grad()
        network_scalar_loss(net, stacks, actions).backward()

        for name, param in net.parameters():
            assert param.grad is not None, name

            def f(p=param):
                with no_grad():
                    return float(network_scalar_loss(net, stacks, actions).data)

            approx = fd_grad(f, param.data)
            err = rel_err(param.grad, approx)
            assert err <= 1e-4, f"{name}: rel err {err:.2e}"


def test_checkpoint_roundtrip_reproduces_forward_bitwise(tmp_path):
    net = PolicyNetwork(tiny_net_config(), seed=9)
    stacks = np.random.default_rng(8).normal(size=(3, 3, 10))
    logits, values = net.forward(stacks)

    path = tmp_path / "net.npz"
    save_checkpoint(net, path)
    loaded = load_checkpoint(path)

    logits2, values2 = loaded.forward(stacks)
    assert np.array_equal(logits.data, logits2.data)
    assert np.array_equal(values.data, values2.data)
    assert loaded.config == net.config


def test_checkpoint_rejects_corrupt_meta(tmp_path):
    net = PolicyNetwork(tiny_net_config(), seed=0)
    path = tmp_path / "net.npz"
    save_checkpoint(net, path)

    blob = dict(np.load(path, allow_pickle=False))
    meta = json.loads(str(blob["__meta__"]))
    meta["format_version"] = 99
    blob["__meta__"] = np.array(json.dumps(meta))
    np.savez(path, **blob)
    with pytest.raises(ValueError, match="version"):
        load_checkpoint(path)
