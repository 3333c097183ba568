import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pitransformer import tensor as T
from pitransformer.errors import ConfigError, NumericalError
from pitransformer.model import PIConfig, PIModel
from pitransformer.tensor import Tensor
from pitransformer.transformer import (
    TransformerConfig,
    causal_attention,
    causal_attention_reference,
    causal_self_attention,
    connector_apply,
    feed_forward,
    init_params,
    parameter_count,
    rotary,
    rotary_reference,
    sinusoidal_table,
    transformer_forward,
)

from oracles import (
    attention_scores_loop,
    central_difference,
    dot,
    layer_norm_loop,
    rel_error,
    rotate_loop,
    single_head_rezero_layer_loop,
)


def rng(seed=0):
    return np.random.default_rng(seed)


def random_params(cfg, seed=0, alpha=None):
    params = init_params(cfg, rng(seed))
    if alpha is not None:
        for k, p in params.items():
            if k.endswith("alpha"):
                p.data[:] = alpha
    return params


# -- rotary -----------------------------------------------------------------
def test_rotary_position_zero_is_identity():
    q = rng().normal(size=(1, 1, 8))
    np.testing.assert_array_equal(rotary(Tensor(q)).data[0, 0], q[0, 0])


@settings(max_examples=50, deadline=None)
@given(st.sampled_from([4, 8, 16]), st.integers(0, 500), st.integers(0, 2**31))
def test_rotary_preserves_norm(d, pos, seed):
    q = rng(seed).normal(size=(1, d))
    out = rotary(Tensor(q), offset=pos).data
    assert abs(np.linalg.norm(out) - np.linalg.norm(q)) < 1e-12


def test_rotary_matches_scalar_loop():
    x = rng(1).normal(size=(7, 8))
    out = rotary(Tensor(x)).data
    for t in range(7):
        np.testing.assert_allclose(out[t], rotate_loop(list(x[t]), t), rtol=0, atol=1e-13)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([4, 8, 16]), st.integers(0, 40), st.integers(0, 40), st.integers(0, 200), st.integers(0, 2**31))
def test_rotary_relative_position(d, m, n, s, seed):
    g = rng(seed)
    q, k = g.normal(size=d), g.normal(size=d)
    base = dot(rotary(Tensor(q[None]), m).data[0], rotary(Tensor(k[None]), n).data[0])
    shifted = dot(rotary(Tensor(q[None]), m + s).data[0], rotary(Tensor(k[None]), n + s).data[0])
    assert abs(base - shifted) < 1e-9


def test_rotary_fused_matches_reference():
    x = rng(2).normal(size=(2, 3, 5, 8))
    np.testing.assert_allclose(rotary(Tensor(x), 3).data, rotary_reference(Tensor(x), 3).data, atol=1e-14)


def test_rotary_gradient():
    w = rng(3).normal(size=(2, 5, 6))
    x = rng(4).normal(size=(2, 5, 6))
    leaf = Tensor(x.copy(), requires_grad=True)
    T.sum_(rotary(leaf) * w).backward()
    (num,) = central_difference(lambda: float((rotary(Tensor(x)).data * w).sum()), [x])
    assert rel_error(leaf.grad, num) < 1e-8


def test_odd_head_size_rejected():
    with pytest.raises(ConfigError):
        TransformerConfig(n_heads=2, d_model=6)
    with pytest.raises(ConfigError):
        rotary(Tensor(np.ones((3, 5))))


# -- sinusoidal -------------------------------------------------------------
def test_sinusoidal_first_row():
    e = sinusoidal_table(4, 8)
    np.testing.assert_array_equal(e[0, 0::2], 0.0)
    np.testing.assert_array_equal(e[0, 1::2], 1.0)


def test_sinusoidal_known_entry():
    assert sinusoidal_table(2, 16)[1, 0] == pytest.approx(math.sin(1.0), abs=1e-15)
    assert sinusoidal_table(2, 16)[1, 0] == pytest.approx(0.84147, abs=1e-5)


def test_sinusoidal_bounded_and_formula():
    e = sinusoidal_table(50, 12)
    assert np.all(np.abs(e) <= 1)
    for i in (3, 17, 49):
        for j in range(12):
            arg = i / 10000 ** ((j - j % 2) / 12)
            assert e[i, j] == pytest.approx(math.sin(arg) if j % 2 == 0 else math.cos(arg), abs=1e-12)


# -- attention --------------------------------------------------------------
def test_attention_single_position():
    cfg = TransformerConfig(n_layers=1, n_heads=2, d_model=8, d_ff=16)
    p = random_params(cfg, 5)
    x = rng(6).normal(size=(1, 1, 8))
    out = causal_self_attention(Tensor(x), p, "layers.0.", cfg).data
    expected = x[0] @ p["layers.0.wv"].data @ p["layers.0.wo"].data
    np.testing.assert_allclose(out[0], expected, atol=1e-13)


def test_attention_causality_by_perturbation():
    cfg = TransformerConfig(n_layers=1, n_heads=2, d_model=8, d_ff=16)
    p = random_params(cfg, 7)
    x = rng(8).normal(size=(1, 10, 8))
    base = causal_self_attention(Tensor(x), p, "layers.0.", cfg).data
    for t in range(10):
        y = x.copy()
        y[:, t + 1:] += rng(t).normal(size=y[:, t + 1:].shape) * 10
        out = causal_self_attention(Tensor(y), p, "layers.0.", cfg).data
        np.testing.assert_array_equal(out[:, : t + 1], base[:, : t + 1])


def test_attention_scores_match_brute_force():
    """Recover the masked score matrix from the attention probabilities."""
    x = rng(9).normal(size=(6, 8))
    wq, wk = rng(10).normal(size=(8, 8)), rng(11).normal(size=(8, 8))
    q, k = x @ wq, x @ wk
    oracle = attention_scores_loop([list(r) for r in q], [list(r) for r in k])
    v = np.eye(6)  # identity values expose the probability matrix
    probs = causal_attention(Tensor(q[None, None]), Tensor(k[None, None]), Tensor(v[None, None])).data[0, 0]
    for t in range(6):
        row = np.array(oracle[t][: t + 1])
        ref = np.exp(row - row.max())
        ref /= ref.sum()
        np.testing.assert_allclose(probs[t, : t + 1], ref, rtol=1e-12)
        np.testing.assert_array_equal(probs[t, t + 1:], 0.0)


def test_fused_attention_matches_reference_and_gradient():
    g = rng(12)
    q, k, v = (g.normal(size=(2, 2, 7, 4)) for _ in range(3))
    w = g.normal(size=(2, 2, 7, 4))
    leaves = [Tensor(a.copy(), requires_grad=True) for a in (q, k, v)]
    refs = [Tensor(a.copy(), requires_grad=True) for a in (q, k, v)]
    T.sum_(causal_attention(*leaves) * w).backward()
    T.sum_(causal_attention_reference(*refs) * w).backward()
    for a, b in zip(leaves, refs):
        np.testing.assert_allclose(a.grad, b.grad, atol=1e-12)
    nums = central_difference(
        lambda: float((causal_attention(Tensor(q), Tensor(k), Tensor(v)).data * w).sum()), [q, k, v]
    )
    for leaf, num in zip(leaves, nums):
        assert rel_error(leaf.grad, num) < 1e-7


# -- feed-forward -----------------------------------------------------------
def test_feed_forward_zero_weights():
    cfg = TransformerConfig(n_layers=1, n_heads=1, d_model=4, d_ff=8)
    p = random_params(cfg)
    for k in ("w1", "b1", "w2", "b2"):
        p["layers.0." + k].data[...] = 0.0
    out = feed_forward(Tensor(rng().normal(size=(2, 3, 4))), p, "layers.0.")
    np.testing.assert_array_equal(out.data, 0.0)


def test_feed_forward_is_position_wise():
    cfg = TransformerConfig(n_layers=1, n_heads=1, d_model=4, d_ff=8)
    p = random_params(cfg, 1)
    p["layers.0.b1"].data[:] = rng(2).normal(size=8)
    x = rng(3).normal(size=(1, 9, 4))
    perm = rng(4).permutation(9)
    a = feed_forward(Tensor(x), p, "layers.0.").data
    b = feed_forward(Tensor(x[:, perm]), p, "layers.0.").data
    np.testing.assert_allclose(b, a[:, perm], atol=1e-14)


def test_feed_forward_gradient():
    cfg = TransformerConfig(n_layers=1, n_heads=1, d_model=8, d_ff=16)
    p = random_params(cfg, 5)
    p["layers.0.b1"].data[:] = rng(6).normal(size=16) * 0.3
    x = rng(7).normal(size=(2, 3, 8))
    w = rng(8).normal(size=(2, 3, 8))
    names = ["layers.0.w1", "layers.0.b1", "layers.0.w2", "layers.0.b2"]
    leaf = Tensor(x.copy(), requires_grad=True)
    T.sum_(feed_forward(leaf, p, "layers.0.") * w).backward()
    arrays = [x] + [p[n].data for n in names]
    nums = central_difference(lambda: float((feed_forward(Tensor(x), p, "layers.0.").data * w).sum()), arrays)
    for got, num in zip([leaf.grad] + [p[n].grad for n in names], nums):
        assert rel_error(got, num) < 1e-6


# -- connectors -------------------------------------------------------------
def _ln_params(d):
    return {"l.ln.gain": Tensor(np.ones(d)), "l.ln.bias": Tensor(np.zeros(d)), "l.alpha": Tensor(np.zeros(1))}


def test_rezero_zero_gate_is_identity():
    x = rng().normal(size=(2, 5, 6))
    out = connector_apply(Tensor(x), lambda h: h * 3.0 + 1.0, "rezero", _ln_params(6), "l.", "ln")
    np.testing.assert_array_equal(out.data, x)


def test_pre_ln_zero_sublayer_is_identity():
    x = rng(1).normal(size=(2, 5, 6))
    out = connector_apply(Tensor(x), lambda h: h * 0.0, "pre_ln", _ln_params(6), "l.", "ln")
    np.testing.assert_array_equal(out.data, x)


def test_post_ln_zero_sublayer_is_layer_norm():
    x = rng(2).normal(size=(3, 6))
    out = connector_apply(Tensor(x), lambda h: h * 0.0, "post_ln", _ln_params(6), "l.", "ln").data
    direct = T.layer_norm(Tensor(x), Tensor(np.ones(6)), Tensor(np.zeros(6))).data
    np.testing.assert_array_equal(out, direct)
    for r in range(3):
        np.testing.assert_allclose(out[r], layer_norm_loop(list(x[r])), atol=1e-12)


# -- full stack -------------------------------------------------------------
@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 12), st.sampled_from([1, 2, 4]))
def test_rezero_stack_identity_at_init(seed, length, heads):
    cfg = TransformerConfig(n_layers=3, n_heads=heads, d_model=8, d_ff=16)
    p = init_params(cfg, rng(seed))
    x = rng(seed + 1).normal(size=(2, length, 8)) * 5
    out = transformer_forward(Tensor(x), cfg, p).data
    assert out.tobytes() == x.tobytes()


@pytest.mark.parametrize("connector", ["rezero", "pre_ln", "post_ln"])
@pytest.mark.parametrize("pos", ["rotary", "sinusoidal"])
def test_stack_causality(connector, pos):
    cfg = TransformerConfig(n_layers=2, n_heads=2, d_model=8, d_ff=16, connector=connector, pos_encoding=pos)
    p = random_params(cfg, 3, alpha=0.7)
    x = rng(4).normal(size=(1, 9, 8))
    base = transformer_forward(Tensor(x), cfg, p).data
    y = x.copy()
    y[:, 5:] = rng(5).normal(size=(1, 4, 8))
    out = transformer_forward(Tensor(y), cfg, p).data
    np.testing.assert_allclose(out[:, :5], base[:, :5], atol=1e-13)
    assert not np.allclose(out[:, 5:], base[:, 5:])


@pytest.mark.parametrize("connector", ["rezero", "pre_ln", "post_ln"])
def test_fused_and_reference_paths_agree(connector):
    cfg = TransformerConfig(n_layers=2, n_heads=2, d_model=8, d_ff=16, connector=connector)
    p = random_params(cfg, 6, alpha=0.5)
    x = rng(7).normal(size=(3, 6, 8))
    a = transformer_forward(Tensor(x), cfg, p, fused=True).data
    b = transformer_forward(Tensor(x), cfg, p, fused=False).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_one_layer_matches_scalar_oracle():
    cfg = TransformerConfig(n_layers=1, n_heads=1, d_model=4, d_ff=8)
    p = random_params(cfg, 8, alpha=0.9)
    p["layers.0.b1"].data[:] = rng(9).normal(size=8) * 0.2
    p["layers.0.b2"].data[:] = rng(10).normal(size=4) * 0.2
    x = rng(11).normal(size=(1, 6, 4))
    nested = {k.split(".")[-1]: v.data.tolist() for k, v in p.items()}
    nested["alpha"] = 0.9
    expected = single_head_rezero_layer_loop(x[0].tolist(), nested)
    got = transformer_forward(Tensor(x), cfg, p).data[0]
    np.testing.assert_allclose(got, expected, atol=1e-12)


def test_non_finite_activation_names_layer():
    cfg = TransformerConfig(n_layers=2, n_heads=1, d_model=4, d_ff=8)
    p = random_params(cfg, alpha=1.0)
    p["layers.1.w2"].data[0, 0] = np.inf
    p["layers.1.b1"].data[:] = 1.0
    with pytest.raises(NumericalError, match="layer 1"):
        transformer_forward(Tensor(np.ones((1, 3, 4))), cfg, p)


def test_parameter_count_closed_form():
    cfg = TransformerConfig(n_layers=4, n_heads=4, d_model=512, d_ff=2048)
    # per layer: 4 * 512^2 attention + 512*2048 + 2048 + 2048*512 + 512 feed-forward + 1 gate
    assert parameter_count(cfg) == 12_593_156
    model = PIModel.init(PIConfig(horizon=48, window_multiple=4, transformer=cfg), seed=0)
    assert sum(p.size for p in model.parameters()) == 12_594_181


@pytest.mark.parametrize("connector", ["rezero", "pre_ln", "post_ln"])
def test_parameter_count_matches_init(connector):
    cfg = TransformerConfig(n_layers=3, n_heads=2, d_model=8, d_ff=24, connector=connector)
    assert sum(p.size for p in init_params(cfg, rng()).values()) == parameter_count(cfg)


def test_config_validation():
    with pytest.raises(ConfigError):
        TransformerConfig(d_model=30, n_heads=4)
    with pytest.raises(ConfigError):
        TransformerConfig(connector="batchnorm")
    with pytest.raises(ConfigError):
        TransformerConfig(n_layers=0)
