"""Decoder-only Transformer stack with selectable positional encoding and residual connector."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, NumericalError
from .tensor import Tensor

CONNECTORS = ("rezero", "pre_ln", "post_ln")
POS_ENCODINGS = ("rotary", "sinusoidal")

# additive causal mask; exp(-1e9 - max) underflows to exactly 0
MASK_VALUE = -1e9
ROTARY_BASE = 10000.0


@dataclass(frozen=True)
class TransformerConfig:
    n_layers: int = 4
    n_heads: int = 4
    d_model: int = 32
    d_ff: int = 128
    connector: str = "rezero"
    pos_encoding: str = "rotary"

    def __post_init__(self):
        for field in ("n_layers", "n_heads", "d_model", "d_ff"):
            if getattr(self, field) <= 0:
                raise ConfigError(f"{field} must be positive")
        if self.d_model % self.n_heads:
            raise ConfigError(
                f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}"
            )
        if self.connector not in CONNECTORS:
            raise ConfigError(f"connector must be one of {CONNECTORS}, got {self.connector!r}")
        if self.pos_encoding not in POS_ENCODINGS:
            raise ConfigError(
                f"pos_encoding must be one of {POS_ENCODINGS}, got {self.pos_encoding!r}"
            )
        if self.pos_encoding == "rotary" and self.d_qk % 2:
            raise ConfigError(f"rotary encoding needs an even head size, got d_qk={self.d_qk}")

    @property
    def d_qk(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)


def init_params(config: TransformerConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """Draw a fresh parameter set.

    Weights are U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases start at 0. ReZero
    gates start at exactly 0 and LayerNorm gains at 1. The query/key/value
    matrices hold all heads side by side (head i owns columns i*d_qk:(i+1)*d_qk).
    """
    d, dff = config.d_model, config.d_ff

    def uniform(fan_in, shape):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    params: dict[str, Tensor] = {}
    for layer in range(config.n_layers):
        p = f"layers.{layer}."
        for name in ("wq", "wk", "wv", "wo"):
            params[p + name] = uniform(d, (d, d))
        params[p + "w1"] = uniform(d, (d, dff))
        params[p + "b1"] = np.zeros(dff)
        params[p + "w2"] = uniform(dff, (dff, d))
        params[p + "b2"] = np.zeros(d)
        if config.connector == "rezero":
            params[p + "alpha"] = np.zeros(1)
        else:
            for ln in ("ln1", "ln2"):
                params[p + ln + ".gain"] = np.ones(d)
                params[p + ln + ".bias"] = np.zeros(d)
    if config.connector == "pre_ln":
        params["final_ln.gain"] = np.ones(d)
        params["final_ln.bias"] = np.zeros(d)
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in params.items()}


def parameter_count(config: TransformerConfig) -> int:
    d, dff, n = config.d_model, config.d_ff, config.n_layers
    per_layer = 4 * d * d + d * dff + dff + dff * d + d
    per_layer += 1 if config.connector == "rezero" else 4 * d
    total = n * per_layer
    if config.connector == "pre_ln":
        total += 2 * d
    return total


# -- positional encodings ---------------------------------------------------
def rotary_angles(length: int, d_qk: int, offset: int = 0) -> np.ndarray:
    """Angles m * theta_i, shape [length, d_qk // 2], theta_i = base^(-2i/d_qk)."""
    if d_qk % 2:
        raise ConfigError(f"rotary encoding needs an even head size, got {d_qk}")
    theta = ROTARY_BASE ** (-2.0 * np.arange(d_qk // 2) / d_qk)
    pos = np.arange(offset, offset + length, dtype=np.float64)
    return np.outer(pos, theta)


def _rotate_pairs(x: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    x0, x1 = x[..., 0::2], x[..., 1::2]
    out[..., 0::2] = x0 * cos - x1 * sin
    out[..., 1::2] = x0 * sin + x1 * cos
    return out


def rotary(x: Tensor, offset: int = 0) -> Tensor:
    """Rotate coordinate pairs (2i, 2i+1) of x[..., len, d_qk] by position * theta_i."""
    length, d_qk = x.shape[-2], x.shape[-1]
    ang = rotary_angles(length, d_qk, offset)
    cos, sin = np.cos(ang), np.sin(ang)
    # the adjoint of a rotation is the rotation by the negated angle
    return Tensor.from_op(
        _rotate_pairs(x.data, cos, sin), (x,), lambda g: (_rotate_pairs(g, cos, -sin),)
    )


def rotary_reference(x: Tensor, offset: int = 0) -> Tensor:
    """Same map as :func:`rotary`, composed from primitive tensor ops."""
    shape = x.shape
    length, d_qk = shape[-2], shape[-1]
    ang = rotary_angles(length, d_qk, offset)
    cos = np.cos(ang)[..., None]
    sin = np.sin(ang)[..., None]
    pairs = T.reshape(x, shape[:-1] + (d_qk // 2, 2))
    lead = (slice(None),) * (len(shape) - 1)
    x0 = pairs[lead + (slice(None), slice(0, 1))]
    x1 = pairs[lead + (slice(None), slice(1, 2))]
    r0 = x0 * cos - x1 * sin
    r1 = x0 * sin + x1 * cos
    return T.reshape(T.concat([r0, r1], axis=-1), shape)


def apply_rotary(q: Tensor, k: Tensor, offset: int = 0) -> tuple[Tensor, Tensor]:
    return rotary(q, offset), rotary(k, offset)


def sinusoidal_table(length: int, d_model: int) -> np.ndarray:
    """E[i, j] = sin(i / 10000^(j/d)) for even j, cos(i / 10000^((j-1)/d)) for odd j."""
    i = np.arange(length, dtype=np.float64)[:, None]
    j = np.arange(d_model)
    expo = np.where(j % 2 == 0, j, j - 1) / d_model
    arg = i / (10000.0 ** expo)[None, :]
    return np.where(j % 2 == 0, np.sin(arg), np.cos(arg))


# -- attention --------------------------------------------------------------
def causal_mask(length: int) -> np.ndarray:
    """Additive mask: 0 on and below the diagonal, MASK_VALUE strictly above."""
    return np.triu(np.full((length, length), MASK_VALUE), k=1)


def causal_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q k^T / sqrt(d_qk) + mask) v as one graph node over q[batch, heads, len, d_qk].

    Works one batch item at a time so each score block stays cache-sized, and
    keeps only the attention probabilities for the backward pass.
    """
    scale = 1.0 / np.sqrt(q.shape[-1])
    qd, kd, vd = q.data, k.data, v.data
    mask = causal_mask(q.shape[-2])
    batch, heads, length, _ = qd.shape
    probs = np.empty((batch, heads, length, length))
    out = np.empty(vd.shape[:-1] + (vd.shape[-1],))
    for i in range(batch):
        s = probs[i]
        np.matmul(qd[i] * scale, np.swapaxes(kd[i], -1, -2), out=s)
        s += mask
        s -= s.max(axis=-1, keepdims=True)
        np.exp(s, out=s)
        s /= s.sum(axis=-1, keepdims=True)
        out[i] = s @ vd[i]

    def backward(g):
        gq, gk, gv = np.empty_like(qd), np.empty_like(kd), np.empty_like(vd)
        for i in range(batch):
            p = probs[i]
            gv[i] = np.swapaxes(p, -1, -2) @ g[i]
            ds = g[i] @ np.swapaxes(vd[i], -1, -2)
            ds -= (ds * p).sum(axis=-1, keepdims=True)
            ds *= p
            gq[i] = ds @ (kd[i] * scale)
            gk[i] = np.swapaxes(ds, -1, -2) @ (qd[i] * scale)
        return gq, gk, gv

    return Tensor.from_op(out, (q, k, v), backward)


def causal_attention_reference(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    d_qk = q.shape[-1]
    scores = T.matmul(q, T.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(d_qk))
    scores = scores + causal_mask(q.shape[-2])
    return T.matmul(T.softmax(scores, axis=-1), v)


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, length, d = x.shape
    return T.transpose(T.reshape(x, (b, length, n_heads, d // n_heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, length, dh = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (b, length, h * dh))


def causal_self_attention(
    x: Tensor,
    params: dict[str, Tensor],
    prefix: str,
    config: TransformerConfig,
    fused: bool = True,
) -> Tensor:
    """Multi-head causal self-attention on x[batch, len, d_model]."""
    q = _split_heads(x @ params[prefix + "wq"], config.n_heads)
    k = _split_heads(x @ params[prefix + "wk"], config.n_heads)
    v = _split_heads(x @ params[prefix + "wv"], config.n_heads)
    if config.pos_encoding == "rotary":
        rot = rotary if fused else rotary_reference
        q, k = rot(q), rot(k)
    attend = causal_attention if fused else causal_attention_reference
    heads = attend(q, k, v)
    return _merge_heads(heads) @ params[prefix + "wo"]


def feed_forward(x: Tensor, params: dict[str, Tensor], prefix: str) -> Tensor:
    hidden = T.relu(x @ params[prefix + "w1"] + params[prefix + "b1"])
    return hidden @ params[prefix + "w2"] + params[prefix + "b2"]


def connector_apply(x: Tensor, sublayer, mode: str, params: dict[str, Tensor], prefix: str, ln: str):
    """Wrap ``sublayer`` with the residual connector selected by ``mode``.

    ``prefix`` names the layer; ``ln`` names the LayerNorm used by the LN modes.
    """
    if mode == "rezero":
        return x + params[prefix + "alpha"] * sublayer(x)
    gain, bias = params[prefix + ln + ".gain"], params[prefix + ln + ".bias"]
    if mode == "post_ln":
        return T.layer_norm(x + sublayer(x), gain, bias)
    if mode == "pre_ln":
        return x + sublayer(T.layer_norm(x, gain, bias))
    raise ConfigError(f"unknown connector {mode!r}")


def transformer_forward(
    x: Tensor, config: TransformerConfig, params: dict[str, Tensor], fused: bool = True
) -> Tensor:
    """Apply ``n_layers`` of connector(attention) then connector(feed-forward)."""
    if x.ndim != 3 or x.shape[-1] != config.d_model:
        raise ConfigError(f"expected input [batch, len, {config.d_model}], got {x.shape}")
    for layer in range(config.n_layers):
        p = f"layers.{layer}."
        x = connector_apply(
            x,
            lambda h: causal_self_attention(h, params, p, config, fused),
            config.connector,
            params,
            p,
            "ln1",
        )
        x = connector_apply(
            x, lambda h: feed_forward(h, params, p), config.connector, params, p, "ln2"
        )
        if not np.all(np.isfinite(x.data)):
            raise NumericalError(f"non-finite activations after layer {layer}")
    if config.connector == "pre_ln":
        x = T.layer_norm(x, params["final_ln.gain"], params["final_ln.bias"])
    return x
