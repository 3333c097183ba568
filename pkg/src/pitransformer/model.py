"""Forecasting model: log-mean normalization, projections and the persistence wrapper.

The wrapper around the Transformer ``g`` is one of

* ``skip_gate``: ``h(z) = z + alpha * g(z)`` with ``alpha`` starting at 0, so a
  fresh model repeats the last value (persistence);
* ``skip_only``: ``h(z) = z + g(z)``;
* ``none``: ``h(z) = g(z)``.

Output position t of ``h`` is the normalized prediction for position t + 1.
"""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, NumericalError
from .tensor import Tensor
from .transformer import TransformerConfig, init_params, sinusoidal_table, transformer_forward

SKIP_MODES = ("none", "skip_only", "skip_gate")
CHECKPOINT_FORMAT = "pitransformer-checkpoint/1"


@dataclass(frozen=True)
class PIConfig:
    horizon: int
    window_multiple: int
    skip_mode: str = "skip_gate"
    transformer: TransformerConfig = field(default_factory=TransformerConfig)

    def __post_init__(self):
        if self.horizon <= 0 or self.window_multiple <= 0:
            raise ConfigError("horizon and window_multiple must be positive")
        if self.skip_mode not in SKIP_MODES:
            raise ConfigError(f"skip_mode must be one of {SKIP_MODES}, got {self.skip_mode!r}")

    @property
    def input_length(self) -> int:
        return self.window_multiple * self.horizon

    @property
    def subsequence_length(self) -> int:
        return self.input_length + self.horizon

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PIConfig":
        d = dict(d)
        d["transformer"] = TransformerConfig(**d.get("transformer", {}))
        return cls(**d)


class PIModel:
    """Parameters plus config. ``params`` maps names to leaf tensors."""

    def __init__(self, config: PIConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: PIConfig, seed: int | np.random.Generator = 0) -> "PIModel":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        d = config.transformer.d_model
        params = {
            # fan-in of the input projection is 1
            "w_in": Tensor(rng.uniform(-1.0, 1.0, size=(1, d)), requires_grad=True, name="w_in"),
            "w_out": Tensor(
                rng.uniform(-1.0, 1.0, size=(d, 1)) / np.sqrt(d), requires_grad=True, name="w_out"
            ),
        }
        params.update(init_params(config.transformer, rng))
        if config.skip_mode == "skip_gate":
            params["alpha"] = Tensor(np.zeros(1), requires_grad=True, name="alpha")
        return cls(config, params)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            raise ConfigError("state dict keys do not match model parameters")
        for k, v in state.items():
            self.params[k].data = np.array(v, dtype=np.float64)

    @property
    def alpha(self) -> float | None:
        p = self.params.get("alpha")
        return None if p is None else float(p.data[0])

    @property
    def layer_alphas(self) -> list[float]:
        n = self.config.transformer.n_layers
        key = "layers.{}.alpha"
        if key.format(0) not in self.params:
            return []
        return [float(self.params[key.format(i)].data[0]) for i in range(n)]


# -- normalization ----------------------------------------------------------
@dataclass(frozen=True)
class NormalizationState:
    """Per-window scale: mean of the H most recent input values, shape [batch]."""

    mu: np.ndarray


def normalize(x: np.ndarray, horizon: int, input_length: int | None = None, ids=None):
    """Return ``(ln(x / mu_H), state)`` for windows ``x[..., len]``.

    ``mu_H`` averages the last ``horizon`` values of the input portion
    ``x[..., :input_length]`` (the whole window when ``input_length`` is None).
    """
    x = np.asarray(x, dtype=np.float64)
    if input_length is None:
        input_length = x.shape[-1]
    if input_length < horizon:
        raise DataError(f"window input portion {input_length} shorter than horizon {horizon}")
    bad = ~(x > 0)
    if bad.any():
        where = np.argwhere(bad)[0]
        label = ""
        if ids is not None:
            ids = [ids] if isinstance(ids, str) else list(ids)
            label = f" in series {ids[int(where[0]) if x.ndim > 1 else 0]!r}"
        raise DataError(f"non-positive value{label} at position {tuple(where)}")
    mu = x[..., input_length - horizon:input_length].mean(axis=-1)
    return np.log(x / mu[..., None]), NormalizationState(mu)


def denormalize(z_hat, state: NormalizationState) -> Tensor:
    """mu_H * exp(z_hat); differentiable in ``z_hat``."""
    return T.exp(z_hat) * state.mu[..., None]


# -- forward passes ---------------------------------------------------------
def pi_forward(z, model: PIModel, fused: bool = True) -> Tensor:
    """One-step-ahead predictions in normalized space for z[batch, len]."""
    z = T.as_tensor(z)
    if z.ndim != 2 or z.shape[1] < 1:
        raise ConfigError(f"expected z of shape [batch, len>=1], got {z.shape}")
    cfg = model.config
    b, length = z.shape
    p = model.params
    feats = T.reshape(z, (b, length, 1)) @ p["w_in"]
    if cfg.transformer.pos_encoding == "sinusoidal":
        feats = feats + sinusoidal_table(length, cfg.transformer.d_model)
    hidden = transformer_forward(feats, cfg.transformer, p, fused=fused)
    g = T.reshape(hidden @ p["w_out"], (b, length))
    if cfg.skip_mode == "skip_gate":
        return z + p["alpha"] * g
    if cfg.skip_mode == "skip_only":
        return z + g
    return g


def forecast(x: np.ndarray, model: PIModel, ids=None) -> np.ndarray:
    """Autoregressive H-step forecast from raw input windows x[batch, nH] (or [nH]).

    The scale ``mu_H`` comes from the input window and is reused for every step.
    """
    cfg = model.config
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != cfg.input_length:
        raise DataError(f"forecast window length {x.shape[1]} != nH = {cfg.input_length}")
    z, state = normalize(x, cfg.horizon, ids=ids)
    seq = z
    with T.no_grad():
        for step in range(cfg.horizon):
            nxt = pi_forward(seq, model).data[:, -1]
            if not np.all(np.isfinite(nxt)):
                raise NumericalError(f"non-finite prediction at step {step}")
            seq = np.concatenate([seq, nxt[:, None]], axis=1)
        out = denormalize(seq[:, cfg.input_length:], state).data
    if not np.all(np.isfinite(out)):
        raise NumericalError("non-finite forecast after denormalization")
    return out[0] if single else out


def teacher_forced_predictions(subseq: np.ndarray, model: PIModel, ids=None) -> Tensor:
    """H raw-space predictions per window, conditioning on ground truth.

    ``subseq[batch, nH+H]`` is normalized with ``mu_H`` from its input portion;
    positions 0..nH+H-2 are fed and outputs nH-1..nH+H-2 are kept.
    """
    cfg = model.config
    subseq = np.asarray(subseq, dtype=np.float64)
    if subseq.ndim == 1:
        subseq = subseq[None, :]
    if subseq.shape[1] != cfg.subsequence_length:
        raise DataError(
            f"sub-sequence length {subseq.shape[1]} != nH+H = {cfg.subsequence_length}"
        )
    z, state = normalize(subseq, cfg.horizon, cfg.input_length, ids=ids)
    out = pi_forward(z[:, :-1], model)
    z_hat = out[:, cfg.input_length - 1:]
    return denormalize(z_hat, state)


# -- checkpoints ------------------------------------------------------------
def save_checkpoint(path, model: PIModel, metadata: dict | None = None) -> None:
    """Write a zip of ``.npy`` arrays plus ``meta.json``.

    Entries are written in sorted order with a fixed timestamp so identical
    models produce identical bytes.
    """
    meta = {
        "format": CHECKPOINT_FORMAT,
        "config": model.config.to_dict(),
        "parameters": sorted(model.params),
        "metadata": metadata or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fixed = (1980, 1, 1, 0, 0, 0)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr(zipfile.ZipInfo("meta.json", fixed), json.dumps(meta, indent=2, sort_keys=True))
        for name in sorted(model.params):
            buf = io.BytesIO()
            np.save(buf, model.params[name].data, allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"params/{name}.npy", fixed), buf.getvalue())


def load_checkpoint(path) -> tuple[PIModel, dict]:
    """Inverse of :func:`save_checkpoint`; returns ``(model, metadata)``."""
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise DataError(f"{path}: unrecognized checkpoint format {meta.get('format')!r}")
        params = {}
        for name in meta["parameters"]:
            arr = np.load(io.BytesIO(zf.read(f"params/{name}.npy")), allow_pickle=False)
            params[name] = Tensor(arr, requires_grad=True, name=name)
    config = PIConfig.from_dict(meta["config"])
    return PIModel(config, params), meta["metadata"]
