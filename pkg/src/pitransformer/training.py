"""MASE training loss, Lamb, gradient clipping and the early-stopped training loop."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .data import SeriesRecord, SplitPlan, WindowBatch, sample_batch, validation_batch
from .errors import ConfigError, NumericalError
from .model import PIModel, save_checkpoint, teacher_forced_predictions
from .tensor import Tensor

log = logging.getLogger(__name__)

MIN_SCALE = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    batches_per_epoch: int = 32
    patience: int = 8
    grad_clip_norm: float = 10.0
    max_epochs: int = 100
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-6
    weight_decay: float = 0.0
    val_chunk: int = 256

    def __post_init__(self):
        for name in ("batch_size", "batches_per_epoch", "patience", "max_epochs", "val_chunk"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.grad_clip_norm <= 0 or self.lr <= 0 or self.eps <= 0:
            raise ConfigError("grad_clip_norm, lr and eps must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.weight_decay < 0:
            raise ConfigError("invalid Lamb moment decay or weight decay")

    def to_dict(self) -> dict:
        return asdict(self)


PAPER_TRAIN = TrainConfig(batch_size=1024, batches_per_epoch=128)
DESK_TRAIN = TrainConfig()


# -- loss -------------------------------------------------------------------
def window_scales(inputs: np.ndarray, seasonality: int, mask: np.ndarray | None = None) -> np.ndarray:
    """Mean |x_t - x_{t-S}| over each input window, using only pairs of unpadded values."""
    inputs = np.atleast_2d(inputs)
    diffs = np.abs(inputs[:, seasonality:] - inputs[:, :-seasonality])
    if mask is None:
        return diffs.mean(axis=1)
    valid = mask[:, seasonality:] & mask[:, :-seasonality]
    counts = valid.sum(axis=1)
    total = (diffs * valid).sum(axis=1)
    return np.divide(total, counts, out=np.zeros(len(total)), where=counts > 0)


def mase_loss(
    predictions: Tensor,
    targets: np.ndarray,
    inputs: np.ndarray,
    seasonality: int,
    mask: np.ndarray | None = None,
    stats: dict | None = None,
) -> Tensor:
    """Mean over windows of MAE(horizon) / in-window seasonal-naive MAE.

    ``mask`` covers the whole sub-sequence ``[batch, nH+H]``. Windows whose scale
    is below 1e-8 are left out of the mean; their count goes to ``stats``.
    """
    if seasonality < 1:
        raise ConfigError("seasonality must be >= 1")
    predictions = T.as_tensor(predictions)
    targets = np.atleast_2d(targets)
    inputs = np.atleast_2d(inputs)
    if predictions.shape != targets.shape or len(inputs) != len(targets):
        raise ConfigError(f"shape mismatch: predictions {predictions.shape}, targets {targets.shape}")
    n_in = inputs.shape[1]
    in_mask = None if mask is None else mask[:, :n_in]
    out_mask = np.ones(targets.shape) if mask is None else mask[:, n_in:].astype(np.float64)
    scale = window_scales(inputs, seasonality, in_mask)
    keep = scale >= MIN_SCALE
    excluded = int((~keep).sum())
    if stats is not None:
        stats["excluded"] = stats.get("excluded", 0) + excluded
    if excluded:
        log.debug("mase_loss: %d constant windows excluded", excluded)
    n_keep = int(keep.sum())
    if n_keep == 0:
        return T.sum_(predictions * 0.0)
    counts = out_mask.sum(axis=1)
    weight = np.zeros_like(out_mask)
    rows = keep & (counts > 0)
    weight[rows] = out_mask[rows] / (counts[rows] * scale[rows])[:, None] / n_keep
    return T.sum_(T.abs_(predictions - targets) * weight)


# -- optimizer --------------------------------------------------------------
@dataclass
class LambState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def clip_gradients(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients by max_norm / global_norm if the global L2 norm exceeds max_norm.

    Returns the pre-clipping global norm.
    """
    grads = [p.grad for p in params.values() if p.grad is not None]
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if norm > max_norm:
        factor = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * factor
    return norm


def lamb_step(params: dict[str, Tensor], state: LambState, config: TrainConfig) -> LambState:
    """One bias-corrected Lamb update, in place on ``params``.

    Per tensor: update = m_hat / (sqrt(v_hat) + eps) + wd * w and
    w <- w - lr * (||w|| / ||update||) * update, with the ratio set to 1 when
    either norm is zero.
    """
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        update = (m / c1) / (np.sqrt(v / c2) + config.eps)
        if config.weight_decay:
            update = update + config.weight_decay * p.data
        w_norm = float(np.linalg.norm(p.data))
        u_norm = float(np.linalg.norm(update))
        ratio = w_norm / u_norm if w_norm > 0 and u_norm > 0 else 1.0
        p.data = p.data - config.lr * ratio * update
    return state


# -- training loop ----------------------------------------------------------
def batch_loss(model: PIModel, batch: WindowBatch, seasonality: int, stats: dict | None = None) -> Tensor:
    """Teacher-forced MASE of ``model`` on one batch."""
    n_in = model.config.input_length
    preds = teacher_forced_predictions(batch.windows, model, ids=batch.ids)
    mask = None if batch.mask.all() else batch.mask
    return mase_loss(preds, batch.targets(n_in), batch.inputs(n_in), seasonality, mask, stats)


def validation_loss(model: PIModel, plan: SplitPlan, records, chunk: int = 256) -> float:
    """Mean teacher-forced MASE over every validation window (NaN if there are none)."""
    batch = validation_batch(plan, records)
    if len(batch) == 0:
        return float("nan")
    n_in = model.config.input_length
    season = plan.frequency.seasonality
    total, count = 0.0, 0
    with T.no_grad():
        for lo in range(0, len(batch), chunk):
            sl = slice(lo, lo + chunk)
            preds = teacher_forced_predictions(batch.windows[sl], model).data
            scale = window_scales(batch.inputs(n_in)[sl], season, batch.mask[sl, :n_in])
            keep = scale >= MIN_SCALE
            err = np.abs(preds - batch.targets(n_in)[sl]).mean(axis=1)
            total += float((err[keep] / scale[keep]).sum())
            count += int(keep.sum())
    return total / count if count else float("nan")


@dataclass
class EpochRecord:
    epoch: int
    train_loss_mean: float
    train_loss_std: float
    val_loss: float
    alpha: float | None
    layer_alphas: list[float]
    excluded_windows: int


@dataclass
class TrainResult:
    model: PIModel
    history: list[EpochRecord]
    best_epoch: int
    best_val_loss: float
    stopped_early: bool
    initial_train_loss: float | None = None


def train(
    model: PIModel,
    plan: SplitPlan,
    records: list[SeriesRecord],
    config: TrainConfig,
    run_dir: Path | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainResult:
    """Train with early stopping on the validation MASE; returns the best weights.

    With no validation windows the last epoch's weights are kept and stopping
    is driven by ``max_epochs`` alone.
    """
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    state = LambState()
    history: list[EpochRecord] = []
    best_val = np.inf
    best_state = model.state_dict()
    best_epoch = 0
    bad_epochs = 0
    stopped = False
    initial = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        hist_path = run_dir / "history.jsonl"
        timing_path = run_dir / "timing.jsonl"
        hist_path.write_text("")
        timing_path.write_text("")
    t0 = time.perf_counter()
    for epoch in range(1, config.max_epochs + 1):
        losses = []
        stats: dict = {}
        for b in range(config.batches_per_epoch):
            batch = sample_batch(plan, records, config.batch_size, rng)
            model.zero_grad()
            loss = batch_loss(model, batch, plan.frequency.seasonality, stats)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {b}")
            if initial is None:
                initial = value
            losses.append(value)
            if loss.requires_grad:
                loss.backward()
                clip_gradients(model.params, config.grad_clip_norm)
                lamb_step(model.params, state, config)
        val = validation_loss(model, plan, records, config.val_chunk)
        rec = EpochRecord(
            epoch,
            float(np.mean(losses)),
            float(np.std(losses)),
            val,
            model.alpha,
            model.layer_alphas,
            int(stats.get("excluded", 0)),
        )
        history.append(rec)
        log.info(
            "epoch %d train %.5f val %.5f alpha %s", epoch, rec.train_loss_mean, val, rec.alpha
        )
        if run_dir is not None:
            with open(hist_path, "a") as fh:
                fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")
            with open(timing_path, "a") as fh:
                fh.write(json.dumps({"epoch": epoch, "wall_time": time.perf_counter() - t0}) + "\n")
        if on_epoch is not None:
            on_epoch(rec)
        if np.isnan(val):
            best_state, best_epoch = model.state_dict(), epoch
            continue
        if val < best_val:
            best_val, best_state, best_epoch, bad_epochs = val, model.state_dict(), epoch, 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                stopped = True
                break
    model.load_state_dict(best_state)
    if run_dir is not None:
        save_checkpoint(
            run_dir / "checkpoint.npz",
            model,
            {"epoch": best_epoch, "val_loss": None if not np.isfinite(best_val) else best_val,
             "seed": config.seed, "train_config": config.to_dict()},
        )
    return TrainResult(model, history, best_epoch, float(best_val), stopped, initial)
