"""Glue for whole runs: data loading, per-seed training, scoring and ablation sweeps."""
from __future__ import annotations

import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import RunConfig
from .data import (
    SeriesRecord,
    build_split,
    forecast_inputs,
    load_frequency,
    stratified_subsample,
)
from .errors import ConfigError
from .metrics import ForecastSet, ensemble_mean, evaluate, score_frequency
from .model import PIModel, forecast, load_checkpoint
from .training import TrainResult, train
from .transformer import TransformerConfig

log = logging.getLogger(__name__)


def load_records(rc: RunConfig, require_test: bool = True) -> list[SeriesRecord]:
    if not rc.data_root:
        raise ConfigError("no data root: pass --data-root or set PITF_DATA_ROOT")
    records = load_frequency(rc.data_root, rc.frequency, require_test=require_test)
    if rc.subsample:
        records = stratified_subsample(records, rc.subsample, rc.subsample_seed)
    return records


def train_seed(rc: RunConfig, seed: int, records: list[SeriesRecord], run_dir: Path | None) -> TrainResult:
    """Fresh model from ``seed``, trained on ``records`` into ``run_dir``."""
    plan = build_split(records, rc.frequency, pad_short=rc.pad_short)
    model = PIModel.init(rc.pi, seed)
    return train(model, plan, records, rc.train_config(seed), run_dir)


def _train_job(args):
    rc_dict, seed, records, run_dir = args
    rc = RunConfig.from_dict(rc_dict)
    res = train_seed(rc, seed, records, run_dir)
    return seed, res


def train_all(rc: RunConfig, records: list[SeriesRecord], out: Path) -> dict[int, TrainResult]:
    """Train one model per seed under ``out/seed_<k>``; parallel when ``rc.workers > 1``."""
    jobs = [(rc.to_dict(), s, records, out / f"seed_{s}") for s in rc.seeds]
    if rc.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=rc.workers) as pool:
            return dict(pool.map(_train_job, jobs))
    return dict(_train_job(j) for j in jobs)


def model_forecasts(model: PIModel, records: Sequence[SeriesRecord], chunk: int = 512) -> ForecastSet:
    """Autoregressive forecasts from the last nH training values of each series."""
    x, _ = forecast_inputs(records, model.config.input_length)
    ids = [r.id for r in records]
    out = np.empty((len(records), model.config.horizon))
    for lo in range(0, len(records), chunk):
        out[lo:lo + chunk] = forecast(x[lo:lo + chunk], model, ids=ids[lo:lo + chunk])
    return ForecastSet(dict(zip(ids, out)), {})


def checkpoint_forecasts(path, records) -> ForecastSet:
    model, meta = load_checkpoint(path)
    if model.config.horizon != records[0].frequency.horizon:
        raise ConfigError(
            f"{path}: horizon {model.config.horizon} does not match "
            f"{records[0].frequency.name} (H={records[0].frequency.horizon})"
        )
    fs = model_forecasts(model, records)
    fs.provenance = {"checkpoint": str(path), "seed": meta.get("seed")}
    return fs


def score_sets(records, sets: Sequence[ForecastSet], ensemble: bool = False, median: bool = False) -> dict:
    """Score each forecast set, and optionally their mean ensemble and the median scores."""
    freq = records[0].frequency.name
    result: dict = {"members": []}
    for fs in sets:
        rep = evaluate({freq: (records, fs)}, fs.provenance)
        result["members"].append(rep)
    if ensemble and sets:
        ens = ensemble_mean(sets)
        result["ensemble"] = evaluate({freq: (records, ens)}, {"ensemble": len(sets)})
    if median and sets:
        s = [m.per_frequency[freq] for m in result["members"]]
        result["median"] = {
            k: float(np.median([getattr(x, k) for x in s])) for k in ("smape", "mase", "owa", "r05")
        }
    return result


# -- ablations --------------------------------------------------------------
ABLATION_STUDIES = {
    "skip": {"skip_mode": ["none", "skip_only", "skip_gate"]},
    "norm": {"connector": ["rezero", "pre_ln", "post_ln"], "pos_encoding": ["rotary", "sinusoidal"]},
}


def ablation_arms(study: str, arms: dict[str, list[str]] | None = None) -> list[dict]:
    if study not in ABLATION_STUDIES:
        raise ConfigError(f"unknown study {study!r}; choose from {sorted(ABLATION_STUDIES)}")
    axes = dict(ABLATION_STUDIES[study])
    if arms:
        axes.update({k: v for k, v in arms.items() if k in axes and v})
    if any(not v for v in axes.values()):
        raise ConfigError("ablation arm lists must be non-empty")
    keys = list(axes)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(axes[k] for k in keys))]


def arm_config(rc: RunConfig, arm: dict, d_model: int) -> RunConfig:
    t = rc.pi.transformer
    tcfg = TransformerConfig(
        n_layers=t.n_layers,
        n_heads=t.n_heads,
        d_model=d_model,
        d_ff=4 * d_model,
        connector=arm.get("connector", t.connector),
        pos_encoding=arm.get("pos_encoding", t.pos_encoding),
    )
    pi = replace(rc.pi, skip_mode=arm.get("skip_mode", rc.pi.skip_mode), transformer=tcfg)
    return replace(rc, pi=pi)


def _ablation_job(args):
    rc_dict, arm, d_model, seed, records, run_dir, loss_epoch = args
    rc = arm_config(RunConfig.from_dict(rc_dict), arm, d_model)
    res = train_seed(rc, seed, records, run_dir)
    fs = model_forecasts(res.model, records)
    sc = score_frequency(records, fs)
    early = [h.train_loss_mean for h in res.history if h.epoch == loss_epoch]
    return {
        "arm": arm,
        "d_model": d_model,
        "seed": seed,
        "owa": sc.owa,
        "smape": sc.smape,
        "mase": sc.mase,
        "r05": sc.r05,
        "best_epoch": res.best_epoch,
        "epochs_run": len(res.history),
        f"train_loss_epoch{loss_epoch}": early[0] if early else None,
        "initial_train_loss": res.initial_train_loss,
    }


def run_ablation(
    rc: RunConfig,
    records: list[SeriesRecord],
    study: str,
    d_models: Sequence[int],
    out: Path | None = None,
    arms: dict[str, list[str]] | None = None,
    loss_epoch: int = 5,
) -> dict:
    """Cartesian sweep arms x sizes x seeds; returns raw rows and per-(arm, size) summaries."""
    if not d_models:
        raise ConfigError("ablation needs at least one d_model")
    arm_list = ablation_arms(study, arms)
    jobs = []
    for arm in arm_list:
        for d in d_models:
            for seed in rc.seeds:
                tag = "_".join(f"{v}" for v in arm.values())
                run_dir = None if out is None else Path(out) / f"{tag}_d{d}" / f"seed_{seed}"
                jobs.append((rc.to_dict(), arm, d, seed, records, run_dir, loss_epoch))
    if rc.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=rc.workers) as pool:
            rows = list(pool.map(_ablation_job, jobs))
    else:
        rows = [_ablation_job(j) for j in jobs]
    summary = []
    key = f"train_loss_epoch{loss_epoch}"
    for arm in arm_list:
        for d in d_models:
            sel = [r for r in rows if r["arm"] == arm and r["d_model"] == d]
            owas = np.array([r["owa"] for r in sel])
            losses = [r[key] for r in sel if r[key] is not None]
            summary.append({
                "arm": arm,
                "d_model": d,
                "n_seeds": len(sel),
                "owa_min": float(owas.min()),
                "owa_median": float(np.median(owas)),
                "owa_max": float(owas.max()),
                "r05_median": float(np.median([r["r05"] for r in sel])),
                f"mean_{key}": float(np.mean(losses)) if losses else None,
            })
    result = {"study": study, "rows": rows, "summary": summary}
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "ablation.json").write_text(json.dumps(result, indent=2, sort_keys=True))
    return result


def format_ablation(result: dict) -> str:
    lines = [f"{'arm':<28} {'d_model':>7} {'n':>3} {'OWA min':>8} {'median':>8} {'max':>8}"]
    for s in result["summary"]:
        arm = ",".join(f"{v}" for v in s["arm"].values())
        lines.append(
            f"{arm:<28} {s['d_model']:>7d} {s['n_seeds']:>3d} {s['owa_min']:>8.3f} "
            f"{s['owa_median']:>8.3f} {s['owa_max']:>8.3f}"
        )
    return "\n".join(lines)

