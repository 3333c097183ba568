"""Run configuration: profiles, file/flag layering and JSON round trip."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .data import get_frequency
from .errors import ConfigError
from .model import PIConfig
from .training import TrainConfig
from .transformer import TransformerConfig

DATA_ROOT_ENV = "PITF_DATA_ROOT"

MODEL_KEYS = ("n_layers", "n_heads", "d_model", "d_ff", "connector", "pos_encoding")
TRAIN_KEYS = (
    "batch_size", "batches_per_epoch", "patience", "grad_clip_norm", "max_epochs",
    "lr", "beta1", "beta2", "eps", "weight_decay", "val_chunk",
)

PROFILES: dict[str, dict] = {
    # d_ff follows 4 * d_model unless set explicitly
    # desk defaults are sized for one CPU; "paper" is the full-scale preset
    "desk": {"d_model": 32, "batch_size": 128, "batches_per_epoch": 32},
    "paper": {"d_model": 512, "batch_size": 1024, "batches_per_epoch": 128},
}

BASE_SETTINGS: dict = {
    "frequency": "hourly",
    "data_root": None,
    "subsample": None,
    "subsample_seed": 0,
    "pad_short": False,
    "seeds": [0],
    "workers": 1,
    "out": "runs/run",
    "skip_mode": "skip_gate",
    "window_multiple": None,
    "n_layers": 4,
    "n_heads": 4,
    "d_model": 32,
    "d_ff": None,
    "connector": "rezero",
    "pos_encoding": "rotary",
    "batch_size": 128,
    "batches_per_epoch": 32,
    "patience": 8,
    "grad_clip_norm": 10.0,
    "max_epochs": 100,
    "lr": 1e-3,
    "beta1": 0.9,
    "beta2": 0.999,
    "eps": 1e-6,
    "weight_decay": 0.0,
    "val_chunk": 256,
}


@dataclass
class RunConfig:
    frequency: str
    pi: PIConfig
    train: TrainConfig
    seeds: list[int] = field(default_factory=lambda: [0])
    data_root: str | None = None
    subsample: float | None = None
    subsample_seed: int = 0
    pad_short: bool = False
    workers: int = 1
    out: str = "runs/run"

    def train_config(self, seed: int) -> TrainConfig:
        d = self.train.to_dict()
        d["seed"] = seed
        return TrainConfig(**d)

    def to_dict(self) -> dict:
        train = self.train.to_dict()
        train.pop("seed")
        return {
            "frequency": self.frequency,
            "model": self.pi.to_dict(),
            "train": train,
            "seeds": list(self.seeds),
            "data_root": self.data_root,
            "subsample": self.subsample,
            "subsample_seed": self.subsample_seed,
            "pad_short": self.pad_short,
            "workers": self.workers,
            "out": self.out,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(
            frequency=d["frequency"],
            pi=PIConfig.from_dict(d["model"]),
            train=TrainConfig(**d["train"]),
            seeds=list(d.get("seeds", [0])),
            data_root=d.get("data_root"),
            subsample=d.get("subsample"),
            subsample_seed=d.get("subsample_seed", 0),
            pad_short=d.get("pad_short", False),
            workers=d.get("workers", 1),
            out=d.get("out", "runs/run"),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def flatten_file_config(d: dict) -> dict:
    """Accept either a flat settings dict or a saved (nested) RunConfig."""
    if "model" not in d and "train" not in d:
        return dict(d)
    flat = {k: v for k, v in d.items() if k not in ("model", "train")}
    model = dict(d.get("model", {}))
    flat.update(model.pop("transformer", {}))
    flat["skip_mode"] = model.get("skip_mode", flat.get("skip_mode"))
    flat["window_multiple"] = model.get("window_multiple")
    flat.update(d.get("train", {}))
    return flat


def resolve(profile: str = "desk", file_settings: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Layer base settings < profile < config file < explicit overrides (None = unset)."""
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    s = dict(BASE_SETTINGS)
    s.update(PROFILES[profile])
    if file_settings:
        unknown = set(file_settings) - set(BASE_SETTINGS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        s.update(file_settings)
    for k, v in (overrides or {}).items():
        if v is not None:
            if k not in BASE_SETTINGS:
                raise ConfigError(f"unknown setting {k!r}")
            s[k] = v
    meta = get_frequency(s["frequency"])
    if s["data_root"] is None:
        s["data_root"] = os.environ.get(DATA_ROOT_ENV)
    d_ff = s["d_ff"] if s["d_ff"] is not None else 4 * s["d_model"]
    tcfg = TransformerConfig(**{**{k: s[k] for k in MODEL_KEYS}, "d_ff": d_ff})
    pi = PIConfig(
        horizon=meta.horizon,
        window_multiple=s["window_multiple"] or meta.window_multiple,
        skip_mode=s["skip_mode"],
        transformer=tcfg,
    )
    train = TrainConfig(**{k: s[k] for k in TRAIN_KEYS})
    seeds = s["seeds"]
    if isinstance(seeds, int):
        seeds = list(range(seeds))
    if not seeds:
        raise ConfigError("at least one seed is required")
    return RunConfig(
        frequency=meta.name.lower(),
        pi=pi,
        train=train,
        seeds=[int(x) for x in seeds],
        data_root=s["data_root"],
        subsample=s["subsample"],
        subsample_seed=s["subsample_seed"],
        pad_short=bool(s["pad_short"]),
        workers=int(s["workers"]),
        out=str(s["out"]),
    )
