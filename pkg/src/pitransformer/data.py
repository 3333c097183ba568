"""M4 ingestion, per-frequency constants, sub-sequence splits and batch sampling."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FrequencyMeta:
    name: str
    horizon: int
    seasonality: int
    window_multiple: int
    n_series: int
    min_length: int
    p25_length: int
    p50_length: int
    p75_length: int
    max_length: int

    @property
    def input_length(self) -> int:
        return self.window_multiple * self.horizon

    @property
    def subsequence_length(self) -> int:
        return self.input_length + self.horizon


# M4 descriptive statistics; n = 4 for Weekly and Hourly, 3 elsewhere
FREQUENCIES: dict[str, FrequencyMeta] = {
    m.name.lower(): m
    for m in (
        FrequencyMeta("Yearly", 6, 1, 3, 23000, 19, 26, 35, 46, 841),
        FrequencyMeta("Quarterly", 8, 4, 3, 24000, 24, 70, 96, 123, 874),
        FrequencyMeta("Monthly", 18, 12, 3, 48000, 60, 100, 220, 324, 2812),
        FrequencyMeta("Weekly", 13, 1, 4, 359, 93, 392, 947, 1616, 2610),
        FrequencyMeta("Daily", 14, 1, 3, 4227, 107, 337, 2954, 4211, 9933),
        FrequencyMeta("Hourly", 48, 24, 4, 414, 748, 748, 1008, 1008, 1008),
    )
}


def get_frequency(name: str | FrequencyMeta) -> FrequencyMeta:
    if isinstance(name, FrequencyMeta):
        return name
    try:
        return FREQUENCIES[name.lower()]
    except KeyError:
        raise ConfigError(f"unknown frequency {name!r}; choose from {sorted(FREQUENCIES)}") from None


@dataclass
class SeriesRecord:
    id: str
    frequency: FrequencyMeta
    train_values: np.ndarray
    test_values: np.ndarray | None = None

    def __post_init__(self):
        self.train_values = np.asarray(self.train_values, dtype=np.float64)
        if self.test_values is not None:
            self.test_values = np.asarray(self.test_values, dtype=np.float64)
        for part, vals in (("train", self.train_values), ("test", self.test_values)):
            if vals is not None and not np.all(vals > 0):
                raise DataError(f"series {self.id!r}: non-positive value in {part} part")
        if self.test_values is not None and len(self.test_values) != self.frequency.horizon:
            raise DataError(
                f"series {self.id!r}: {len(self.test_values)} test values, "
                f"expected H={self.frequency.horizon}"
            )

    @property
    def length(self) -> int:
        return len(self.train_values)

    @property
    def is_short(self) -> bool:
        """Too short for one full input+target sub-sequence."""
        return self.length < self.frequency.subsequence_length


# -- CSV I/O ----------------------------------------------------------------
def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def read_rows(path) -> Iterator[tuple[int, str, list[float]]]:
    """Yield ``(line_number, id, values)`` from an M4-style CSV.

    A header on the first line is skipped; trailing empty cells are dropped.
    """
    with open(path, newline="") as fh:
        for line_no, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            cells = [c.strip() for c in row]
            while cells and cells[-1] == "":
                cells.pop()
            sid, raw = cells[0], cells[1:]
            if line_no == 1 and raw and not all(_is_number(c) for c in raw if c):
                continue
            if line_no == 1 and not raw and not _is_number(sid):
                continue
            try:
                values = [float(c) for c in raw]
            except ValueError:
                raise DataError(f"{path}:{line_no}: non-numeric value in row {sid!r}") from None
            if any(c == "" for c in raw):
                raise DataError(f"{path}:{line_no}: empty cell inside row {sid!r}")
            yield line_no, sid, values


def load_m4_csv(train_path, test_path, frequency) -> list[SeriesRecord]:
    """Load one frequency's ``<Freq>-train.csv`` and optional ``<Freq>-test.csv``."""
    meta = get_frequency(frequency)
    train = {}
    for line_no, sid, values in read_rows(train_path):
        if not values:
            raise DataError(f"{train_path}:{line_no}: series {sid!r} has no values")
        if sid in train:
            raise DataError(f"{train_path}:{line_no}: duplicate series id {sid!r}")
        train[sid] = values
    tests: dict[str, list[float]] = {}
    if test_path is not None:
        for line_no, sid, values in read_rows(test_path):
            if sid not in train:
                raise DataError(f"{test_path}:{line_no}: series {sid!r} not in training file")
            tests[sid] = values
        missing = [sid for sid in train if sid not in tests]
        if missing:
            raise DataError(f"{test_path}: no test values for {len(missing)} series, e.g. {missing[:5]}")
    records = [
        SeriesRecord(sid, meta, np.array(v), np.array(tests[sid]) if sid in tests else None)
        for sid, v in train.items()
    ]
    short = sum(r.length < meta.min_length for r in records)
    if short:
        log.info("%s: %d series shorter than the official minimum %d", meta.name, short, meta.min_length)
    return records


def m4_paths(data_root, frequency) -> tuple[Path, Path]:
    """Locate ``<Freq>-train.csv`` / ``<Freq>-test.csv`` under ``data_root`` (or its Train/ Test/ dirs)."""
    meta = get_frequency(frequency)
    root = Path(data_root)
    for train, test in (
        (root / f"{meta.name}-train.csv", root / f"{meta.name}-test.csv"),
        (root / "Train" / f"{meta.name}-train.csv", root / "Test" / f"{meta.name}-test.csv"),
    ):
        if train.exists():
            return train, test
    raise DataError(f"no {meta.name}-train.csv under {root}")


def load_frequency(data_root, frequency, require_test: bool = True) -> list[SeriesRecord]:
    train, test = m4_paths(data_root, frequency)
    if not test.exists():
        if require_test:
            raise DataError(f"missing test file {test}")
        test = None
    return load_m4_csv(train, test, frequency)


def write_m4_csv(path, records: Sequence[SeriesRecord], part: str = "train") -> None:
    """Write records in the M4 layout (quoted ids, header ``"V1","V2",...``)."""
    rows = [r.train_values if part == "train" else r.test_values for r in records]
    width = max((len(v) for v in rows), default=0) + 1
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_NONNUMERIC)
        w.writerow([f"V{i}" for i in range(1, width + 1)])
        for r, vals in zip(records, rows):
            cells = [r.id] + [float(v) for v in vals]
            w.writerow(cells + [""] * (width - len(cells)))


# -- splits -----------------------------------------------------------------
@dataclass
class SplitPlan:
    """Window layout per series.

    Training windows of series i start at offsets ``0 .. n_train[i]-1``. A
    padded series has ``n_train == 1`` and its single window is left-padded.
    ``val_start[i]`` is -1 when the series has no validation window.
    """

    frequency: FrequencyMeta
    n_train: np.ndarray
    val_start: np.ndarray
    padded: np.ndarray
    percentile_threshold: float

    @property
    def length(self) -> int:
        return self.frequency.subsequence_length

    def train_starts(self, i: int) -> range:
        return range(int(self.n_train[i]))

    @property
    def total_train_windows(self) -> int:
        return int(self.n_train.sum())

    @property
    def validation_series(self) -> np.ndarray:
        return np.flatnonzero(self.val_start >= 0)


def build_split(records: Sequence[SeriesRecord], frequency=None, pad_short: bool = False) -> SplitPlan:
    """Enumerate stride-1 training windows and the rightmost validation window.

    Series shorter than the 25th percentile of training lengths get no
    validation window. Training windows must end before the validation targets
    when a validation window exists. Series shorter than nH+H get no windows,
    or one left-padded window when ``pad_short`` is set.
    """
    if not records:
        raise ConfigError("build_split needs at least one series")
    meta = get_frequency(frequency) if frequency is not None else records[0].frequency
    length = meta.subsequence_length
    lengths = np.array([r.length for r in records])
    threshold = float(np.percentile(lengths, 25))
    has_val = (lengths >= threshold) & (lengths >= length)
    end = np.where(has_val, lengths - meta.horizon, lengths)
    n_train = np.maximum(end - length + 1, 0)
    padded = np.zeros(len(records), dtype=bool)
    if pad_short:
        padded = lengths < length
        n_train = np.where(padded, 1, n_train)
    val_start = np.where(has_val, lengths - length, -1)
    if n_train.sum() == 0:
        raise ConfigError(f"{meta.name}: no usable training windows of length {length}")
    return SplitPlan(meta, n_train.astype(np.int64), val_start.astype(np.int64), padded, threshold)


def extract_window(values: np.ndarray, start: int, length: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(window, mask)``; windows running off the left edge are padded with values[0]."""
    values = np.asarray(values)
    if start >= 0:
        win = values[start:start + length]
        if len(win) != length:
            raise DataError(f"window [{start}, {start + length}) exceeds series length {len(values)}")
        return win.copy(), np.ones(length, dtype=bool)
    pad = -start
    win = np.concatenate([np.full(pad, values[0]), values[: length - pad]])
    if len(win) != length:
        raise DataError(f"series of length {len(values)} cannot fill a padded window of {length}")
    mask = np.arange(length) >= pad
    return win, mask


@dataclass
class WindowBatch:
    """Raw sub-sequences ``windows[batch, nH+H]`` with a validity mask (False on padding)."""

    windows: np.ndarray
    mask: np.ndarray
    series_index: np.ndarray
    starts: np.ndarray
    ids: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.windows)

    def inputs(self, input_length: int) -> np.ndarray:
        return self.windows[:, :input_length]

    def targets(self, input_length: int) -> np.ndarray:
        return self.windows[:, input_length:]


def _window_start(plan: SplitPlan, records, i: int, offset: int) -> int:
    if plan.padded[i]:
        return records[i].length - plan.length
    return offset


def make_batch(plan: SplitPlan, records, series_index, offsets) -> WindowBatch:
    wins, masks, starts = [], [], []
    for i, off in zip(series_index, offsets):
        start = _window_start(plan, records, int(i), int(off))
        w, m = extract_window(records[i].train_values, start, plan.length)
        wins.append(w)
        masks.append(m)
        starts.append(start)
    return WindowBatch(
        np.array(wins).reshape(-1, plan.length),
        np.array(masks).reshape(-1, plan.length),
        np.asarray(series_index, dtype=np.int64),
        np.array(starts, dtype=np.int64),
        [records[i].id for i in series_index],
    )


def sample_batch(plan: SplitPlan, records, batch_size: int, rng: np.random.Generator) -> WindowBatch:
    """Draw a series uniformly, then one of its training windows uniformly; repeat."""
    eligible = np.flatnonzero(plan.n_train > 0)
    if len(eligible) == 0:
        raise ConfigError("split plan has no training windows")
    series = eligible[rng.integers(0, len(eligible), size=batch_size)]
    offsets = rng.integers(0, plan.n_train[series])
    return make_batch(plan, records, series, offsets)


def validation_batch(plan: SplitPlan, records) -> WindowBatch:
    idx = plan.validation_series
    return make_batch(plan, records, idx, plan.val_start[idx])


def forecast_inputs(records: Sequence[SeriesRecord], input_length: int) -> tuple[np.ndarray, np.ndarray]:
    """Last ``input_length`` training values per series, left-padded when short."""
    wins, masks = [], []
    for r in records:
        w, m = extract_window(r.train_values, r.length - input_length, input_length)
        wins.append(w)
        masks.append(m)
    return np.array(wins).reshape(-1, input_length), np.array(masks).reshape(-1, input_length)


# -- subsets and synthetic data --------------------------------------------
def stratified_subsample(records: Sequence[SeriesRecord], fraction: float, seed: int = 0) -> list[SeriesRecord]:
    """Random ``ceil(fraction * N)`` series (at least one), in original order."""
    if not 0 < fraction <= 1:
        raise ConfigError("subsample fraction must be in (0, 1]")
    n = max(1, math.ceil(fraction * len(records)))
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(len(records), size=n, replace=False))
    return [records[i] for i in keep]


def synthetic_series(
    frequency,
    n_series: int,
    seed: int = 0,
    lengths: Sequence[int] | None = None,
    noise: float = 0.05,
) -> list[SeriesRecord]:
    """Positive series with trend, seasonal cycles and multiplicative noise.

    For Hourly the cycles are daily and weekly; lengths default to the
    frequency's official quartile lengths. Used for fixtures and dry runs.
    """
    meta = get_frequency(frequency)
    rng = np.random.default_rng(seed)
    if lengths is None:
        lengths = [meta.p25_length, meta.p50_length, meta.p75_length]
    periods = {"hourly": (24, 168), "monthly": (12,), "quarterly": (4,), "weekly": (52,), "daily": (7,)}
    cycles = periods.get(meta.name.lower(), ())
    out = []
    for k in range(n_series):
        T = int(lengths[k % len(lengths)])
        t = np.arange(T + meta.horizon)
        level = rng.uniform(50, 5000)
        log_series = rng.normal(0, 0.002) * t
        for period in cycles:
            amp = rng.uniform(0.05, 0.4)
            phase = rng.uniform(0, 2 * np.pi)
            log_series = log_series + amp * np.sin(2 * np.pi * t / period + phase)
        walk = np.cumsum(rng.normal(0, noise * 0.2, size=len(t)))
        log_series = log_series + walk + rng.normal(0, noise, size=len(t))
        vals = level * np.exp(log_series)
        out.append(SeriesRecord(f"{meta.name[0]}{k + 1}", meta, vals[:T], vals[T:]))
    return out
