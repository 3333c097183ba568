"""M4 scoring: sMAPE, MASE, OWA against Naive2, the 0.5-quantile loss, baselines and reports."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import FrequencyMeta, SeriesRecord, get_frequency, read_rows
from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

# one-sided 90% critical value of the seasonality test
SEASONALITY_Z = 1.645


# -- point metrics ----------------------------------------------------------
def smape_per_series(forecasts, actuals) -> np.ndarray:
    """(200/H) * sum |y - yhat| / (|y| + |yhat|) per row; 0/0 terms count as 0."""
    f = np.atleast_2d(np.asarray(forecasts, dtype=np.float64))
    y = np.atleast_2d(np.asarray(actuals, dtype=np.float64))
    if f.shape != y.shape:
        raise ConfigError(f"forecast shape {f.shape} != actual shape {y.shape}")
    num = np.abs(y - f)
    den = np.abs(y) + np.abs(f)
    terms = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return 200.0 * terms.mean(axis=1)


def smape(forecasts, actuals) -> float:
    return float(smape_per_series(forecasts, actuals).mean())


def mase_scale(insample, seasonality: int) -> float:
    """In-sample MAE of the seasonal naive forecast at lag S."""
    x = np.asarray(insample, dtype=np.float64)
    if len(x) <= seasonality:
        raise DataError(f"series of length {len(x)} too short for lag {seasonality}")
    return float(np.abs(x[seasonality:] - x[:-seasonality]).mean())


def mase_per_series(forecasts, actuals, insamples: Sequence, seasonality: int) -> np.ndarray:
    """MASE per series; series with a zero in-sample scale come back as NaN."""
    f = np.atleast_2d(np.asarray(forecasts, dtype=np.float64))
    y = np.atleast_2d(np.asarray(actuals, dtype=np.float64))
    if f.shape != y.shape or len(insamples) != len(f):
        raise ConfigError("forecasts, actuals and in-sample series must align")
    out = np.empty(len(f))
    for i, x in enumerate(insamples):
        scale = mase_scale(x, seasonality)
        out[i] = np.abs(y[i] - f[i]).mean() / scale if scale > 0 else np.nan
    return out


def mase(forecasts, actuals, insamples: Sequence, seasonality: int) -> float:
    per = mase_per_series(forecasts, actuals, insamples, seasonality)
    bad = np.isnan(per)
    if bad.any():
        log.warning("MASE: %d series with zero in-sample scale excluded", int(bad.sum()))
    if bad.all():
        raise DataError("MASE undefined: every series has zero in-sample scale")
    return float(per[~bad].mean())


def owa(model_smape: float, model_mase: float, naive2_smape: float, naive2_mase: float) -> float:
    if naive2_smape <= 0 or naive2_mase <= 0:
        raise ConfigError("Naive2 reference scores must be positive")
    return 0.5 * (model_smape / naive2_smape + model_mase / naive2_mase)


def r05_loss(forecasts, actuals) -> float:
    """sum |y - yhat| / sum |y| over every series and horizon step."""
    f = np.asarray(forecasts, dtype=np.float64)
    y = np.asarray(actuals, dtype=np.float64)
    if f.shape != y.shape:
        raise ConfigError(f"forecast shape {f.shape} != actual shape {y.shape}")
    den = np.abs(y).sum()
    if den == 0:
        raise DataError("R0.5 undefined for all-zero actuals")
    return float(np.abs(y - f).sum() / den)


# -- baselines --------------------------------------------------------------
def acf(x, lag: int) -> float:
    x = np.asarray(x, dtype=np.float64)
    c = x - x.mean()
    den = (c * c).sum()
    if den == 0:
        return 0.0
    return float((c[lag:] * c[: len(c) - lag]).sum() / den)


def seasonality_test(x, seasonality: int) -> bool:
    """|r_S| > 1.645 * sqrt((1 + 2 * sum_{i<S} r_i^2) / T)."""
    r = [acf(x, i) for i in range(1, seasonality + 1)]
    limit = SEASONALITY_Z * np.sqrt((1 + 2 * sum(v * v for v in r[:-1])) / len(x))
    return abs(r[-1]) > limit


def moving_average_trend(x, seasonality: int) -> np.ndarray:
    """Centered moving average of width S (2xS for even S); NaN at the edges."""
    x = np.asarray(x, dtype=np.float64)
    if seasonality % 2:
        w = np.ones(seasonality) / seasonality
    else:
        w = np.r_[0.5, np.ones(seasonality - 1), 0.5] / seasonality
    half = len(w) // 2
    trend = np.full(len(x), np.nan)
    trend[half: len(x) - half] = np.convolve(x, w, mode="valid")
    return trend


def seasonal_indices(x, seasonality: int) -> np.ndarray:
    """Classical multiplicative indices for phases 0..S-1 (phase = position mod S), mean 1."""
    x = np.asarray(x, dtype=np.float64)
    ratio = x / moving_average_trend(x, seasonality)
    phases = np.arange(len(x)) % seasonality
    idx = np.array([np.nanmean(ratio[phases == p]) for p in range(seasonality)])
    return idx / idx.mean()


def naive2_forecast(series, seasonality: int, horizon: int) -> np.ndarray:
    """Persistence on the seasonally adjusted series, reseasonalized.

    The adjustment applies when S > 1, the series covers at least three
    seasonal cycles, and the lag-S autocorrelation test passes.
    """
    x = np.asarray(series, dtype=np.float64)
    if seasonality > 1 and len(x) >= 3 * seasonality and seasonality_test(x, seasonality):
        si = seasonal_indices(x, seasonality)
        T = len(x)
        last = x[-1] / si[(T - 1) % seasonality]
        return last * si[(T + np.arange(horizon)) % seasonality]
    return np.full(horizon, x[-1])


def seasonal_naive_forecast(series, seasonality: int, horizon: int) -> np.ndarray:
    x = np.asarray(series, dtype=np.float64)
    last_cycle = x[-seasonality:]
    return last_cycle[np.arange(horizon) % seasonality]


def naive_forecast(series, horizon: int) -> np.ndarray:
    return np.full(horizon, float(np.asarray(series)[-1]))


BASELINES = ("naive2", "snaive", "naive")


def baseline_forecasts(records: Sequence[SeriesRecord], method: str = "naive2") -> "ForecastSet":
    if method not in BASELINES:
        raise ConfigError(f"baseline must be one of {BASELINES}")
    out = {}
    for r in records:
        meta = r.frequency
        if method == "naive2":
            out[r.id] = naive2_forecast(r.train_values, meta.seasonality, meta.horizon)
        elif method == "snaive":
            out[r.id] = seasonal_naive_forecast(r.train_values, meta.seasonality, meta.horizon)
        else:
            out[r.id] = naive_forecast(r.train_values, meta.horizon)
    return ForecastSet(out, {"method": method})


# -- forecast sets ----------------------------------------------------------
@dataclass
class ForecastSet:
    forecasts: dict[str, np.ndarray]
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.forecasts)

    def matrix(self, ids: Sequence[str]) -> np.ndarray:
        missing = [i for i in ids if i not in self.forecasts]
        if missing:
            raise DataError(f"forecasts missing for {len(missing)} series, e.g. {missing[:5]}")
        return np.array([self.forecasts[i] for i in ids])


def ensemble_mean(sets: Sequence[ForecastSet]) -> ForecastSet:
    """Pointwise mean in data space; every set must cover the same series."""
    if not sets:
        raise ConfigError("ensemble of zero forecast sets")
    ids = set(sets[0].forecasts)
    for s in sets[1:]:
        if set(s.forecasts) != ids:
            diff = sorted(ids.symmetric_difference(s.forecasts))
            raise DataError(f"forecast sets cover different series: {diff[:10]}")
    mean = {sid: np.mean([s.forecasts[sid] for s in sets], axis=0) for sid in sets[0].forecasts}
    return ForecastSet(mean, {"ensemble_of": [s.provenance for s in sets]})


def write_forecasts(path, fs: ForecastSet, horizon: int | None = None) -> None:
    """CSV with header ``id,F1..FH``; shorter rows are right-padded with empty cells."""
    width = horizon or max((len(v) for v in fs.forecasts.values()), default=0)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id"] + [f"F{i}" for i in range(1, width + 1)])
        for sid, vals in fs.forecasts.items():
            cells = [repr(float(v)) for v in vals]
            w.writerow([sid] + cells + [""] * (width - len(cells)))


def read_forecasts(path, ids: Sequence[str] | None = None, horizon: int | None = None) -> ForecastSet:
    """Read an M4-submission-style file; keep only ``ids`` and the first ``horizon`` values."""
    wanted = None if ids is None else set(ids)
    out = {}
    for line_no, sid, values in read_rows(path):
        if wanted is not None and sid not in wanted:
            continue
        if horizon is not None:
            if len(values) < horizon:
                raise DataError(f"{path}:{line_no}: {sid!r} has {len(values)} values, need {horizon}")
            values = values[:horizon]
        out[sid] = np.array(values)
    return ForecastSet(out, {"file": str(path)})


# -- reports ----------------------------------------------------------------
@dataclass
class FrequencyScores:
    frequency: str
    n_series: int
    smape: float
    mase: float
    owa: float
    r05: float
    naive2_smape: float
    naive2_mase: float
    abs_error_sum: float
    abs_actual_sum: float


@dataclass
class EvalReport:
    per_frequency: dict[str, FrequencyScores]
    total: FrequencyScores | None = None
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "per_frequency": {k: asdict(v) for k, v in self.per_frequency.items()},
            "total": asdict(self.total) if self.total else None,
            "provenance": self.provenance,
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    def table(self) -> str:
        head = f"{'frequency':<10} {'N':>7} {'sMAPE':>8} {'MASE':>8} {'OWA':>7} {'R0.5':>7}"
        lines = [head, "-" * len(head)]
        rows = list(self.per_frequency.values())
        if self.total is not None and len(rows) > 1:
            rows.append(self.total)
        for s in rows:
            lines.append(
                f"{s.frequency:<10} {s.n_series:>7d} {s.smape:>8.3f} {s.mase:>8.3f} "
                f"{s.owa:>7.3f} {s.r05:>7.4f}"
            )
        return "\n".join(lines)


def score_frequency(records: Sequence[SeriesRecord], fs: ForecastSet, naive2: ForecastSet | None = None) -> FrequencyScores:
    """Score one frequency; Naive2 references are computed from ``records`` unless given."""
    if not records:
        raise ConfigError("nothing to score")
    meta: FrequencyMeta = records[0].frequency
    ids = [r.id for r in records]
    if any(r.test_values is None for r in records):
        raise DataError(f"{meta.name}: test values are required for scoring")
    y = np.array([r.test_values for r in records])
    insamples = [r.train_values for r in records]
    f = fs.matrix(ids)
    if naive2 is None:
        naive2 = baseline_forecasts(records, "naive2")
    n2 = naive2.matrix(ids)
    s, m = smape(f, y), mase(f, y, insamples, meta.seasonality)
    ns, nm = smape(n2, y), mase(n2, y, insamples, meta.seasonality)
    return FrequencyScores(
        meta.name, len(records), s, m, owa(s, m, ns, nm), r05_loss(f, y), ns, nm,
        float(np.abs(y - f).sum()), float(np.abs(y).sum()),
    )


def aggregate(scores: Sequence[FrequencyScores]) -> FrequencyScores:
    """Series-count-weighted totals.

    sMAPE, MASE and the Naive2 references are weighted means; the total OWA is
    formed from those totals, and R0.5 pools absolute errors over every series.
    """
    n = np.array([s.n_series for s in scores], dtype=np.float64)
    w = n / n.sum()

    def wmean(attr):
        return float(np.dot(w, [getattr(s, attr) for s in scores]))

    s, m = wmean("smape"), wmean("mase")
    ns, nm = wmean("naive2_smape"), wmean("naive2_mase")
    err = float(sum(s_.abs_error_sum for s_ in scores))
    act = float(sum(s_.abs_actual_sum for s_ in scores))
    return FrequencyScores("Total", int(n.sum()), s, m, owa(s, m, ns, nm), err / act, ns, nm, err, act)


def evaluate(groups: Mapping[str, tuple[Sequence[SeriesRecord], ForecastSet]], provenance: dict | None = None) -> EvalReport:
    """Build a report from ``{frequency: (records, forecasts)}``."""
    per = {}
    for name, (records, fs) in groups.items():
        per[get_frequency(name).name] = score_frequency(records, fs)
    total = aggregate(list(per.values())) if per else None
    return EvalReport(per, total, provenance or {})
