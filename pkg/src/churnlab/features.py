"""RFM aggregations and design-matrix assembly for the logistic models."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dataset import CHANNELS, Panel, mean_std

N_LAGS = 6
EPSILON = 1e-6
QUARTER_MODES = ("preceding", "final")


def agg_mean(series) -> float:
    x = np.asarray(series, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot average an empty series")
    return float(x.mean())


def agg_mean_first_diff(series) -> float:
    """Mean of the first differences, i.e. ``(x[-1] - x[0]) / (len(x) - 1)`` since the sum telescopes."""
    x = np.asarray(series, dtype=np.float64)
    if x.size < 2:
        raise ValueError("need at least two observations for a first difference")
    return float((x[-1] - x[0]) / (x.size - 1))


def _lag_denominators(x: np.ndarray, n_lags: int, quarter: str) -> np.ndarray:
    """Per-lag reference level for the last ``n_lags`` months of ``x`` (..., T)."""
    T = x.shape[-1]
    if quarter == "final":
        ref = x[..., T - 3:].mean(axis=-1)
        return np.repeat(ref[..., None], n_lags, axis=-1)
    if quarter != "preceding":
        raise ValueError(f"quarter must be one of {QUARTER_MODES}, got {quarter!r}")
    cols = []
    for t in range(T - n_lags, T):  # 0-based month index
        q_start = (t // 3) * 3       # first month of t's calendar quarter
        if q_start < 3:
            raise ValueError("series too short for a preceding quarter")
        cols.append(x[..., q_start - 3:q_start].mean(axis=-1))
    return np.stack(cols, axis=-1)


def normalized_lagged(series, n_lags: int = N_LAGS, epsilon: float = EPSILON,
                      quarter: str = "preceding") -> tuple[np.ndarray, np.ndarray]:
    """Last ``n_lags`` values, each divided by the mean of the previous calendar quarter.

    Months are grouped 1-3, 4-6, ... so months 31-33 are divided by the mean
    of 28-30 and months 34-36 by the mean of 31-33.  ``quarter="final"``
    divides all lags by the mean of the last three months instead.

    Returns ``(values, guarded)`` where ``guarded`` marks lags whose
    denominator was below ``epsilon`` and got replaced by it.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or x.size % 3 or x.size < n_lags + 3:
        raise ValueError("series length must be a multiple of 3 covering the lags plus one quarter")
    den = _lag_denominators(x, n_lags, quarter)
    guarded = den < epsilon
    return x[-n_lags:] / np.maximum(den, epsilon), guarded


@dataclass(frozen=True)
class FeatureSpec:
    use_static: bool = True
    use_agg_rfm: bool = False
    use_norm_lagged: bool = False
    use_lstm_prob: bool = False
    # False keeps only the per-channel means in the aggregate block
    agg_with_diff: bool = True

    def __post_init__(self):
        if not (self.use_static or self.use_agg_rfm or self.use_norm_lagged or self.use_lstm_prob):
            raise ValueError("feature spec selects no features")

    def n_columns(self, n_static: int) -> int:
        agg = (6 if self.agg_with_diff else 3) * self.use_agg_rfm
        return n_static * self.use_static + agg + 3 * N_LAGS * self.use_norm_lagged + self.use_lstm_prob


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    ids: np.ndarray
    columns: tuple[str, ...]
    values: np.ndarray
    guarded: int = 0  # count of epsilon-guarded lag entries

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.float64).reshape(ids.size, len(self.columns))
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("column names must be unique")
        if not np.isfinite(vals).all():
            raise ValueError("feature matrix contains non-finite values")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "columns", tuple(self.columns))

    def __eq__(self, other):
        if not isinstance(other, FeatureMatrix):
            return NotImplemented
        return (self.columns == other.columns and np.array_equal(self.ids, other.ids)
                and np.array_equal(self.values, other.values))

    __hash__ = None  # type: ignore[assignment]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", *self.columns])
            for cid, row in zip(self.ids, self.values):
                w.writerow([int(cid), *(repr(float(v)) for v in row)])


def build_feature_matrix(panel: Panel, spec: FeatureSpec,
                         lstm_probs: Mapping[int, float] | None = None,
                         quarter: str = "preceding", epsilon: float = EPSILON) -> FeatureMatrix:
    """Column layout: static, per-channel (mean, mean first diff), per-channel 6 lags, LSTM probability."""
    blocks: list[np.ndarray] = []
    names: list[str] = []
    n = len(panel)
    guarded = 0

    if spec.use_static:
        blocks.append(panel.static)
        names.extend(panel.static_names)
    if spec.use_agg_rfm:
        T = panel.rfm.shape[1]
        for c, ch in enumerate(CHANNELS):
            x = panel.rfm[:, :, c]
            blocks.append(x.mean(axis=1)[:, None])
            names.append(f"{ch}_mean")
            if spec.agg_with_diff:
                blocks.append(((x[:, -1] - x[:, 0]) / (T - 1))[:, None])
                names.append(f"{ch}_mean_diff")
    if spec.use_norm_lagged:
        T = panel.rfm.shape[1]
        for c, ch in enumerate(CHANNELS):
            x = panel.rfm[:, :, c]
            den = _lag_denominators(x, N_LAGS, quarter) if n else np.zeros((0, N_LAGS))
            guarded += int((den < epsilon).sum())
            blocks.append(x[:, -N_LAGS:] / np.maximum(den, epsilon))
            names.extend(f"{ch}_norm_{t}" for t in range(T - N_LAGS + 1, T + 1))
    if spec.use_lstm_prob:
        if lstm_probs is None:
            raise ValueError("spec needs LSTM probabilities but none were given")
        col = np.empty(n)
        for i, cid in enumerate(panel.ids):
            try:
                col[i] = lstm_probs[int(cid)]
            except KeyError:
                raise KeyError(f"no LSTM probability for customer {int(cid)}") from None
        blocks.append(col[:, None])
        names.append("lstm_prob")

    values = np.hstack(blocks) if blocks else np.zeros((n, 0))
    return FeatureMatrix(panel.ids, tuple(names), values.reshape(n, len(names)), guarded)


@dataclass(frozen=True)
class ColumnScaler:
    columns: tuple[str, ...]
    means: np.ndarray
    stds: np.ndarray
    constant: np.ndarray

    def apply(self, fm: FeatureMatrix) -> FeatureMatrix:
        if fm.columns != self.columns:
            raise ValueError("feature columns differ from the ones the scaler was fit on")
        return FeatureMatrix(fm.ids, fm.columns, (fm.values - self.means) / self.stds, fm.guarded)


def fit_column_scaler(fm: FeatureMatrix) -> ColumnScaler:
    if fm.shape[0] == 0:
        raise ValueError("cannot fit a scaler on zero rows")
    mu, sd, const = mean_std(fm.values, axis=0)
    return ColumnScaler(fm.columns, mu, sd, const)


def rows_for(fm: FeatureMatrix, ids: Sequence[int]) -> FeatureMatrix:
    pos = {int(v): i for i, v in enumerate(fm.ids)}
    idx = np.array([pos[int(v)] for v in ids], dtype=np.int64)
    return FeatureMatrix(fm.ids[idx], fm.columns, fm.values[idx])
