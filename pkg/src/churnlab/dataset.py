"""Customer panel container, synthetic RFM generator, CSV persistence and
the split / sampling / scaling helpers used by the cross-validation code.

A panel stores every customer's static features, a 36-month series of
(recency, frequency, monetary) values and the churn label.  Arrays are kept
column-oriented for speed; :meth:`Panel.records` yields per-customer views.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

MONTHS = 36
CHANNELS = ("r", "f", "m")
CSV_VERSION_TAG = "# churnlab-panel v1"

# churners are picked by Gumbel top-k on this logit; see generate_synthetic
_STATIC_CHURN_COEF = 2.0
_N_INFORMATIVE_STATIC = 3


class PanelFormatError(ValueError):
    """Malformed panel CSV. ``line`` is 1-based (``None`` for whole-file problems)."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


def round_half_up(x: float) -> int:
    # tiny slack so that e.g. 0.1 * 25 == 2.5000000000000004 style noise does not flip the result
    return int(math.floor(x + 0.5 + 1e-9))


@dataclass(frozen=True)
class CustomerRecord:
    id: int
    static: np.ndarray
    rfm: np.ndarray
    churned: bool


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Panel:
    """Immutable customer panel.

    ``rfm`` has shape ``(n, months, 3)`` with channels ordered recency,
    frequency, monetary and months oldest first.  ``standardized`` marks
    panels produced by :func:`apply_standardizer`; the raw-data range checks
    (static in [0, 1], non-negative RFM) are skipped for those.
    """

    ids: np.ndarray
    static: np.ndarray
    rfm: np.ndarray
    churned: np.ndarray
    static_names: tuple[str, ...]
    months: int = MONTHS
    standardized: bool = False

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        n = ids.shape[0]
        static = np.asarray(self.static, dtype=np.float64).reshape(n, -1) if n else (
            np.zeros((0, len(self.static_names))))
        rfm = np.asarray(self.rfm, dtype=np.float64)
        if n == 0:
            rfm = rfm.reshape(0, self.months, len(CHANNELS))
        churned = np.asarray(self.churned, dtype=bool).reshape(-1)
        names = tuple(str(s) for s in self.static_names)

        if rfm.shape != (n, self.months, len(CHANNELS)):
            raise ValueError(f"rfm must have shape ({n}, {self.months}, 3), got {rfm.shape}")
        if static.shape[1] != len(names):
            raise ValueError(f"{static.shape[1]} static columns but {len(names)} names")
        if churned.shape[0] != n:
            raise ValueError("label count does not match id count")
        if len(set(names)) != len(names):
            raise ValueError("static names must be unique")
        if np.unique(ids).size != n:
            raise ValueError("customer ids must be unique")
        if n and ids.min() < 0:
            raise ValueError("customer ids must be non-negative")
        if not (np.isfinite(static).all() and np.isfinite(rfm).all()):
            raise ValueError("panel values must be finite")
        if not self.standardized:
            if static.size and (static.min() < 0.0 or static.max() > 1.0):
                raise ValueError("static features must lie in [0, 1]")
            if rfm.size and rfm.min() < 0.0:
                raise ValueError("RFM values must be non-negative")

        object.__setattr__(self, "ids", _readonly(ids))
        object.__setattr__(self, "static", _readonly(static))
        object.__setattr__(self, "rfm", _readonly(rfm))
        object.__setattr__(self, "churned", _readonly(churned))
        object.__setattr__(self, "static_names", names)

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Panel):
            return NotImplemented
        return (
            self.static_names == other.static_names
            and self.months == other.months
            and self.standardized == other.standardized
            and np.array_equal(self.ids, other.ids)
            and np.array_equal(self.static, other.static)
            and np.array_equal(self.rfm, other.rfm)
            and np.array_equal(self.churned, other.churned)
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def n_static(self) -> int:
        return len(self.static_names)

    @property
    def n_churners(self) -> int:
        return int(self.churned.sum())

    @property
    def churn_rate(self) -> float:
        if len(self) == 0:
            raise ValueError("empty panel has no churn rate")
        return self.n_churners / len(self)

    def labels(self) -> np.ndarray:
        return self.churned.astype(np.int64)

    def records(self) -> Iterator[CustomerRecord]:
        for i in range(len(self)):
            yield CustomerRecord(int(self.ids[i]), self.static[i], self.rfm[i], bool(self.churned[i]))

    def subset(self, mask_or_index: np.ndarray) -> "Panel":
        idx = np.asarray(mask_or_index)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return Panel(
            ids=self.ids[idx],
            static=self.static[idx],
            rfm=self.rfm[idx],
            churned=self.churned[idx],
            static_names=self.static_names,
            months=self.months,
            standardized=self.standardized,
        )

    def select_ids(self, ids: Sequence[int]) -> "Panel":
        pos = {int(v): i for i, v in enumerate(self.ids)}
        try:
            idx = np.array([pos[int(v)] for v in ids], dtype=np.int64)
        except KeyError as exc:
            raise KeyError(f"id {exc.args[0]} not in panel") from None
        return self.subset(idx)

    @classmethod
    def empty(cls, n_static: int = 0) -> "Panel":
        return cls(
            ids=np.zeros(0, dtype=np.int64),
            static=np.zeros((0, n_static)),
            rfm=np.zeros((0, MONTHS, 3)),
            churned=np.zeros(0, dtype=bool),
            static_names=tuple(f"s{j}" for j in range(n_static)),
        )


# --------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class GeneratorConfig:
    n_customers: int = 3000
    churn_rate: float = 0.00243
    n_static: int = 10
    signal_strength: float = 1.0
    noise_scale: float = 0.25
    seed: int = 0

    def validate(self) -> None:
        if self.n_customers <= 0:
            raise ValueError("n_customers must be positive")
        if not 0.0 < self.churn_rate < 1.0:
            raise ValueError("churn_rate must lie in (0, 1)")
        if self.n_static < 0:
            raise ValueError("n_static must be non-negative")
        if self.signal_strength < 0:
            raise ValueError("signal_strength must be >= 0")
        if self.noise_scale <= 0:
            raise ValueError("noise_scale must be > 0")

    @property
    def n_churners(self) -> int:
        return round_half_up(self.churn_rate * self.n_customers)


def generate_synthetic(config: GeneratorConfig) -> Panel:
    """Draw a synthetic panel with the qualitative churner patterns of real bank data.

    Non-churners follow stationary positive series (customer base level,
    yearly ripple, multiplicative noise).  Churners share the same base but,
    scaled by ``signal_strength``, their frequency and monetary value fall
    linearly over the final six months and their recency sits lower over the
    whole window.  The churner set has exactly ``round(churn_rate * n)``
    members, drawn with probability tilted by the first few static columns.
    """
    config.validate()
    n, p = config.n_customers, config.n_static
    m = config.n_churners
    if m < 1 or m >= n:
        raise ValueError(f"churn_rate * n_customers rounds to {m}; need 1 <= churners < n")
    rng = np.random.default_rng(config.seed)
    s = config.signal_strength

    static = rng.uniform(0.0, 1.0, size=(n, p))
    n_inf = min(p, _N_INFORMATIVE_STATIC)
    logit = _STATIC_CHURN_COEF * (static[:, :n_inf] - 0.5).sum(axis=1) if n_inf else np.zeros(n)
    # Gumbel top-k: exact count, sampling weights proportional to exp(logit)
    keys = logit + rng.gumbel(size=n)
    churned = np.zeros(n, dtype=bool)
    churned[np.argsort(-keys, kind="stable")[:m]] = True

    t = np.arange(MONTHS, dtype=np.float64)
    base = np.column_stack([
        rng.lognormal(np.log(10.0), 0.4, n),   # recency (days since last transaction)
        rng.lognormal(np.log(4.0), 0.5, n),    # frequency (transactions per month)
        rng.lognormal(np.log(100.0), 0.6, n),  # monetary (amount per month)
    ])
    phase = rng.uniform(0.0, 2 * np.pi, size=(n, 1, 1))
    ripple = 1.0 + 0.1 * np.sin(2 * np.pi * t[None, :, None] / 12.0 + phase)
    noise = np.exp(config.noise_scale * rng.standard_normal((n, MONTHS, 3))
                   - 0.5 * config.noise_scale ** 2)
    rfm = base[:, None, :] * ripple * noise

    if s > 0:
        # k = 1..6 over months 31..36, reaching the full drop at month 36
        ramp = np.zeros(MONTHS)
        ramp[-6:] = np.arange(1, 7) / 6.0
        freq_drop = min(0.9, 0.5 * s)
        money_drop = min(0.9, 0.3 * s)
        recency_shift = min(0.5, 0.15 * s)
        rfm[churned, :, 1] *= 1.0 - freq_drop * ramp
        rfm[churned, :, 2] *= 1.0 - money_drop * ramp
        rfm[churned, :, 0] *= 1.0 - recency_shift

    return Panel(
        ids=np.arange(n, dtype=np.int64),
        static=static,
        rfm=np.maximum(rfm, 0.0),
        churned=churned,
        static_names=tuple(f"s{j}" for j in range(p)),
    )


# --------------------------------------------------------------------------
# CSV


def _header(panel_static_names: Sequence[str]) -> list[str]:
    cols = ["id", "churned", *panel_static_names]
    for ch in CHANNELS:
        cols.extend(f"{ch}_{t}" for t in range(1, MONTHS + 1))
    return cols


def save_csv(panel: Panel, path: str | Path) -> None:
    """Write ``panel`` using the versioned ``churnlab-panel v1`` layout.

    Floats are written with ``repr`` so that loading restores them bit for bit.
    """
    if panel.months != MONTHS:
        raise ValueError("CSV layout is defined for 36-month panels only")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(CSV_VERSION_TAG + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_header(panel.static_names))
        flat = panel.rfm.transpose(0, 2, 1).reshape(len(panel), 3 * MONTHS)
        for i in range(len(panel)):
            w.writerow([
                int(panel.ids[i]),
                int(panel.churned[i]),
                *(repr(float(v)) for v in panel.static[i]),
                *(repr(float(v)) for v in flat[i]),
            ])


def load_csv(path: str | Path) -> Panel:
    with open(path, newline="", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != CSV_VERSION_TAG:
        raise PanelFormatError(f"missing version tag {CSV_VERSION_TAG!r}", line=1)
    if len(lines) < 2:
        raise PanelFormatError("missing header row", line=2)
    header = next(csv.reader([lines[1]]))
    if header[:2] != ["id", "churned"]:
        raise PanelFormatError("header must start with id,churned", line=2)
    try:
        first_rfm = header.index("r_1")
    except ValueError:
        raise PanelFormatError("header has no r_1 column", line=2) from None
    static_names = header[2:first_rfm]
    if header[first_rfm:] != _header([])[2:]:
        raise PanelFormatError(f"RFM columns must be r_1..r_{MONTHS}, f_1..f_{MONTHS}, m_1..m_{MONTHS}",
                               line=2)
    n_cols = len(header)
    p = len(static_names)

    ids, labels, statics, series = [], [], [], []
    seen: set[int] = set()
    for lineno, row in enumerate(csv.reader(lines[2:]), start=3):
        if not row:
            continue
        cid = row[0]
        if len(row) != n_cols:
            n_rfm = len(row) - 2 - p
            raise PanelFormatError(
                f"customer {cid}: expected {n_cols} fields, got {len(row)}"
                f" ({n_rfm} RFM values instead of {3 * MONTHS})",
                line=lineno,
            )
        try:
            i = int(cid)
        except ValueError:
            raise PanelFormatError(f"bad id {cid!r}", line=lineno) from None
        if i < 0 or i in seen:
            raise PanelFormatError(f"customer {cid}: id negative or duplicated", line=lineno)
        seen.add(i)
        if row[1] not in ("0", "1"):
            raise PanelFormatError(f"customer {cid}: churned must be 0 or 1, got {row[1]!r}",
                                   line=lineno)
        try:
            vals = np.array([float(v) for v in row[2:]], dtype=np.float64)
        except ValueError as exc:
            raise PanelFormatError(f"customer {cid}: {exc}", line=lineno) from None
        if not np.isfinite(vals).all():
            raise PanelFormatError(f"customer {cid}: non-finite value", line=lineno)
        st, rf = vals[:p], vals[p:]
        if st.size and (st.min() < 0 or st.max() > 1):
            raise PanelFormatError(f"customer {cid}: static value outside [0, 1]", line=lineno)
        if rf.min() < 0:
            raise PanelFormatError(f"customer {cid}: negative RFM value", line=lineno)
        ids.append(i)
        labels.append(row[1] == "1")
        statics.append(st)
        series.append(rf.reshape(3, MONTHS).T)

    n = len(ids)
    return Panel(
        ids=np.array(ids, dtype=np.int64),
        static=np.array(statics).reshape(n, p),
        rfm=np.array(series).reshape(n, MONTHS, 3),
        churned=np.array(labels, dtype=bool),
        static_names=tuple(static_names),
    )


# --------------------------------------------------------------------------
# folds and sampling


@dataclass(frozen=True)
class FoldAssignment:
    fold_of: Mapping[int, int]
    k: int

    def test_ids(self, fold: int) -> list[int]:
        return [i for i, f in self.fold_of.items() if f == fold]

    def train_ids(self, fold: int) -> list[int]:
        return [i for i, f in self.fold_of.items() if f != fold]

    def split(self, panel: Panel, fold: int) -> tuple[Panel, Panel]:
        """(train, test) panels for ``fold``, each keeping the panel's row order."""
        folds = np.array([self.fold_of[int(i)] for i in panel.ids])
        return panel.subset(folds != fold), panel.subset(folds == fold)


def stratified_kfold(panel: Panel, k: int, seed: int) -> FoldAssignment:
    """Assign customers to ``k`` folds, dealing each class round-robin after a seeded shuffle.

    Non-churners continue the round-robin where churners stopped, so total
    fold sizes also differ by at most one.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    y = panel.churned
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos < k or n_neg < k:
        raise ValueError(f"need at least {k} churners and {k} non-churners for {k} folds, "
                         f"got {n_pos} and {n_neg}")
    rng = np.random.default_rng(seed)
    order = np.concatenate([rng.permutation(panel.ids[y]), rng.permutation(panel.ids[~y])])
    return FoldAssignment({int(cid): pos % k for pos, cid in enumerate(order)}, k)


def undersample(panel: Panel, ratio: int = 2, seed: int = 0) -> Panel:
    """Keep every churner plus ``ratio`` randomly chosen non-churners per churner.

    Rows keep their original relative order.
    """
    if int(ratio) != ratio or ratio < 1:
        raise ValueError("ratio must be an integer >= 1")
    y = panel.churned
    need = int(ratio) * int(y.sum())
    neg = np.flatnonzero(~y)
    if need > neg.size:
        raise ValueError(f"need {need} non-churners for ratio {ratio}, only {neg.size} available")
    rng = np.random.default_rng(seed)
    keep = np.zeros(len(panel), dtype=bool)
    keep[y] = True
    keep[rng.choice(neg, size=need, replace=False)] = True
    return panel.subset(keep)


# --------------------------------------------------------------------------
# standardization


def mean_std(values: np.ndarray, axis) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Population mean/std along ``axis``; zero-variance entries get std 1 and a True flag."""
    mu = values.mean(axis=axis)
    sd = values.std(axis=axis)
    const = ~(sd > 1e-12 * np.maximum(1.0, np.abs(mu)))
    # exact centre for constant columns so they map to exactly 0
    mu = np.where(const, values.min(axis=axis), mu)
    return mu, np.where(const, 1.0, sd), const


@dataclass(frozen=True)
class Standardizer:
    static_means: np.ndarray
    static_stds: np.ndarray
    rfm_means: np.ndarray
    rfm_stds: np.ndarray
    static_constant: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    rfm_constant: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=bool))

    def __post_init__(self):
        if (np.asarray(self.static_stds) <= 0).any() or (np.asarray(self.rfm_stds) <= 0).any():
            raise ValueError("standard deviations must be positive")


def fit_standardizer(panel: Panel) -> Standardizer:
    """Static columns are scaled one by one; each RFM channel is pooled over customers and months."""
    if len(panel) == 0:
        raise ValueError("cannot fit a standardizer on an empty panel")
    sm, ss, sc = mean_std(panel.static, axis=0)
    rm, rs, rc = mean_std(panel.rfm, axis=(0, 1))
    return Standardizer(sm, ss, rm, rs, sc, rc)


def apply_standardizer(std: Standardizer, panel: Panel) -> Panel:
    return Panel(
        ids=panel.ids,
        static=(panel.static - std.static_means) / std.static_stds,
        rfm=(panel.rfm - std.rfm_means) / std.rfm_stds,
        churned=panel.churned,
        static_names=panel.static_names,
        months=panel.months,
        standardized=True,
    )
