"""Ranking and profit metrics: AUC, top-fraction lift, lift curves, ROC convex hull and EMPC.

Every metric here depends on the scores only through their order, so any
strictly increasing transform of the scores leaves the results unchanged.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy import special, stats

from .dataset import round_half_up


def _check(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    y = y.astype(np.int64)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.size:
        raise ValueError("both classes must be present")
    return s, y


def _tie_groups(s: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Positive and negative counts per distinct score, highest score first."""
    uniq, inv = np.unique(s, return_inverse=True)
    pos = np.bincount(inv, weights=y, minlength=uniq.size).astype(np.int64)
    tot = np.bincount(inv, minlength=uniq.size).astype(np.int64)
    return pos[::-1], (tot - pos)[::-1]


def auc(scores, labels) -> float:
    """P(s+ > s-) + P(s+ = s-) / 2, from integer pair counts over tie groups."""
    s, y = _check(scores, labels)
    pos, neg = _tie_groups(s, y)
    # walking from the top, a positive beats every negative in lower groups
    neg_below = int(neg.sum()) - np.cumsum(neg)
    wins = int((pos * neg_below).sum())
    ties = int((pos * neg).sum())
    n_pos, n_neg = int(pos.sum()), int(neg.sum())
    return (2 * wins + ties) / (2 * n_pos * n_neg)


def ranking(scores) -> np.ndarray:
    """Indices ordered by descending score, ties by ascending position."""
    s = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(s.size), -s))


def lift(scores, labels, fraction: float = 0.10) -> float:
    """Churn rate among the top ``round(n * fraction)`` customers over the overall churn rate."""
    s, y = _check(scores, labels)
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    n = s.size
    k = round_half_up(n * fraction)
    if k < 1:
        raise ValueError(f"fraction {fraction} of {n} customers selects nobody")
    top_pos = int(y[ranking(s)[:k]].sum())
    return (top_pos * n) / (k * int(y.sum()))


def lift_curve(scores, labels, max_percentile: int = 20) -> list[tuple[int, float]]:
    s, y = _check(scores, labels)
    order = ranking(s)
    n, total = s.size, int(y.sum())
    hits = np.cumsum(y[order])
    curve = []
    for p in range(1, max_percentile + 1):
        k = round_half_up(n * p / 100.0)
        if k < 1:
            raise ValueError(f"percentile {p} of {n} customers selects nobody")
        curve.append((p, (int(hits[k - 1]) * n) / (k * total)))
    return curve


# --------------------------------------------------------------------------
# ROC geometry


class RocPoint(NamedTuple):
    F0: float  # fraction of churners targeted (true positive rate)
    F1: float  # fraction of non-churners targeted (false positive rate)


def _roc_counts(s: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative (true positive, false positive) counts at every score threshold, from (0, 0)."""
    pos, neg = _tie_groups(s, y)
    tp = np.concatenate([[0], np.cumsum(pos)])
    fp = np.concatenate([[0], np.cumsum(neg)])
    return tp, fp


def roc_points(scores, labels) -> list[RocPoint]:
    s, y = _check(scores, labels)
    tp, fp = _roc_counts(s, y)
    return [RocPoint(a / tp[-1], b / fp[-1]) for a, b in zip(tp, fp)]


def _hull_counts(tp: np.ndarray, fp: np.ndarray) -> list[tuple[int, int]]:
    # upper hull in the (fp, tp) plane; integer cross products keep it exact
    pts = sorted(set(zip(fp.tolist(), tp.tolist())))
    hull: list[tuple[int, int]] = []
    for p in pts:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            cross = (x2 - x1) * (p[1] - y1) - (y2 - y1) * (p[0] - x1)
            if cross >= 0:  # hull[-1] on or below the chord: drop it
                hull.pop()
            else:
                break
        hull.append(p)
    return [(t, f) for f, t in hull]


def roc_convex_hull(scores, labels) -> list[RocPoint]:
    """Vertices of the upper-left ROC hull from (0, 0) to (1, 1), slopes strictly decreasing."""
    s, y = _check(scores, labels)
    tp, fp = _roc_counts(s, y)
    P, N = int(tp[-1]), int(fp[-1])
    return [RocPoint(t / P, f / N) for t, f in _hull_counts(tp, fp)]


# --------------------------------------------------------------------------
# expected maximum profit


@dataclass(frozen=True)
class EmpcParams:
    clv: float = 200.0
    d: float = 10.0
    f: float = 1.0
    alpha: float = 6.0
    beta: float = 14.0

    def __post_init__(self):
        if not self.clv > 0:
            raise ValueError("clv must be positive")
        if self.d < 0 or self.f < 0:
            raise ValueError("d and f must be non-negative")
        if not self.d < self.clv or not self.f < self.clv:
            raise ValueError("d and f must be smaller than clv")
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("alpha and beta must be positive")

    @property
    def delta(self) -> float:
        return self.d / self.clv

    @property
    def phi(self) -> float:
        return self.f / self.clv


def _profit_lines(F0, F1, pi0: float, params: EmpcParams) -> tuple[np.ndarray, np.ndarray]:
    """Per-customer profit at each ROC point as ``slope * gamma + offset``."""
    F0 = np.asarray(F0, dtype=np.float64)
    F1 = np.asarray(F1, dtype=np.float64)
    pi1 = 1.0 - pi0
    slope = params.clv * (1.0 - params.delta) * pi0 * F0
    offset = -params.clv * (params.phi * pi0 * F0 + (params.delta + params.phi) * pi1 * F1)
    return slope, offset


def empc(scores, labels, params: EmpcParams = EmpcParams()) -> float:
    """Expected maximum profit per customer over a Beta(alpha, beta) offer acceptance rate.

    Each hull vertex is the profit-maximizing cutoff on one gamma interval,
    bounded by where the neighbouring vertices break even.  The integral of
    its linear profit against the Beta density is exact via regularized
    incomplete beta functions.
    """
    s, y = _check(scores, labels)
    tp, fp = _roc_counts(s, y)
    P, N = int(tp[-1]), int(fp[-1])
    hull = _hull_counts(tp, fp)
    F0 = np.array([t / P for t, _ in hull])
    F1 = np.array([f / N for _, f in hull])
    pi0 = P / (P + N)
    delta, phi = params.delta, params.phi

    # gamma above which vertex k+1 beats vertex k
    dF0, dF1 = np.diff(F0), np.diff(F1)
    with np.errstate(divide="ignore"):
        cut = np.where(
            dF0 > 0,
            (phi * pi0 * dF0 + (delta + phi) * (1.0 - pi0) * dF1) / np.where(dF0 > 0, (1 - delta) * pi0 * dF0, 1.0),
            np.inf,
        )
    lo = np.clip(np.concatenate([[-np.inf], cut]), 0.0, 1.0)
    hi = np.clip(np.concatenate([cut, [np.inf]]), 0.0, 1.0)
    hi = np.maximum(hi, lo)

    a, b = params.alpha, params.beta
    mass = special.betainc(a, b, hi) - special.betainc(a, b, lo)
    first_moment = a / (a + b) * (special.betainc(a + 1, b, hi) - special.betainc(a + 1, b, lo))
    slope, offset = _profit_lines(F0, F1, pi0, params)
    return float(max(0.0, (slope * first_moment + offset * mass).sum()))


def empc_bruteforce(scores, labels, params: EmpcParams = EmpcParams(), grid_size: int = 20001) -> float:
    """Trapezoidal gamma-grid integration of the best profit over all empirical ROC points.

    Needs a bounded density, i.e. alpha >= 1 and beta >= 1.
    """
    s, y = _check(scores, labels)
    tp, fp = _roc_counts(s, y)
    P, N = int(tp[-1]), int(fp[-1])
    slope, offset = _profit_lines(tp / P, fp / N, P / (P + N), params)
    gamma = np.linspace(0.0, 1.0, grid_size)
    best = np.max(slope[:, None] * gamma[None, :] + offset[:, None], axis=0)
    dens = stats.beta.pdf(gamma, params.alpha, params.beta)
    integrand = best * dens
    return float(np.sum((integrand[1:] + integrand[:-1]) * np.diff(gamma)) / 2.0)


def max_profit(scores, labels, gamma: float, params: EmpcParams = EmpcParams()) -> float:
    """Deterministic maximum profit at a fixed acceptance rate."""
    s, y = _check(scores, labels)
    tp, fp = _roc_counts(s, y)
    P, N = int(tp[-1]), int(fp[-1])
    slope, offset = _profit_lines(tp / P, fp / N, P / (P + N), params)
    return float(np.max(slope * gamma + offset))


# --------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class MetricReport:
    auc: float
    lift10: float
    empc: float
    lift_curve: tuple[tuple[int, float], ...] = field(default=())

    def __post_init__(self):
        if not 0.0 <= self.auc <= 1.0:
            raise ValueError("auc outside [0, 1]")
        if self.lift10 < 0:
            raise ValueError("lift must be non-negative")
        object.__setattr__(self, "lift_curve", tuple((int(p), float(v)) for p, v in self.lift_curve))


def evaluate(scores, labels, params: EmpcParams = EmpcParams(), max_percentile: int = 20) -> MetricReport:
    return MetricReport(
        auc=auc(scores, labels),
        lift10=lift(scores, labels, 0.10),
        empc=empc(scores, labels, params),
        lift_curve=tuple(lift_curve(scores, labels, max_percentile)),
    )


def mean_report(reports: Sequence[MetricReport]) -> MetricReport:
    if not reports:
        raise ValueError("no reports to average")
    k = len(reports)
    curve = ()
    if all(r.lift_curve for r in reports):
        pct = [p for p, _ in reports[0].lift_curve]
        curve = tuple((p, sum(r.lift_curve[i][1] for r in reports) / k) for i, p in enumerate(pct))
    return MetricReport(
        auc=sum(r.auc for r in reports) / k,
        lift10=sum(r.lift10 for r in reports) / k,
        empc=sum(r.empc for r in reports) / k,
        lift_curve=curve,
    )


def write_lift_curve_csv(path: str | Path, curves: dict[str, Sequence[tuple[int, float]]]) -> None:
    """One row per percentile, one column per model."""
    names = list(curves)
    if not names:
        raise ValueError("no curves to write")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["percentile", *names])
        for i, (p, _) in enumerate(curves[names[0]]):
            w.writerow([p, *(repr(float(curves[m][i][1])) for m in names)])


def read_lift_curve_csv(path: str | Path) -> dict[str, list[tuple[int, float]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2 or rows[0][:1] != ["percentile"] or len(rows[0]) < 2:
        raise ValueError(f"{path}: empty or malformed lift curve file")
    names = rows[0][1:]
    out: dict[str, list[tuple[int, float]]] = {m: [] for m in names}
    for row in rows[1:]:
        for m, v in zip(names, row[1:]):
            out[m].append((int(row[0]), float(v)))
    return out
