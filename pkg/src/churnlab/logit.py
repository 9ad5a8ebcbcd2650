"""L1-penalized logistic regression fit by proximal gradient descent.

Objective (labels y in {0, 1}, z = Xw + b)::

    sum_i log(1 + exp(-(2 y_i - 1) z_i)) + ||w||_1 / C

The intercept is not penalized.  Larger ``C`` means weaker regularization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

C_GRID = (0.001, 0.01, 0.02, 0.03, 0.04, 0.05, 0.1, 1.0)
MAX_ITER = 5000
TOL = 1e-8


def _as_matrix(X) -> np.ndarray:
    return np.asarray(getattr(X, "values", X), dtype=np.float64)


def _check_xy(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError(f"X has shape {X.shape} but there are {y.shape[0]} labels")
    if not np.isfinite(X).all():
        raise ValueError("X contains non-finite values")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be 0 or 1")
    return X, y


def data_loss(X: np.ndarray, y: np.ndarray, w: np.ndarray, b: float) -> float:
    z = X @ w + b
    return float(np.logaddexp(0.0, -(2.0 * y - 1.0) * z).sum())


def data_grad(X: np.ndarray, y: np.ndarray, w: np.ndarray, b: float) -> tuple[np.ndarray, float]:
    r = expit(X @ w + b) - y
    return X.T @ r, float(r.sum())


def objective(X, y, w, b, C: float) -> float:
    X, y = _check_xy(X, y)
    w = np.asarray(w, dtype=np.float64)
    return data_loss(X, y, w, b) + np.abs(w).sum() / C


def soft_threshold(v: np.ndarray, thresh: float) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - thresh, 0.0)


@dataclass(frozen=True)
class LogisticModel:
    weights: np.ndarray
    intercept: float
    C: float
    converged: bool = True
    n_iter: int = 0
    columns: tuple[str, ...] = ()
    objective_history: tuple[float, ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be positive")
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def decision_function(self, X) -> np.ndarray:
        X = _as_matrix(X)
        if X.ndim != 2 or X.shape[1] != self.weights.size:
            raise ValueError(f"model has {self.weights.size} weights, X has shape {X.shape}")
        return X @ self.weights + self.intercept

    def to_dict(self) -> dict:
        return {
            "kind": "l1_logistic",
            "columns": list(self.columns),
            "weights": [float(v) for v in self.weights],
            "intercept": float(self.intercept),
            "C": float(self.C),
            "converged": bool(self.converged),
            "n_iter": int(self.n_iter),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LogisticModel":
        return cls(np.array(d["weights"], dtype=np.float64), float(d["intercept"]), float(d["C"]),
                   bool(d.get("converged", True)), int(d.get("n_iter", 0)), tuple(d.get("columns", ())))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "LogisticModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def fit_l1_logistic(X, y, C: float, max_iter: int = MAX_ITER, tol: float = TOL,
                    seed: int | None = None, columns: Sequence[str] | None = None) -> LogisticModel:
    """Proximal gradient (ISTA) with backtracking, starting from zero.

    The step starts at 1/L for the global Lipschitz bound L of the smooth
    part and only ever shrinks, so the objective is non-increasing.
    ``seed`` is accepted for interface symmetry and unused: the fit is
    deterministic.
    """
    del seed
    if not C > 0:
        raise ValueError("C must be positive")
    if columns is None:
        columns = getattr(X, "columns", ())
    X, y = _check_xy(X, y)
    n, p = X.shape
    lam = 1.0 / C
    w = np.zeros(p)
    b = 0.0
    # 1/L for the smooth part, L = ||[X 1]||^2 / 4
    lip = 0.25 * (np.linalg.norm(np.column_stack([X, np.ones(n)]), 2) ** 2 if n else 1.0)
    step = 1.0 / max(lip, 1e-12)

    f = data_loss(X, y, w, b)
    history = [f + lam * np.abs(w).sum()]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        gw, gb = data_grad(X, y, w, b)
        t = step
        while True:
            w_new = soft_threshold(w - t * gw, t * lam)
            b_new = b - t * gb
            dw, db = w_new - w, b_new - b
            f_new = data_loss(X, y, w_new, b_new)
            quad = f + gw @ dw + gb * db + (dw @ dw + db * db) / (2.0 * t)
            if f_new <= quad + 1e-14 * max(1.0, abs(f)) or t < 1e-20:
                break
            t *= 0.5
        step = t
        change = max(np.abs(dw).max() if p else 0.0, abs(db))
        w, b, f = w_new, b_new, f_new
        history.append(f + lam * np.abs(w).sum())
        if change < tol:
            converged = True
            break

    return LogisticModel(w, b, C, converged, it, tuple(columns), tuple(history))


def predict_proba(model: LogisticModel, X) -> np.ndarray:
    """Sigmoid of the linear score; no clipping is applied to the returned values."""
    return expit(model.decision_function(X))


def optimality_residual(model: LogisticModel, X, y) -> float:
    """Largest violation of the L1 subgradient optimality conditions (0 at the exact optimum)."""
    X, y = _check_xy(X, y)
    gw, gb = data_grad(X, y, model.weights, model.intercept)
    lam = 1.0 / model.C
    w = model.weights
    res_w = np.where(w != 0, np.abs(gw + lam * np.sign(w)), np.maximum(np.abs(gw) - lam, 0.0))
    return float(max(res_w.max() if w.size else 0.0, abs(gb)))
