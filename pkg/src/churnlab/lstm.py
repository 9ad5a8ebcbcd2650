"""Single-layer LSTM churn classifier trained with mini-batch Adam.

Cell, for gate order (input, forget, output, candidate)::

    i, f, o = sigmoid(W x_t + U h_{t-1} + b)     (three gates)
    g       = tanh(W_g x_t + U_g h_{t-1} + b_g)
    c_t     = f * c_{t-1} + i * g
    h_t     = o * tanh(c_t)

with h_0 = c_0 = 0.  The churn probability is ``sigmoid(w_out . h_T + b_out)``.

Parameters live in one flat float64 vector so that Adam and the finite
difference check can treat them uniformly; :class:`LstmModel` exposes
shaped read-only views.  The hot loops (loss/gradient and batch prediction)
are numba kernels; :func:`lstm_forward` is a plain numpy evaluation of one
sequence kept as a readable reference.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

N_INPUTS = 3
HIDDEN_GRID = (5, 10, 25, 30)
LEARNING_RATE_GRID = (0.001,)
EPOCH_GRID = (10, 25, 50, 75)
BATCH_GRID = (10, 25, 50, 100, 250)
ADAM_BETA1, ADAM_BETA2, ADAM_EPS = 0.9, 0.999, 1e-8
FORGET_BIAS_INIT = 1.0
GATES = ("input", "forget", "output", "candidate")


@dataclass(frozen=True)
class LstmHyper:
    hidden_units: int = 5
    learning_rate: float = 0.001
    epochs: int = 10
    batch_size: int = 10
    seed: int = field(default=0, compare=False)

    def __post_init__(self):
        if min(self.hidden_units, self.epochs, self.batch_size) <= 0 or self.learning_rate <= 0:
            raise ValueError("LSTM hyperparameters must be positive")

    def key(self) -> tuple:
        return (self.hidden_units, self.learning_rate, self.epochs, self.batch_size)

    def label(self) -> str:
        return (f"H={self.hidden_units} lr={self.learning_rate:g} "
                f"epochs={self.epochs} batch={self.batch_size}")


def lstm_grid(hidden=HIDDEN_GRID, learning_rates=LEARNING_RATE_GRID, epochs=EPOCH_GRID,
              batch_sizes=BATCH_GRID) -> list[LstmHyper]:
    return [LstmHyper(h, lr, e, b)
            for h, lr, e, b in itertools.product(hidden, learning_rates, epochs, batch_sizes)]


def n_params(H: int, D: int = N_INPUTS) -> int:
    return 4 * H * D + 4 * H * H + 4 * H + H + 1


@dataclass(frozen=True, eq=False)
class LstmModel:
    theta: np.ndarray
    hyper: LstmHyper
    n_inputs: int = N_INPUTS
    loss_history: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self):
        th = np.array(self.theta, dtype=np.float64).reshape(-1)
        if th.size != n_params(self.hyper.hidden_units, self.n_inputs):
            raise ValueError("parameter vector does not match hidden_units")
        if not np.isfinite(th).all():
            raise ValueError("LSTM parameters must be finite")
        th.setflags(write=False)
        object.__setattr__(self, "theta", th)

    def __eq__(self, other):
        if not isinstance(other, LstmModel):
            return NotImplemented
        return (self.hyper.key() == other.hyper.key() and self.n_inputs == other.n_inputs
                and np.array_equal(self.theta, other.theta))

    __hash__ = None  # type: ignore[assignment]

    def _slices(self):
        H, D = self.hyper.hidden_units, self.n_inputs
        a = 4 * H * D
        b = a + 4 * H * H
        c = b + 4 * H
        return H, D, a, b, c

    @property
    def W(self) -> np.ndarray:
        """Input weights, shape (4, H, D)."""
        H, D, a, _, _ = self._slices()
        return self.theta[:a].reshape(4, H, D)

    @property
    def U(self) -> np.ndarray:
        """Recurrent weights, shape (4, H, H)."""
        H, _, a, b, _ = self._slices()
        return self.theta[a:b].reshape(4, H, H)

    @property
    def b(self) -> np.ndarray:
        H, _, _, b, c = self._slices()
        return self.theta[b:c].reshape(4, H)

    @property
    def w_out(self) -> np.ndarray:
        H, _, _, _, c = self._slices()
        return self.theta[c:c + H]

    @property
    def b_out(self) -> float:
        return float(self.theta[-1])

    @classmethod
    def from_parts(cls, W, U, b, w_out, b_out, hyper: LstmHyper) -> "LstmModel":
        W = np.asarray(W, dtype=np.float64)
        theta = np.concatenate([W.ravel(), np.asarray(U, float).ravel(), np.asarray(b, float).ravel(),
                                np.asarray(w_out, float).ravel(), [float(b_out)]])
        return cls(theta, hyper, W.shape[2])

    def to_dict(self) -> dict:
        return {
            "kind": "lstm",
            "gate_order": list(GATES),
            "hyper": {"hidden_units": self.hyper.hidden_units, "learning_rate": self.hyper.learning_rate,
                      "epochs": self.hyper.epochs, "batch_size": self.hyper.batch_size,
                      "seed": self.hyper.seed},
            "n_inputs": self.n_inputs,
            "W": self.W.tolist(),
            "U": self.U.tolist(),
            "b": self.b.tolist(),
            "w_out": self.w_out.tolist(),
            "b_out": self.b_out,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LstmModel":
        return cls.from_parts(d["W"], d["U"], d["b"], d["w_out"], d["b_out"], LstmHyper(**d["hyper"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "LstmModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def init_model(hyper: LstmHyper, n_inputs: int = N_INPUTS, seed: int | None = None) -> LstmModel:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) weights, forget-gate bias 1, output bias 0."""
    H = hyper.hidden_units
    rng = np.random.default_rng(hyper.seed if seed is None else seed)
    bound = 1.0 / math.sqrt(H)
    theta = rng.uniform(-bound, bound, size=n_params(H, n_inputs))
    model_b = theta[4 * H * n_inputs + 4 * H * H: 4 * H * n_inputs + 4 * H * H + 4 * H].reshape(4, H)
    model_b[1] = FORGET_BIAS_INIT
    theta[-1] = 0.0
    return LstmModel(theta, hyper, n_inputs)


# --------------------------------------------------------------------------
# reference forward pass (numpy)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def lstm_forward(model: LstmModel, sequence, return_states: bool = False):
    """Churn probability for one (T, D) sequence."""
    x = np.asarray(sequence, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.n_inputs:
        raise ValueError(f"sequence must have shape (T, {model.n_inputs}), got {x.shape}")
    W, U, b = model.W, model.U, model.b
    H = model.hyper.hidden_units
    h = np.zeros(H)
    c = np.zeros(H)
    hs = []
    for t in range(x.shape[0]):
        a = W @ x[t] + U @ h + b
        i, f, o = _sigmoid(a[0]), _sigmoid(a[1]), _sigmoid(a[2])
        g = np.tanh(a[3])
        c = f * c + i * g
        h = o * np.tanh(c)
        hs.append(h)
    p = float(_sigmoid(model.w_out @ h + model.b_out))
    return (p, np.array(hs)) if return_states else p


# --------------------------------------------------------------------------
# numba kernels


@numba.njit(cache=True)
def _sig(x):
    return 1.0 / (1.0 + math.exp(-x))


@numba.njit(cache=True)
def _loss_grad(theta, X, y, H, grad):
    """Summed binary cross-entropy over the batch; writes the gradient into ``grad``."""
    B, T, D = X.shape
    nW = 4 * H * D
    nU = 4 * H * H
    W = theta[:nW].reshape((4, H, D))
    U = theta[nW:nW + nU].reshape((4, H, H))
    bb = theta[nW + nU:nW + nU + 4 * H].reshape((4, H))
    w_out = theta[nW + nU + 4 * H:nW + nU + 5 * H]
    b_out = theta[nW + nU + 5 * H]

    grad[:] = 0.0
    gW = grad[:nW].reshape((4, H, D))
    gU = grad[nW:nW + nU].reshape((4, H, H))
    gb = grad[nW + nU:nW + nU + 4 * H].reshape((4, H))
    gw = grad[nW + nU + 4 * H:nW + nU + 5 * H]

    gates = np.empty((T, 4, H))
    cs = np.empty((T, H))
    hs = np.empty((T, H))
    da = np.empty((4, H))
    dh = np.empty(H)
    dh_prev = np.empty(H)
    dc_next = np.empty(H)
    total = 0.0

    for s in range(B):
        # forward
        for t in range(T):
            for k in range(4):
                for j in range(H):
                    acc = bb[k, j]
                    for d in range(D):
                        acc += W[k, j, d] * X[s, t, d]
                    if t > 0:
                        for m in range(H):
                            acc += U[k, j, m] * hs[t - 1, m]
                    if k < 3:
                        gates[t, k, j] = _sig(acc)
                    else:
                        gates[t, k, j] = math.tanh(acc)
            for j in range(H):
                cp = cs[t - 1, j] if t > 0 else 0.0
                cs[t, j] = gates[t, 1, j] * cp + gates[t, 0, j] * gates[t, 3, j]
                hs[t, j] = gates[t, 2, j] * math.tanh(cs[t, j])
        z = b_out
        for j in range(H):
            z += w_out[j] * hs[T - 1, j]
        m_ = -z if y[s] > 0.5 else z  # loss = softplus(m_)
        if m_ > 0:
            total += m_ + math.log1p(math.exp(-m_))
        else:
            total += math.log1p(math.exp(m_))
        dz = _sig(z) - y[s]

        # backward through time
        grad[-1] += dz
        for j in range(H):
            gw[j] += dz * hs[T - 1, j]
            dh[j] = dz * w_out[j]
            dc_next[j] = 0.0
        for t in range(T - 1, -1, -1):
            for j in range(H):
                i_ = gates[t, 0, j]
                f_ = gates[t, 1, j]
                o_ = gates[t, 2, j]
                g_ = gates[t, 3, j]
                tc = math.tanh(cs[t, j])
                dc = dc_next[j] + dh[j] * o_ * (1.0 - tc * tc)
                cp = cs[t - 1, j] if t > 0 else 0.0
                da[0, j] = dc * g_ * i_ * (1.0 - i_)
                da[1, j] = dc * cp * f_ * (1.0 - f_)
                da[2, j] = dh[j] * tc * o_ * (1.0 - o_)
                da[3, j] = dc * i_ * (1.0 - g_ * g_)
                dc_next[j] = dc * f_
            for k in range(4):
                for j in range(H):
                    gb[k, j] += da[k, j]
                    for d in range(D):
                        gW[k, j, d] += da[k, j] * X[s, t, d]
                    if t > 0:
                        for m in range(H):
                            gU[k, j, m] += da[k, j] * hs[t - 1, m]
            for m in range(H):
                acc = 0.0
                for k in range(4):
                    for j in range(H):
                        acc += da[k, j] * U[k, j, m]
                dh_prev[m] = acc
            for m in range(H):
                dh[m] = dh_prev[m]
    return total


@numba.njit(cache=True)
def _predict(theta, X, H):
    N, T, D = X.shape
    nW = 4 * H * D
    nU = 4 * H * H
    W = theta[:nW].reshape((4, H, D))
    U = theta[nW:nW + nU].reshape((4, H, H))
    bb = theta[nW + nU:nW + nU + 4 * H].reshape((4, H))
    w_out = theta[nW + nU + 4 * H:nW + nU + 5 * H]
    b_out = theta[nW + nU + 5 * H]
    out = np.empty(N)
    h = np.empty(H)
    h_new = np.empty(H)
    c = np.empty(H)
    a = np.empty((4, H))
    for s in range(N):
        h[:] = 0.0
        c[:] = 0.0
        for t in range(T):
            for k in range(4):
                for j in range(H):
                    acc = bb[k, j]
                    for d in range(D):
                        acc += W[k, j, d] * X[s, t, d]
                    for m in range(H):
                        acc += U[k, j, m] * h[m]
                    a[k, j] = acc
            for j in range(H):
                c[j] = _sig(a[1, j]) * c[j] + _sig(a[0, j]) * math.tanh(a[3, j])
                h_new[j] = _sig(a[2, j]) * math.tanh(c[j])
            for j in range(H):
                h[j] = h_new[j]
        z = b_out
        for j in range(H):
            z += w_out[j] * h[j]
        out[s] = _sig(z)
    return out


@numba.njit(cache=True)
def _adam_epoch(theta, m, v, step, X, y, perm, batch_size, H, lr, beta1, beta2, eps):
    n = perm.shape[0]
    grad = np.empty_like(theta)
    start = 0
    while start < n:
        stop = min(start + batch_size, n)
        idx = perm[start:stop]
        bsz = stop - start
        _loss_grad(theta, X[idx], y[idx], H, grad)
        step += 1
        c1 = 1.0 - beta1 ** step
        c2 = 1.0 - beta2 ** step
        for p in range(theta.shape[0]):
            g = grad[p] / bsz
            m[p] = beta1 * m[p] + (1.0 - beta1) * g
            v[p] = beta2 * v[p] + (1.0 - beta2) * g * g
            theta[p] -= lr * (m[p] / c1) / (math.sqrt(v[p] / c2) + eps)
        start = stop
    return step


# --------------------------------------------------------------------------
# public API


def _check_sequences(X, n_inputs: int = N_INPUTS) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 3 or X.shape[2] != n_inputs:
        raise ValueError(f"sequences must have shape (N, T, {n_inputs}), got {X.shape}")
    if not np.isfinite(X).all():
        raise ValueError("sequences contain non-finite values")
    return X


def loss_and_grad(model: LstmModel, X, y, reduction: str = "sum") -> tuple[float, np.ndarray]:
    """Binary cross-entropy and its BPTT gradient w.r.t. the flat parameter vector."""
    X = _check_sequences(X, model.n_inputs)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    grad = np.empty_like(model.theta)
    loss = _loss_grad(model.theta, X, y, model.hyper.hidden_units, grad)
    if reduction == "mean":
        return loss / X.shape[0], grad / X.shape[0]
    if reduction != "sum":
        raise ValueError("reduction must be 'sum' or 'mean'")
    return loss, grad


def predict_proba(model: LstmModel, X) -> np.ndarray:
    X = _check_sequences(X, model.n_inputs)
    return _predict(model.theta, X, model.hyper.hidden_units)


def mean_loss(model: LstmModel, X, y) -> float:
    p = np.clip(predict_proba(model, X), 1e-12, 1 - 1e-12)
    y = np.asarray(y, dtype=np.float64)
    return float(-(y * np.log(p) + (1 - y) * np.log1p(-p)).mean())


def train_lstm(X, y, hyper: LstmHyper) -> LstmModel:
    """Minimize mean BCE with mini-batch Adam for exactly ``hyper.epochs`` epochs.

    ``hyper.seed`` drives both the initialization and the per-epoch
    shuffles, so (data, hyper, seed) determine the result bit for bit.
    """
    X = _check_sequences(X)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    if X.shape[0] != y.shape[0]:
        raise ValueError("sequence and label counts differ")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be 0 or 1")
    if y.min() == y.max():
        raise ValueError("training labels contain a single class")

    ss = np.random.SeedSequence(hyper.seed)
    init_seed, shuffle_seed = ss.spawn(2)
    model = init_model(hyper, X.shape[2], seed=init_seed.generate_state(1)[0])
    theta = model.theta.copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    rng = np.random.default_rng(shuffle_seed)
    step = 0
    history = []
    for _ in range(hyper.epochs):
        perm = rng.permutation(X.shape[0]).astype(np.int64)
        step = _adam_epoch(theta, m, v, step, X, y, perm, hyper.batch_size, hyper.hidden_units,
                           hyper.learning_rate, ADAM_BETA1, ADAM_BETA2, ADAM_EPS)
        history.append(mean_loss(LstmModel(theta, hyper, X.shape[2]), X, y))
    return LstmModel(theta, hyper, X.shape[2], tuple(history))


def gradient_check(model: LstmModel, X, y, step: float = 1e-5, floor: float = 1e-4) -> float:
    """Max relative error between BPTT and central finite differences of the summed loss.

    Entries are compared as ``|a - n| / max(|a|, |n|, floor)``, so gradients
    smaller than ``floor`` are effectively held to an absolute tolerance.
    """
    X = _check_sequences(X, model.n_inputs)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    H = model.hyper.hidden_units
    _, analytic = loss_and_grad(model, X, y)
    theta = model.theta.copy()
    scratch = np.empty_like(theta)
    numeric = np.empty_like(theta)
    for p in range(theta.size):
        orig = theta[p]
        theta[p] = orig + step
        up = _loss_grad(theta, X, y, H, scratch)
        theta[p] = orig - step
        down = _loss_grad(theta, X, y, H, scratch)
        theta[p] = orig
        numeric[p] = (up - down) / (2 * step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max())
