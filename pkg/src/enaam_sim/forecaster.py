"""One-step and horizon forecasts of load and harvested energy.

A small LSTM (one input, ``hidden_units`` cells, one dense output) is trained
from scratch with backpropagation through time and Adam, batch size 1.  The
numerical kernels are compiled with numba; everything else is plain numpy.
A seasonal-naive forecaster serves as baseline and as warm-up fallback.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numba import njit

from .traces import TimeSeriesTrace

MIN_SERIES_LENGTH = 10


class ForecastError(ValueError):
    """Base class for forecaster contract violations."""


class TooShort(ForecastError):
    pass


class InsufficientHistory(ForecastError):
    pass


class TrainingDiverged(ForecastError):
    def __init__(self, epoch: int):
        super().__init__(f"non-finite training loss at epoch {epoch}")
        self.epoch = epoch


# ---------------------------------------------------------------------------
# parameter layout
#
# theta = [W (4H) | U (4H*H, row-major) | b (4H) | w_out (H) | b_out (1)]
# gate order inside each 4H block: input, forget, cell candidate, output


def n_params(hidden: int) -> int:
    return 4 * hidden + 4 * hidden * hidden + 4 * hidden + hidden + 1


def _slices(hidden: int) -> dict[str, slice]:
    h4 = 4 * hidden
    o = 0
    out = {}
    for name, size in (("W", h4), ("U", h4 * hidden), ("b", h4), ("w_out", hidden), ("b_out", 1)):
        out[name] = slice(o, o + size)
        o += size
    return out


@njit(cache=True)
def _sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


@njit(cache=True)
def _forward(theta, xs, hidden):
    """Run the cell over ``xs``; returns output and per-step caches."""
    H = hidden
    H4 = 4 * H
    oU = H4
    ob = oU + H4 * H
    ow = ob + H4
    obo = ow + H
    n = xs.shape[0]
    hs = np.zeros((n + 1, H))
    cs = np.zeros((n + 1, H))
    gates = np.zeros((n, H4))
    for t in range(n):
        x = xs[t]
        for j in range(H4):
            z = theta[j] * x + theta[ob + j]
            row = oU + j * H
            for k in range(H):
                z += theta[row + k] * hs[t, k]
            if 2 * H <= j < 3 * H:
                gates[t, j] = math.tanh(z)
            else:
                gates[t, j] = _sigmoid(z)
        for k in range(H):
            i = gates[t, k]
            f = gates[t, H + k]
            g = gates[t, 2 * H + k]
            o = gates[t, 3 * H + k]
            cs[t + 1, k] = f * cs[t, k] + i * g
            hs[t + 1, k] = o * math.tanh(cs[t + 1, k])
    y = theta[obo]
    for k in range(H):
        y += theta[ow + k] * hs[n, k]
    return y, hs, cs, gates


@njit(cache=True)
def _predict(theta, xs, hidden):
    y, _, _, _ = _forward(theta, xs, hidden)
    return y


@njit(cache=True)
def _loss_and_grad(theta, xs, target, hidden):
    """Squared error of one (window, target) pair and its exact gradient."""
    H = hidden
    H4 = 4 * H
    oU = H4
    ob = oU + H4 * H
    ow = ob + H4
    obo = ow + H
    n = xs.shape[0]
    y, hs, cs, gates = _forward(theta, xs, hidden)
    err = y - target
    loss = err * err
    grad = np.zeros(theta.shape[0])
    dy = 2.0 * err
    grad[obo] = dy
    dh = np.zeros(H)
    dc = np.zeros(H)
    for k in range(H):
        grad[ow + k] = dy * hs[n, k]
        dh[k] = dy * theta[ow + k]
    dz = np.zeros(H4)
    for t in range(n - 1, -1, -1):
        for k in range(H):
            i = gates[t, k]
            f = gates[t, H + k]
            g = gates[t, 2 * H + k]
            o = gates[t, 3 * H + k]
            tc = math.tanh(cs[t + 1, k])
            dc_k = dc[k] + dh[k] * o * (1.0 - tc * tc)
            dz[k] = dc_k * g * i * (1.0 - i)
            dz[H + k] = dc_k * cs[t, k] * f * (1.0 - f)
            dz[2 * H + k] = dc_k * i * (1.0 - g * g)
            dz[3 * H + k] = dh[k] * tc * o * (1.0 - o)
            dc[k] = dc_k * f
        x = xs[t]
        for k in range(H):
            dh[k] = 0.0
        for j in range(H4):
            grad[j] += dz[j] * x
            grad[ob + j] += dz[j]
            row = oU + j * H
            for k in range(H):
                grad[row + k] += dz[j] * hs[t, k]
                dh[k] += dz[j] * theta[row + k]
    return loss, grad


@njit(cache=True)
def _train_epoch(theta, m, v, step, X, Y, order, lr, beta1, beta2, eps, hidden):
    total = 0.0
    for idx in order:
        loss, grad = _loss_and_grad(theta, X[idx], Y[idx], hidden)
        total += loss
        step += 1
        c1 = 1.0 - beta1**step
        c2 = 1.0 - beta2**step
        for p in range(theta.shape[0]):
            m[p] = beta1 * m[p] + (1.0 - beta1) * grad[p]
            v[p] = beta2 * v[p] + (1.0 - beta2) * grad[p] * grad[p]
            theta[p] -= lr * (m[p] / c1) / (math.sqrt(v[p] / c2) + eps)
    return total / max(len(order), 1), step


# ---------------------------------------------------------------------------


@dataclass
class LstmModel:
    hidden_units: int
    lookback: int
    theta: np.ndarray
    norm_min: float
    norm_max: float
    input_size: int = 1

    def __post_init__(self) -> None:
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.shape != (n_params(self.hidden_units),):
            raise ValueError("parameter vector does not match hidden_units")
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("non-finite LSTM parameters")
        if not self.norm_max > self.norm_min:
            raise ValueError("normalization max must exceed min")

    def normalize(self, y):
        return (np.asarray(y, dtype=float) - self.norm_min) / (self.norm_max - self.norm_min)

    def denormalize(self, z):
        return np.asarray(z, dtype=float) * (self.norm_max - self.norm_min) + self.norm_min

    def params(self) -> dict[str, np.ndarray]:
        return {k: self.theta[s].copy() for k, s in _slices(self.hidden_units).items()}

    def save(self, path: str | Path) -> None:
        doc = {
            "hidden_units": self.hidden_units,
            "lookback": self.lookback,
            "input_size": self.input_size,
            "norm_min": self.norm_min,
            "norm_max": self.norm_max,
            "params": {k: v.tolist() for k, v in self.params().items()},
        }
        Path(path).write_text(json.dumps(doc, indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "LstmModel":
        doc = json.loads(Path(path).read_text())
        hidden = int(doc["hidden_units"])
        theta = np.zeros(n_params(hidden))
        for k, s in _slices(hidden).items():
            theta[s] = doc["params"][k]
        return cls(hidden, int(doc["lookback"]), theta, float(doc["norm_min"]), float(doc["norm_max"]))


@dataclass
class TrainReport:
    epochs_run: int
    train_rmse: float
    test_rmse: float
    split_fraction: float
    n_train_samples: int = 0
    n_updates: int = 0
    loss_history: list[float] = field(default_factory=list)


def init_model(hidden_units: int = 4, lookback: int = 1, seed: int = 0,
               norm: tuple[float, float] = (0.0, 1.0)) -> LstmModel:
    rng = np.random.default_rng(seed)
    theta = rng.uniform(-0.1, 0.1, size=n_params(hidden_units))
    return LstmModel(hidden_units, lookback, theta, norm[0], norm[1])


def make_pairs(z: np.ndarray, lookback: int, start: int = 0, stop: int | None = None):
    """Supervised pairs (z[i-lookback:i] -> z[i]) for targets i in [start, stop)."""
    stop = len(z) if stop is None else stop
    start = max(start, lookback)
    idx = np.arange(start, stop)
    X = np.stack([z[i - lookback:i] for i in idx]) if len(idx) else np.zeros((0, lookback))
    return X, z[idx]


def _fit_range(values: np.ndarray) -> tuple[float, float]:
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        pad = 0.5 * max(abs(lo), 1.0)
        lo, hi = lo - pad, hi + pad
    return lo, hi


def train_lstm(series: TimeSeriesTrace | Sequence[float], epochs: int = 100, split: float = 0.67,
               seed: int = 0, hidden_units: int = 4, lookback: int = 24,
               learning_rate: float = 3e-3) -> tuple[LstmModel, TrainReport]:
    """Fit an LSTM one-step-ahead predictor.

    The first ``split`` share of the series is used for fitting (and for the
    min-max normalization); RMSE is reported in original units for both parts.
    """
    y = np.asarray(series.values if isinstance(series, TimeSeriesTrace) else series, dtype=float)
    if len(y) < MIN_SERIES_LENGTH:
        raise TooShort(f"series has {len(y)} values, need at least {MIN_SERIES_LENGTH}")
    if epochs < 1:
        raise ForecastError("epochs must be >= 1")
    if not 0.0 < split < 1.0:
        raise ForecastError("split must lie in (0, 1)")
    if not np.all(np.isfinite(y)):
        raise ForecastError("series contains non-finite values")

    n_train = int(round(len(y) * split))
    if n_train <= lookback or n_train >= len(y):
        raise TooShort("split leaves no training or test pairs for this lookback")
    lo, hi = _fit_range(y[:n_train])
    model = init_model(hidden_units, lookback, seed, (lo, hi))
    z = model.normalize(y)
    X, Y = make_pairs(z, lookback, 0, n_train)
    Xt, Yt = make_pairs(z, lookback, n_train, len(z))

    rng = np.random.default_rng(seed + 1)
    theta = model.theta.copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    step = 0
    history = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(X))
        loss, step = _train_epoch(theta, m, v, step, X, Y, order, learning_rate, 0.9, 0.999, 1e-7, hidden_units)
        if not math.isfinite(loss) or not np.all(np.isfinite(theta)):
            raise TrainingDiverged(epoch)
        history.append(loss)
    model.theta = theta

    scale = hi - lo
    report = TrainReport(
        epochs_run=epochs,
        train_rmse=_rmse(model, X, Y) * scale,
        test_rmse=_rmse(model, Xt, Yt) * scale,
        split_fraction=split,
        n_train_samples=len(X),
        n_updates=step,
        loss_history=history,
    )
    return model, report


def _rmse(model: LstmModel, X: np.ndarray, Y: np.ndarray) -> float:
    if len(X) == 0:
        return float("nan")
    pred = np.array([_predict(model.theta, x, model.hidden_units) for x in X])
    return float(np.sqrt(np.mean((pred - Y) ** 2)))


def _raw_next(model: LstmModel, window: np.ndarray) -> float:
    z = model.normalize(window)
    return float(model.denormalize(_predict(model.theta, z, model.hidden_units)))


def predict_next(model: LstmModel, history: Sequence[float]) -> float:
    """Estimate of the value following ``history`` (original units, >= 0).

    Uses the last ``lookback`` values; shorter histories are left-padded with
    their first value.
    """
    h = np.asarray(history, dtype=float)
    if h.size == 0:
        raise InsufficientHistory("history must be non-empty")
    window = h[-model.lookback:]
    if window.size < model.lookback:
        window = np.concatenate([np.full(model.lookback - window.size, window[0]), window])
    return max(0.0, _raw_next(model, window))


def predict_horizon(model: LstmModel, history: Sequence[float], k: int) -> list[float]:
    """``k`` recursive one-step forecasts, each fed back as the next input."""
    if k < 1:
        raise ForecastError("horizon k must be >= 1")
    h = list(np.asarray(history, dtype=float))
    out = []
    for _ in range(k):
        nxt = predict_next(model, h)
        out.append(nxt)
        h.append(nxt)
    return out


def seasonal_naive(history: Sequence[float], period: int, k: int) -> list[float]:
    h = np.asarray(history, dtype=float)
    if period < 1 or len(h) < period:
        raise InsufficientHistory(f"need at least {period} values of history, got {len(h)}")
    if k < 1:
        raise ForecastError("horizon k must be >= 1")
    n = len(h)
    return [float(h[n - period + (j % period)]) for j in range(k)]


def gradient_check(model: LstmModel, sample: tuple[Sequence[float], float], step: float = 1e-5,
                   floor: float = 1e-8,
                   grad_fn: Callable[[np.ndarray, np.ndarray, float], np.ndarray] | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``sample`` is (normalized input window, normalized target).  Parameters
    whose gradient magnitudes are both below ``floor`` are skipped.  A custom
    ``grad_fn(theta, xs, target)`` can be injected to test the checker itself.
    """
    xs = np.asarray(sample[0], dtype=float)
    target = float(sample[1])
    theta = model.theta.copy()
    H = model.hidden_units
    if grad_fn is None:
        analytic = _loss_and_grad(theta, xs, target, H)[1]
    else:
        analytic = np.asarray(grad_fn(theta, xs, target), dtype=float)
    worst = 0.0
    for p in range(theta.size):
        saved = theta[p]
        theta[p] = saved + step
        lp, _ = _loss_and_grad(theta, xs, target, H)
        theta[p] = saved - step
        lm, _ = _loss_and_grad(theta, xs, target, H)
        theta[p] = saved
        numeric = (lp - lm) / (2.0 * step)
        a = analytic[p]
        denom = max(abs(a), abs(numeric))
        if denom <= floor:
            continue
        worst = max(worst, abs(a - numeric) / denom)
    return worst


def loss_and_grad(model: LstmModel, xs: Sequence[float], target: float) -> tuple[float, np.ndarray]:
    loss, grad = _loss_and_grad(model.theta, np.asarray(xs, dtype=float), float(target), model.hidden_units)
    return float(loss), grad


# ---------------------------------------------------------------------------
# forecasters used inside the closed loop


class SeasonalNaiveForecaster:
    """Repeats the value one period back; persistence until a period is seen."""

    def __init__(self, period: int = 24, empty_value: float = 0.0):
        self.period = period
        self.empty_value = empty_value

    def forecast(self, history: Sequence[float], k: int) -> list[float]:
        if len(history) >= self.period:
            return seasonal_naive(history, self.period, k)
        if len(history) == 0:
            return [self.empty_value] * k
        return [float(history[-1])] * k


class LstmForecaster:
    def __init__(self, model: LstmModel, warmup: int = 24, fallback=None):
        self.model = model
        self.warmup = max(warmup, model.lookback)
        self.fallback = fallback or SeasonalNaiveForecaster(warmup)

    def forecast(self, history: Sequence[float], k: int) -> list[float]:
        if len(history) < self.warmup:
            return self.fallback.forecast(history, k)
        return predict_horizon(self.model, history, k)


class OracleForecaster:
    """Perfect foresight over a known series; for causality checks only."""

    def __init__(self, truth: Sequence[float]):
        self.truth = np.asarray(truth, dtype=float)

    def forecast(self, history: Sequence[float], k: int) -> list[float]:
        t = len(history)
        vals = self.truth[t:t + k]
        if len(vals) < k:
            pad = vals[-1] if len(vals) else self.truth[-1]
            vals = np.concatenate([vals, np.full(k - len(vals), pad)])
        return [float(x) for x in vals]
