"""Single-layer LSTM for one-step time-series prediction.

Gates are stacked in the order input, forget, cell, output. Each gate matrix
acts on the concatenation ``[x_t, h_{t-1}]``. The final hidden state of a
window is mapped to a scalar by a linear readout. Training minimises the MSE
of one-step predictions with full-window backpropagation through time; no
state is carried between windows.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import envelope
from .errors import ArtifactFormatError, RejectedInputError, TrainingError
from .numcore import MSE, TrainConfig

GATES = ("input", "forget", "cell", "output")


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(frozen=True)
class WindowSpec:
    window_len: int = 10
    stride: int = 1

    def __post_init__(self):
        if self.window_len < 1 or self.stride < 1:
            raise RejectedInputError(f"window_len and stride must be >= 1, got {self.window_len}, {self.stride}")


@dataclass
class LstmModel:
    input_dim: int
    hidden_dim: int
    W: np.ndarray  # (4, hidden, input + hidden)
    b: np.ndarray  # (4, hidden)
    w_out: np.ndarray  # (hidden,)
    b_out: float = 0.0

    def __post_init__(self):
        H, D = self.hidden_dim, self.input_dim
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        self.w_out = np.asarray(self.w_out, dtype=np.float64)
        self.b_out = float(self.b_out)
        if self.W.shape != (4, H, D + H) or self.b.shape != (4, H) or self.w_out.shape != (H,):
            raise RejectedInputError("LSTM parameter shapes do not match input/hidden dimensions")

    @classmethod
    def initialize(cls, input_dim: int, hidden_dim: int, seed: int = 0, forget_bias: float = 1.0) -> "LstmModel":
        rng = np.random.default_rng(seed)
        D, H = int(input_dim), int(hidden_dim)
        limit = np.sqrt(6.0 / (D + 2 * H))
        W = rng.uniform(-limit, limit, size=(4, H, D + H))
        b = np.zeros((4, H))
        b[1] = forget_bias
        out_limit = np.sqrt(6.0 / (H + 1))
        return cls(D, H, W, b, rng.uniform(-out_limit, out_limit, size=H), 0.0)

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "LstmModel":
        D, H = int(input_dim), int(hidden_dim)
        return cls(D, H, np.zeros((4, H, D + H)), np.zeros((4, H)), np.zeros(H), 0.0)

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        k = GATES.index(name)
        return self.W[k], self.b[k]

    def copy(self) -> "LstmModel":
        return LstmModel(self.input_dim, self.hidden_dim, self.W.copy(), self.b.copy(), self.w_out.copy(), self.b_out)

    def flat_params(self) -> list[np.ndarray]:
        return [self.W, self.b, self.w_out, np.array([self.b_out])]


def lstm_cell_step(x, h, c, model: LstmModel):
    """One step of the gate equations; works on single vectors or row batches."""
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if x.shape[-1] != model.input_dim or h.shape[-1] != model.hidden_dim or c.shape[-1] != model.hidden_dim:
        raise RejectedInputError("input/state dimensions do not match the model")
    if np.isnan(x).any() or np.isnan(h).any() or np.isnan(c).any():
        raise RejectedInputError("NaN passed to lstm_cell_step")
    H = model.hidden_dim
    xh = np.concatenate([x, h], axis=-1)
    a = xh @ model.W.reshape(4 * H, -1).T + model.b.reshape(-1)
    i = sigmoid(a[..., :H])
    f = sigmoid(a[..., H:2 * H])
    g = np.tanh(a[..., 2 * H:3 * H])
    o = sigmoid(a[..., 3 * H:])
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


def _run(model: LstmModel, X: np.ndarray, keep: bool = False):
    """Forward over a batch of sequences ``X`` shaped (B, T, D)."""
    B, T, _ = X.shape
    H = model.hidden_dim
    Wf = model.W.reshape(4 * H, -1)
    bf = model.b.reshape(-1)
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    cache = []
    for t in range(T):
        xh = np.concatenate([X[:, t, :], h], axis=1)
        a = xh @ Wf.T + bf
        i = sigmoid(a[:, :H])
        f = sigmoid(a[:, H:2 * H])
        g = np.tanh(a[:, 2 * H:3 * H])
        o = sigmoid(a[:, 3 * H:])
        c_prev = c
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        if keep:
            cache.append((xh, i, f, g, o, c_prev, tc))
    y = h @ model.w_out + model.b_out
    return y, h, cache


def predict_windows(model: LstmModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[:, :, None]
    return _run(model, X)[0]


def bptt(model: LstmModel, X, y) -> tuple[list[np.ndarray], float]:
    """Gradients of the mean squared one-step error, in ``flat_params`` order."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[:, :, None]
    y = np.asarray(y, dtype=np.float64)
    if np.isnan(X).any() or np.isnan(y).any():
        raise RejectedInputError("NaN in LSTM training batch")
    B = len(X)
    H = model.hidden_dim
    D = model.input_dim
    Wf = model.W.reshape(4 * H, -1)
    pred, h_last, cache = _run(model, X, keep=True)
    err = pred - y
    loss = float(np.mean(err ** 2))
    dy = 2.0 * err / B
    g_wout = h_last.T @ dy
    g_bout = float(dy.sum())
    dW = np.zeros_like(Wf)
    db = np.zeros(4 * H)
    dh = np.outer(dy, model.w_out)
    dc = np.zeros((B, H))
    for xh, i, f, g, o, c_prev, tc in reversed(cache):
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc ** 2)
        da = np.concatenate([
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dc * i * (1.0 - g ** 2),
            do * o * (1.0 - o),
        ], axis=1)
        dW += da.T @ xh
        db += da.sum(axis=0)
        dh = (da @ Wf)[:, D:]
        dc = dc * f
    return [dW.reshape(model.W.shape), db.reshape(model.b.shape), g_wout, np.array([g_bout])], loss


def _ld_loss(params, X, y, H):
    W, b, w_out, b_out = params
    Wf = W.reshape(4 * H, -1)
    bf = b.reshape(-1)
    B, T, _ = X.shape
    h = np.zeros((B, H), dtype=np.longdouble)
    c = np.zeros((B, H), dtype=np.longdouble)
    for t in range(T):
        a = np.concatenate([X[:, t, :], h], axis=1) @ Wf.T + bf
        i = 1 / (1 + np.exp(-a[:, :H]))
        f = 1 / (1 + np.exp(-a[:, H:2 * H]))
        g = np.tanh(a[:, 2 * H:3 * H])
        o = 1 / (1 + np.exp(-a[:, 3 * H:]))
        c = f * c + i * g
        h = o * np.tanh(c)
    return np.mean((h @ w_out + b_out[0] - y) ** 2)


def lstm_gradient_check(model: LstmModel, X, y, h: float = 1e-6, gradients=None) -> float:
    """Max relative error of BPTT gradients against long-double central differences."""
    if not (0 < h <= 1e-3):
        raise RejectedInputError(f"h must lie in (0, 1e-3], got {h}")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[:, :, None]
    analytic = gradients if gradients is not None else bptt(model, X, y)[0]
    ld = np.longdouble
    params = [p.astype(ld) for p in model.flat_params()]
    X_ld = X.astype(ld)
    y_ld = np.asarray(y, dtype=ld)
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + ld(h)
            up = _ld_loss(params, X_ld, y_ld, model.hidden_dim)
            flat[k] = old - ld(h)
            down = _ld_loss(params, X_ld, y_ld, model.hidden_dim)
            flat[k] = old
            numeric = float((up - down) / (2 * ld(h)))
            a = float(gflat[k])
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-8))
    return worst


@dataclass
class LstmArtifact:
    model: LstmModel
    window: WindowSpec
    mean: float
    std: float
    config: TrainConfig
    history: list[float] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    TYPE_TAG = "lstm_model"

    def normalize(self, values):
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, values):
        return np.asarray(values, dtype=np.float64) * self.std + self.mean

    def to_bytes(self) -> bytes:
        meta = {
            "input_dim": self.model.input_dim,
            "hidden_dim": self.model.hidden_dim,
            "window_len": self.window.window_len,
            "stride": self.window.stride,
            "norm_mean": float(self.mean),
            "norm_std": float(self.std),
            "b_out": float(self.model.b_out),
            "seed": int(self.config.seed),
            "train_config": self.config.as_dict(),
            "history": [float(v) for v in self.history],
            "extra": self.meta,
        }
        return envelope.dumps(self.TYPE_TAG, meta, {"W": self.model.W, "b": self.model.b, "w_out": self.model.w_out})

    @classmethod
    def from_bytes(cls, blob: bytes) -> "LstmArtifact":
        tag, meta, arrays = envelope.loads(blob)
        if tag != cls.TYPE_TAG:
            raise ArtifactFormatError(f"expected {cls.TYPE_TAG!r} artifact, found {tag!r}")
        model = LstmModel(meta["input_dim"], meta["hidden_dim"], arrays["W"], arrays["b"], arrays["w_out"], meta["b_out"])
        return cls(model, WindowSpec(meta["window_len"], meta["stride"]), meta["norm_mean"], meta["norm_std"],
                   TrainConfig(**meta["train_config"]), list(meta["history"]), dict(meta["extra"]))

    def save(self, path) -> None:
        envelope.atomic_write_bytes(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> "LstmArtifact":
        return cls.from_bytes(Path(path).read_bytes())


def make_windows(values: np.ndarray, window: WindowSpec) -> tuple[np.ndarray, np.ndarray]:
    """Sliding input windows and their next-step targets."""
    L = window.window_len
    starts = np.arange(0, len(values) - L, window.stride)
    idx = starts[:, None] + np.arange(L)[None, :]
    return values[idx], values[starts + L]


def train_lstm(series, window: WindowSpec = WindowSpec(), cfg: TrainConfig | None = None,
               hidden_dim: int = 64, clip_norm: float | None = 5.0) -> LstmArtifact:
    """Fit an LSTM to predict each value from the ``window_len`` values before it.

    Inputs and targets are z-scored with the training series' statistics.
    ``clip_norm`` rescales any minibatch gradient whose global norm exceeds it.
    """
    cfg = cfg or TrainConfig(epochs=5, batch_size=32, learning_rate=0.05, loss=MSE)
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1:
        raise RejectedInputError("series must be one-dimensional")
    if len(x) <= window.window_len + 1:
        raise RejectedInputError(
            f"series of length {len(x)} leaves no training windows for window_len={window.window_len}")
    if not np.all(np.isfinite(x)):
        raise RejectedInputError("series contains non-finite values")
    mean = float(x.mean())
    std = float(x.std())
    if std == 0.0:
        std = 1.0
    z = (x - mean) / std
    X, y = make_windows(z, window)
    model = LstmModel.initialize(1, hidden_dim, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    n = len(X)
    bs = min(int(cfg.batch_size), n)
    history = []
    X3 = X[:, :, None]
    for epoch in range(int(cfg.epochs)):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            grads, _ = bptt(model, X3[idx], y[idx])
            scale = 1.0
            if clip_norm is not None:
                norm = np.sqrt(sum(float((g ** 2).sum()) for g in grads))
                if norm > clip_norm:
                    scale = clip_norm / norm
            lr = cfg.learning_rate * scale
            model.W -= lr * grads[0]
            model.b -= lr * grads[1]
            model.w_out -= lr * grads[2]
            model.b_out -= lr * float(grads[3][0])
        value = float(np.mean((_run(model, X3)[0] - y) ** 2))
        if not np.isfinite(value):
            raise TrainingError(f"LSTM loss became non-finite at epoch {epoch}")
        history.append(value)
    return LstmArtifact(model, window, mean, std, cfg, history,
                        {"clip_norm": clip_norm, "n_train": int(len(x))})


def forecast_series(artifact: LstmArtifact, series, start: int | None = None,
                    batch_size: int | None = None) -> np.ndarray:
    """Predict ``series[t]`` for every ``t >= start`` from the window before it."""
    x = np.asarray(series, dtype=np.float64)
    L = artifact.window.window_len
    start = L if start is None else int(start)
    if start < L:
        raise RejectedInputError(f"need {L} warm-up observations before index {start}")
    if start > len(x):
        raise RejectedInputError("start lies beyond the end of the series")
    if np.isnan(x[:len(x) - 1]).any():
        raise RejectedInputError("series contains NaN")
    z = artifact.normalize(x)
    targets = np.arange(start, len(x))
    if len(targets) == 0:
        return np.empty(0)
    idx = targets[:, None] - L + np.arange(L)[None, :]
    windows = z[idx][:, :, None]
    if batch_size is None:
        out = _run(artifact.model, windows)[0]
    else:
        out = np.concatenate([_run(artifact.model, windows[k:k + batch_size])[0]
                              for k in range(0, len(windows), batch_size)])
    return artifact.denormalize(out)
