"""Dense feed-forward networks trained with minibatch SGD, written on numpy.

Weights are stored per layer with shape ``(n_out, n_in)`` so that a batch
``A`` of row vectors maps to ``A @ W.T + b``. Everything runs in float64.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import envelope
from .errors import ArtifactFormatError, RejectedInputError, TrainingError

RELU = "relu"
SOFTMAX = "softmax"
IDENTITY = "identity"
CROSS_ENTROPY = "cross_entropy"
MSE = "mse"

_OUTPUT_ACTIVATIONS = (SOFTMAX, IDENTITY)
_LOSSES = (CROSS_ENTROPY, MSE)


def relu(z):
    return np.maximum(z, 0.0)


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z):
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def glorot_uniform(rng: np.random.Generator, n_out: int, n_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_out, n_in))


@dataclass
class DenseNetwork:
    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_activation: str = RELU
    output_activation: str = SOFTMAX

    def __post_init__(self):
        self.layer_sizes = [int(s) for s in self.layer_sizes]
        if len(self.layer_sizes) < 2 or any(s <= 0 for s in self.layer_sizes):
            raise RejectedInputError(f"layer_sizes must list >= 2 positive sizes, got {self.layer_sizes}")
        if self.hidden_activation != RELU:
            raise RejectedInputError(f"unsupported hidden activation {self.hidden_activation!r}")
        if self.output_activation not in _OUTPUT_ACTIVATIONS:
            raise RejectedInputError(f"unsupported output activation {self.output_activation!r}")
        n_layers = len(self.layer_sizes) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise RejectedInputError("need one weight matrix and one bias vector per layer")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_sizes[k + 1], self.layer_sizes[k])
            if w.shape != expected or b.shape != (expected[0],):
                raise RejectedInputError(
                    f"layer {k}: weight {w.shape}/bias {b.shape} do not match sizes {expected}")

    @classmethod
    def initialize(cls, layer_sizes, seed: int = 0, output_activation: str = SOFTMAX) -> "DenseNetwork":
        rng = np.random.default_rng(seed)
        sizes = [int(s) for s in layer_sizes]
        weights = [glorot_uniform(rng, sizes[k + 1], sizes[k]) for k in range(len(sizes) - 1)]
        biases = [np.zeros(sizes[k + 1]) for k in range(len(sizes) - 1)]
        return cls(sizes, weights, biases, RELU, output_activation)

    @classmethod
    def zeros(cls, layer_sizes, output_activation: str = SOFTMAX) -> "DenseNetwork":
        sizes = [int(s) for s in layer_sizes]
        return cls(sizes,
                   [np.zeros((sizes[k + 1], sizes[k])) for k in range(len(sizes) - 1)],
                   [np.zeros(sizes[k + 1]) for k in range(len(sizes) - 1)],
                   RELU, output_activation)

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "DenseNetwork":
        return copy.deepcopy(self)

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def same_as(self, other: "DenseNetwork") -> bool:
        """Bitwise equality of topology and parameters."""
        return (self.layer_sizes == other.layer_sizes
                and self.output_activation == other.output_activation
                and all(np.array_equal(a, b) for a, b in zip(self.parameters(), other.parameters())))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 50
    learning_rate: float = 0.01
    seed: int = 0
    loss: str = CROSS_ENTROPY

    def __post_init__(self):
        if int(self.epochs) != self.epochs or self.epochs < 0:
            raise RejectedInputError(f"epochs must be a nonnegative integer, got {self.epochs}")
        if int(self.batch_size) != self.batch_size or self.batch_size <= 0:
            raise RejectedInputError(f"batch_size must be a positive integer, got {self.batch_size}")
        if not (self.learning_rate > 0 and np.isfinite(self.learning_rate)):
            raise RejectedInputError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.loss not in _LOSSES:
            raise RejectedInputError(f"unknown loss {self.loss!r}")

    def replace(self, **changes) -> "TrainConfig":
        fields_ = dict(epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.learning_rate,
                       seed=self.seed, loss=self.loss)
        fields_.update(changes)
        return TrainConfig(**fields_)

    def as_dict(self) -> dict:
        return dict(epochs=int(self.epochs), batch_size=int(self.batch_size),
                    learning_rate=float(self.learning_rate), seed=int(self.seed), loss=self.loss)


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.extend((w.ravel(), b.ravel()))
        return np.concatenate(parts)


def _as_batch(net: DenseNetwork, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.n_inputs:
        raise RejectedInputError(f"expected input dimension {net.n_inputs}, got shape {x.shape}")
    return x, single


def _forward_cache(net: DenseNetwork, X: np.ndarray):
    activations = [X]
    pre = []
    a = X
    last = net.n_layers - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w.T + b
        pre.append(z)
        if k < last:
            a = relu(z)
        elif net.output_activation == SOFTMAX:
            a = softmax(z)
        else:
            a = z
        activations.append(a)
    return activations, pre


def forward(net: DenseNetwork, x) -> np.ndarray:
    """Final-layer activations for one input vector or a batch of row vectors."""
    X, single = _as_batch(net, x)
    if np.isnan(X).any():
        raise RejectedInputError("NaN in network input")
    out = _forward_cache(net, X)[0][-1]
    return out[0] if single else out


def logits(net: DenseNetwork, x) -> np.ndarray:
    """Pre-activation outputs of the final layer."""
    X, single = _as_batch(net, x)
    out = _forward_cache(net, X)[1][-1]
    return out[0] if single else out


def _check_targets(net: DenseNetwork, inputs, targets):
    X, _ = _as_batch(net, inputs)
    T = np.asarray(targets, dtype=np.float64)
    if T.ndim == 1:
        T = T[:, None] if net.n_outputs == 1 and len(T) == len(X) else T[None, :]
    if len(X) == 0:
        raise RejectedInputError("empty batch")
    if T.shape != (len(X), net.n_outputs):
        raise RejectedInputError(f"targets shape {T.shape} does not match output layer ({len(X)}, {net.n_outputs})")
    if np.isnan(X).any() or np.isnan(T).any():
        raise RejectedInputError("NaN in batch")
    return X, T


def _loss_from(net: DenseNetwork, z_out: np.ndarray, out: np.ndarray, T: np.ndarray, loss: str) -> float:
    if loss == CROSS_ENTROPY:
        if net.output_activation != SOFTMAX:
            raise RejectedInputError("cross-entropy loss requires a softmax output layer")
        return float(-(T * log_softmax(z_out)).sum(axis=1).mean())
    return float(((out - T) ** 2).mean())


def loss_value(net: DenseNetwork, inputs, targets, loss: str = CROSS_ENTROPY) -> float:
    X, T = _check_targets(net, inputs, targets)
    acts, pre = _forward_cache(net, X)
    return _loss_from(net, pre[-1], acts[-1], T, loss)


def _backprop(net: DenseNetwork, X: np.ndarray, T: np.ndarray, loss: str) -> tuple[Gradients, float]:
    acts, pre = _forward_cache(net, X)
    out = acts[-1]
    n = len(X)
    value = _loss_from(net, pre[-1], out, T, loss)
    if loss == CROSS_ENTROPY:
        delta = (out - T) / n
    else:
        d_out = 2.0 * (out - T) / out.size
        if net.output_activation == SOFTMAX:
            delta = out * (d_out - (out * d_out).sum(axis=1, keepdims=True))
        else:
            delta = d_out
    gw = [None] * net.n_layers
    gb = [None] * net.n_layers
    for k in range(net.n_layers - 1, -1, -1):
        gw[k] = delta.T @ acts[k]
        gb[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ net.weights[k]) * (pre[k - 1] > 0)
    return Gradients(gw, gb), value


def backprop(net: DenseNetwork, inputs, targets, loss: str = CROSS_ENTROPY) -> Gradients:
    """Gradient of the mean batch loss with respect to every weight and bias."""
    if loss not in _LOSSES:
        raise RejectedInputError(f"unknown loss {loss!r}")
    X, T = _check_targets(net, inputs, targets)
    return _backprop(net, X, T, loss)[0]


def sgd_step(net: DenseNetwork, gradients: Gradients, learning_rate: float, trainable=None) -> DenseNetwork:
    """In-place update ``w -= lr * g``; layers outside ``trainable`` are left alone."""
    layers = range(net.n_layers) if trainable is None else trainable
    for k in layers:
        if gradients.weights[k].shape != net.weights[k].shape or gradients.biases[k].shape != net.biases[k].shape:
            raise RejectedInputError(f"gradient shape mismatch at layer {k}")
        net.weights[k] -= learning_rate * gradients.weights[k]
        net.biases[k] -= learning_rate * gradients.biases[k]
    return net


@dataclass
class ModelArtifact:
    """A trained dense network plus everything needed to reproduce it."""

    network: DenseNetwork
    config: TrainConfig
    history: list[float] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    TYPE_TAG = "dense_network"

    def envelope_parts(self):
        meta = {
            "layer_sizes": self.network.layer_sizes,
            "hidden_activation": self.network.hidden_activation,
            "output_activation": self.network.output_activation,
            "seed": int(self.config.seed),
            "train_config": self.config.as_dict(),
            "history": [float(v) for v in self.history],
            "extra": self.meta,
        }
        arrays = {}
        for k, (w, b) in enumerate(zip(self.network.weights, self.network.biases)):
            arrays[f"W{k}"] = w
            arrays[f"b{k}"] = b
        return meta, arrays

    @classmethod
    def from_parts(cls, meta: dict, arrays: dict) -> "ModelArtifact":
        n = len(meta["layer_sizes"]) - 1
        net = DenseNetwork(meta["layer_sizes"], [arrays[f"W{k}"] for k in range(n)],
                           [arrays[f"b{k}"] for k in range(n)],
                           meta["hidden_activation"], meta["output_activation"])
        return cls(net, TrainConfig(**meta["train_config"]), list(meta["history"]), dict(meta["extra"]))

    def to_bytes(self) -> bytes:
        meta, arrays = self.envelope_parts()
        return envelope.dumps(self.TYPE_TAG, meta, arrays)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ModelArtifact":
        tag, meta, arrays = envelope.loads(blob)
        if tag != cls.TYPE_TAG:
            raise ArtifactFormatError(f"expected {cls.TYPE_TAG!r} artifact, found {tag!r}")
        return cls.from_parts(meta, arrays)

    def save(self, path) -> None:
        envelope.atomic_write_bytes(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> "ModelArtifact":
        return cls.from_bytes(Path(path).read_bytes())


def train(net: DenseNetwork, inputs, targets, cfg: TrainConfig, trainable=None,
          meta: dict | None = None) -> tuple[ModelArtifact, list[float]]:
    """Minibatch SGD on a copy of ``net``.

    The history holds the full-training-set loss after each epoch. The batch
    size is capped at the number of samples. ``trainable`` restricts updates to
    the listed layer indices (used for frozen fine-tuning).
    """
    X = np.asarray(inputs, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise RejectedInputError("training data must be a nonempty 2-D array")
    X, T = _check_targets(net, X, targets)
    if cfg.loss == CROSS_ENTROPY:
        if net.output_activation != SOFTMAX:
            raise RejectedInputError("cross-entropy loss requires a softmax output layer")
        if not (np.all((T == 0) | (T == 1)) and np.all(T.sum(axis=1) == 1)):
            raise RejectedInputError("cross-entropy training needs one-hot targets")
    net = net.copy()
    rng = np.random.default_rng(cfg.seed)
    n = len(X)
    bs = min(int(cfg.batch_size), n)
    history = []
    for epoch in range(int(cfg.epochs)):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            grads, _ = _backprop(net, X[idx], T[idx], cfg.loss)
            sgd_step(net, grads, cfg.learning_rate, trainable)
        acts, pre = _forward_cache(net, X)
        value = _loss_from(net, pre[-1], acts[-1], T, cfg.loss)
        if not np.isfinite(value):
            raise TrainingError(f"loss became non-finite at epoch {epoch}")
        history.append(value)
    return ModelArtifact(net, cfg, history, dict(meta or {})), history


def _ld_forward_from(net_ld, a, k, z_k, output_activation, T, loss):
    """Finish a long-double forward pass given layer ``k``'s pre-activation."""
    last = len(net_ld) - 1
    z = z_k
    for j in range(k, last + 1):
        if j > k:
            w, b = net_ld[j]
            z = a @ w.T + b
        if j < last:
            a = np.maximum(z, 0)
    if loss == CROSS_ENTROPY:
        shifted = z - z.max(axis=1, keepdims=True)
        lsm = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        return -(T * lsm).sum(axis=1).mean()
    if output_activation == SOFTMAX:
        e = np.exp(z - z.max(axis=1, keepdims=True))
        z = e / e.sum(axis=1, keepdims=True)
    return ((z - T) ** 2).mean()


def numerical_gradient_check(net: DenseNetwork, inputs, targets, loss: str = CROSS_ENTROPY,
                             h: float = 1e-6, gradients: Gradients | None = None) -> float:
    """Max relative disagreement between analytic and central-difference gradients.

    The difference quotient is evaluated in extended precision so that its
    roundoff stays far below the tolerance even for parameters with tiny
    gradients. ``gradients`` overrides the analytic side, which lets a caller
    verify that a corrupted gradient is caught.
    """
    if not (0 < h <= 1e-3):
        raise RejectedInputError(f"h must lie in (0, 1e-3], got {h}")
    X, T = _check_targets(net, inputs, targets)
    if loss == CROSS_ENTROPY and net.output_activation != SOFTMAX:
        raise RejectedInputError("cross-entropy loss requires a softmax output layer")
    analytic = gradients if gradients is not None else _backprop(net, X, T, loss)[0]
    ld = np.longdouble
    layers = [(w.astype(ld), b.astype(ld)) for w, b in zip(net.weights, net.biases)]
    T_ld = T.astype(ld)
    # activations feeding each layer
    feeds = [X.astype(ld)]
    for k, (w, b) in enumerate(layers[:-1]):
        feeds.append(np.maximum(feeds[-1] @ w.T + b, 0))
    h_ld = ld(h)
    worst = 0.0

    def quotient(k, z_up, z_down):
        up = _ld_forward_from(layers, None, k, z_up, net.output_activation, T_ld, loss)
        down = _ld_forward_from(layers, None, k, z_down, net.output_activation, T_ld, loss)
        return float((up - down) / (2 * h_ld))

    for k, (w, b) in enumerate(layers):
        a = feeds[k]
        z0 = a @ w.T + b
        gw = np.asarray(analytic.weights[k])
        gb = np.asarray(analytic.biases[k])
        for i in range(w.shape[0]):
            for j in range(w.shape[1]):
                z_up = z0.copy()
                z_down = z0.copy()
                # z[:, i] = a @ w[i] + b[i]; recompute the column with the perturbed weight
                w_up = w[i].copy()
                w_up[j] += h_ld
                w_dn = w[i].copy()
                w_dn[j] -= h_ld
                z_up[:, i] = a @ w_up + b[i]
                z_down[:, i] = a @ w_dn + b[i]
                numeric = quotient(k, z_up, z_down)
                worst = max(worst, _rel_err(gw[i, j], numeric))
            z_up = z0.copy()
            z_down = z0.copy()
            z_up[:, i] = a @ w[i] + (b[i] + h_ld)
            z_down[:, i] = a @ w[i] + (b[i] - h_ld)
            numeric = quotient(k, z_up, z_down)
            worst = max(worst, _rel_err(gb[i], numeric))
    return worst


def _rel_err(a: float, numeric: float) -> float:
    a = float(a)
    return abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
