"""Defect-state classifiers: fresh training, cross-sensor transfer, evaluation."""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import envelope
from .errors import ArtifactFormatError, RejectedInputError
from .features import (FeatureEncoder, WindowSet, apply_encoder, augment, concat, decimate, fit_encoder,
                       select_axes, split_by_recording)
from .numcore import CROSS_ENTROPY, DenseNetwork, ModelArtifact, TrainConfig, forward, logits, train

TRAINED_FRESH = "TrainedFresh"
TRANSFERRED = "Transferred"


@dataclass(frozen=True)
class Architecture:
    neurons: int = 50
    hidden_layers: int = 2

    def layer_sizes(self, n_in: int, n_out: int) -> list[int]:
        return [n_in] + [self.neurons] * self.hidden_layers + [n_out]


BASELINE_CONFIG = TrainConfig(epochs=50, batch_size=50, learning_rate=0.01, seed=0, loss=CROSS_ENTROPY)

# cumulative tuning ladder: each step keeps the previous ones
PRESETS = {
    "baseline": (Architecture(50, 2), BASELINE_CONFIG),
    "neurons-80": (Architecture(80, 2), BASELINE_CONFIG),
    "neurons-100": (Architecture(100, 2), BASELINE_CONFIG),
    "layers-3": (Architecture(100, 3), BASELINE_CONFIG),
    "epochs-100": (Architecture(100, 3), BASELINE_CONFIG.replace(epochs=100)),
    "batch-100": (Architecture(100, 3), BASELINE_CONFIG.replace(epochs=100, batch_size=100)),
}


def preset(name: str, seed: int | None = None) -> tuple[Architecture, TrainConfig]:
    if name not in PRESETS:
        raise RejectedInputError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    arch, cfg = PRESETS[name]
    return arch, (cfg if seed is None else cfg.replace(seed=seed))


def fine_tune_config(cfg: TrainConfig) -> TrainConfig:
    """Fine-tuning runs at a tenth of the fresh-training learning rate."""
    return cfg.replace(learning_rate=cfg.learning_rate / 10.0)


@dataclass
class DefectClassifier:
    network: DenseNetwork
    encoder: FeatureEncoder
    classes: tuple
    provenance: str = TRAINED_FRESH
    config: TrainConfig | None = None
    history: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    TYPE_TAG = "defect_classifier"

    def __post_init__(self):
        self.classes = tuple(self.classes)
        if self.network.n_inputs != self.encoder.dim:
            raise RejectedInputError(
                f"network input size {self.network.n_inputs} != encoder dimensionality {self.encoder.dim}")
        if self.network.n_outputs != len(self.classes):
            raise RejectedInputError(f"network has {self.network.n_outputs} outputs for {len(self.classes)} classes")

    def to_bytes(self) -> bytes:
        art = ModelArtifact(self.network, self.config or TrainConfig(epochs=0), self.history, {})
        net_meta, arrays = art.envelope_parts()
        enc_meta, enc_arrays = self.encoder.envelope_parts()
        arrays.update({f"encoder_{k}": v for k, v in enc_arrays.items()})
        meta = {"classes": list(self.classes), "provenance": self.provenance, "network": net_meta,
                "encoder": enc_meta, "extra": self.meta}
        return envelope.dumps(self.TYPE_TAG, meta, arrays)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "DefectClassifier":
        tag, meta, arrays = envelope.loads(blob)
        if tag != cls.TYPE_TAG:
            raise ArtifactFormatError(f"expected {cls.TYPE_TAG!r} artifact, found {tag!r}")
        art = ModelArtifact.from_parts(meta["network"], arrays)
        enc = FeatureEncoder.from_parts(meta["encoder"], {"mean": arrays["encoder_mean"], "std": arrays["encoder_std"]})
        return cls(art.network, enc, tuple(meta["classes"]), meta["provenance"], art.config, art.history,
                   dict(meta["extra"]))

    def save(self, path) -> None:
        envelope.atomic_write_bytes(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> "DefectClassifier":
        return cls.from_bytes(Path(path).read_bytes())

    def weights_digest(self) -> str:
        import hashlib
        h = hashlib.sha256()
        for p in self.network.parameters():
            h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
        return h.hexdigest()


def _check_classes(windows: WindowSet):
    present = np.unique(windows.label)
    if len(present) < 2:
        raise RejectedInputError(f"training data holds a single class ({windows.classes[present[0]] if len(present) else 'none'})")


def train_dnn_r(windows: WindowSet, hyper: TrainConfig = BASELINE_CONFIG,
                arch: Architecture = Architecture()) -> DefectClassifier:
    """Fit an encoder and a fresh softmax network on the training windows."""
    if len(windows) == 0:
        raise RejectedInputError("no training windows")
    _check_classes(windows)
    encoder = fit_encoder(windows)
    X = apply_encoder(encoder, windows.features)
    net = DenseNetwork.initialize(arch.layer_sizes(windows.dim, len(windows.classes)), seed=hyper.seed)
    art, history = train(net, X, windows.one_hot(), hyper)
    return DefectClassifier(art.network, encoder, windows.classes, TRAINED_FRESH, hyper, history,
                            {"arch": {"neurons": arch.neurons, "hidden_layers": arch.hidden_layers},
                             "n_train": len(windows)})


def reconcile(windows: WindowSet, encoder: FeatureEncoder) -> WindowSet:
    """Bring windows into the encoder's feature space (axis selection, then decimation)."""
    if encoder.axes and tuple(encoder.axes) != windows.axes:
        if set(encoder.axes) <= set(windows.axes):
            windows = select_axes(windows, encoder.axes)
        else:
            raise RejectedInputError(f"windows with axes {windows.axes} lack encoder axes {tuple(encoder.axes)}")
    if windows.dim == encoder.dim:
        return windows
    target_len = encoder.window_len or encoder.dim // max(len(windows.axes), 1)
    try:
        return decimate(windows, target_len)
    except RejectedInputError:
        raise RejectedInputError(
            f"cannot reconcile target dimensionality {windows.dim} with source dimensionality {encoder.dim}") from None


def transfer(source: DefectClassifier, target_windows: WindowSet | None = None,
             fine_tune: TrainConfig | None = None, freeze_hidden: bool = False) -> DefectClassifier:
    """Start a target-sensor classifier from the source weights and encoder.

    Without ``fine_tune`` the result carries the source parameters unchanged.
    With it, training continues on the (reconciled) target windows; the source
    is never modified. ``freeze_hidden`` restricts updates to the output layer.
    """
    net = source.network.copy()
    encoder = FeatureEncoder(source.encoder.mean.copy(), source.encoder.std.copy(), tuple(source.encoder.axes),
                             source.encoder.window_len, source.encoder.version)
    history = []
    n_target = 0
    if target_windows is not None and len(target_windows):
        target = reconcile(target_windows, encoder)
        if target.classes != source.classes:
            raise RejectedInputError(f"target classes {target.classes} differ from source classes {source.classes}")
        n_target = len(target)
        if fine_tune is not None and fine_tune.epochs > 0:
            trainable = [net.n_layers - 1] if freeze_hidden else None
            art, history = train(net, apply_encoder(encoder, target.features), target.one_hot(), fine_tune,
                                 trainable=trainable)
            net = art.network
    return DefectClassifier(net, encoder, source.classes, TRANSFERRED, fine_tune or source.config, history,
                            {"source_provenance": source.provenance, "n_target": n_target,
                             "freeze_hidden": freeze_hidden, "fine_tuned": fine_tune is not None})


def predict_proba(clf: DefectClassifier, windows) -> np.ndarray:
    X = windows.features if isinstance(windows, WindowSet) else np.atleast_2d(np.asarray(windows, dtype=np.float64))
    if X.shape[1] != clf.encoder.dim:
        raise RejectedInputError(f"classifier expects {clf.encoder.dim} features, got {X.shape[1]}")
    return forward(clf.network, apply_encoder(clf.encoder, X))


def predict_labels(clf: DefectClassifier, windows) -> np.ndarray:
    """Argmax class indices; ties go to the lowest index."""
    return np.argmax(predict_proba(clf, windows), axis=1)


def predict(clf: DefectClassifier, window) -> tuple[str, np.ndarray]:
    x = window.features if hasattr(window, "features") and not isinstance(window, WindowSet) else window
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise RejectedInputError("predict takes a single window; use predict_proba for batches")
    probs = predict_proba(clf, x[None, :])[0]
    return clf.classes[int(np.argmax(probs))], probs


def decision_logits(clf: DefectClassifier, windows) -> np.ndarray:
    X = windows.features if isinstance(windows, WindowSet) else np.atleast_2d(windows)
    return logits(clf.network, apply_encoder(clf.encoder, X))


# ---------------------------------------------------------------- evaluation


@dataclass
class ConfusionMatrix:
    counts: np.ndarray
    classes: tuple

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total if self.total else float("nan")

    @property
    def rates(self) -> np.ndarray:
        rows = self.counts.sum(axis=1, keepdims=True).astype(np.float64)
        return np.divide(self.counts, rows, out=np.zeros(self.counts.shape), where=rows > 0)

    def to_table(self, percent: bool = True) -> str:
        out = io.StringIO()
        out.write("true\\predicted," + ",".join(self.classes) + "\n")
        rates = self.rates
        for k, name in enumerate(self.classes):
            vals = [f"{100 * r:.2f}" if percent else repr(float(r)) for r in rates[k]]
            out.write(name + "," + ",".join(vals) + "\n")
        return out.getvalue()

    def counts_table(self) -> str:
        out = io.StringIO()
        out.write("true\\predicted," + ",".join(self.classes) + "\n")
        for k, name in enumerate(self.classes):
            out.write(name + "," + ",".join(str(int(v)) for v in self.counts[k]) + "\n")
        return out.getvalue()


def tally(true_labels, predicted, n_classes: int) -> np.ndarray:
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (np.asarray(true_labels, dtype=np.int64), np.asarray(predicted, dtype=np.int64)), 1)
    return counts


def confusion(clf: DefectClassifier, windows: WindowSet) -> ConfusionMatrix:
    if len(windows) == 0:
        raise RejectedInputError("empty test set")
    windows = reconcile(windows, clf.encoder)
    pred = predict_labels(clf, windows)
    return ConfusionMatrix(tally(windows.label, pred, len(clf.classes)), clf.classes)


# ---------------------------------------------------------------- rpm grid


@dataclass
class GridResult:
    row_labels: list
    test_rpms: list
    accuracy: np.ndarray
    confusions: dict = field(default_factory=dict)

    @property
    def row_averages(self) -> np.ndarray:
        return self.accuracy.mean(axis=1)

    def row(self, label) -> np.ndarray:
        return self.accuracy[self.row_labels.index(label)]

    def single_rows(self) -> np.ndarray:
        return np.array([k for k, lab in enumerate(self.row_labels) if lab != AUGMENTED_ROW])

    def to_table(self) -> str:
        out = io.StringIO()
        out.write("Trained RPM," + ",".join(f"RPM-{r}" for r in self.test_rpms) + ",Average (%)\n")
        for label, row, avg in zip(self.row_labels, self.accuracy, self.row_averages):
            out.write(label + "," + ",".join(f"{100 * v:.2f}" for v in row) + f",{100 * avg:.2f}\n")
        return out.getvalue()


AUGMENTED_ROW = "Augmented-data model"


def rpm_generalization_grid(windows: WindowSet, arch: Architecture = Architecture(),
                            hyper: TrainConfig = BASELINE_CONFIG, include_augmented: bool = False,
                            train_fraction: float = 0.7, interpolation_count=None,
                            seed: int = 0) -> GridResult:
    """Train on one rpm, test on every rpm; optionally add a pooled, augmented row.

    Each rpm group is split by recording once; row models train on their
    group's training part and every column is scored on that column's held-out
    part, so the diagonal is a within-rpm test.
    """
    groups = windows.by_rpm()
    if len(groups) < 1:
        raise RejectedInputError("no rpm groups")
    rpms = sorted(groups)
    splits = {r: split_by_recording(groups[r], train_fraction, seed) for r in rpms}
    rows, labels, confusions = [], [], {}

    def score(clf, row_label):
        accs = []
        for r in rpms:
            cm = confusion(clf, splits[r][1])
            confusions[(row_label, r)] = cm
            accs.append(cm.accuracy)
        return accs

    for r in rpms:
        label = f"RPM-{r}"
        try:
            clf = train_dnn_r(splits[r][0], hyper, arch)
        except Exception as exc:
            raise type(exc)(f"grid row {label}: {exc}") from exc
        rows.append(score(clf, label))
        labels.append(label)
    if include_augmented:
        pooled = concat([splits[r][0] for r in rpms])
        count = interpolation_count if interpolation_count is not None else default_interpolation_count(pooled)
        pooled = augment(pooled, count, seed=seed)
        try:
            clf = train_dnn_r(pooled, hyper, arch)
        except Exception as exc:
            raise type(exc)(f"grid row {AUGMENTED_ROW}: {exc}") from exc
        rows.append(score(clf, AUGMENTED_ROW))
        labels.append(AUGMENTED_ROW)
    return GridResult(labels, rpms, np.array(rows), confusions)


def default_interpolation_count(windows: WindowSet) -> dict:
    """A quarter of each rpm group's size in new interpolants."""
    return {int(r): int(len(g) // 4) for r, g in windows.by_rpm().items()}
