"""Windowed vibration features, normalisation encoders and augmentation.

A window's feature vector is the concatenation of its raw per-axis samples in
axis order X, Z, Y (only the axes in use). ``WindowSet`` keeps a whole dataset
column-wise; indexing it yields ``LabeledWindow`` records.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass

import numpy as np

from . import envelope
from .errors import ArtifactFormatError, DegenerateFeatureError, RejectedInputError
from .lstm import WindowSpec
from .simulator import HEALTH_LABELS, MEMS, PIEZO

log = logging.getLogger(__name__)

AXIS_ORDER = ("X", "Z", "Y")
DEFAULT_WINDOWS = {PIEZO: WindowSpec(320, 320), MEMS: WindowSpec(10, 10)}
ENCODER_FORMAT_VERSION = 1
BINARY_LABELS = ("Normal", "NotNormal")


def canonical_axes(axes) -> tuple[str, ...]:
    axes = tuple(dict.fromkeys(a.upper() for a in axes))
    if not axes:
        raise RejectedInputError("axis set is empty")
    for a in axes:
        if a not in AXIS_ORDER:
            raise RejectedInputError(f"unknown axis {a!r}")
    return tuple(a for a in AXIS_ORDER if a in axes)


def window_count(n: int, spec: WindowSpec) -> int:
    return 0 if n < spec.window_len else (n - spec.window_len) // spec.stride + 1


def window_signal(raw: dict, spec: WindowSpec, axes=("X", "Y", "Z")) -> np.ndarray:
    """Cut per-axis sample arrays into windows at the given stride."""
    axes = canonical_axes(axes)
    arrays = []
    for a in axes:
        if a not in raw:
            raise RejectedInputError(f"axis {a} missing from raw recording")
        arr = np.asarray(raw[a], dtype=np.float64)
        if len(arr) < spec.window_len:
            raise RejectedInputError(f"axis {a} has {len(arr)} samples, fewer than window_len={spec.window_len}")
        arrays.append(arr)
    n = min(len(a) for a in arrays)
    count = window_count(n, spec)
    idx = np.arange(count)[:, None] * spec.stride + np.arange(spec.window_len)[None, :]
    return np.concatenate([arr[idx] for arr in arrays], axis=1)


@dataclass(frozen=True)
class LabeledWindow:
    features: np.ndarray
    rpm: int
    label: str
    sensor_kind: str
    axes: tuple


@dataclass
class WindowSet:
    features: np.ndarray
    rpm: np.ndarray
    label: np.ndarray
    sensor_kind: np.ndarray
    axes: tuple
    window_len: int
    classes: tuple = HEALTH_LABELS
    recording: np.ndarray | None = None

    def __post_init__(self):
        self.rpm = np.asarray(self.rpm, dtype=np.int64)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.size == 0:
            self.features = self.features.reshape(0, self.window_len * len(canonical_axes(self.axes)))
        else:
            self.features = self.features.reshape(len(self.rpm), -1)
        self.label = np.asarray(self.label, dtype=np.int64)
        self.sensor_kind = np.asarray(self.sensor_kind, dtype=object)
        self.axes = canonical_axes(self.axes)
        if self.recording is None:
            self.recording = np.arange(len(self.rpm))
        self.recording = np.asarray(self.recording, dtype=np.int64)
        n = len(self.rpm)
        if not (len(self.features) == len(self.label) == len(self.sensor_kind) == len(self.recording) == n):
            raise RejectedInputError("window columns have inconsistent lengths")
        if self.features.shape[1] != self.window_len * len(self.axes):
            raise RejectedInputError(
                f"feature length {self.features.shape[1]} != window_len {self.window_len} x {len(self.axes)} axes")

    def __len__(self):
        return len(self.rpm)

    def __getitem__(self, i) -> LabeledWindow:
        return LabeledWindow(self.features[i], int(self.rpm[i]), self.classes[self.label[i]],
                             str(self.sensor_kind[i]), self.axes)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "WindowSet":
        return WindowSet(self.features[idx], self.rpm[idx], self.label[idx], self.sensor_kind[idx],
                         self.axes, self.window_len, self.classes, self.recording[idx])

    def by_rpm(self) -> dict:
        return {int(r): self.subset(self.rpm == r) for r in np.unique(self.rpm)}

    def one_hot(self) -> np.ndarray:
        return np.eye(len(self.classes))[self.label]

    def label_counts(self) -> dict:
        return {c: int((self.label == k).sum()) for k, c in enumerate(self.classes)}

    def same_as(self, other: "WindowSet") -> bool:
        return (self.axes == other.axes and self.window_len == other.window_len and self.classes == other.classes
                and np.array_equal(self.features, other.features) and np.array_equal(self.rpm, other.rpm)
                and np.array_equal(self.label, other.label) and np.array_equal(self.recording, other.recording)
                and list(self.sensor_kind) == list(other.sensor_kind))


def concat(sets) -> WindowSet:
    sets = list(sets)
    first = sets[0]
    for s in sets[1:]:
        if s.axes != first.axes or s.window_len != first.window_len or s.classes != first.classes:
            raise RejectedInputError("cannot concatenate window sets with different layouts")
    return WindowSet(np.concatenate([s.features for s in sets]), np.concatenate([s.rpm for s in sets]),
                     np.concatenate([s.label for s in sets]), np.concatenate([s.sensor_kind for s in sets]),
                     first.axes, first.window_len, first.classes, np.concatenate([s.recording for s in sets]))


def windows_from_recordings(recordings, spec: WindowSpec | None = None, axes=("X", "Y", "Z")) -> WindowSet:
    """Window every recording; each recording gets its own group id for splitting."""
    recordings = list(recordings)
    if not recordings:
        raise RejectedInputError("no recordings to window")
    axes = canonical_axes(axes)
    spec = spec or DEFAULT_WINDOWS[recordings[0].sensor_kind]
    feats, rpm, label, kind, rec = [], [], [], [], []
    for k, r in enumerate(recordings):
        w = window_signal(r.axes(), spec, axes)
        feats.append(w)
        rpm.append(np.full(len(w), r.rpm))
        label.append(np.full(len(w), r.label))
        kind.append(np.full(len(w), r.sensor_kind, dtype=object))
        rec.append(np.full(len(w), k))
    return WindowSet(np.concatenate(feats), np.concatenate(rpm), np.concatenate(label), np.concatenate(kind),
                     axes, spec.window_len, HEALTH_LABELS, np.concatenate(rec))


def select_axes(windows: WindowSet, axes=("X", "Z")) -> WindowSet:
    axes = canonical_axes(axes)
    missing = [a for a in axes if a not in windows.axes]
    if missing:
        raise RejectedInputError(f"axes {missing} are not present in windows with axes {windows.axes}")
    L = windows.window_len
    blocks = [windows.features[:, windows.axes.index(a) * L:(windows.axes.index(a) + 1) * L] for a in axes]
    return WindowSet(np.concatenate(blocks, axis=1), windows.rpm, windows.label, windows.sensor_kind, axes, L,
                     windows.classes, windows.recording)


def decimate(windows: WindowSet, target_len: int) -> WindowSet:
    """Uniformly decimate each axis block down to ``target_len`` samples."""
    L = windows.window_len
    if target_len == L:
        return windows
    if target_len > L or L % target_len:
        raise RejectedInputError(
            f"cannot reconcile window length {L} (dim {windows.dim}) with {target_len} "
            f"(dim {target_len * len(windows.axes)}); decimation needs an integer factor")
    step = L // target_len
    keep = np.concatenate([a * L + np.arange(0, L, step) for a in range(len(windows.axes))])
    return WindowSet(windows.features[:, keep], windows.rpm, windows.label, windows.sensor_kind, windows.axes,
                     target_len, windows.classes, windows.recording)


def binarize(windows: WindowSet) -> WindowSet:
    """Collapse NearFailure and Failure into a single NotNormal class."""
    if windows.classes == BINARY_LABELS:
        return windows
    if windows.classes != HEALTH_LABELS:
        raise RejectedInputError(f"binarize expects labels {HEALTH_LABELS}, got {windows.classes}")
    return WindowSet(windows.features, windows.rpm, (windows.label > 0).astype(np.int64), windows.sensor_kind,
                     windows.axes, windows.window_len, BINARY_LABELS, windows.recording)


def split_by_recording(windows: WindowSet, train_fraction: float = 0.7, seed: int = 0):
    """Train/test split that keeps every recording's windows on one side.

    Recordings are shuffled within each (rpm, label) stratum and the first
    ``train_fraction`` of each stratum goes to training.
    """
    if not (0 < train_fraction < 1):
        raise RejectedInputError("train_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train_recs = []
    keys = np.stack([windows.rpm, windows.label], axis=1)
    for key in np.unique(keys, axis=0):
        recs = np.unique(windows.recording[(keys == key).all(axis=1)])
        recs = recs[rng.permutation(len(recs))]
        n_train = int(round(train_fraction * len(recs)))
        if len(recs) > 1:
            n_train = min(max(n_train, 1), len(recs) - 1)
        train_recs.extend(recs[:n_train].tolist())
    in_train = np.isin(windows.recording, np.array(train_recs, dtype=np.int64))
    return windows.subset(np.nonzero(in_train)[0]), windows.subset(np.nonzero(~in_train)[0])


# ---------------------------------------------------------------- encoder


@dataclass
class FeatureEncoder:
    mean: np.ndarray
    std: np.ndarray
    axes: tuple = ("X", "Z")
    window_len: int = 0
    version: int = ENCODER_FORMAT_VERSION

    TYPE_TAG = "feature_encoder"

    @property
    def dim(self) -> int:
        return len(self.mean)

    def same_as(self, other: "FeatureEncoder") -> bool:
        return (np.array_equal(self.mean, other.mean) and np.array_equal(self.std, other.std)
                and tuple(self.axes) == tuple(other.axes) and self.window_len == other.window_len)

    def envelope_parts(self):
        return ({"axes": list(self.axes), "window_len": int(self.window_len), "version": int(self.version)},
                {"mean": self.mean, "std": self.std})

    @classmethod
    def from_parts(cls, meta, arrays) -> "FeatureEncoder":
        return cls(arrays["mean"], arrays["std"], tuple(meta["axes"]), int(meta["window_len"]), int(meta["version"]))

    def save(self, path) -> None:
        meta, arrays = self.envelope_parts()
        envelope.save(path, self.TYPE_TAG, meta, arrays)

    @classmethod
    def load(cls, path) -> "FeatureEncoder":
        tag, meta, arrays = envelope.load(path)
        if tag != cls.TYPE_TAG:
            raise ArtifactFormatError(f"expected {cls.TYPE_TAG!r} artifact, found {tag!r}")
        return cls.from_parts(meta, arrays)


def _matrix(windows) -> np.ndarray:
    return windows.features if isinstance(windows, WindowSet) else np.atleast_2d(np.asarray(windows, dtype=np.float64))


def fit_encoder(windows) -> FeatureEncoder:
    """Per-feature mean and population standard deviation of the training windows."""
    X = _matrix(windows)
    if len(X) < 2:
        raise RejectedInputError("need at least 2 windows to fit an encoder")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    zero = np.nonzero(std == 0)[0]
    if len(zero):
        raise DegenerateFeatureError(int(zero[0]))
    if isinstance(windows, WindowSet):
        return FeatureEncoder(mean, std, windows.axes, windows.window_len)
    return FeatureEncoder(mean, std, (), 0)


def apply_encoder(encoder: FeatureEncoder, windows):
    X = _matrix(windows)
    if X.shape[1] != encoder.dim:
        raise RejectedInputError(f"encoder expects {encoder.dim} features, got {X.shape[1]}")
    Z = (X - encoder.mean) / encoder.std
    if isinstance(windows, WindowSet):
        return WindowSet(Z, windows.rpm, windows.label, windows.sensor_kind, windows.axes, windows.window_len,
                         windows.classes, windows.recording)
    return Z


def invert_encoder(encoder: FeatureEncoder, encoded) -> np.ndarray:
    Z = _matrix(encoded)
    if Z.shape[1] != encoder.dim:
        raise RejectedInputError(f"encoder expects {encoder.dim} features, got {Z.shape[1]}")
    return Z * encoder.std + encoder.mean


# ---------------------------------------------------------------- augmentation


def interpolate(a, b, lam: float) -> np.ndarray:
    return lam * np.asarray(a, dtype=np.float64) + (1.0 - lam) * np.asarray(b, dtype=np.float64)


def augment(windows: WindowSet, interpolation_count, seed: int = 0, return_parents: bool = False):
    """Append convex combinations of same-rpm, same-label window pairs.

    ``interpolation_count`` is either one count applied to every rpm group or a
    mapping rpm -> count. For each interpolant a parent ``a`` is drawn uniformly
    from the rpm group (among labels with at least two windows), a distinct
    partner ``b`` from the same label, and ``lam ~ U(0, 1)``.
    """
    rng = np.random.default_rng(seed)
    groups = np.unique(windows.rpm)
    counts = interpolation_count if isinstance(interpolation_count, dict) else {int(r): int(interpolation_count) for r in groups}
    new_feats, new_rpm, new_label, new_kind, new_rec, parents = [], [], [], [], [], []
    next_rec = int(windows.recording.max()) + 1 if len(windows) else 0
    for r in groups:
        want = int(counts.get(int(r), 0))
        if want <= 0:
            continue
        in_group = np.nonzero(windows.rpm == r)[0]
        members = {}
        for lab in np.unique(windows.label[in_group]):
            idx = in_group[windows.label[in_group] == lab]
            if len(idx) < 2:
                log.warning("rpm %d label %s has fewer than 2 windows; no interpolants for it",
                            r, windows.classes[lab])
                continue
            members[int(lab)] = idx
        if not members:
            continue
        pool = np.concatenate(list(members.values()))
        first = pool[rng.integers(0, len(pool), size=want)]
        lams = rng.uniform(0.0, 1.0, size=want)
        for a, lam in zip(first, lams):
            same = members[int(windows.label[a])]
            # uniform over the other members: skip a's own slot in the sorted list
            pos = int(np.searchsorted(same, a))
            j = int(rng.integers(0, len(same) - 1))
            b = same[j if j < pos else j + 1]
            new_feats.append(interpolate(windows.features[a], windows.features[b], lam))
            new_rpm.append(r)
            new_label.append(windows.label[a])
            new_kind.append(windows.sensor_kind[a])
            new_rec.append(next_rec)
            parents.append((int(a), int(b), float(lam)))
        next_rec += 1
    if not new_feats:
        out = windows.subset(np.arange(len(windows)))
        return (out, parents) if return_parents else out
    extra = WindowSet(np.array(new_feats), np.array(new_rpm), np.array(new_label), np.array(new_kind, dtype=object),
                      windows.axes, windows.window_len, windows.classes, np.array(new_rec))
    out = concat([windows, extra])
    return (out, parents) if return_parents else out


# ---------------------------------------------------------------- persistence


def windows_to_csv(windows: WindowSet) -> str:
    out = io.StringIO()
    header = [f"feature_{k}" for k in range(windows.dim)] + ["rpm", "label", "sensor_kind", "axes", "recording"]
    out.write(",".join(header) + "\n")
    axes = "".join(windows.axes)
    for i in range(len(windows)):
        feats = ",".join(repr(float(v)) for v in windows.features[i])
        out.write(f"{feats},{int(windows.rpm[i])},{windows.classes[windows.label[i]]},"
                  f"{windows.sensor_kind[i]},{axes},{int(windows.recording[i])}\n")
    return out.getvalue()


def save_windows(windows: WindowSet, path) -> None:
    envelope.atomic_write_text(path, windows_to_csv(windows))


def load_windows(path) -> WindowSet:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    n_feat = sum(1 for h in header if h.startswith("feature_"))
    tail = header[n_feat:]
    if tail[:4] != ["rpm", "label", "sensor_kind", "axes"]:
        raise RejectedInputError(f"{path}: unexpected window file header {tail}")
    if not rows:
        raise RejectedInputError(f"{path}: no windows")
    has_rec = len(tail) > 4 and tail[4] == "recording"
    names = sorted({r[n_feat + 1] for r in rows})
    classes = BINARY_LABELS if set(names) <= set(BINARY_LABELS) and "NotNormal" in names else HEALTH_LABELS
    try:
        feats = np.array([[float(v) for v in r[:n_feat]] for r in rows])
        label = np.array([classes.index(r[n_feat + 1]) for r in rows])
    except ValueError as exc:
        raise RejectedInputError(f"{path}: malformed window row: {exc}") from exc
    axes = tuple(rows[0][n_feat + 3])
    return WindowSet(feats, np.array([int(r[n_feat]) for r in rows]), label,
                     np.array([r[n_feat + 2] for r in rows], dtype=object), axes, n_feat // len(axes), classes,
                     np.array([int(r[n_feat + 4]) for r in rows]) if has_rec else None)
