"""ARIMA(p, d, 0) forecasting by conditional least squares.

The autoregression is fitted on the ``d``-times differenced series with an
optional intercept. The normal equations are solved by Gaussian elimination
with partial pivoting behind a condition-number guard, so collinear lag
structures fail loudly instead of producing garbage coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import envelope
from .errors import (ArtifactFormatError, DegenerateFitError, DegenerateVarianceError,
                     RejectedInputError)

MAX_CONDITION = 1e12
MIN_MARGIN = 10


@dataclass(frozen=True)
class ArimaConfig:
    p: int = 10
    d: int = 1
    q: int = 0
    include_intercept: bool = True

    def __post_init__(self):
        if self.q != 0:
            raise RejectedInputError("moving-average terms are not supported (q must be 0)")
        if self.p < 0 or self.d < 0:
            raise RejectedInputError(f"p and d must be nonnegative, got p={self.p}, d={self.d}")
        if self.p + self.d < 1:
            raise RejectedInputError("need p + d >= 1")

    def as_dict(self) -> dict:
        return dict(p=int(self.p), d=int(self.d), q=int(self.q), include_intercept=bool(self.include_intercept))


@dataclass
class ArModel:
    config: ArimaConfig
    coefficients: np.ndarray
    intercept: float
    training_tail: np.ndarray
    residual_ss: float = float("nan")
    meta: dict = field(default_factory=dict)

    TYPE_TAG = "ar_model"

    def to_bytes(self) -> bytes:
        meta = {"config": self.config.as_dict(), "intercept": float(self.intercept),
                "residual_ss": float(self.residual_ss), "extra": self.meta}
        return envelope.dumps(self.TYPE_TAG, meta, {"coefficients": self.coefficients,
                                                    "training_tail": self.training_tail})

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ArModel":
        tag, meta, arrays = envelope.loads(blob)
        if tag != cls.TYPE_TAG:
            raise ArtifactFormatError(f"expected {cls.TYPE_TAG!r} artifact, found {tag!r}")
        return cls(ArimaConfig(**meta["config"]), arrays["coefficients"], meta["intercept"],
                   arrays["training_tail"], meta["residual_ss"], dict(meta["extra"]))

    def save(self, path) -> None:
        envelope.atomic_write_bytes(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> "ArModel":
        from pathlib import Path
        return cls.from_bytes(Path(path).read_bytes())


def _as_series(series) -> np.ndarray:
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1:
        raise RejectedInputError(f"series must be one-dimensional, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise RejectedInputError("series contains non-finite values")
    return x


def difference(series, d: int) -> np.ndarray:
    x = _as_series(series)
    if d < 0:
        raise RejectedInputError("d must be nonnegative")
    if len(x) <= d:
        raise RejectedInputError(f"series of length {len(x)} is too short to difference {d} times")
    return np.diff(x, n=d) if d else x.copy()


def difference_heads(series, d: int) -> np.ndarray:
    """First value of each differencing level 0..d-1, needed to undo ``difference``."""
    x = _as_series(series)
    heads = []
    cur = x
    for _ in range(d):
        heads.append(cur[0])
        cur = np.diff(cur)
    return np.array(heads)


def undifference(diffed, heads) -> np.ndarray:
    """Invert ``difference`` by repeated cumulative summation from stored heads."""
    cur = np.asarray(diffed, dtype=np.float64)
    for head in reversed(np.asarray(heads, dtype=np.float64)):
        cur = np.concatenate(([head], head + np.cumsum(cur)))
    return cur


def autocorrelation(series, max_lag: int) -> np.ndarray:
    x = _as_series(series)
    if max_lag < 0 or len(x) <= max_lag + 1:
        raise RejectedInputError(f"series of length {len(x)} too short for max_lag={max_lag}")
    c = x - x.mean()
    denom = float(c @ c)
    if denom == 0.0 or denom <= 1e-300 * len(x):
        raise DegenerateVarianceError("autocorrelation of a constant series is undefined")
    acf = np.empty(max_lag + 1)
    acf[0] = 1.0
    for k in range(1, max_lag + 1):
        acf[k] = float(c[:-k] @ c[k:]) / denom
    return np.clip(acf, -1.0, 1.0)


def select_lag(series, threshold: float = 0.9, max_lag: int = 50, default: int = 10) -> int:
    """Smallest lag whose autocorrelation falls below ``threshold``."""
    acf = autocorrelation(series, min(max_lag, len(series) - 2))
    below = np.nonzero(acf[1:] < threshold)[0]
    return int(below[0] + 1) if len(below) else default


def lag_matrix(z: np.ndarray, p: int, include_intercept: bool) -> tuple[np.ndarray, np.ndarray]:
    """Design matrix with rows ``[1, z[t-1], ..., z[t-p]]`` and targets ``z[t]``."""
    n = len(z)
    cols = [z[p - k:n - k] for k in range(1, p + 1)]
    if include_intercept:
        cols.insert(0, np.ones(n - p))
    X = np.column_stack(cols) if cols else np.empty((n - p, 0))
    return X, z[p:]


def solve_pivoted(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gaussian elimination with partial pivoting on a small dense system."""
    A = np.array(A, dtype=np.float64)
    x = np.array(b, dtype=np.float64)
    n = len(x)
    for col in range(n):
        piv = col + int(np.argmax(np.abs(A[col:, col])))
        if A[piv, col] == 0.0:
            raise DegenerateFitError(f"singular system at column {col}")
        if piv != col:
            A[[col, piv]] = A[[piv, col]]
            x[[col, piv]] = x[[piv, col]]
        factors = A[col + 1:, col] / A[col, col]
        A[col + 1:, col:] -= np.outer(factors, A[col, col:])
        x[col + 1:] -= factors * x[col]
    for row in range(n - 1, -1, -1):
        x[row] = (x[row] - A[row, row + 1:] @ x[row + 1:]) / A[row, row]
    return x


def _describe_columns(p: int, include_intercept: bool) -> list[str]:
    return (["intercept"] if include_intercept else []) + [f"lag{k}" for k in range(1, p + 1)]


def fit_ar(series, config: ArimaConfig = ArimaConfig()) -> ArModel:
    x = _as_series(series)
    p, d = config.p, config.d
    if len(x) < p + d + MIN_MARGIN:
        raise RejectedInputError(
            f"need at least p + d + {MIN_MARGIN} = {p + d + MIN_MARGIN} observations, got {len(x)}")
    z = difference(x, d)
    X, y = lag_matrix(z, p, config.include_intercept)
    if X.shape[1] == 0:
        coef = np.empty(0)
        resid = y
    else:
        gram = X.T @ X
        cond = np.linalg.cond(gram)
        if not np.isfinite(cond) or cond > MAX_CONDITION:
            # name the offending columns: those nearly reproduced by the others
            names = _describe_columns(p, config.include_intercept)
            _, s, vt = np.linalg.svd(gram)
            null = vt[s <= s[0] / MAX_CONDITION] if s[0] > 0 else vt
            if len(null) == 0:
                null = vt[-1:]
            culprits = [names[i] for i in np.nonzero(np.abs(null).max(axis=0) > 0.1)[0]]
            raise DegenerateFitError(
                f"design matrix is rank-deficient (condition {cond:.3g}); collinear columns: {', '.join(culprits)}")
        coef = solve_pivoted(gram, X.T @ y)
        resid = y - X @ coef
    intercept = float(coef[0]) if config.include_intercept else 0.0
    lags = coef[1:] if config.include_intercept else coef
    return ArModel(config, np.array(lags), intercept, x[len(x) - (p + d):].copy(), float(resid @ resid))


def forecast_next(model: ArModel, history) -> float:
    """One-step prediction of the undifferenced series following ``history``."""
    h = _as_series(history)
    p, d = model.config.p, model.config.d
    if len(h) < p + d:
        raise RejectedInputError(f"need at least p + d = {p + d} observations of history, got {len(h)}")
    tail = h[len(h) - (p + d):] if p + d else h[:0]
    levels = [tail]
    for _ in range(d):
        levels.append(np.diff(levels[-1]))
    z = levels[-1]
    pred = model.intercept
    for k in range(1, p + 1):
        pred += model.coefficients[k - 1] * z[-k]
    # Δ^{j} y_t = Δ^{j+1} y_t + Δ^{j} y_{t-1}, unwound from j = d-1 down to 0
    for j in range(d - 1, -1, -1):
        pred += levels[j][-1]
    return float(pred)


def _constant_model(window: np.ndarray, config: ArimaConfig) -> ArModel | None:
    """Exact fit for a window whose differenced series is constant, else None."""
    z = np.diff(window, n=config.d) if config.d else window
    if np.all(z == z[0]) and (config.include_intercept or z[0] == 0.0):
        return ArModel(config, np.zeros(config.p), float(z[0]),
                       window[len(window) - (config.p + config.d):].copy(), 0.0)
    return None


def rolling_refit_predict(series, config: ArimaConfig = ArimaConfig(),
                          train_fraction: float = 0.66) -> tuple[np.ndarray, int]:
    """Refit on a sliding window before every test sample and predict it.

    The window length is fixed at the initial training length: each newly
    observed sample enters the window and the oldest one leaves it.
    """
    x = _as_series(series)
    if not (0 < train_fraction < 1):
        raise RejectedInputError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n_train = int(np.floor(train_fraction * len(x)))
    return rolling_refit_from(x, n_train, config)


def rolling_refit_from(series, n_train: int, config: ArimaConfig = ArimaConfig()) -> tuple[np.ndarray, int]:
    x = _as_series(series)
    preds = np.empty(len(x) - n_train)
    fitted = 0
    for t in range(n_train, len(x)):
        window = x[t - n_train:t]
        try:
            model = fit_ar(window, config)
        except DegenerateFitError as exc:
            model = _constant_model(window, config)
            if model is None:
                raise DegenerateFitError(f"refit before index {t}: {exc}") from exc
        except RejectedInputError as exc:
            raise RejectedInputError(f"refit before index {t}: {exc}") from exc
        preds[t - n_train] = forecast_next(model, window)
        fitted += 1
    return preds, fitted


def fixed_fit_predict(series, n_train: int, config: ArimaConfig = ArimaConfig()) -> np.ndarray:
    """Single fit on the training prefix, then one-step forecasts over the rest."""
    x = _as_series(series)
    model = fit_ar(x[:n_train], config)
    return np.array([forecast_next(model, x[:t]) for t in range(n_train, len(x))])
