"""Relative-error anomaly rule on top of any one-step forecaster."""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .arima import ArimaConfig, fixed_fit_predict, rolling_refit_from
from .errors import PdmError, RejectedInputError
from .lstm import WindowSpec, forecast_series, train_lstm
from .numcore import MSE, TrainConfig


@dataclass(frozen=True)
class AnomalyRule:
    threshold: float = 0.2
    denominator_floor: float = 1e-6
    two_sided: bool = True

    def __post_init__(self):
        if not self.threshold > 0:
            raise RejectedInputError("threshold must be positive")
        if not self.denominator_floor > 0:
            raise RejectedInputError("denominator_floor must be positive")


def relative_error(predicted, actual, rule: AnomalyRule = AnomalyRule()):
    """Signed (one-sided rule) or absolute (two-sided rule) error relative to the prediction."""
    p = np.asarray(predicted, dtype=np.float64)
    a = np.asarray(actual, dtype=np.float64)
    denom = np.maximum(np.abs(p), rule.denominator_floor)
    diff = p - a
    return (np.abs(diff) if rule.two_sided else diff) / denom


def flag(predicted, actual, rule: AnomalyRule = AnomalyRule()) -> bool:
    if not (np.isfinite(predicted) and np.isfinite(actual)):
        raise RejectedInputError("flag needs finite predicted and actual values")
    return bool(relative_error(predicted, actual, rule) > rule.threshold)


def rmse(predictions, actuals) -> float:
    p = np.asarray(predictions, dtype=np.float64)
    a = np.asarray(actuals, dtype=np.float64)
    if p.shape != a.shape or p.ndim != 1:
        raise RejectedInputError(f"rmse needs two equal-length vectors, got {p.shape} and {a.shape}")
    if len(p) == 0:
        raise RejectedInputError("rmse of empty vectors is undefined")
    return float(np.sqrt(np.mean((p - a) ** 2)))


class ArimaForecaster:
    """Semi-supervised ARIMA: refit on a sliding window before every test sample."""

    model_type = "arima"

    def __init__(self, config: ArimaConfig = ArimaConfig(), rolling: bool = True):
        self.config = config
        self.rolling = rolling

    def predict(self, series, n_train: int) -> np.ndarray:
        if self.rolling:
            return rolling_refit_from(series, n_train, self.config)[0]
        return fixed_fit_predict(series, n_train, self.config)

    def describe(self) -> dict:
        return dict(model_type=self.model_type, rolling=self.rolling, **self.config.as_dict())


DEFAULT_LSTM_CONFIG = TrainConfig(epochs=5, batch_size=32, learning_rate=0.05, seed=0, loss=MSE)


class LstmForecaster:
    """LSTM trained once on the training prefix, then rolled over the test region."""

    model_type = "lstm"

    def __init__(self, window: WindowSpec = WindowSpec(), cfg: TrainConfig = DEFAULT_LSTM_CONFIG,
                 hidden_dim: int = 64):
        self.window = window
        self.cfg = cfg
        self.hidden_dim = hidden_dim
        self.artifact = None

    def predict(self, series, n_train: int) -> np.ndarray:
        x = np.asarray(series, dtype=np.float64)
        self.artifact = train_lstm(x[:n_train], self.window, self.cfg, self.hidden_dim)
        return forecast_series(self.artifact, x, n_train)

    def describe(self) -> dict:
        return dict(model_type=self.model_type, hidden_dim=self.hidden_dim,
                    window_len=self.window.window_len, stride=self.window.stride, **self.cfg.as_dict())


@dataclass
class AnomalyReport:
    model_type: str
    series_name: str
    rule: AnomalyRule
    n_train: int
    indices: np.ndarray
    predictions: np.ndarray
    actuals: np.ndarray
    relative_errors: np.ndarray
    flagged: np.ndarray
    rmse: float
    timestamps: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_test(self) -> int:
        return len(self.indices)

    @property
    def n_flagged(self) -> int:
        return int(self.flagged.sum())

    @property
    def flagged_indices(self) -> np.ndarray:
        return self.indices[self.flagged]

    def flagged_rows(self):
        for k in np.nonzero(self.flagged)[0]:
            ts = str(self.timestamps[k]) if self.timestamps is not None else ""
            yield (int(self.indices[k]), ts, float(self.predictions[k]), float(self.actuals[k]),
                   float(self.relative_errors[k]))

    def summary_line(self) -> str:
        return (f"# summary,model_type={self.model_type},series={self.series_name},n_train={self.n_train},"
                f"n_test={self.n_test},rmse={self.rmse!r},anomalies={self.n_flagged},"
                f"threshold={self.rule.threshold!r},two_sided={self.rule.two_sided}")

    def to_table(self) -> str:
        out = io.StringIO()
        out.write("index,timestamp,predicted,actual,relative_error\n")
        for idx, ts, p, a, r in self.flagged_rows():
            out.write(f"{idx},{ts},{p!r},{a!r},{r!r}\n")
        out.write(self.summary_line() + "\n")
        return out.getvalue()

    def plot_data(self) -> str:
        """Full test-region trace as x/y columns for external plotting."""
        out = io.StringIO()
        out.write("index,actual,predicted,flagged\n")
        for k in range(self.n_test):
            out.write(f"{int(self.indices[k])},{float(self.actuals[k])!r},{float(self.predictions[k])!r},"
                      f"{int(self.flagged[k])}\n")
        return out.getvalue()


def detect(series, forecaster, split_fraction: float = 0.66, rule: AnomalyRule = AnomalyRule(),
           timestamps=None, name: str = "") -> AnomalyReport:
    """Forecast the test region, flag each sample by the rule, and score the RMSE."""
    x = np.asarray(series, dtype=np.float64)
    if not (0 < split_fraction < 1):
        raise RejectedInputError(f"split_fraction must lie in (0, 1), got {split_fraction}")
    n_train = int(np.floor(split_fraction * len(x)))
    if n_train >= len(x):
        raise RejectedInputError("no test samples after the split")
    try:
        preds = np.asarray(forecaster.predict(x, n_train), dtype=np.float64)
    except PdmError as exc:
        raise type(exc)(f"{name or 'series'}: forecaster {forecaster.model_type} failed: {exc}") from exc
    actual = x[n_train:]
    if preds.shape != actual.shape:
        raise RejectedInputError(f"forecaster returned {preds.shape} predictions for {actual.shape} test samples")
    bad = np.nonzero(~np.isfinite(preds))[0]
    if len(bad):
        raise RejectedInputError(f"{name or 'series'}: non-finite prediction at index {n_train + int(bad[0])}")
    rel = relative_error(preds, actual, rule)
    flagged = rel > rule.threshold
    ts = None if timestamps is None else np.asarray(timestamps)[n_train:]
    return AnomalyReport(forecaster.model_type, name, rule, n_train, np.arange(n_train, len(x)), preds, actual,
                         rel, flagged, rmse(preds, actual), ts)
