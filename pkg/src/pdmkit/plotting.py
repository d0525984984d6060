"""Report figures. Rendered off-screen to PNG so reruns give identical bytes."""
from __future__ import annotations

import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .envelope import atomic_write_bytes  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 3.6),
    "figure.dpi": 100,
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path) -> Path:
    buf = io.BytesIO()
    # no Software/date chunks: the PNG depends only on the drawn content
    fig.savefig(buf, format="png", metadata={"Software": None})
    plt.close(fig)
    path = Path(path)
    atomic_write_bytes(path, buf.getvalue())
    return path


def forecast_figure(report, path) -> Path:
    """Observed test region, one-step forecasts and flagged samples."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(report.indices, report.actuals, lw=0.8, color="0.3", label="observed")
        ax.plot(report.indices, report.predictions, lw=0.8, color="tab:blue", label=f"{report.model_type} forecast")
        if report.n_flagged:
            ax.scatter(report.flagged_indices, report.actuals[report.flagged], s=14, color="tab:red", zorder=3,
                       label=f"flagged ({report.n_flagged})")
        ax.set_xlabel("sample index")
        ax.set_ylabel(report.series_name or "value")
        ax.set_title(f"{report.series_name}  rmse={report.rmse:.4g}")
        ax.legend(loc="best", frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def confusion_figure(cm, path, title: str = "") -> Path:
    rates = cm.rates
    k = len(cm.classes)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(1.2 * k + 2.2, 1.0 * k + 1.6))
        im = ax.imshow(rates, vmin=0.0, vmax=1.0, cmap="Blues")
        for i in range(k):
            for j in range(k):
                ax.text(j, i, f"{100 * rates[i, j]:.1f}", ha="center", va="center",
                        color="white" if rates[i, j] > 0.6 else "black")
        ax.set_xticks(range(k), cm.classes, rotation=30, ha="right")
        ax.set_yticks(range(k), cm.classes)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        ax.set_title(title or f"accuracy {100 * cm.accuracy:.2f}%")
        fig.colorbar(im, ax=ax, fraction=0.046)
        fig.tight_layout()
        return _save(fig, path)


def grid_figure(grid, path) -> Path:
    acc = grid.accuracy
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(0.9 * len(grid.test_rpms) + 3.0, 0.5 * len(grid.row_labels) + 1.6))
        im = ax.imshow(acc, vmin=0.0, vmax=1.0, cmap="viridis", aspect="auto")
        for i in range(acc.shape[0]):
            for j in range(acc.shape[1]):
                ax.text(j, i, f"{100 * acc[i, j]:.0f}", ha="center", va="center",
                        color="black" if acc[i, j] > 0.6 else "white", fontsize=7)
        ax.set_xticks(range(len(grid.test_rpms)), [f"RPM-{r}" for r in grid.test_rpms])
        ax.set_yticks(range(len(grid.row_labels)), grid.row_labels)
        ax.set_xlabel("test rpm")
        ax.set_title("accuracy by training / test rpm")
        fig.colorbar(im, ax=ax, fraction=0.046)
        fig.tight_layout()
        return _save(fig, path)


def acf_figure(acf, path, threshold: float | None = None, chosen: int | None = None, title: str = "") -> Path:
    acf = np.asarray(acf)
    lags = np.arange(len(acf))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.vlines(lags, 0, acf, color="tab:blue", lw=1.0)
        ax.plot(lags, acf, "o", ms=2.5, color="tab:blue")
        ax.axhline(0, color="0.5", lw=0.6)
        if threshold is not None:
            ax.axhline(threshold, color="tab:red", ls="--", lw=0.8, label=f"threshold {threshold:g}")
        if chosen is not None:
            ax.axvline(chosen, color="tab:green", ls=":", lw=0.8, label=f"lag {chosen}")
        if threshold is not None or chosen is not None:
            ax.legend(frameon=False)
        ax.set_xlabel("lag")
        ax.set_ylabel("autocorrelation")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)


def loss_figure(history, path, title: str = "training loss") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(np.arange(1, len(history) + 1), history, marker="o", ms=2.5, lw=0.9)
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)


def rmse_figure(rows, path, model_type: str) -> Path:
    """Average test RMSE per sensor type, log scale since units differ widely."""
    names = [r[0] for r in rows]
    vals = [r[1] for r in rows]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.bar(range(len(names)), vals, color="tab:blue")
        ax.set_yscale("log")
        ax.set_xticks(range(len(names)), names, rotation=30, ha="right")
        ax.set_ylabel("average test rmse")
        ax.set_title(model_type)
        fig.tight_layout()
        return _save(fig, path)
