"""Evaluation figures written next to a text report."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .core import ConveyorState  # noqa: E402
from .evidential import decide_batch  # noqa: E402
from .metrics import auroc, mean_f1, roc_curve  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "figure.figsize": (4.0, 3.0),
}


def _fig():
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(constrained_layout=True)
    return fig, ax


def _save(fig, path: Path) -> Path:
    with plt.rc_context(STYLE):
        fig.savefig(path)
    plt.close(fig)
    return path


def roc_figure(wrong_score, wrong, path: Path) -> Path:
    """ROC for detecting wrong decisions from the confidence score."""
    fig, ax = _fig()
    fpr, tpr = roc_curve(wrong_score, wrong)
    ax.plot(fpr, tpr, lw=1.5, label=f"AUROC {auroc(wrong_score, wrong):.3f}")
    ax.plot([0, 1], [0, 1], ls="--", lw=0.8, color="0.6")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.legend(loc="lower right", frameon=False)
    return _save(fig, path)


def confidence_histogram(conf: np.ndarray, correct: np.ndarray, tau: float, path: Path) -> Path:
    fig, ax = _fig()
    top = conf.max(axis=1)
    bins = np.linspace(0, 1, 26)
    ax.hist(top[correct], bins=bins, alpha=0.7, label="correct")
    ax.hist(top[~correct], bins=bins, alpha=0.7, label="wrong")
    ax.axvline(tau, color="k", lw=0.8, ls=":")
    ax.set_xlabel("max confidence")
    ax.set_ylabel("windows")
    ax.legend(frameon=False)
    return _save(fig, path)


def tau_sweep(conf: np.ndarray, y_true: np.ndarray, path: Path, taus=None) -> Path:
    """Mean F1 on decided windows and UD ratio as the threshold rises."""
    taus = np.linspace(0, 0.95, 20) if taus is None else np.asarray(taus)
    f1, ud = [], []
    for t in taus:
        pred = decide_batch(conf, t)
        f1.append(mean_f1(y_true, pred))
        ud.append(float(np.mean(pred < 0)))
    fig, ax = _fig()
    ax.plot(taus, f1, marker="o", ms=3, label="mean F1")
    ax.plot(taus, ud, marker="s", ms=3, label="UD ratio")
    ax.set_xlabel("threshold")
    ax.set_ylim(0, 1.02)
    ax.legend(frameon=False)
    return _save(fig, path)


def confusion_figure(confusion: np.ndarray, path: Path) -> Path:
    fig, ax = _fig()
    ax.imshow(confusion, cmap="Blues")
    names = [s.name.lower() for s in ConveyorState]
    ax.set_xticks(range(len(names)), names)
    ax.set_yticks(range(len(names)), names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    hi = confusion.max() if confusion.size else 0
    for (i, j), v in np.ndenumerate(confusion):
        ax.text(j, i, str(int(v)), ha="center", va="center", color="white" if v > hi / 2 else "black")
    return _save(fig, path)


def report_figures(report_path: str | Path, y_true, conf, wrong_score, tau: float, confusion) -> list[Path]:
    """Render all evaluation figures beside ``report_path``; returns the files written."""
    report_path = Path(report_path)
    stem = report_path.with_suffix("")
    y_true = np.asarray(y_true)
    correct = np.argmax(conf, axis=1) == y_true
    return [
        roc_figure(wrong_score, ~correct, Path(f"{stem}_roc.png")),
        confidence_histogram(conf, correct, tau, Path(f"{stem}_confidence.png")),
        tau_sweep(conf, y_true, Path(f"{stem}_tau.png")),
        confusion_figure(np.asarray(confusion), Path(f"{stem}_confusion.png")),
    ]
