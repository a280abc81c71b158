"""Classification and confidence metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .core import ConveyorState, N_STATES

CONVEYOR_CLASSES = (ConveyorState.ELEVATOR, ConveyorState.ESCALATOR)


def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def confusion(y_true: np.ndarray, y_pred: np.ndarray) -> np.ndarray:
    """3x3 counts over decided windows (``y_pred`` of -1 marks UD and is skipped)."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    keep = y_pred >= 0
    m = np.zeros((N_STATES, N_STATES), dtype=np.int64)
    np.add.at(m, (y_true[keep], y_pred[keep]), 1)
    return m


def per_class_f1(y_true, y_pred) -> dict[int, tuple[float, float, float]]:
    m = confusion(y_true, y_pred)
    out = {}
    for c in CONVEYOR_CLASSES:
        c = int(c)
        tp = int(m[c, c])
        fp = int(m[:, c].sum() - tp)
        fn = int(m[c, :].sum() - tp)
        out[c] = prf(tp, fp, fn)
    return out


def mean_f1(y_true, y_pred) -> float:
    return float(np.mean([v[2] for v in per_class_f1(y_true, y_pred).values()]))


def auroc(scores, positives) -> float:
    """Area under the ROC curve; ties count half (trapezoidal rule).

    ``positives`` marks the class that higher scores should rank first.
    Returns NaN when either class is empty.
    """
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = positives.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(scores, method="average")
    return float((ranks[positives].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def roc_curve(scores, positives) -> tuple[np.ndarray, np.ndarray]:
    """(false positive rate, true positive rate) at every distinct threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    p = positives[order]
    distinct = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tps = np.cumsum(p)[distinct]
    fps = np.cumsum(~p)[distinct]
    n_pos = max(int(p.sum()), 1)
    n_neg = max(int((~p).sum()), 1)
    return np.r_[0.0, fps / n_neg], np.r_[0.0, tps / n_pos]


def entropy(probs: np.ndarray) -> np.ndarray:
    p = np.clip(np.asarray(probs, dtype=np.float64), 1e-12, 1.0)
    return -(p * np.log(p)).sum(axis=-1)


@dataclass
class MetricsReport:
    per_class: dict[int, tuple[float, float, float]]
    mean_f1: float
    auroc: float
    ud_ratio: float
    tau: float
    confusion: np.ndarray
    n_windows: int
    latency_ms: dict[str, float] = field(default_factory=dict)

    def rows(self) -> list[tuple[str, str]]:
        rows = [("tau", f"{self.tau:g}"), ("n_windows", str(self.n_windows))]
        for c, (p, r, f) in self.per_class.items():
            name = ConveyorState(c).name.lower()
            rows += [(f"precision_{name}", f"{p:.6f}"), (f"recall_{name}", f"{r:.6f}"), (f"f1_{name}", f"{f:.6f}")]
        rows += [("mean_f1", f"{self.mean_f1:.6f}"), ("auroc", f"{self.auroc:.6f}"), ("ud_ratio", f"{self.ud_ratio:.6f}")]
        for i in range(N_STATES):
            for j in range(N_STATES):
                rows.append((f"confusion_{i}_{j}", str(int(self.confusion[i, j]))))
        for k, v in self.latency_ms.items():
            rows.append((f"latency_{k}_ms", f"{v:.3f}"))
        return rows


def compute_report(y_true, conf: np.ndarray, wrong_score: np.ndarray, tau: float,
                   latency_ms: dict[str, float] | None = None) -> MetricsReport:
    """Metrics for one set of predictions.

    ``conf`` holds per-state confidences (N, 3); ``wrong_score`` ranks windows by
    how likely their arg-max decision is wrong (higher = more doubtful).
    """
    y_true = np.asarray(y_true)
    argmax = np.argmax(conf, axis=1)
    top = conf[np.arange(len(conf)), argmax]
    y_pred = np.where(top > tau, argmax, -1)
    wrong = argmax != y_true
    return MetricsReport(
        per_class=per_class_f1(y_true, y_pred),
        mean_f1=mean_f1(y_true, y_pred),
        auroc=auroc(wrong_score, wrong),
        ud_ratio=float(np.mean(y_pred < 0)) if len(y_pred) else 0.0,
        tau=tau,
        confusion=confusion(y_true, y_pred),
        n_windows=int(len(y_true)),
        latency_ms=latency_ms or {},
    )
