"""Sliding-window streaming inference."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .core import GAP_TOLERANCE_PERIODS, ConveyorState, DataError, InsSample, window_bounds
from .evidential import ConfidenceVector, Decision, decide
from .model import ModelBundle


@dataclass(frozen=True)
class StreamDecision:
    index: int
    decision: Decision
    start_time: float
    latency_ms: float

    @property
    def gap(self) -> bool:
        return self.decision.gap

    def line(self) -> str:
        """``window_index, state_code|UD, c_elevator, c_escalator, c_neither, u`` (+ ``, gap``)."""
        c = self.decision.conf.c
        fields = [str(self.index), self.decision.code, *(f"{v:.6f}" for v in c), f"{self.decision.conf.u:.6f}"]
        if self.gap:
            fields.append("gap")
        return ", ".join(fields)


def _gap_decision() -> Decision:
    return Decision(None, 0.0, ConfidenceVector(np.zeros(3), 1.0), gap=True)


def decision_from_conf(conf: np.ndarray, u: float, tau: float) -> Decision:
    return decide(ConfidenceVector(np.asarray(conf, dtype=np.float64), float(u)), tau)


class WindowBuffer:
    """Cuts an incoming sample stream into windows of ``T`` samples every ``S`` samples.

    Windows are cut by sample count, so a uniformly sampled session yields the
    same windows as batch windowing (window k covers samples kS .. kS+T-1).
    A window is flagged when any spacing inside it exceeds the gap tolerance.
    """

    def __init__(self, T: int, S: int, sample_rate: float):
        if T < 2 or S < 1:
            raise ValueError("window needs T >= 2 and stride S >= 1")
        self.T, self.S = T, S
        self.max_gap = GAP_TOLERANCE_PERIODS / sample_rate
        self._rows: list[np.ndarray] = []
        self._times: list[float] = []
        self._gap_after: list[bool] = []   # spacing from this sample to the next is too large
        self._skip = 0                     # samples still to drop when S > T
        self._last_t: float | None = None

    def push(self, s: InsSample) -> tuple[np.ndarray, float, bool] | None:
        if self._times:
            step = s.t - self._times[-1]
            if step <= 0:
                raise DataError(f"timestamp {s.t} does not advance past {self._times[-1]}")
            self._gap_after[-1] = step > self.max_gap
        elif self._last_t is not None and s.t <= self._last_t:
            raise DataError(f"timestamp {s.t} does not advance past {self._last_t}")
        self._last_t = s.t
        if self._skip:
            self._skip -= 1
            return None
        self._rows.append(s.row())
        self._times.append(s.t)
        self._gap_after.append(False)
        if len(self._rows) < self.T:
            return None
        out = (np.array(self._rows), self._times[0], any(self._gap_after[:-1]))
        drop = min(self.S, self.T)
        del self._rows[:drop], self._times[:drop], self._gap_after[:drop]
        self._skip = self.S - drop
        return out


def infer_stream(bundle: ModelBundle, samples: Iterable[InsSample], tau: float | None = None) -> Iterator[StreamDecision]:
    """One decision per completed window, in arrival order."""
    tau = bundle.config.tau if tau is None else tau
    cfg = bundle.config
    buf = WindowBuffer(cfg.T, int(round(cfg.stride_seconds * cfg.sample_rate)), cfg.sample_rate)
    index = 0
    for s in samples:
        ready = buf.push(s)
        if ready is None:
            continue
        window, start, gap = ready
        t0 = time.perf_counter()
        if gap:
            d = _gap_decision()
        else:
            pred = bundle.predict(window[None])
            d = decision_from_conf(pred.conf[0], pred.u[0], tau)
        yield StreamDecision(index, d, start, (time.perf_counter() - t0) * 1000.0)
        index += 1


def batch_decisions(bundle: ModelBundle, times: np.ndarray, values: np.ndarray, tau: float | None = None) -> list[Decision]:
    """Reference path: window the whole recording at once and predict in one batch."""
    cfg = bundle.config
    tau = cfg.tau if tau is None else tau
    bounds = window_bounds(times, len(times), cfg.window_seconds, cfg.stride_seconds, cfg.sample_rate)
    if not bounds:
        return []
    X = np.stack([values[a:b] for a, b in bounds])
    pred = bundle.predict(X)
    return [decision_from_conf(pred.conf[i], pred.u[i], tau) for i in range(len(bounds))]


def state_name(code: str) -> str:
    return code if code == "UD" else ConveyorState(int(code)).name.lower()
