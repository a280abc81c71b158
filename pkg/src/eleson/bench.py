"""Model size and single-window latency."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .model import ModelBundle


@dataclass
class BenchReport:
    size_bytes: int
    n_params: int
    p50_ms: float
    p95_ms: float
    n_runs: int

    @property
    def size_mb(self) -> float:
        return self.size_bytes / 1e6

    def rows(self) -> list[tuple[str, str]]:
        return [("size_bytes", str(self.size_bytes)), ("size_mb", f"{self.size_mb:.3f}"),
                ("n_params", str(self.n_params)), ("latency_p50_ms", f"{self.p50_ms:.3f}"),
                ("latency_p95_ms", f"{self.p95_ms:.3f}"), ("n_runs", str(self.n_runs))]


def bench(bundle: ModelBundle, n_runs: int = 50, warmup: int = 3, seed: int = 0) -> BenchReport:
    """Time ``predict`` on one random window at a time."""
    cfg = bundle.config
    rng = np.random.default_rng(seed)
    base = np.zeros(9)
    base[6:9] = (20.0, 0.0, -40.0)
    windows = base + rng.normal(0.0, 1.0, size=(n_runs + warmup, cfg.T, 9))
    times = []
    for i, w in enumerate(windows):
        t0 = time.perf_counter()
        bundle.predict(w[None])
        if i >= warmup:
            times.append((time.perf_counter() - t0) * 1000.0)
    times = np.asarray(times)
    return BenchReport(len(bundle.to_bytes()), bundle.n_params(), float(np.percentile(times, 50)),
                       float(np.percentile(times, 95)), n_runs)
