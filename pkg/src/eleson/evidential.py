"""Evidence collection, confidence simplex, thresholded decisions and the evidential losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .core import ConveyorState, N_STATES
from .nn import MLP, Module

E_U = float(N_STATES)
CLS_FLOOR = 1e-8


class EvidenceCollector(Module):
    """Three dense layers with a ReLU output so every evidence value is >= 0."""

    def __init__(self, n_in: int, hidden=(256, 128), seed: int = 0, dtype=np.float32, out_bias: float = 1.0):
        self.n_in = n_in
        self.mlp = MLP([n_in, *hidden, N_STATES], "evidence", seed, dtype, out_activation="relu",
                       out_bias=out_bias)

    def forward(self, z: Tensor) -> Tensor:
        if z.shape[-1] != self.n_in:
            raise ag.ShapeError("collect_evidence", z.shape, (self.n_in,))
        return self.mlp(z)


def collect_evidence(collector: EvidenceCollector, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float32)
    single = z.ndim == 1
    with ag.no_grad():
        E = collector(ag.Tensor(z.reshape(1, -1) if single else z)).data
    return E[0] if single else E


@dataclass(frozen=True)
class ConfidenceVector:
    c: np.ndarray
    u: float

    @property
    def max(self) -> float:
        return float(np.max(self.c))


def confidence(E) -> ConfidenceVector:
    E = np.asarray(E, dtype=np.float64)
    if E.shape != (N_STATES,) or np.any(E < 0):
        raise ValueError("evidence must be a non-negative 3-vector")
    denom = E_U + E.sum()
    return ConfidenceVector(E / denom, E_U / denom)


def confidence_batch(E: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised confidence: (C [N,3], u [N])."""
    E = np.asarray(E, dtype=np.float64)
    denom = E_U + E.sum(axis=-1, keepdims=True)
    return E / denom, (E_U / denom)[..., 0]


UD = "UD"


@dataclass(frozen=True)
class Decision:
    state: ConveyorState | None
    confidence: float
    conf: ConfidenceVector
    gap: bool = False

    @property
    def undecided(self) -> bool:
        return self.state is None

    @property
    def code(self) -> str:
        return UD if self.state is None else str(int(self.state))


def decide(C: ConfidenceVector | np.ndarray, tau: float = 0.5) -> Decision:
    """Arg-max state (lowest code on ties) when its confidence is strictly above ``tau``."""
    if not 0 <= tau < 1:
        raise ValueError("tau must lie in [0, 1)")
    if not isinstance(C, ConfidenceVector):
        c = np.asarray(C, dtype=np.float64)
        C = ConfidenceVector(c, float(max(0.0, 1.0 - c.sum())))
    best = int(np.argmax(C.c))  # argmax returns the first maximum
    top = float(C.c[best])
    if top > tau:
        return Decision(ConveyorState(best), top, C)
    return Decision(None, top, C)


def decide_batch(C: np.ndarray, tau: float) -> np.ndarray:
    """Predicted codes with -1 marking UD."""
    pred = np.argmax(C, axis=-1)
    top = C[np.arange(len(C)), pred]
    return np.where(top > tau, pred, -1)


def dirichlet_variance(E) -> float | np.ndarray:
    """Sum over states of the Dirichlet(a = E + 1) coordinate variances."""
    a = np.asarray(E, dtype=np.float64) + 1.0
    A = a.sum(axis=-1, keepdims=True)
    return (a * (A - a) / (A * A * (A + 1))).sum(axis=-1)


def dirichlet_variance_t(E: Tensor) -> Tensor:
    """Per-item Dirichlet variance as a differentiable (B,) tensor."""
    a = E + 1.0
    A = ag.tsum(a, axis=-1, keepdims=True)
    return ag.tsum(a * (A - a) / (A * A * (A + 1.0)), axis=-1)


def loss_cls(E: Tensor, labels) -> Tensor:
    """Cross-entropy of the evidence-normalised distribution E / sum(E), summed over the batch.

    Every entry gets ``CLS_FLOOR`` added before normalising, so all-zero
    evidence reads as the uniform distribution (loss ln 3) instead of 0/0.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if E.ndim == 1:
        E = ag.reshape(E, (1, -1))
    smoothed = E + CLS_FLOOR
    p = smoothed / ag.tsum(smoothed, axis=-1, keepdims=True)
    picked = p[np.arange(len(labels)), labels]
    return ag.neg(ag.tsum(ag.log(picked)))


def loss_els(E: Tensor, labels, variance_term: bool = True) -> Tensor:
    cls = loss_cls(E, labels)
    if not variance_term:
        return cls
    if E.ndim == 1:
        E = ag.reshape(E, (1, -1))
    return cls + ag.tsum(dirichlet_variance_t(E))
