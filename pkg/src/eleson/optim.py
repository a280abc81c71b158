from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Parameter


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: list[Parameter], allow_missing: bool = False) -> None:
    """Bias-corrected Adam update using each parameter's ``.grad``.

    Parameter arrays are replaced, never mutated, so views taken during the
    forward pass stay valid.
    """
    trainable = [p for p in params if p.trainable]
    missing = [p.name for p in trainable if p.grad is None]
    if missing and not allow_missing:
        raise ValueError(f"adam_step: no gradient for {missing[:3]}{'...' if len(missing) > 3 else ''}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p in trainable:
        g = p.grad
        if g is None:
            continue
        m = state.first_moment.get(p.name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        else:
            v = state.second_moment[p.name]
        m = state.beta1 * m + (1 - state.beta1) * g
        v = state.beta2 * v + (1 - state.beta2) * (g * g)
        state.first_moment[p.name] = m
        state.second_moment[p.name] = v
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        p.data = (p.data - update).astype(p.data.dtype, copy=False)


def clip_grad_norm(params: list[Parameter], max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    total = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total
