"""Location-robust magnetic feature: intensity differentials plus an adversarially trained filter."""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .core import ConveyorState, InsWindow, gyro_peak_magnitude
from .nn import MLP, Encoder, Module

VP_THRESHOLD = 1.5  # rad/s
CHANCE_CE = float(np.log(2.0))


def differential_feature(magnetic: np.ndarray) -> np.ndarray:
    """First difference of field intensity along time, left-padded with a zero.

    Accepts (T, 3) or batched (..., T, 3); returns (T,) or (..., T).
    """
    magnetic = np.asarray(magnetic, dtype=np.float64)
    if magnetic.shape[-1] != 3 or magnetic.ndim < 2:
        raise ValueError(f"magnetic slice must be (..., T, 3), got {magnetic.shape}")
    if magnetic.shape[-2] < 2:
        raise ValueError("differential feature needs T >= 2")
    intensity = np.linalg.norm(magnetic, axis=-1)
    out = np.zeros_like(intensity)
    out[..., 1:] = np.diff(intensity, axis=-1)
    return out


def intensity_feature(magnetic: np.ndarray) -> np.ndarray:
    """Raw field intensity; the location-dependent alternative to the differential."""
    magnetic = np.asarray(magnetic, dtype=np.float64)
    if magnetic.shape[-1] != 3:
        raise ValueError(f"magnetic slice must be (..., T, 3), got {magnetic.shape}")
    return np.linalg.norm(magnetic, axis=-1)


def auto_label_vp(w: InsWindow | np.ndarray) -> int:
    return int(gyro_peak_magnitude(w) > VP_THRESHOLD)


class MagneticFilter(Module):
    """Behavior filter f_b over the 1-channel differential plus the behavior adversary k_h."""

    def __init__(self, T: int, n_steps: int, conv_hidden, fc_hidden: int, feature_dim: int,
                 adv_hidden: int, seed: int = 0, dtype=np.float32):
        self.feature_dim = feature_dim
        self.filter = Encoder(1, T, n_steps, tuple(conv_hidden), fc_hidden, feature_dim,
                              "magnetic.filter", seed, dtype)
        self.adversary = MLP([feature_dim, adv_hidden, 2], "magnetic.adversary", seed, dtype)

    def behavior_filter(self, diff: Tensor) -> Tensor:
        if diff.ndim == 1:
            diff = ag.reshape(diff, (1, diff.shape[0], 1))
        elif diff.ndim == 2:
            diff = ag.reshape(diff, (*diff.shape, 1))
        return self.filter(diff)

    def filter_parameters(self):
        return self.filter.parameters()

    def adversary_parameters(self):
        return self.adversary.parameters()


def conveyor_mask(labels, vp) -> np.ndarray:
    labels = np.asarray(labels)
    vp = np.asarray(vp)
    return (labels != int(ConveyorState.NEITHER)) & (vp >= 0)


def adversarial_losses(adversary, z_b: Tensor, labels, vp):
    """(filter_loss, adversary_loss, adversary_active) over conveyor windows only.

    ``adversary_loss`` sees z_b as a constant; ``filter_loss`` is its negation
    evaluated through the live graph so gradients reach the filter, with each
    item's CE capped at ln 2 (chance for a binary adversary).  The
    adversary is inactive when the conveyor windows carry a single vp class.
    Returns ``(None, None, False)`` if the batch has no conveyor windows.
    """
    mask = conveyor_mask(labels, vp)
    if not mask.any():
        return None, None, False
    idx = np.flatnonzero(mask)
    targets = np.asarray(vp)[idx].astype(np.int64)
    z_sel = z_b[idx]
    adversary_loss = ag.softmax_cross_entropy(adversary(z_sel.detach()), targets)
    per_item = ag.softmax_cross_entropy(adversary(z_sel), targets, reduction="none")
    # Items the adversary already gets no better than chance stop rewarding the
    # filter; an unbounded -CE lets z_b blow up to make the adversary confidently wrong.
    below = (per_item.data < CHANCE_CE).astype(per_item.dtype)
    capped = per_item * below + CHANCE_CE * (1.0 - below)
    filter_loss = ag.neg(ag.tsum(capped))
    active = len(np.unique(targets)) > 1
    return filter_loss, adversary_loss, active
