"""Causal decomposition of motion windows into a conveyor feature and a behavior feature."""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .core import ConfigError, ConveyorState, N_STATES
from .nn import MLP, Encoder, Module

NEITHER = int(ConveyorState.NEITHER)


class CausalExtractor(Module):
    """Extractor f_m, signal generator g and auxiliary state classifier k.

    The extractor emits ``2 * feature_dim`` values; the first half is the
    conveyor feature z_c and the second half the behavior feature z_p.
    """

    def __init__(self, T: int, n_steps: int, conv_hidden, fc_hidden: int, feature_dim: int,
                 gen_hidden, aux_hidden: int, seed: int = 0, dtype=np.float32):
        self.feature_dim = feature_dim
        self.T = T
        self.extractor = Encoder(6, T, n_steps, tuple(conv_hidden), fc_hidden, 2 * feature_dim,
                                 "causal.extractor", seed, dtype)
        self.generator = MLP([feature_dim, *gen_hidden, T * 6], "causal.generator", seed, dtype)
        self.aux = MLP([feature_dim, aux_hidden, N_STATES], "causal.aux", seed, dtype)

    def extract(self, motion: Tensor) -> tuple[Tensor, Tensor]:
        if motion.ndim == 2:
            motion = ag.reshape(motion, (1, *motion.shape))
        if motion.shape[-1] != 6:
            raise ag.ShapeError("extract (motion needs 6 channels)", motion.shape)
        z = self.extractor(motion)
        F = self.feature_dim
        return z[:, :F], z[:, F:]

    def generate(self, z: Tensor) -> Tensor:
        out = self.generator(z)
        return ag.reshape(out, (out.shape[0], self.T, 6))


def loss_rec(generator, z_c: Tensor, z_p: Tensor, motion, noise_std: float = 0.0, rng=None) -> Tensor:
    """Sum over items of MSE(g(z_c + z_p + noise), motion)."""
    z = ag.gaussian_noise_add(z_c + z_p, noise_std, rng)
    recon = generator(z)
    motion = ag.as_tensor(motion, recon)
    if recon.shape != motion.shape:
        raise ag.ShapeError("loss_rec", recon.shape, motion.shape)
    per_item = ag.tmean(ag.square(recon - motion), axis=tuple(range(1, recon.ndim)))
    return ag.tsum(per_item)


def loss_sim(classifier, z_c: Tensor, z_p: Tensor, labels) -> Tensor:
    """CE(k(z_c + z_p), label) + CE(k(z_p), Neither), summed over the batch."""
    labels = np.asarray(labels, dtype=np.int64)
    full = ag.softmax_cross_entropy(classifier(z_c + z_p), labels)
    removed = ag.softmax_cross_entropy(classifier(z_p), np.full_like(labels, NEITHER))
    return full + removed


def loss_con(z_c: Tensor, labels) -> Tensor:
    """Per-label population variance of z_c across the batch, summed over dims and labels."""
    labels = np.asarray(labels, dtype=np.int64)
    total = None
    for s in np.unique(labels):
        idx = np.flatnonzero(labels == s)
        term = ag.tsum(ag.population_variance(z_c[idx], axis=0))
        total = term if total is None else total + term
    if total is None:
        return ag.Tensor(np.zeros((), dtype=z_c.dtype))
    return total


def loss_cal(sim: Tensor, rec: Tensor, con: Tensor, w1: float = 0.6, w2: float = 0.3) -> Tensor:
    if w1 < 0 or w2 < 0:
        raise ConfigError("loss weights must be non-negative")
    return sim + rec * w1 + con * w2


def causal_losses(model: CausalExtractor, z_c: Tensor, z_p: Tensor, motion, labels, w1=0.6, w2=0.3,
                  noise_std=0.1, rng=None) -> dict[str, Tensor]:
    sim = loss_sim(model.aux, z_c, z_p, labels)
    rec = loss_rec(model.generate, z_c, z_p, motion, noise_std, rng)
    con = loss_con(z_c, labels)
    return {"sim": sim, "rec": rec, "con": con, "cal": loss_cal(sim, rec, con, w1, w2)}
