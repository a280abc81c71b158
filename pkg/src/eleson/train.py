"""Joint training, evaluation, baselines and calibration."""

from __future__ import annotations

import logging
import math
import time

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .causal import causal_losses
from .config import TrainConfig
from .core import ConfigError, DataError, Dataset, N_STATES
from .evidential import loss_els
from .magnetic import adversarial_losses
from .metrics import MetricsReport, compute_report, mean_f1
from .model import KIND_E2E, KIND_ELESON, ElesonNet, ModelBundle, SoftmaxNet
from .nn import named_rng
from .optim import AdamState, adam_step, clip_grad_norm

log = logging.getLogger(__name__)


# -- splitting and batching ----------------------------------------------------

def split_by_session(ds: Dataset, valid_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint-by-session split; sessions are shuffled with ``seed``."""
    sessions = ds.sessions()
    if len(sessions) < 2:
        raise DataError("need at least two sessions to split")
    rng = named_rng(seed, "split")
    order = rng.permutation(len(sessions))
    n_valid = max(1, int(round(valid_fraction * len(sessions))))
    valid = {sessions[i] for i in order[:n_valid]}
    tr = [i for i, r in enumerate(ds.records) if r.session_id not in valid]
    va = [i for i, r in enumerate(ds.records) if r.session_id in valid]
    return ds.subset(tr), ds.subset(va)


def session_folds(ds: Dataset, k: int, seed: int) -> list[tuple[list[int], list[int]]]:
    sessions = ds.sessions()
    if len(sessions) < k:
        raise DataError(f"{len(sessions)} sessions cannot form {k} folds")
    rng = named_rng(seed, "folds")
    order = rng.permutation(len(sessions))
    fold_of = {sessions[j]: n % k for n, j in enumerate(order)}
    folds = []
    for f in range(k):
        test = [i for i, r in enumerate(ds.records) if fold_of[r.session_id] == f]
        train = [i for i, r in enumerate(ds.records) if fold_of[r.session_id] != f]
        folds.append((train, test))
    return folds


def stratified_batches(labels: np.ndarray, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Batches whose label mix follows the dataset's, with every class present in each batch.

    Each class is shuffled and dealt across ``ceil(N / batch_size)`` batches,
    so a class with at least ``2 * n_batches`` items gives every batch two or
    more of them.
    """
    labels = np.asarray(labels)
    n_batches = max(1, math.ceil(len(labels) / batch_size))
    per_class = []
    for c in range(N_STATES):
        idx = np.flatnonzero(labels == c)
        if idx.size:
            per_class.append(np.array_split(rng.permutation(idx), n_batches))
    batches = [np.concatenate([chunks[b] for chunks in per_class]) for b in range(n_batches)]
    order = rng.permutation(n_batches)
    return [rng.permutation(batches[b]) for b in order]


def _check_classes(y: np.ndarray, what: str):
    counts = np.bincount(y, minlength=N_STATES)
    empty = [c for c in range(N_STATES) if counts[c] == 0]
    if empty:
        raise DataError(f"{what} has no windows for class code(s) {empty}")


# -- joint training ------------------------------------------------------------

def joint_losses(net: ElesonNet, cfg: TrainConfig, motion: np.ndarray, mag: np.ndarray, y: np.ndarray,
                 vp: np.ndarray, step_rng: np.random.Generator | None) -> dict[str, Tensor]:
    """Forward every branch and assemble the overall objective plus its terms."""
    out = net(Tensor(motion) if net.causal is not None else None,
              Tensor(mag) if net.magnetic is not None else Tensor(np.zeros((len(y), 1, 1), np.float32)))
    terms: dict[str, Tensor] = {"els": loss_els(out["E"], y, cfg.variance_term)}
    total = terms["els"]
    if net.causal is not None and cfg.causal_loss and cfg.w4 > 0:
        cl = causal_losses(net.causal, out["z_c"], out["z_p"], motion, y, cfg.w1, cfg.w2, cfg.noise_std, step_rng)
        terms.update({k: v for k, v in cl.items()})
        total = total + cl["cal"] * cfg.w4
    adversary_loss, active = None, False
    if net.magnetic is not None:
        filter_loss, adversary_loss, active = adversarial_losses(net.magnetic.adversary, out["z_b"], y, vp)
        if filter_loss is not None and cfg.w3 > 0:
            terms["mag"] = filter_loss
            total = total + filter_loss * cfg.w3
    terms["total"] = total
    if adversary_loss is not None:
        terms["adversary"] = adversary_loss
    terms["_adversary_active"] = active
    return terms


def train(cfg: TrainConfig, train_ds: Dataset, valid_ds: Dataset | None = None,
          progress=None) -> ModelBundle:
    """Train the full model; keeps the parameters with the best validation mean F1."""
    X, y, vp = train_ds.arrays()
    _check_classes(y, "training split")
    if X.shape[1] != cfg.T:
        raise ConfigError(f"data T={X.shape[1]} but config implies T={cfg.T}")
    if valid_ds is not None:
        _check_valid(valid_ds, train_ds)
    stats = ModelBundle.fit_stats(KIND_ELESON, cfg, X)
    net = ElesonNet(cfg)
    bundle = ModelBundle(KIND_ELESON, cfg, net, stats)
    motion, mag = bundle.inputs(X)
    joint = AdamState(lr=cfg.lr)
    adv = AdamState(lr=cfg.lr)
    joint_params = net.joint_parameters()
    adv_params = net.adversary_parameters()
    batch_rng = named_rng(cfg.seed, "batches")

    best = (-1.0, None, -1)
    since_best = 0
    step = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        sums: dict[str, float] = {}
        n_items = 0
        for idx in stratified_batches(y, cfg.batch_size, batch_rng):
            step += 1
            terms = joint_losses(net, cfg, motion[idx], mag[idx], y[idx], vp[idx],
                                 named_rng(cfg.seed * 1_000_003 + step, "sigma"))
            for p in joint_params + adv_params:
                p.grad = None
            ag.backward(terms["total"])
            if cfg.clip_norm > 0:
                clip_grad_norm(joint_params, cfg.clip_norm)
            adam_step(joint, joint_params, allow_missing=True)
            if terms["_adversary_active"]:
                for p in adv_params:
                    p.grad = None
                ag.backward(terms["adversary"])
                adam_step(adv, adv_params, allow_missing=True)
            for k, v in terms.items():
                if isinstance(v, Tensor):
                    sums[k] = sums.get(k, 0.0) + float(v.data)
            n_items += len(idx)
        record = {"epoch": epoch + 1, **{k: v / n_items for k, v in sums.items()},
                  "seconds": time.perf_counter() - t0}
        if valid_ds is not None and len(valid_ds):
            record["valid_mean_f1"] = evaluate(bundle, valid_ds, 0.0).mean_f1
        bundle.history.append(record)
        log.info("epoch %d: %s", epoch + 1, {k: round(v, 4) for k, v in record.items() if isinstance(v, float)})
        if progress is not None:
            progress(record)
        if valid_ds is None:
            continue
        score = record["valid_mean_f1"]
        if score > best[0]:
            best = (score, bundle.snapshot(), epoch + 1)
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    if best[1] is not None:
        bundle.restore(best[1])
        bundle.history.append({"best_epoch": best[2], "best_valid_mean_f1": best[0]})
    return bundle


def _check_valid(valid_ds: Dataset, train_ds: Dataset):
    overlap = set(valid_ds.sessions()) & set(train_ds.sessions())
    if overlap:
        raise DataError(f"train and validation share sessions, e.g. {sorted(overlap)[:3]}")


# -- end-to-end softmax baseline ----------------------------------------------

def baseline_e2e_softmax(cfg: TrainConfig, train_ds: Dataset, valid_ds: Dataset | None = None,
                         progress=None) -> ModelBundle:
    """ConvLSTM trained end to end on standardized 9-channel windows with CE only."""
    X, y, _ = train_ds.arrays()
    _check_classes(y, "training split")
    if valid_ds is not None:
        _check_valid(valid_ds, train_ds)
    stats = ModelBundle.fit_stats(KIND_E2E, cfg, X)
    net = SoftmaxNet(cfg)
    bundle = ModelBundle(KIND_E2E, cfg, net, stats)
    (inp,) = bundle.inputs(X)
    state = AdamState(lr=cfg.lr)
    params = net.parameters()
    batch_rng = named_rng(cfg.seed, "batches")
    best = (-1.0, None, -1)
    since_best = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        total, n = 0.0, 0
        for idx in stratified_batches(y, cfg.batch_size, batch_rng):
            loss = ag.softmax_cross_entropy(net(Tensor(inp[idx])), y[idx])
            for p in params:
                p.grad = None
            ag.backward(loss)
            if cfg.clip_norm > 0:
                clip_grad_norm(params, cfg.clip_norm)
            adam_step(state, params)
            total += float(loss.data)
            n += len(idx)
        record = {"epoch": epoch + 1, "total": total / n, "seconds": time.perf_counter() - t0}
        if valid_ds is not None and len(valid_ds):
            record["valid_mean_f1"] = evaluate(bundle, valid_ds, 0.0).mean_f1
        bundle.history.append(record)
        if progress is not None:
            progress(record)
        if valid_ds is None:
            continue
        if record["valid_mean_f1"] > best[0]:
            best = (record["valid_mean_f1"], bundle.snapshot(), epoch + 1)
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    if best[1] is not None:
        bundle.restore(best[1])
        bundle.history.append({"best_epoch": best[2], "best_valid_mean_f1": best[0]})
    return bundle


# -- evaluation ----------------------------------------------------------------

def evaluate(bundle: ModelBundle, ds: Dataset, tau: float | None = None) -> MetricsReport:
    tau = bundle.config.tau if tau is None else tau
    X, y, _ = ds.arrays()
    if len(ds) and X.shape[1] != bundle.config.T:
        raise DataError(f"dataset T={X.shape[1]} does not match model T={bundle.config.T}")
    t0 = time.perf_counter()
    pred = bundle.predict(X)
    elapsed = (time.perf_counter() - t0) * 1000.0
    report = compute_report(y, pred.conf, pred.wrong_score, tau)
    report.latency_ms = {"batch_per_window": elapsed / max(len(ds), 1)}
    return report


def nll(logits: np.ndarray, y: np.ndarray, temperature: float) -> float:
    z = logits / temperature
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(y)), y].mean())


def golden_section(f, lo: float, hi: float, tol: float = 1e-5, max_iter: int = 200) -> float:
    invphi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) < tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (a + b) / 2


def fit_temperature(logits: np.ndarray, y: np.ndarray, lo: float = 0.05, hi: float = 20.0) -> float:
    """Temperature minimising validation NLL, never worse than T = 1."""
    logits = np.asarray(logits, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    t = golden_section(lambda T: nll(logits, y, T), lo, hi)
    return t if nll(logits, y, t) <= nll(logits, y, 1.0) else 1.0


def temperature_scale(bundle: ModelBundle, valid_ds: Dataset) -> float:
    if bundle.kind != KIND_E2E:
        raise ConfigError("temperature scaling applies to the softmax baseline")
    X, y, _ = valid_ds.arrays()
    return fit_temperature(bundle.raw_outputs(X), y)


def cross_validate(cfg: TrainConfig, ds: Dataset, k: int = 5, kind: str = KIND_ELESON) -> list[MetricsReport]:
    """Session-level k-fold evaluation; each fold holds out a validation split from its training part."""
    reports = []
    for f, (tr, te) in enumerate(session_folds(ds, k, cfg.seed)):
        train_part, valid_part = split_by_session(ds.subset(tr), cfg.valid_fraction, cfg.seed + f)
        fit = train if kind == KIND_ELESON else baseline_e2e_softmax
        bundle = fit(cfg, train_part, valid_part)
        reports.append(evaluate(bundle, ds.subset(te), cfg.tau))
    return reports


__all__ = [
    "baseline_e2e_softmax", "cross_validate", "evaluate", "fit_temperature", "joint_losses", "mean_f1",
    "split_by_session", "stratified_batches", "temperature_scale", "train",
]
