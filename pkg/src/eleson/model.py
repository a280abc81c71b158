"""Network assemblies, preprocessing and the serializable model bundle."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from . import serialize
from .autograd import Tensor
from .causal import CausalExtractor
from .config import Architecture, TrainConfig
from .core import ChannelStats, ConfigError, N_STATES
from .evidential import EvidenceCollector, confidence_batch
from .magnetic import MagneticFilter, differential_feature, intensity_feature
from .metrics import entropy
from .nn import Encoder, Module

KIND_ELESON = "eleson"
KIND_E2E = "e2e"


class ElesonNet(Module):
    """Causal extractor, magnetic filter and evidence collector wired as z = [z_c, z_b] -> E."""

    def __init__(self, cfg: TrainConfig, dtype=np.float32):
        a = cfg.arch
        T = cfg.T
        self.cfg = cfg
        self.feature_dim = a.feature_dim
        self.dtype = dtype
        self.causal = CausalExtractor(T, a.n_steps, a.motion_conv, a.motion_fc, a.feature_dim, a.gen_hidden,
                                      a.aux_hidden, cfg.seed, dtype) if cfg.causal_branch else None
        self.magnetic = MagneticFilter(T, a.n_steps, a.mag_conv, a.mag_fc, a.feature_dim, a.adv_hidden,
                                       cfg.seed, dtype) if cfg.magnetic_branch else None
        self.evidence = EvidenceCollector(2 * a.feature_dim, a.evidence_hidden, cfg.seed, dtype)

    def forward(self, motion: Tensor, magnetic: Tensor) -> dict[str, Tensor]:
        B = motion.shape[0] if motion is not None else magnetic.shape[0]
        zeros = Tensor(np.zeros((B, self.feature_dim), self.dtype))
        out = {}
        if self.causal is not None:
            out["z_c"], out["z_p"] = self.causal.extract(motion)
        else:
            out["z_c"] = zeros
        if self.magnetic is not None:
            out["z_b"] = self.magnetic.behavior_filter(magnetic)
        else:
            out["z_b"] = zeros
        out["z"] = ag.concat([out["z_c"], out["z_b"]], axis=-1)
        out["E"] = self.evidence(out["z"])
        return out

    def joint_parameters(self):
        params = self.evidence.parameters()
        if self.causal is not None:
            params = self.causal.parameters() + params
        if self.magnetic is not None:
            params = self.magnetic.filter_parameters() + params
        return params

    def adversary_parameters(self):
        return self.magnetic.adversary_parameters() if self.magnetic is not None else []


class SoftmaxNet(Module):
    """End-to-end ConvLSTM classifier on the standardized 9-channel window."""

    def __init__(self, cfg: TrainConfig, dtype=np.float32):
        a = cfg.arch
        self.encoder = Encoder(9, cfg.T, a.n_steps, a.motion_conv, a.motion_fc, N_STATES, "e2e", cfg.seed, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.encoder(x)


def magnetic_input(X: np.ndarray, mode: str) -> np.ndarray:
    mag = X[..., 6:9]
    feat = differential_feature(mag) if mode == "diff" else intensity_feature(mag)
    return feat[..., None].astype(np.float32)


@dataclass
class ModelBundle:
    kind: str
    config: TrainConfig
    net: Module
    stats: dict[str, ChannelStats]
    temperature: float = 1.0
    history: list[dict] = field(default_factory=list)

    # -- preprocessing -------------------------------------------------------
    @classmethod
    def fit_stats(cls, kind: str, cfg: TrainConfig, X: np.ndarray) -> dict[str, ChannelStats]:
        if kind == KIND_E2E:
            stats = {"raw": ChannelStats.fit(X)}
        else:
            stats = {"motion": ChannelStats.fit(X[..., :6]), "mag": ChannelStats.fit(magnetic_input(X, cfg.mag_input))}
        # round to what the float32 container stores so a reloaded model is bit-identical
        return {k: ChannelStats(st.mean.astype(np.float32).astype(np.float64), st.std.astype(np.float32).astype(np.float64))
                for k, st in stats.items()}

    def inputs(self, X: np.ndarray) -> tuple[np.ndarray, ...]:
        """Model inputs from raw (N, T, 9) windows."""
        X = np.asarray(X, dtype=np.float32)
        if X.ndim == 2:
            X = X[None]
        if X.shape[1] != self.config.T:
            raise ConfigError(f"window length {X.shape[1]} does not match model T={self.config.T}")
        if self.kind == KIND_E2E:
            return (self.stats["raw"].apply(X).astype(np.float32),)
        motion = self.stats["motion"].apply(X[..., :6]).astype(np.float32)
        mag = self.stats["mag"].apply(magnetic_input(X, self.config.mag_input)).astype(np.float32)
        return motion, mag

    # -- inference -------------------------------------------------------------
    def raw_outputs(self, X: np.ndarray, chunk: int = 256) -> np.ndarray:
        """Evidence (eleson) or logits (e2e) for each window."""
        parts = []
        with ag.no_grad():
            for lo in range(0, len(X), chunk):
                ins = self.inputs(X[lo:lo + chunk])
                if self.kind == KIND_E2E:
                    parts.append(self.net(Tensor(ins[0])).data)
                else:
                    parts.append(self.net(Tensor(ins[0]), Tensor(ins[1]))["E"].data)
        return np.concatenate(parts) if parts else np.zeros((0, N_STATES), np.float32)

    def predict(self, X: np.ndarray, chunk: int = 256) -> "Prediction":
        out = self.raw_outputs(X, chunk).astype(np.float64)
        if self.kind == KIND_E2E:
            z = out / self.temperature
            z = z - z.max(axis=1, keepdims=True)
            probs = np.exp(z)
            probs /= probs.sum(axis=1, keepdims=True)
            return Prediction(probs, np.zeros(len(probs)), entropy(probs), out)
        C, u = confidence_batch(out)
        return Prediction(C, u, -C.max(axis=1) if len(C) else np.zeros(0), out)

    # -- serialization ---------------------------------------------------------
    def to_arrays(self) -> dict[str, np.ndarray]:
        arrays = {"meta.kind": np.array([0.0 if self.kind == KIND_ELESON else 1.0]),
                  "meta.temperature": np.array([self.temperature])}
        for name, st in self.stats.items():
            arrays[f"prep.{name}.mean"] = st.mean
            arrays[f"prep.{name}.std"] = st.std
        cfg = self.config
        for f in dataclasses.fields(cfg):
            if f.name == "arch":
                continue
            v = getattr(cfg, f.name)
            arrays[f"cfg.{f.name}"] = np.array([{"diff": 0.0, "raw": 1.0}[v] if f.name == "mag_input" else float(v)])
        for f in dataclasses.fields(cfg.arch):
            arrays[f"arch.{f.name}"] = np.atleast_1d(np.asarray(getattr(cfg.arch, f.name), dtype=float))
        for name, p in self.net.named_parameters():
            arrays[name] = p.data
        return arrays

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "ModelBundle":
        required = ["meta.kind", "meta.temperature"] + [f"cfg.{f.name}" for f in dataclasses.fields(TrainConfig)
                                                        if f.name != "arch"]
        required += [f"arch.{f.name}" for f in dataclasses.fields(Architecture)]
        missing = [k for k in required if k not in arrays]
        if missing:
            raise serialize.FormatError(f"model file lacks {missing[0]!r}")
        kind = KIND_ELESON if float(arrays["meta.kind"][0]) == 0.0 else KIND_E2E
        defaults = TrainConfig()
        kw = {}
        for f in dataclasses.fields(defaults):
            if f.name == "arch":
                continue
            # shortest decimal that survives float32 storage, so 0.6 reloads as 0.6
            v = float(str(np.float32(arrays[f"cfg.{f.name}"][0])))
            d = getattr(defaults, f.name)
            if f.name == "mag_input":
                kw[f.name] = "diff" if v == 0.0 else "raw"
            elif isinstance(d, bool):
                kw[f.name] = bool(v)
            elif isinstance(d, int):
                kw[f.name] = int(round(v))
            else:
                kw[f.name] = v
        arch_kw = {}
        for f in dataclasses.fields(Architecture):
            raw = arrays[f"arch.{f.name}"]
            d = getattr(Architecture(), f.name)
            arch_kw[f.name] = tuple(int(round(x)) for x in raw) if isinstance(d, tuple) else int(round(raw[0]))
        cfg = TrainConfig(**kw, arch=Architecture(**arch_kw))
        stats = {}
        for key in arrays:
            if key.startswith("prep.") and key.endswith(".mean"):
                name = key[5:-5]
                stats[name] = ChannelStats(arrays[key], arrays[f"prep.{name}.std"])
        net = ElesonNet(cfg) if kind == KIND_ELESON else SoftmaxNet(cfg)
        for name, p in net.named_parameters():
            if name not in arrays:
                raise serialize.FormatError(f"missing parameter {name!r}")
            if arrays[name].shape != p.shape:
                raise serialize.FormatError(f"shape mismatch for {name!r}")
            p.data = arrays[name].astype(p.dtype).copy()
        return cls(kind, cfg, net, stats, float(arrays["meta.temperature"][0]))

    def to_bytes(self) -> bytes:
        return serialize.dumps(self.to_arrays())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ModelBundle":
        return cls.from_arrays(serialize.loads(blob))

    def save(self, path: str | Path) -> int:
        blob = self.to_bytes()
        Path(path).write_bytes(blob)
        return len(blob)

    @classmethod
    def load(cls, path: str | Path) -> "ModelBundle":
        return cls.from_bytes(Path(path).read_bytes())

    def n_params(self) -> int:
        return self.net.n_params()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.net.named_parameters()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, p in self.net.named_parameters():
            p.data = snap[name].copy()


@dataclass
class Prediction:
    conf: np.ndarray          # (N, 3) state confidences or softmax probabilities
    u: np.ndarray             # uncertainty mass (zeros for softmax)
    wrong_score: np.ndarray   # higher = more likely a wrong decision
    raw: np.ndarray           # evidence or logits

    def __len__(self):
        return len(self.conf)
