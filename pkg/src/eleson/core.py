"""INS signal types, windowing, preprocessing and the line-oriented dataset format."""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

N_CHANNELS = 9
ACCEL = slice(0, 3)
GYRO = slice(3, 6)
MAG = slice(6, 9)
GAP_TOLERANCE_PERIODS = 1.5
STD_FLOOR = 1e-6
DATASET_VERSION = "v1"


class DataError(ValueError):
    """Malformed or inconsistent sensor data."""


class ConfigError(ValueError):
    """Invalid configuration value."""


class ConveyorState(enum.IntEnum):
    ELEVATOR = 0
    ESCALATOR = 1
    NEITHER = 2

    @classmethod
    def parse(cls, value) -> "ConveyorState":
        if isinstance(value, ConveyorState):
            return value
        text = str(value).strip()
        try:
            if isinstance(value, (int, np.integer)) or text.isdigit():
                return cls(int(text))
            return cls[text.upper()]
        except (KeyError, ValueError):
            raise ConfigError(f"unknown conveyor state {value!r}") from None


N_STATES = len(ConveyorState)


@dataclass(frozen=True)
class InsSample:
    t: float
    accel: tuple[float, float, float]
    gyro: tuple[float, float, float]
    mag: tuple[float, float, float]

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.row()):
            raise DataError(f"non-finite channel value at t={self.t}")

    def row(self) -> tuple[float, ...]:
        return (*self.accel, *self.gyro, *self.mag)


def samples_from_array(times: np.ndarray, values: np.ndarray) -> list[InsSample]:
    """Build samples from a timestamp vector and an N x 9 channel array."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[1] != N_CHANNELS:
        raise DataError(f"expected N x 9 channel array, got {values.shape}")
    out = []
    for t, row in zip(np.asarray(times, dtype=float), values.tolist()):
        out.append(InsSample(float(t), tuple(row[0:3]), tuple(row[3:6]), tuple(row[6:9])))
    return out


def samples_to_array(session: Sequence[InsSample]) -> tuple[np.ndarray, np.ndarray]:
    times = np.array([s.t for s in session], dtype=float)
    values = np.array([s.row() for s in session], dtype=float).reshape(len(session), N_CHANNELS)
    return times, values


@dataclass(frozen=True, eq=False)
class InsWindow:
    """A fixed-length T x 9 segment: accel xyz, gyro xyz, mag xyz."""

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        arr = np.asarray(self.samples)
        if arr.ndim != 2 or arr.shape[1] != N_CHANNELS:
            raise DataError(f"window must be T x 9, got {arr.shape}")
        if arr.shape[0] < 2:
            raise DataError("window needs T > 1")
        if not np.all(np.isfinite(arr)):
            raise DataError("window contains non-finite values")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    @property
    def T(self) -> int:
        return self.samples.shape[0]

    def __eq__(self, other):
        if not isinstance(other, InsWindow):
            return NotImplemented
        return self.sample_rate == other.sample_rate and np.array_equal(self.samples, other.samples)


@dataclass(frozen=True, eq=False)
class LabeledWindow:
    window: InsWindow
    label: ConveyorState
    vp_flag: int | None = None
    session_id: str = ""
    location_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "label", ConveyorState.parse(self.label))
        if self.vp_flag is not None and self.vp_flag not in (0, 1):
            raise DataError(f"vp_flag must be 0 or 1, got {self.vp_flag}")


@dataclass
class Dataset:
    records: list[LabeledWindow]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.records:
            T = self.records[0].window.T
            rate = self.records[0].window.sample_rate
            for r in self.records:
                if r.window.T != T or r.window.sample_rate != rate:
                    raise DataError("all records must share T and sample_rate")
        self.metadata.setdefault("format_version", DATASET_VERSION)
        self.metadata["class_proportions"] = self.class_proportions()
        self._arrays = None

    def __len__(self):
        return len(self.records)

    @property
    def T(self) -> int:
        return self.records[0].window.T if self.records else 0

    @property
    def sample_rate(self) -> float:
        return self.records[0].window.sample_rate if self.records else 0.0

    def class_proportions(self) -> list[float]:
        if not self.records:
            return [0.0] * N_STATES
        counts = np.bincount([int(r.label) for r in self.records], minlength=N_STATES)
        return (counts / counts.sum()).tolist()

    def arrays(self):
        """Stacked (X [N,T,9] float32, labels [N], vp [N] with -1 for missing)."""
        if self._arrays is None:
            X = np.stack([r.window.samples for r in self.records]).astype(np.float32)
            y = np.array([int(r.label) for r in self.records], dtype=np.int64)
            vp = np.array([-1 if r.vp_flag is None else r.vp_flag for r in self.records], dtype=np.int64)
            self._arrays = (X, y, vp)
        return self._arrays

    def sessions(self) -> list[str]:
        return sorted({r.session_id for r in self.records})

    def subset(self, indices: Iterable[int]) -> "Dataset":
        meta = {k: v for k, v in self.metadata.items() if k != "class_proportions"}
        return Dataset([self.records[i] for i in indices], meta)


def window_sessions(session: Sequence[InsSample], window_seconds: float, stride_seconds: float,
                    sample_rate: float) -> list[InsWindow]:
    times, values = samples_to_array(session)
    return [InsWindow(values[a:b], sample_rate) for a, b in
            window_bounds(times, len(session), window_seconds, stride_seconds, sample_rate)]


def window_bounds(times: np.ndarray, n: int, window_seconds: float, stride_seconds: float,
                  sample_rate: float) -> list[tuple[int, int]]:
    """Start/stop indices of each complete window; validates sampling uniformity."""
    T = int(round(window_seconds * sample_rate))
    S = int(round(stride_seconds * sample_rate))
    if T < 2 or S < 1:
        raise ConfigError(f"window of {T} samples / stride {S} is not usable")
    check_uniform(times, sample_rate)
    if n < T:
        return []
    return [(k * S, k * S + T) for k in range((n - T) // S + 1)]


def check_uniform(times: np.ndarray, sample_rate: float) -> None:
    if len(times) < 2:
        return
    gaps = np.diff(times)
    period = 1.0 / sample_rate
    if np.any(gaps <= 0):
        raise DataError("timestamps must be strictly increasing")
    worst = float(gaps.max())
    if worst > GAP_TOLERANCE_PERIODS * period:
        raise DataError(f"sampling gap of {worst:.4f}s exceeds {GAP_TOLERANCE_PERIODS} periods")


def split_modalities(w: InsWindow) -> tuple[np.ndarray, np.ndarray]:
    """Motion (accel then gyro, T x 6) and magnetic (T x 3) views of a window."""
    return w.samples[:, :6].copy(), w.samples[:, 6:].copy()


def join_modalities(motion: np.ndarray, magnetic: np.ndarray, sample_rate: float) -> InsWindow:
    return InsWindow(np.concatenate([motion, magnetic], axis=1), sample_rate)


def gyro_peak_magnitude(w: InsWindow | np.ndarray) -> float:
    arr = w.samples if isinstance(w, InsWindow) else np.asarray(w)
    return float(np.linalg.norm(arr[..., GYRO], axis=-1).max())


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel z-score statistics, fitted on a training split only."""

    mean: np.ndarray
    std: np.ndarray
    method: str = "zscore"

    @classmethod
    def fit(cls, X: np.ndarray) -> "ChannelStats":
        flat = np.asarray(X, dtype=np.float64).reshape(-1, np.shape(X)[-1])
        std = np.maximum(flat.std(axis=0), STD_FLOOR)
        return cls(flat.mean(axis=0), std)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).ravel()
        std = np.asarray(self.std, dtype=np.float64).ravel()
        if mean.shape != std.shape:
            raise ConfigError("stats mean/std length mismatch")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", np.maximum(std, STD_FLOOR))

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X)
        if X.shape[-1] != self.mean.size:
            raise ConfigError(f"stats cover {self.mean.size} channels, data has {X.shape[-1]}")
        out = (X - self.mean) / self.std
        return out.astype(X.dtype if X.dtype.kind == "f" else np.float64, copy=False)

    def invert(self, Z: np.ndarray) -> np.ndarray:
        Z = np.asarray(Z)
        if Z.shape[-1] != self.mean.size:
            raise ConfigError(f"stats cover {self.mean.size} channels, data has {Z.shape[-1]}")
        return (Z * self.std + self.mean).astype(Z.dtype, copy=False)


def standardize(w: InsWindow, stats: ChannelStats) -> InsWindow:
    return InsWindow(stats.apply(w.samples), w.sample_rate)


# -- dataset text format -----------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".9g")


def write_dataset(ds: Dataset, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(dataset_to_text(ds))


def dataset_to_text(ds: Dataset) -> str:
    buf = io.StringIO()
    rate = ds.sample_rate
    buf.write(f"eleson-dataset {DATASET_VERSION}; rate={_fmt(rate)}; T={ds.T}\n")
    for i, r in enumerate(ds.records):
        if i:
            buf.write("\n")
        vp = "-" if r.vp_flag is None else str(r.vp_flag)
        buf.write(f"label={int(r.label)}; vp={vp}; session={r.session_id}; location={r.location_id}\n")
        for row in r.window.samples:
            buf.write(",".join(_fmt(v) for v in row))
            buf.write("\n")
    return buf.getvalue()


def _parse_fields(line: str) -> dict[str, str]:
    out = {}
    for part in line.split(";"):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise DataError(f"malformed field {part!r}")
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def read_dataset(path: str | Path) -> Dataset:
    with open(path, "r", encoding="ascii") as fh:
        return dataset_from_text(fh.read())


def dataset_from_text(text: str) -> Dataset:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("eleson-dataset "):
        raise DataError("missing eleson-dataset header")
    head = lines[0][len("eleson-dataset "):]
    version, _, rest = head.partition(";")
    if version.strip() != DATASET_VERSION:
        raise DataError(f"unsupported dataset version {version.strip()!r}")
    hdr = _parse_fields(rest)
    try:
        rate = float(hdr["rate"])
        T = int(hdr["T"])
    except (KeyError, ValueError) as exc:
        raise DataError(f"bad dataset header: {lines[0]!r}") from exc
    records = []
    i = 1
    n = len(lines)
    while i < n:
        if not lines[i].strip():
            i += 1
            continue
        f = _parse_fields(lines[i])
        if "label" not in f:
            raise DataError(f"line {i + 1}: expected label line")
        rows = lines[i + 1:i + 1 + T]
        if len(rows) != T:
            raise DataError(f"line {i + 1}: record truncated")
        try:
            arr = np.array([[float(v) for v in row.split(",")] for row in rows], dtype=np.float64)
        except ValueError as exc:
            raise DataError(f"line {i + 2}: bad channel value") from exc
        if arr.shape != (T, N_CHANNELS):
            raise DataError(f"line {i + 2}: expected {T} rows of 9 values")
        vp = f.get("vp", "-")
        try:
            label = ConveyorState.parse(f["label"])
            vp_flag = None if vp == "-" else int(vp)
        except (ConfigError, ValueError) as exc:
            raise DataError(f"line {i + 1}: {exc}") from None
        records.append(LabeledWindow(
            InsWindow(arr, rate),
            label,
            vp_flag,
            f.get("session", ""),
            f.get("location", ""),
        ))
        i += 1 + T
    return Dataset(records, {"sample_rate": rate})


# -- raw session text format (streaming input) --------------------------------

def write_session(session: Sequence[InsSample], path: str | Path, sample_rate: float) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"eleson-session {DATASET_VERSION}; rate={_fmt(sample_rate)}\n")
        for s in session:
            fh.write(",".join(_fmt(v) for v in (s.t, *s.row())))
            fh.write("\n")


def iter_session_file(path: str | Path):
    """Yield (sample_rate, InsSample) lazily from a session file."""
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline()
        if not header.startswith("eleson-session "):
            raise DataError("missing eleson-session header")
        _, _, rest = header[len("eleson-session "):].partition(";")
        rate = float(_parse_fields(rest)["rate"])
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                vals = [float(v) for v in line.split(",")]
            except ValueError as exc:
                raise DataError(f"line {lineno}: bad value") from exc
            if len(vals) != 10:
                raise DataError(f"line {lineno}: expected t + 9 channels")
            yield rate, InsSample(vals[0], tuple(vals[1:4]), tuple(vals[4:7]), tuple(vals[7:10]))


def read_session(path: str | Path) -> tuple[float, list[InsSample]]:
    rate = None
    out = []
    for rate, s in iter_session_file(path):
        out.append(s)
    if rate is None:
        with open(path, "r", encoding="ascii") as fh:
            _, _, rest = fh.readline()[len("eleson-session "):].partition(";")
            rate = float(_parse_fields(rest)["rate"])
    return rate, out
