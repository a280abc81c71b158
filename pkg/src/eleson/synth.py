"""Synthetic INS sessions with conveyor transport, pedestrian behavior and a magnetic environment.

A session is the additive composition of three sources:

* conveyor transport (deterministic given the profile),
* pedestrian behavior (driven only by ``seed_behavior``),
* sensor noise (driven only by ``seed_unobserved``).

Motion channels are expressed in a gravity-aligned frame with gravity removed.
The magnetometer reads the world field rotated into the phone frame by the
behavior's orientation trajectory, plus a residual device offset.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .core import (
    ConfigError, ConveyorState, Dataset, InsSample, LabeledWindow, InsWindow, N_STATES,
    samples_from_array, window_bounds,
)

BOARDING_MARGIN_S = 1.0
FLOOR_HEIGHT_M = 4.0
ELEVATOR_SWAY = 0.08          # m/s^2 lateral car sway at full speed
ELEVATOR_SWAY_HZ = (3.1, 4.7)  # guide-rail sway frequencies, x and y
ELEVATOR_MAG_RANGE = (5.0, 10.0)  # uT, cabin distortion drawn per session
ESCALATOR_STEP_VIBRATION = 0.06  # m/s^2 vertical step bump at belt speed
VP_THRESHOLD = 1.5            # rad/s
ELEVATOR_FLOOR_RIPPLE = 0.6   # fraction of the cabin distortion modulated per floor passed
RESIDUAL_OFFSET_UT = 2.0      # max hard-iron residual left after device calibration


class BehaviorKind(enum.Enum):
    STILL = "still"
    BROWSING = "browsing"
    SWINGING = "swinging"
    IN_POCKET = "inpocket"
    IN_BAG = "inbag"
    SHAKING = "shaking"
    WALKING = "walking"

    @classmethod
    def parse(cls, value) -> "BehaviorKind":
        if isinstance(value, BehaviorKind):
            return value
        key = str(value).strip().lower().replace("_", "").replace("-", "")
        for k in cls:
            if k.value == key:
                return k
        raise ConfigError(f"unknown behavior kind {value!r}")


@dataclass(frozen=True)
class ConveyorProfile:
    """Transport description.

    For elevators ``ramp_seconds`` is the length of each acceleration pulse and
    ``cruise_seconds`` the constant-speed leg; for escalators they are the
    boarding jerk and the time on the moving belt.
    """

    kind: ConveyorState = ConveyorState.NEITHER
    accel_peak: float = 0.0
    ramp_seconds: float = 0.0
    cruise_seconds: float = 0.0
    incline_deg: float = 0.0
    mag_distortion_amp: float = 0.0
    mag_period_seconds: float = 0.0
    direction: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", ConveyorState.parse(self.kind))
        if self.kind is ConveyorState.NEITHER:
            if any(getattr(self, f) != 0 for f in ("accel_peak", "ramp_seconds", "cruise_seconds",
                                                    "incline_deg", "mag_distortion_amp", "mag_period_seconds")):
                raise ConfigError("Neither profile must have all conveyor fields zero")
            return
        if self.accel_peak < 0 or self.mag_distortion_amp < 0:
            raise ConfigError("accel_peak and mag_distortion_amp must be >= 0")
        if self.ramp_seconds <= 0:
            raise ConfigError("ramp_seconds must be > 0")
        if self.cruise_seconds < 0:
            raise ConfigError("cruise_seconds must be >= 0")
        if self.direction not in (1, -1):
            raise ConfigError("direction must be +1 or -1")
        if self.kind is ConveyorState.ESCALATOR and self.mag_period_seconds <= 0:
            raise ConfigError("escalator needs mag_period_seconds > 0")

    @property
    def ride_seconds(self) -> float:
        """Boarding margin + transport + alighting margin."""
        if self.kind is ConveyorState.NEITHER:
            return 0.0
        return 2 * BOARDING_MARGIN_S + 2 * self.ramp_seconds + self.cruise_seconds

    @classmethod
    def elevator(cls, accel_peak=0.9, ramp_seconds=2.0, cruise_seconds=6.0, mag_distortion_amp=8.0,
                 direction=1) -> "ConveyorProfile":
        return cls(ConveyorState.ELEVATOR, accel_peak, ramp_seconds, cruise_seconds, 0.0,
                   mag_distortion_amp, 0.0, direction)

    @classmethod
    def escalator(cls, accel_peak=0.6, ramp_seconds=0.8, cruise_seconds=15.0, incline_deg=30.0,
                  mag_distortion_amp=4.0, mag_period_seconds=0.8, direction=1) -> "ConveyorProfile":
        return cls(ConveyorState.ESCALATOR, accel_peak, ramp_seconds, cruise_seconds, incline_deg,
                   mag_distortion_amp, mag_period_seconds, direction)


@dataclass(frozen=True)
class BehaviorProcess:
    kind: BehaviorKind = BehaviorKind.STILL
    accel_amp: float = 0.0
    gyro_amp: float = 0.0
    freq_hz: float = 0.5
    burst_prob: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", BehaviorKind.parse(self.kind))
        if self.accel_amp < 0 or self.gyro_amp < 0:
            raise ConfigError("behavior amplitudes must be >= 0")
        if not 0 <= self.burst_prob <= 1:
            raise ConfigError("burst_prob must be a probability")

    @classmethod
    def preset(cls, kind) -> "BehaviorProcess":
        kind = BehaviorKind.parse(kind)
        return cls(kind, *BEHAVIOR_PRESETS[kind])


# accel_amp m/s^2, gyro_amp rad/s, freq Hz, burst probability per second
BEHAVIOR_PRESETS = {
    BehaviorKind.STILL: (0.0, 0.0, 0.5, 0.0),
    BehaviorKind.BROWSING: (0.25, 0.4, 0.7, 0.3),
    BehaviorKind.IN_POCKET: (0.5, 0.5, 1.0, 0.1),
    BehaviorKind.IN_BAG: (0.4, 0.35, 0.8, 0.1),
    BehaviorKind.SWINGING: (1.8, 3.0, 1.0, 0.05),
    BehaviorKind.SHAKING: (2.2, 3.5, 2.5, 0.2),
    BehaviorKind.WALKING: (1.8, 1.0, 1.9, 0.05),
}


@dataclass(frozen=True)
class MagneticEnvironment:
    background_field: tuple[float, float, float] = (20.0, 0.0, -40.0)
    spatial_gradient_amp: float = 0.0

    def __post_init__(self):
        bf = tuple(float(v) for v in self.background_field)
        if len(bf) != 3:
            raise ConfigError("background_field must be a 3-vector")
        object.__setattr__(self, "background_field", bf)
        norm = math.sqrt(sum(v * v for v in bf))
        if not 20.0 <= norm <= 70.0:
            raise ConfigError(f"background field norm {norm:.1f} uT outside [20, 70]")

    @property
    def intensity(self) -> float:
        return float(np.linalg.norm(self.background_field))


@dataclass(frozen=True)
class ScenarioConfig:
    profile: ConveyorProfile = field(default_factory=ConveyorProfile)
    behavior: BehaviorProcess = field(default_factory=BehaviorProcess)
    environment: MagneticEnvironment = field(default_factory=MagneticEnvironment)
    duration_seconds: float = 20.0
    seed_behavior: int = 0
    seed_unobserved: int = 1
    sample_rate: float = 100.0
    ride_start: float = 3.0
    accel_noise: float = 0.03
    gyro_noise: float = 0.01
    mag_noise: float = 0.15
    device_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "device_offset", tuple(float(v) for v in self.device_offset))
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be > 0")
        if not 0 < self.behavior.freq_hz < self.sample_rate / 2:
            raise ConfigError("behavior freq_hz must lie in (0, sample_rate/2)")
        if min(self.accel_noise, self.gyro_noise, self.mag_noise) < 0:
            raise ConfigError("noise levels must be >= 0")
        if self.profile.kind is not ConveyorState.NEITHER:
            if self.ride_start < 0 or self.ride_start + self.profile.ride_seconds > self.duration_seconds:
                raise ConfigError(
                    f"duration {self.duration_seconds}s too short for ride of {self.profile.ride_seconds}s "
                    f"starting at {self.ride_start}s")
        elif self.duration_seconds <= 0:
            raise ConfigError("duration must be > 0")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_seconds * self.sample_rate))

    def ride_interval(self) -> tuple[float, float]:
        """Transport interval (excluding boarding/alighting margins), in seconds."""
        if self.profile.kind is ConveyorState.NEITHER:
            return (0.0, 0.0)
        lo = self.ride_start + BOARDING_MARGIN_S
        return lo, lo + 2 * self.profile.ramp_seconds + self.profile.cruise_seconds


@dataclass
class Session:
    times: np.ndarray
    values: np.ndarray      # N x 9
    labels: np.ndarray      # per-sample ConveyorState codes
    sample_rate: float

    def samples(self) -> list[InsSample]:
        return samples_from_array(self.times, self.values)

    def __len__(self):
        return len(self.times)


# -- seeds -------------------------------------------------------------------

def split_seed(seed: int, index: int) -> tuple[int, int, int]:
    """Derive (behavior, unobserved, scenario) seeds for session ``index``.

    Uses numpy's SeedSequence spawning keyed by (seed, index) so sessions can be
    generated in any order or in parallel with identical results.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(index)])
    a, b, c = ss.generate_state(3)
    return int(a), int(b), int(c)


# -- transport ---------------------------------------------------------------

def _trapezoid_pulse(t: np.ndarray, start: float, duration: float, peak: float) -> np.ndarray:
    """Rise over the first quarter, hold, fall over the last quarter."""
    rise = duration / 4.0
    u = t - start
    out = np.zeros_like(t)
    up = (u >= 0) & (u < rise)
    hold = (u >= rise) & (u <= duration - rise)
    down = (u > duration - rise) & (u < duration)
    out[up] = peak * u[up] / rise
    out[hold] = peak
    out[down] = peak * (duration - u[down]) / rise
    return out


def _smoothstep(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3 - 2 * x)


def transport(cfg: ScenarioConfig, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Conveyor motion (N x 6, accel then gyro) and world-frame intensity change (N,)."""
    p = cfg.profile
    n = t.size
    motion = np.zeros((n, 6))
    dmag = np.zeros(n)
    if p.kind is ConveyorState.NEITHER:
        return motion, dmag
    dt = 1.0 / cfg.sample_rate
    lo, hi = cfg.ride_interval()
    inside = (t >= lo) & (t < hi)
    pulse = _trapezoid_pulse(t, lo, p.ramp_seconds, p.accel_peak) \
        - _trapezoid_pulse(t, hi - p.ramp_seconds, p.ramp_seconds, p.accel_peak)
    speed = np.cumsum(pulse) * dt
    v_max = max(float(np.abs(speed).max()), 1e-9)
    speed_frac = np.where(inside, np.clip(np.abs(speed) / v_max, 0.0, 1.0), 0.0)
    distance = np.cumsum(np.abs(speed)) * dt

    # shell / frame envelope: fades in over boarding, out over alighting
    board = cfg.ride_start
    envelope = _smoothstep((t - board) / BOARDING_MARGIN_S) * _smoothstep((hi + BOARDING_MARGIN_S - t) / BOARDING_MARGIN_S)
    drift = cfg.environment.spatial_gradient_amp * np.cumsum(speed_frac) * dt

    if p.kind is ConveyorState.ELEVATOR:
        motion[:, 2] = p.direction * pulse
        sway = ELEVATOR_SWAY * speed_frac
        motion[:, 0] = sway * np.sin(2 * np.pi * ELEVATOR_SWAY_HZ[0] * t)
        motion[:, 1] = sway * np.sin(2 * np.pi * ELEVATOR_SWAY_HZ[1] * t + 0.6)
        dmag = p.mag_distortion_amp * (envelope + ELEVATOR_FLOOR_RIPPLE * speed_frac * np.sin(2 * np.pi * distance / FLOOR_HEIGHT_M))
    else:
        theta = math.radians(p.incline_deg)
        motion[:, 0] = pulse * math.cos(theta)
        step = ESCALATOR_STEP_VIBRATION * speed_frac * np.sin(2 * np.pi * t / p.mag_period_seconds)
        motion[:, 2] = p.direction * pulse * math.sin(theta) + step
        ripple = speed_frac * np.sin(2 * np.pi * t / p.mag_period_seconds)
        dmag = p.mag_distortion_amp * (0.5 * envelope + ripple)
    motion[~inside, :] = 0.0
    return motion, dmag + drift * envelope


# -- behavior ----------------------------------------------------------------

def _unit(rng) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def _smooth_noise(rng, n: int, sigma_samples: float) -> np.ndarray:
    raw = rng.normal(size=(n, 3))
    sm = gaussian_filter1d(raw, sigma_samples, axis=0, mode="wrap")
    return sm / max(float(sm.std()), 1e-12)


def behavior(cfg: ScenarioConfig, t: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Behavior motion (N x 6) and phone orientation quaternions (N x 4), all from seed_behavior.

    Also returns the initial rotation so callers can reproduce the frame.
    """
    b = cfg.behavior
    rng = np.random.default_rng(cfg.seed_behavior)
    n = t.size
    rate = cfg.sample_rate
    q0 = _unit4(rng)
    ax_a, ax_g = _unit(rng), _unit(rng)
    ph = rng.uniform(0, 2 * np.pi, 3)
    w = 2 * np.pi * b.freq_hz
    smooth_a = _smooth_noise(rng, n, rate / (4 * b.freq_hz))
    smooth_g = _smooth_noise(rng, n, rate / (4 * b.freq_hz))
    acc = b.accel_amp * (np.sin(w * t + ph[0]) + 0.35 * np.sin(2 * w * t + ph[1]))[:, None] * ax_a
    acc += 0.3 * b.accel_amp * smooth_a
    gyr = b.gyro_amp * np.sin(w * t + ph[2])[:, None] * ax_g
    gyr += 0.3 * b.gyro_amp * smooth_g

    n_bursts = rng.poisson(b.burst_prob * n / rate)
    width = 0.15 * rate
    idx = np.arange(n)
    for _ in range(n_bursts):
        center = rng.uniform(0, n)
        shape = np.exp(-0.5 * ((idx - center) / width) ** 2)[:, None]
        acc += 1.5 * b.accel_amp * shape * _unit(rng)
        gyr += 1.5 * b.gyro_amp * shape * _unit(rng)

    # angular-rate cap keeps each kind within its physical envelope
    cap = 1.6 * b.gyro_amp
    norms = np.linalg.norm(gyr, axis=1)
    over = norms > cap
    if np.any(over) and cap > 0:
        gyr[over] *= (cap / norms[over])[:, None]
    if b.gyro_amp == 0:
        gyr[:] = 0.0
    if b.accel_amp == 0:
        acc[:] = 0.0
    quats = _integrate_orientation(q0, gyr, 1.0 / rate)
    return np.concatenate([acc, gyr], axis=1), quats, q0


def _unit4(rng) -> np.ndarray:
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def _integrate_orientation(q0: np.ndarray, gyro: np.ndarray, dt: float) -> np.ndarray:
    """Integrate body rates into phone-to-world quaternions (w, x, y, z)."""
    n = gyro.shape[0]
    out = np.empty((n, 4))
    w, x, y, z = (float(v) for v in q0)
    half = 0.5 * dt
    for k, (gx, gy, gz) in enumerate(gyro.tolist()):
        out[k] = (w, x, y, z)
        ang = math.sqrt(gx * gx + gy * gy + gz * gz) * dt
        if ang > 0:
            s = math.sin(0.5 * ang) / (ang / dt)
            dw, dx, dy, dz = math.cos(0.5 * ang), gx * s, gy * s, gz * s
        else:
            dw, dx, dy, dz = 1.0, gx * half, gy * half, gz * half
        w, x, y, z = (w * dw - x * dx - y * dy - z * dz,
                      w * dx + x * dw + y * dz - z * dy,
                      w * dy - x * dz + y * dw + z * dx,
                      w * dz + x * dy - y * dx + z * dw)
        norm = math.sqrt(w * w + x * x + y * y + z * z)
        w, x, y, z = w / norm, x / norm, y / norm, z / norm
    return out


def _rotate_world_to_phone(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Apply the inverse of each quaternion in ``q`` (N x 4) to vectors ``v`` (N x 3)."""
    w = q[:, :1]
    u = -q[:, 1:]
    t = 2 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


# -- sessions ----------------------------------------------------------------

def sample_labels(cfg: ScenarioConfig, t: np.ndarray) -> np.ndarray:
    labels = np.full(t.size, int(ConveyorState.NEITHER), dtype=np.int64)
    if cfg.profile.kind is not ConveyorState.NEITHER:
        lo, hi = cfg.ride_interval()
        labels[(t >= lo) & (t < hi)] = int(cfg.profile.kind)
    return labels


def gen_session(cfg: ScenarioConfig) -> Session:
    """Generate one labeled session; deterministic in (cfg, seeds)."""
    n = cfg.n_samples
    t = np.arange(n) / cfg.sample_rate
    conv_motion, dmag = transport(cfg, t)
    beh_motion, quats, _ = behavior(cfg, t)

    B0 = np.asarray(cfg.environment.background_field, dtype=float)
    b_hat = B0 / np.linalg.norm(B0)
    world = B0[None, :] + dmag[:, None] * b_hat[None, :]
    mag = _rotate_world_to_phone(quats, world) + np.asarray(cfg.device_offset)

    noise_rng = np.random.default_rng(cfg.seed_unobserved)
    noise = noise_rng.normal(size=(n, 9)) * np.repeat([cfg.accel_noise, cfg.gyro_noise, cfg.mag_noise], 3)
    values = np.concatenate([conv_motion + beh_motion, mag], axis=1) + noise
    return Session(t, values, sample_labels(cfg, t), cfg.sample_rate)


def gen_interventional_pair(cfg: ScenarioConfig) -> tuple[Session, Session]:
    """Experimental session and its do(s = Neither) control with identical seeds."""
    control_cfg = replace(cfg, profile=ConveyorProfile())
    return gen_session(cfg), gen_session(control_cfg)


# -- datasets ----------------------------------------------------------------

TRAIN_BEHAVIOR_MIX = {
    BehaviorKind.STILL: 0.2, BehaviorKind.BROWSING: 0.25, BehaviorKind.IN_POCKET: 0.2,
    BehaviorKind.IN_BAG: 0.15, BehaviorKind.SWINGING: 0.1, BehaviorKind.WALKING: 0.1,
}
SHIFTED_BEHAVIOR_MIX = {
    BehaviorKind.STILL: 0.05, BehaviorKind.BROWSING: 0.15, BehaviorKind.IN_POCKET: 0.1,
    BehaviorKind.IN_BAG: 0.1, BehaviorKind.SWINGING: 0.3, BehaviorKind.SHAKING: 0.2,
    BehaviorKind.WALKING: 0.1,
}


def make_locations(n: int, field_range: tuple[float, float], seed: int) -> list[MagneticEnvironment]:
    """Random plausible environments: field norm within ``field_range``, dip 30-70 degrees."""
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, 7919])
    out = []
    for _ in range(n):
        norm = rng.uniform(*field_range)
        dip = math.radians(rng.uniform(30, 70))
        heading = rng.uniform(0, 2 * np.pi)
        vec = norm * np.array([math.cos(dip) * math.cos(heading), math.cos(dip) * math.sin(heading), -math.sin(dip)])
        out.append(MagneticEnvironment(tuple(vec.tolist()), float(rng.uniform(-1.0, 1.0))))
    return out


def random_scenario(kind: ConveyorState, behavior_kind: BehaviorKind, env: MagneticEnvironment, index_seed: int,
                    sample_rate: float = 100.0) -> ScenarioConfig:
    """Jittered scenario for one session; all randomness from ``index_seed``."""
    seed_b, seed_u, seed_c = split_seed(index_seed, 0)
    rng = np.random.default_rng(seed_c)
    direction = int(rng.choice([-1, 1]))
    if kind is ConveyorState.ELEVATOR:
        prof = ConveyorProfile.elevator(rng.uniform(0.6, 1.1), rng.uniform(1.5, 2.5), rng.uniform(2.0, 12.0),
                                        rng.uniform(*ELEVATOR_MAG_RANGE), direction)
    elif kind is ConveyorState.ESCALATOR:
        prof = ConveyorProfile.escalator(rng.uniform(0.5, 1.0), rng.uniform(0.6, 1.0), rng.uniform(8.0, 24.0),
                                         rng.uniform(27.0, 35.0), rng.uniform(2.5, 5.5), rng.uniform(0.7, 0.9),
                                         direction)
    else:
        prof = ConveyorProfile()
    base = BehaviorProcess.preset(behavior_kind)
    beh = replace(base, accel_amp=base.accel_amp * rng.uniform(0.7, 1.3),
                  gyro_amp=base.gyro_amp * rng.uniform(0.7, 1.3),
                  freq_hz=base.freq_hz * rng.uniform(0.8, 1.2))
    lead = rng.uniform(2.0, 6.0)
    tail = rng.uniform(2.0, 6.0)
    duration = lead + prof.ride_seconds + tail if prof.kind is not ConveyorState.NEITHER else rng.uniform(10.0, 30.0)
    offset = _unit(rng) * rng.uniform(0.0, RESIDUAL_OFFSET_UT)
    return ScenarioConfig(prof, beh, env, float(duration), seed_b, seed_u, sample_rate, float(lead),
                          device_offset=tuple(offset.tolist()))


def _normalize_mix(mix) -> np.ndarray:
    arr = np.asarray(mix, dtype=float)
    if arr.shape != (N_STATES,) or np.any(arr < 0) or not math.isclose(arr.sum(), 1.0, abs_tol=1e-6):
        raise ConfigError(f"class mix must be {N_STATES} non-negative proportions summing to 1, got {mix}")
    return arr / arr.sum()


def _normalize_behavior_mix(behavior_mix) -> tuple[list[BehaviorKind], np.ndarray]:
    if behavior_mix is None:
        behavior_mix = TRAIN_BEHAVIOR_MIX
    kinds = [BehaviorKind.parse(k) for k in behavior_mix]
    p = np.asarray(list(behavior_mix.values()), dtype=float)
    if np.any(p < 0) or p.sum() <= 0:
        raise ConfigError("behavior mix weights must be non-negative with positive total")
    return kinds, p / p.sum()


def window_session(session: Session, window_seconds: float = 2.0, stride_seconds: float = 2.0):
    """Windows of a session with majority labels (ties resolve to Neither)."""
    out = []
    for a, b in window_bounds(session.times, len(session), window_seconds, stride_seconds, session.sample_rate):
        counts = np.bincount(session.labels[a:b], minlength=N_STATES)
        label = ConveyorState.NEITHER
        best = counts.argmax()
        if counts[best] * 2 > (b - a):
            label = ConveyorState(int(best))
        out.append((InsWindow(session.values[a:b], session.sample_rate), label))
    return out


def iter_sessions(n_sessions: int, mix=(0.2, 0.2, 0.6), behavior_mix=None, seed: int = 0, *,
                  locations: list[MagneticEnvironment] | None = None, field_range=(25.0, 45.0),
                  n_locations: int = 8, sample_rate: float = 100.0):
    """Yield ``(session_id, location_id, ScenarioConfig, Session)`` for randomly drawn sessions.

    Session kinds are weighted by ``mix`` divided by the typical windows each
    kind yields, so windowed class shares land near ``mix``.
    """
    mix = _normalize_mix(mix)
    kinds, bprobs = _normalize_behavior_mix(behavior_mix)
    if n_sessions < 1:
        raise ConfigError("n_sessions must be >= 1")
    locs = locations if locations is not None else make_locations(n_locations, field_range, seed)
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, 104729])
    per_session = np.array([4.0, 9.0, 10.0])
    weights = mix / per_session
    weights = weights / weights.sum() if weights.sum() > 0 else weights
    for i in range(n_sessions):
        kind = ConveyorState(int(rng.choice(N_STATES, p=weights)))
        bkind = kinds[int(rng.choice(len(kinds), p=bprobs))]
        loc_idx = int(rng.integers(len(locs)))
        cfg = random_scenario(kind, bkind, locs[loc_idx], split_seed(seed, i)[2], sample_rate)
        yield f"{seed}-{i}", f"loc{seed}-{loc_idx}", cfg, gen_session(cfg)


def gen_dataset(n_sessions: int, mix=(0.2, 0.2, 0.6), behavior_mix=None, seed: int = 0, *,
                locations: list[MagneticEnvironment] | None = None, field_range=(25.0, 45.0),
                n_locations: int = 8, n_windows: int | None = None, sample_rate: float = 100.0,
                window_seconds: float = 2.0, stride_seconds: float = 2.0) -> Dataset:
    """Windowed, labeled dataset whose class mix matches ``mix`` to within one window.

    Sessions are drawn until every requested class has enough windows, then each
    class is subsampled to its exact share.  ``n_windows`` caps the total.
    """
    mix = _normalize_mix(mix)
    kinds, bprobs = _normalize_behavior_mix(behavior_mix)
    by_class: list[list[LabeledWindow]] = [[] for _ in range(N_STATES)]
    for sid, loc, _, session in iter_sessions(n_sessions, mix, behavior_mix, seed, locations=locations,
                                              field_range=field_range, n_locations=n_locations,
                                              sample_rate=sample_rate):
        for win, label in window_session(session, window_seconds, stride_seconds):
            vp = int(gyro_peak(win.samples) > VP_THRESHOLD)
            by_class[int(label)].append(LabeledWindow(win, label, vp, sid, loc))

    avail = np.array([len(c) for c in by_class], dtype=float)
    with np.errstate(divide="ignore"):
        caps = np.where(mix > 0, avail / np.where(mix > 0, mix, 1), np.inf)
    total = int(np.floor(caps.min()))
    if n_windows is not None:
        total = min(total, int(n_windows))
    counts = _apportion(mix, total)
    pick_rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, 15485863])
    records = []
    for c in range(N_STATES):
        if counts[c] == 0:
            continue
        chosen = np.sort(pick_rng.choice(len(by_class[c]), size=counts[c], replace=False))
        records.extend(by_class[c][j] for j in chosen)
    order = pick_rng.permutation(len(records))
    records = [records[j] for j in order]
    meta = {
        "generator_seed": seed,
        "n_sessions": n_sessions,
        "requested_mix": mix.tolist(),
        "behavior_mix": {k.value: float(p) for k, p in zip(kinds, bprobs)},
        "preprocessing": "zscore (fitted at training time)",
    }
    return Dataset(records, meta)


def gyro_peak(samples: np.ndarray) -> float:
    return float(np.linalg.norm(samples[:, 3:6], axis=1).max())


def _apportion(mix: np.ndarray, total: int) -> list[int]:
    raw = mix * total
    counts = np.floor(raw).astype(int)
    rem = total - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    for j in order[:rem]:
        counts[j] += 1
    return counts.tolist()


# -- scenario files ------------------------------------------------------------

def scenario_to_text(cfg: ScenarioConfig) -> str:
    lines = ["# eleson scenario"]
    for prefix, obj in (("profile", cfg.profile), ("behavior", cfg.behavior), ("environment", cfg.environment)):
        for f in dataclasses.fields(obj):
            lines.append(f"{prefix}.{f.name}={_fmt_value(getattr(obj, f.name))}")
    for f in dataclasses.fields(cfg):
        if f.name in ("profile", "behavior", "environment"):
            continue
        lines.append(f"{f.name}={_fmt_value(getattr(cfg, f.name))}")
    return "\n".join(lines) + "\n"


def _fmt_value(v) -> str:
    if isinstance(v, ConveyorState):
        return v.name.lower()
    if isinstance(v, BehaviorKind):
        return v.value
    if isinstance(v, (tuple, list)):
        return ",".join(_fmt_value(x) for x in v)
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def parse_key_values(text: str) -> dict[str, str]:
    """``key=value`` lines; ``#`` starts a comment; blank lines ignored."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _coerce(cls, kv: dict[str, str]):
    kwargs = {}
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key, raw in kv.items():
        if key not in names:
            raise ConfigError(f"unknown {cls.__name__} key {key!r}")
        default = getattr(cls(), key) if cls is not ScenarioConfig else None
        try:
            if key == "kind":
                kwargs[key] = raw
            elif key in ("background_field", "device_offset"):
                kwargs[key] = tuple(float(x) for x in raw.split(","))
            elif key in ("seed_behavior", "seed_unobserved", "direction") or isinstance(default, int) and not isinstance(default, bool):
                kwargs[key] = int(raw)
            else:
                kwargs[key] = float(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
    return kwargs


def scenario_from_text(text: str) -> ScenarioConfig:
    kv = parse_key_values(text)
    groups: dict[str, dict[str, str]] = {"profile": {}, "behavior": {}, "environment": {}, "": {}}
    for key, value in kv.items():
        head, dot, rest = key.partition(".")
        if dot and head in groups:
            groups[head][rest] = value
        else:
            groups[""][key] = value
    profile = ConveyorProfile(**_coerce(ConveyorProfile, groups["profile"]))
    beh_kw = _coerce(BehaviorProcess, groups["behavior"])
    if "kind" in beh_kw and set(beh_kw) == {"kind"}:
        behavior_proc = BehaviorProcess.preset(beh_kw["kind"])
    else:
        behavior_proc = BehaviorProcess(**beh_kw)
    env = MagneticEnvironment(**_coerce(MagneticEnvironment, groups["environment"]))
    top = _coerce(ScenarioConfig, groups[""])
    return ScenarioConfig(profile, behavior_proc, env, **top)


def read_scenario(path: str | Path) -> ScenarioConfig:
    return scenario_from_text(Path(path).read_text(encoding="ascii"))


def dataset_from_scenarios(configs: list[ScenarioConfig], window_seconds: float = 2.0,
                           stride_seconds: float = 2.0, location_ids: list[str] | None = None) -> Dataset:
    records = []
    for i, cfg in enumerate(configs):
        session = gen_session(cfg)
        loc = location_ids[i] if location_ids else f"field{cfg.environment.intensity:.1f}"
        for win, label in window_session(session, window_seconds, stride_seconds):
            vp = int(gyro_peak(win.samples) > VP_THRESHOLD)
            records.append(LabeledWindow(win, label, vp, f"scenario-{i}", loc))
    return Dataset(records, {"n_sessions": len(configs), "source": "scenario files"})
