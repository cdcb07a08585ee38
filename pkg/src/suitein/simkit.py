"""Synthetic multi-device walking sequences with known ground truth.

The walker follows a mean-reverting speed process and a smooth heading
process. Velocity information is embedded in the emitted signals the way a
learned inertial front end consumes it: gait oscillations whose amplitude
and frequency grow with speed, oriented along the walking direction in a
heading-stabilized sensor frame (emulating upstream orientation
compensation), with only a slow residual frame drift per device.

Accelerometers emit gravity-compensated user acceleration in the device
frame. On top of the shared body signal, each device adds its own
articulated motion (arm swing, head bob, hand vibration) with per-sequence
random axis, phase and strength: genuine private signal for the contrastive
module to isolate, and a confounder for single-device models because the
watch swing lives in the same frequency band as the gait itself.

Scenario events: ``remove_device`` zeroes one device's motion content
(rest + sensor noise) while the walk continues, ``stand_still`` zeroes the
walker's velocity over an interval, ``shake_all`` adds large band-limited
noise to every device. Everything is reproducible from the config seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.signal import lfilter

from .dataio import GroundTruth, SampleStream, SequenceBundle
from .errors import ConfigError

MASTER_HZ = 200.0
STEP_FREQ_BASE = 1.4       # Hz at standstill-adjacent speeds
STEP_FREQ_PER_SPEED = 0.5  # Hz per m/s
EVENT_RAMP_S = 0.5         # smooth speed ramp bordering stand_still intervals

ARTICULATION_KINDS = ("arm_swing", "head_bob", "hand_vibration", "none")
EVENT_KINDS = ("remove_device", "stand_still", "shake_all")


@dataclass
class DeviceSpec:
    """Sampling rate and local-motion profile of one wearable."""

    rate_hz: float
    articulation: str = "none"
    amplitude: float = 0.0       # peak articulation accel, m/s^2
    frequency_hz: float = 0.0    # 0 means gait-locked
    mount_yaw_deg: float = 0.0   # fixed frame offset against the world frame
    frame_drift_deg: float = 2.5  # std of the slow residual orientation drift

    def __post_init__(self):
        if self.articulation == "hand_ibration":  # tolerated misspelling
            self.articulation = "hand_vibration"
        if self.articulation not in ARTICULATION_KINDS:
            raise ConfigError(
                f"unknown articulation {self.articulation!r}; expected one of "
                f"{ARTICULATION_KINDS}")
        if self.rate_hz <= 0:
            raise ConfigError(f"device rate must be positive, got {self.rate_hz}")


@dataclass
class Event:
    kind: str
    t_start: float
    t_end: float
    device_id: str | None = None

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ConfigError(f"unknown event kind {self.kind!r}; expected one of {EVENT_KINDS}")
        if self.t_end <= self.t_start:
            raise ConfigError(f"event interval [{self.t_start}, {self.t_end}] is empty")


def default_devices() -> dict[str, DeviceSpec]:
    return {
        "phone": DeviceSpec(rate_hz=100.0, articulation="hand_vibration",
                            amplitude=1.0, frequency_hz=5.0, mount_yaw_deg=0.0),
        "watch": DeviceSpec(rate_hz=100.0, articulation="arm_swing",
                            amplitude=2.4, mount_yaw_deg=25.0, frame_drift_deg=3.0),
        "earbuds": DeviceSpec(rate_hz=25.0, articulation="head_bob",
                              amplitude=0.7, mount_yaw_deg=-10.0),
    }


@dataclass
class SimConfig:
    sequence_id: str = "seq"
    duration_s: float = 60.0
    walk_speed_mps: tuple[float, float] = (1.1, 0.2)      # OU mean, stationary std
    heading_process: tuple[float, float] = (0.3, 0.3)     # reversion rate 1/s, noise scale
    devices: dict[str, DeviceSpec] = field(default_factory=default_devices)
    noise_std: tuple[float, float] = (0.15, 0.01)         # accel m/s^2, gyro rad/s
    events: list[Event] = field(default_factory=list)
    seed: int = 0
    gt_rate_hz: float = 30.0
    common_rate_hz: float = 25.0
    gait_accel_per_speed: float = 1.6                     # m/s^2 of gait accel per m/s

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ConfigError(f"duration_s must be positive, got {self.duration_s}")
        for rate in (self.gt_rate_hz, self.common_rate_hz):
            if rate <= 0:
                raise ConfigError(f"rates must be positive, got {rate}")
        if not self.devices:
            raise ConfigError("at least one device is required")
        for ev in self.events:
            if not (0.0 <= ev.t_start and ev.t_end <= self.duration_s):
                raise ConfigError(
                    f"event interval [{ev.t_start}, {ev.t_end}] outside [0, {self.duration_s}]")
            if ev.kind == "remove_device":
                if ev.device_id is None or ev.device_id not in self.devices:
                    raise ConfigError(
                        f"remove_device event references unknown device {ev.device_id!r}")

    def to_dict(self) -> dict:
        return {
            "sequence_id": self.sequence_id,
            "duration_s": self.duration_s,
            "walk_speed_mps": list(self.walk_speed_mps),
            "heading_process": list(self.heading_process),
            "devices": {name: vars(spec).copy() for name, spec in self.devices.items()},
            "noise_std": list(self.noise_std),
            "events": [
                {k: v for k, v in vars(ev).items() if v is not None} for ev in self.events
            ],
            "seed": self.seed,
            "gt_rate_hz": self.gt_rate_hz,
            "common_rate_hz": self.common_rate_hz,
            "gait_accel_per_speed": self.gait_accel_per_speed,
        }

    @staticmethod
    def from_dict(data: Mapping) -> "SimConfig":
        kwargs = dict(data)
        if "devices" in kwargs:
            kwargs["devices"] = {
                name: DeviceSpec(**spec) for name, spec in kwargs["devices"].items()
            }
        if "events" in kwargs:
            kwargs["events"] = [Event(**ev) for ev in kwargs["events"]]
        for key in ("walk_speed_mps", "heading_process", "noise_std"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        try:
            return SimConfig(**kwargs)
        except TypeError as e:
            raise ConfigError(f"bad simulation config: {e}") from e


@dataclass
class AnalyticTruth:
    """Densely sampled reference velocity for oracle checks."""

    timestamps: np.ndarray  # master grid, seconds
    velocity: np.ndarray    # [M, 2] m/s
    positions: np.ndarray   # [M, 2] m, trapezoid integral of velocity

    def position(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        out = np.stack([
            np.interp(t, self.timestamps, self.positions[:, 0]),
            np.interp(t, self.timestamps, self.positions[:, 1]),
        ], axis=-1)
        return out

    def displacement(self, t0: float, t1: float) -> np.ndarray:
        p = self.position(np.asarray([t0, t1]))
        return p[1] - p[0]

    def mean_velocity(self, t0: float, t1: float) -> np.ndarray:
        return self.displacement(t0, t1) / (t1 - t0)


@dataclass
class SimOutput:
    bundle: SequenceBundle
    truth: AnalyticTruth
    config: SimConfig


def _ou_series(rng: np.random.Generator, n: int, dt: float, theta: float,
               stationary_std: float, mean: float = 0.0, stationary_start: bool = True
               ) -> np.ndarray:
    """Mean-reverting Gaussian process sampled on the master grid."""
    if stationary_std == 0.0 or theta <= 0.0:
        return np.full(n, mean)
    sigma = stationary_std * np.sqrt(2.0 * theta)
    a = 1.0 - theta * dt
    driven = sigma * np.sqrt(dt) * rng.standard_normal(n)
    x0 = rng.normal(0.0, stationary_std) if stationary_start else 0.0
    y, _ = lfilter([1.0], [1.0, -a], driven, zi=np.asarray([a * x0]))
    return mean + y


def _stand_still_envelope(t: np.ndarray, events: Sequence[Event]) -> np.ndarray:
    """1 while walking, exactly 0 inside stand_still intervals, cosine ramps outside."""
    env = np.ones_like(t)
    tau = EVENT_RAMP_S
    for ev in events:
        if ev.kind != "stand_still":
            continue
        ramp_down = (t >= ev.t_start - tau) & (t < ev.t_start)
        env[ramp_down] = np.minimum(
            env[ramp_down], 0.5 * (1 + np.cos(np.pi * (t[ramp_down] - ev.t_start + tau) / tau)))
        inside = (t >= ev.t_start) & (t <= ev.t_end)
        env[inside] = 0.0
        ramp_up = (t > ev.t_end) & (t <= ev.t_end + tau)
        env[ramp_up] = np.minimum(
            env[ramp_up], 0.5 * (1 - np.cos(np.pi * (t[ramp_up] - ev.t_end) / tau)))
    return env


def _rot_zyx(yaw: np.ndarray, pitch: np.ndarray, roll: np.ndarray) -> np.ndarray:
    """Device-to-world rotation matrices, [M, 3, 3]."""
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    m = np.empty((len(yaw), 3, 3))
    m[:, 0, 0] = cy * cp
    m[:, 0, 1] = cy * sp * sr - sy * cr
    m[:, 0, 2] = cy * sp * cr + sy * sr
    m[:, 1, 0] = sy * cp
    m[:, 1, 1] = sy * sp * sr + cy * cr
    m[:, 1, 2] = sy * sp * cr - cy * sr
    m[:, 2, 0] = -sp
    m[:, 2, 1] = cp * sr
    m[:, 2, 2] = cp * cr
    return m


def _uniform_times(duration_s: float, rate_hz: float) -> np.ndarray:
    count = int(np.floor(duration_s * rate_hz + 1e-9)) + 1
    return np.arange(count) / rate_hz


def simulate(config: SimConfig) -> SimOutput:
    """Generate one multi-device sequence plus its analytic reference."""
    rng = np.random.default_rng(config.seed)
    dt = 1.0 / MASTER_HZ
    t = _uniform_times(config.duration_s, MASTER_HZ)
    m = len(t)

    # walker state processes
    speed_mean, speed_std = config.walk_speed_mps
    speed = _ou_series(rng, m, dt, theta=0.4, stationary_std=speed_std, mean=speed_mean)
    np.clip(speed, 0.05, None, out=speed)
    theta_r, sigma_r = config.heading_process
    rate = _ou_series(rng, m, dt, theta=max(theta_r, 1e-6), stationary_std=sigma_r)
    heading0 = rng.uniform(0.0, 2 * np.pi)

    env = _stand_still_envelope(t, config.events)
    speed = speed * env
    rate = rate * env
    heading = heading0 + np.concatenate([[0.0], np.cumsum(rate[:-1] * dt)])

    cos_h, sin_h = np.cos(heading), np.sin(heading)
    velocity = np.stack([speed * cos_h, speed * sin_h], axis=1)
    positions = np.concatenate([
        np.zeros((1, 2)),
        np.cumsum(0.5 * (velocity[1:] + velocity[:-1]) * dt, axis=0),
    ])
    truth = AnalyticTruth(timestamps=t, velocity=velocity, positions=positions)

    # shared body acceleration: velocity change + speed-scaled gait oscillation
    gait_phase = rng.uniform(0.0, 2 * np.pi) + 2 * np.pi * np.concatenate(
        [[0.0], np.cumsum((STEP_FREQ_BASE + STEP_FREQ_PER_SPEED * speed[:-1]) * dt)])
    lat_phase = rng.uniform(0.0, 2 * np.pi)
    amp = config.gait_accel_per_speed * speed
    forward = amp * (np.sin(gait_phase) + 0.45 * np.sin(2 * gait_phase + 0.7))
    lateral = 0.5 * amp * np.sin(0.5 * gait_phase + lat_phase)
    vertical = 0.8 * amp * np.sin(gait_phase + 1.1)
    dvdt = np.gradient(velocity, dt, axis=0)
    world = np.empty((m, 3))
    world[:, 0] = dvdt[:, 0] + forward * cos_h - lateral * sin_h
    world[:, 1] = dvdt[:, 1] + forward * sin_h + lateral * cos_h
    world[:, 2] = vertical
    body_gyro = np.stack([np.zeros(m), np.zeros(m), rate], axis=1)

    speed_factor = np.clip(speed, 0.0, 1.5)
    accel_noise, gyro_noise = config.noise_std

    shake_events = [ev for ev in config.events if ev.kind == "shake_all"]
    removed = {ev.device_id: ev for ev in config.events if ev.kind == "remove_device"}

    streams = []
    for device_id, spec in config.devices.items():
        drift_std = np.deg2rad(spec.frame_drift_deg)
        d_roll = _ou_series(rng, m, dt, theta=0.15, stationary_std=drift_std)
        d_pitch = _ou_series(rng, m, dt, theta=0.15, stationary_std=drift_std)
        d_yaw = np.deg2rad(spec.mount_yaw_deg) + _ou_series(
            rng, m, dt, theta=0.15, stationary_std=drift_std)
        rot = _rot_zyx(d_yaw, d_pitch, d_roll)
        accel = np.einsum("mji,mj->mi", rot, world)
        gyro = np.einsum("mji,mj->mi", rot, body_gyro)
        gyro[:, 0] += np.gradient(d_roll, dt)
        gyro[:, 1] += np.gradient(d_pitch, dt)
        gyro[:, 2] += np.gradient(d_yaw, dt)

        art_accel, art_gyro = _articulation(rng, spec, t, gait_phase, speed_factor)
        accel = accel + art_accel
        gyro = gyro + art_gyro

        for ev in shake_events:
            gate = (t >= ev.t_start) & (t <= ev.t_end)
            shake_a = np.stack([
                _ou_series(rng, m, dt, theta=2 * np.pi * 6.0, stationary_std=5.0)
                for _ in range(3)], axis=1)
            shake_g = np.stack([
                _ou_series(rng, m, dt, theta=2 * np.pi * 6.0, stationary_std=1.5)
                for _ in range(3)], axis=1)
            accel = accel + shake_a * gate[:, None]
            gyro = gyro + shake_g * gate[:, None]

        t_dev = _uniform_times(config.duration_s, spec.rate_hz)
        samples = np.empty((len(t_dev), 6))
        for c in range(3):
            samples[:, c] = np.interp(t_dev, t, accel[:, c])
            samples[:, 3 + c] = np.interp(t_dev, t, gyro[:, c])
        if device_id in removed:
            ev = removed[device_id]
            gone = (t_dev >= ev.t_start) & (t_dev <= ev.t_end)
            samples[gone] = 0.0
        samples[:, :3] += rng.normal(0.0, accel_noise, (len(t_dev), 3))
        samples[:, 3:] += rng.normal(0.0, gyro_noise, (len(t_dev), 3))
        streams.append(SampleStream(
            device_id=device_id, rate_hz=spec.rate_hz, timestamps=t_dev, samples=samples))

    t_gt = _uniform_times(config.duration_s, config.gt_rate_hz)
    gt = GroundTruth(timestamps=t_gt, positions=truth.position(t_gt))
    bundle = SequenceBundle(
        sequence_id=config.sequence_id,
        streams=streams,
        ground_truth=gt,
        common_rate_hz=config.common_rate_hz,
    )
    return SimOutput(bundle=bundle, truth=truth, config=config)


def _articulation(rng: np.random.Generator, spec: DeviceSpec, t: np.ndarray,
                  gait_phase: np.ndarray, speed_factor: np.ndarray
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Per-device local motion. Consumes a fixed number of rng draws per kind."""
    m = len(t)
    accel = np.zeros((m, 3))
    gyro = np.zeros((m, 3))
    if spec.articulation == "none" or spec.amplitude == 0.0:
        return accel, gyro

    strength = spec.amplitude * rng.uniform(0.55, 1.45)
    phase = rng.uniform(0.0, 2 * np.pi)

    if spec.articulation == "arm_swing":
        # swing axis is random per sequence and shares the gait frequency band,
        # so a watch-only model cannot separate it from the walking signal
        alpha = rng.uniform(0.0, 2 * np.pi)
        axis = np.array([np.cos(alpha), np.sin(alpha), 0.35])
        axis /= np.linalg.norm(axis)
        if spec.frequency_hz > 0:
            osc_phase = phase + 2 * np.pi * spec.frequency_hz * t
        else:
            osc_phase = phase + gait_phase
        wave = np.sin(osc_phase) + 0.3 * np.sin(2 * osc_phase + 0.9)
        accel += axis[None, :] * (strength * speed_factor * wave)[:, None]
        rot_axis = np.array([-axis[1], axis[0], 0.2])
        rot_axis /= np.linalg.norm(rot_axis)
        gyro += rot_axis[None, :] * (0.45 * strength * speed_factor * np.cos(osc_phase))[:, None]
    elif spec.articulation == "head_bob":
        beta = rng.uniform(0.0, 2 * np.pi)
        axis = np.array([0.15 * np.cos(beta), 0.15 * np.sin(beta), 1.0])
        axis /= np.linalg.norm(axis)
        osc_phase = phase + (2 * np.pi * spec.frequency_hz * t
                             if spec.frequency_hz > 0 else gait_phase)
        accel += axis[None, :] * (strength * speed_factor * np.sin(osc_phase))[:, None]
        gyro[:, 1] += 0.25 * strength * speed_factor * np.cos(osc_phase)
    elif spec.articulation == "hand_vibration":
        corner = 2 * np.pi * (spec.frequency_hz if spec.frequency_hz > 0 else 5.0)
        dt = t[1] - t[0]
        burst = _burst_envelope(rng, t)
        for c in range(3):
            accel[:, c] = strength * burst * _ou_series(
                rng, m, dt, theta=corner, stationary_std=1.0)
        for c in range(3):
            gyro[:, c] = 0.35 * strength * burst * _ou_series(
                rng, m, dt, theta=corner, stationary_std=1.0)
    return accel, gyro


def _burst_envelope(rng: np.random.Generator, t: np.ndarray) -> np.ndarray:
    """Intermittent on/off envelope: pose-fiddling happens in spells."""
    env = np.zeros_like(t)
    cursor = 0.0
    active = bool(rng.integers(0, 2))
    end = t[-1]
    while cursor < end:
        length = rng.uniform(1.0, 4.0) if active else rng.uniform(2.0, 6.0)
        if active:
            env[(t >= cursor) & (t < cursor + length)] = 1.0
        cursor += length
        active = not active
    return env


# -- dataset emission ------------------------------------------------------------

def _format_csv(header: Sequence[str], columns: Sequence[np.ndarray]) -> str:
    rows = [",".join(header)]
    stacked = np.column_stack(columns)
    for row in stacked:
        rows.append(",".join(repr(float(v)) for v in row))
    return "\n".join(rows) + "\n"


def emit_sequence(output: SimOutput, out_dir) -> Path:
    """Write one simulated sequence in the ingestion format; returns the manifest path."""
    seq_dir = Path(out_dir) / output.config.sequence_id
    seq_dir.mkdir(parents=True, exist_ok=True)
    devices = []
    for stream in output.bundle.streams:
        fname = f"{stream.device_id}.csv"
        (seq_dir / fname).write_text(_format_csv(
            ["t", "ax", "ay", "az", "gx", "gy", "gz"],
            [stream.timestamps] + [stream.samples[:, c] for c in range(6)]))
        devices.append({"id": stream.device_id, "file": fname, "rate_hz": stream.rate_hz})
    gt = output.bundle.ground_truth
    (seq_dir / "gt.csv").write_text(_format_csv(
        ["t", "px", "py"], [gt.timestamps, gt.positions[:, 0], gt.positions[:, 1]]))
    manifest = {
        "sequence_id": output.config.sequence_id,
        "common_rate_hz": output.bundle.common_rate_hz,
        "devices": devices,
        "ground_truth": {"file": "gt.csv", "rate_hz": output.config.gt_rate_hz},
    }
    manifest_path = seq_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest_path


def emit_dataset(configs: Sequence[SimConfig], out_dir,
                 split: Mapping[str, Sequence[str]] | None = None) -> list[Path]:
    """Simulate and write every config plus a train/val/test split file."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [emit_sequence(simulate(cfg), out_dir) for cfg in configs]
    if split is None:
        split = {"train": [cfg.sequence_id for cfg in configs], "val": [], "test": []}
    split = {k: list(v) for k, v in split.items()}
    (out_dir / "split.json").write_text(json.dumps(split, indent=2) + "\n")
    return paths


# -- dataset recipes ---------------------------------------------------------------

def default_recipe() -> dict:
    return {
        "count": 12,
        "split": [8, 2, 2],
        "duration_s": 60.0,
        "seed": 1337,
        "common_rate_hz": 25.0,
        "walk_speed_mps": [1.1, 0.2],
        "heading_process": [0.3, 0.3],
        "noise_std": [0.15, 0.01],
        "gait_accel_per_speed": 1.6,
        "stand_still_sequences": 1,
        "shake_sequences": 1,
    }


def build_dataset_configs(recipe: Mapping) -> tuple[list[SimConfig], dict[str, list[str]]]:
    """Expand a dataset recipe into per-sequence configs and a split map.

    Scenario events go to training sequences only; validation and test stay
    plain articulated walking so they probe generalization, not event replay.
    """
    merged = default_recipe()
    merged.update(recipe)
    count = int(merged["count"])
    n_train, n_val, n_test = (int(x) for x in merged["split"])
    if n_train + n_val + n_test != count:
        raise ConfigError(
            f"split {merged['split']} does not sum to count {count}")
    master = np.random.default_rng(int(merged["seed"]))
    seeds = master.integers(0, 2**31 - 1, size=count)
    speed_offsets = master.uniform(-0.15, 0.15, size=count)
    duration = float(merged["duration_s"])

    configs = []
    for i in range(count):
        events = []
        if i < n_train:
            if i < int(merged.get("stand_still_sequences", 0)):
                events.append(Event("stand_still", 0.35 * duration, 0.5 * duration))
            elif i < int(merged.get("stand_still_sequences", 0)) + int(
                    merged.get("shake_sequences", 0)):
                events.append(Event("shake_all", 0.4 * duration, 0.55 * duration))
        mean, std = merged["walk_speed_mps"]
        configs.append(SimConfig(
            sequence_id=f"seq_{i:03d}",
            duration_s=duration,
            walk_speed_mps=(float(mean + speed_offsets[i]), float(std)),
            heading_process=tuple(merged["heading_process"]),
            devices=default_devices(),
            noise_std=tuple(merged["noise_std"]),
            events=events,
            seed=int(seeds[i]),
            common_rate_hz=float(merged["common_rate_hz"]),
            gait_accel_per_speed=float(merged["gait_accel_per_speed"]),
        ))
    ids = [c.sequence_id for c in configs]
    split = {
        "train": ids[:n_train],
        "val": ids[n_train:n_train + n_val],
        "test": ids[n_train + n_val:],
    }
    return configs, split
