"""Ingestion, resampling and windowing of per-device IMU streams.

File formats:

* device CSV: header ``t,ax,ay,az,gx,gy,gz``; seconds, m/s^2, rad/s
* ground-truth CSV: header ``t,px,py``; seconds, meters
* manifest JSON::

    { "sequence_id": str, "common_rate_hz": num,
      "devices": [{"id": str, "file": str, "rate_hz": num}, ...],
      "ground_truth": {"file": str, "rate_hz": num} }

All operations are pure; returned arrays are float64 except the bulk window
tensor, which is float32.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DegenerateInputError, IngestionError

DEVICE_HEADER = ["t", "ax", "ay", "az", "gx", "gy", "gz"]
GT_HEADER = ["t", "px", "py"]


@dataclass
class SampleStream:
    """One device's 6-axis IMU readings at a nominally uniform rate."""

    device_id: str
    rate_hz: float
    timestamps: np.ndarray  # [N] seconds, strictly increasing
    samples: np.ndarray     # [N, 6] = ax, ay, az, gx, gy, gz

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.validate()

    def validate(self, source: str = "") -> None:
        where = f"{source}: " if source else ""
        if self.rate_hz <= 0:
            raise IngestionError(f"{where}rate_hz must be positive, got {self.rate_hz}")
        if self.samples.shape != (len(self.timestamps), 6):
            raise IngestionError(
                f"{where}samples shape {self.samples.shape} does not match "
                f"{len(self.timestamps)} timestamps x 6 channels")
        if len(self.timestamps) >= 2:
            dt = np.diff(self.timestamps)
            bad = np.nonzero(dt <= 0)[0]
            if bad.size:
                # +2: one header line, rows are 1-based
                raise IngestionError(
                    f"{where}non-increasing timestamp at line {bad[0] + 2}")
            nominal = 1.0 / self.rate_hz
            worst = np.max(np.abs(dt - nominal))
            if worst >= 0.2 * nominal:
                raise IngestionError(
                    f"{where}sample gap deviates from 1/{self.rate_hz} Hz by "
                    f"{worst:.6f}s (limit {0.2 * nominal:.6f}s)")

    @property
    def duration_s(self) -> float:
        return float(self.timestamps[-1] - self.timestamps[0])


@dataclass
class GroundTruth:
    """Timestamped 2D reference positions in meters."""

    timestamps: np.ndarray  # [N] seconds
    positions: np.ndarray   # [N, 2] meters

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.shape != (len(self.timestamps), 2):
            raise IngestionError(
                f"ground truth positions shape {self.positions.shape} does not "
                f"match {len(self.timestamps)} timestamps x 2")
        if len(self.timestamps) >= 2 and np.any(np.diff(self.timestamps) <= 0):
            bad = int(np.nonzero(np.diff(self.timestamps) <= 0)[0][0])
            raise IngestionError(f"ground truth non-increasing timestamp at line {bad + 2}")

    def interp(self, times: np.ndarray) -> np.ndarray:
        """Linear interpolation of positions at the given times."""
        times = np.asarray(times, dtype=np.float64)
        out = np.empty((len(times), 2))
        out[:, 0] = np.interp(times, self.timestamps, self.positions[:, 0])
        out[:, 1] = np.interp(times, self.timestamps, self.positions[:, 1])
        return out


@dataclass
class SequenceBundle:
    """All streams of one recording session plus its ground truth."""

    sequence_id: str
    streams: list[SampleStream]
    ground_truth: GroundTruth
    common_rate_hz: float = 25.0

    def __post_init__(self):
        if not self.streams:
            raise IngestionError(f"sequence {self.sequence_id} has no device streams")
        ids = [s.device_id for s in self.streams]
        if len(set(ids)) != len(ids):
            raise IngestionError(f"duplicate device ids in sequence {self.sequence_id}: {ids}")
        lo, hi = self.overlap_span()
        if hi <= lo:
            raise IngestionError(
                f"sequence {self.sequence_id}: streams and ground truth do not overlap in time")

    @property
    def j(self) -> int:
        return len(self.streams)

    @property
    def device_ids(self) -> tuple[str, ...]:
        return tuple(s.device_id for s in self.streams)

    def overlap_span(self) -> tuple[float, float]:
        lo = max(s.timestamps[0] for s in self.streams)
        hi = min(s.timestamps[-1] for s in self.streams)
        return float(lo), float(hi)

    def subset_devices(self, device_ids: Sequence[str]) -> "SequenceBundle":
        """A bundle restricted to the given devices, in the given order."""
        by_id = {s.device_id: s for s in self.streams}
        missing = [d for d in device_ids if d not in by_id]
        if missing:
            raise ConfigError(
                f"sequence {self.sequence_id} has no device(s) {missing}; "
                f"available: {list(by_id)}")
        return SequenceBundle(
            sequence_id=self.sequence_id,
            streams=[by_id[d] for d in device_ids],
            ground_truth=self.ground_truth,
            common_rate_hz=self.common_rate_hz,
        )


@dataclass
class WindowBatch:
    """Fixed-length multi-device windows and their mean-velocity targets.

    A window starting at grid index ``k`` covers ``window_len`` sample
    periods; its target is the ground-truth displacement over that span
    divided by the span, so stride == window_len targets tile the sequence
    exactly.
    """

    windows: np.ndarray            # [B, J, 6, L] float32
    targets: np.ndarray            # [B, 2] float64, mean velocity m/s
    window_start_times: np.ndarray  # [B] seconds
    window_len: int
    rate_hz: float
    device_ids: tuple[str, ...]
    sequence_id: str = ""
    dropped: int = 0

    def __post_init__(self):
        if not np.all(np.isfinite(self.targets)):
            raise IngestionError("window targets contain non-finite values")
        if self.windows.ndim != 4 or self.windows.shape[3] != self.window_len:
            raise IngestionError(
                f"windows shape {self.windows.shape} inconsistent with L={self.window_len}")

    @property
    def count(self) -> int:
        return self.windows.shape[0]

    @property
    def span_s(self) -> float:
        return self.window_len / self.rate_hz

    def subset_devices(self, device_ids: Sequence[str]) -> "WindowBatch":
        index = {d: i for i, d in enumerate(self.device_ids)}
        missing = [d for d in device_ids if d not in index]
        if missing:
            raise ConfigError(f"batch has no device(s) {missing}; available: {self.device_ids}")
        sel = [index[d] for d in device_ids]
        return WindowBatch(
            windows=np.ascontiguousarray(self.windows[:, sel]),
            targets=self.targets,
            window_start_times=self.window_start_times,
            window_len=self.window_len,
            rate_hz=self.rate_hz,
            device_ids=tuple(device_ids),
            sequence_id=self.sequence_id,
            dropped=self.dropped,
        )

    @staticmethod
    def concatenate(batches: Sequence["WindowBatch"]) -> "WindowBatch":
        if not batches:
            raise DegenerateInputError("cannot concatenate zero window batches")
        first = batches[0]
        for b in batches[1:]:
            if b.device_ids != first.device_ids or b.window_len != first.window_len:
                raise ConfigError("window batches differ in devices or window length")
        return WindowBatch(
            windows=np.concatenate([b.windows for b in batches], axis=0),
            targets=np.concatenate([b.targets for b in batches], axis=0),
            window_start_times=np.concatenate([b.window_start_times for b in batches]),
            window_len=first.window_len,
            rate_hz=first.rate_hz,
            device_ids=first.device_ids,
            sequence_id="+".join(b.sequence_id for b in batches if b.sequence_id),
            dropped=sum(b.dropped for b in batches),
        )


# -- CSV / manifest parsing ----------------------------------------------------

def _read_csv(path: Path, header: list[str]) -> np.ndarray:
    """Parse a small numeric CSV, reporting file and line on any defect."""
    try:
        text = path.read_text()
    except OSError as e:
        raise IngestionError(f"{path}: cannot read file ({e})") from e
    lines = text.splitlines()
    if not lines:
        raise IngestionError(f"{path}:1: empty file")
    got = [c.strip() for c in lines[0].split(",")]
    if got != header:
        raise IngestionError(f"{path}:1: expected header {','.join(header)!r}, got {lines[0]!r}")
    rows = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(header):
            raise IngestionError(f"{path}:{ln}: expected {len(header)} fields, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as e:
            raise IngestionError(f"{path}:{ln}: malformed number ({e})") from e
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        bad = int(np.nonzero(~np.isfinite(data).all(axis=1))[0][0])
        raise IngestionError(f"{path}:{bad + 2}: non-finite value")
    return data


def load_sequence(manifest_path) -> SequenceBundle:
    """Load one sequence from its manifest, validating every stream."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except OSError as e:
        raise IngestionError(f"{manifest_path}: cannot read manifest ({e})") from e
    except json.JSONDecodeError as e:
        raise IngestionError(f"{manifest_path}:{e.lineno}: manifest is not valid JSON: {e.msg}") from e
    for key in ("sequence_id", "common_rate_hz", "devices", "ground_truth"):
        if key not in manifest:
            raise IngestionError(f"{manifest_path}: manifest missing key {key!r}")
    if not manifest["devices"]:
        raise IngestionError(f"{manifest_path}: manifest lists no devices")

    base = manifest_path.parent
    streams = []
    for spec in manifest["devices"]:
        csv_path = base / spec["file"]
        data = _read_csv(csv_path, DEVICE_HEADER)
        dt = np.diff(data[:, 0])
        bad = np.nonzero(dt <= 0)[0]
        if bad.size:
            raise IngestionError(f"{csv_path}:{bad[0] + 2}: non-increasing timestamp")
        streams.append(SampleStream(
            device_id=spec["id"],
            rate_hz=float(spec["rate_hz"]),
            timestamps=data[:, 0],
            samples=data[:, 1:7],
        ))
    gt_spec = manifest["ground_truth"]
    gt_data = _read_csv(base / gt_spec["file"], GT_HEADER)
    ground_truth = GroundTruth(timestamps=gt_data[:, 0], positions=gt_data[:, 1:3])
    return SequenceBundle(
        sequence_id=str(manifest["sequence_id"]),
        streams=streams,
        ground_truth=ground_truth,
        common_rate_hz=float(manifest["common_rate_hz"]),
    )


# -- resampling and windowing ----------------------------------------------------

def resample(stream: SampleStream, target_hz: float) -> SampleStream:
    """Linearly interpolate a stream onto a uniform grid at ``target_hz``.

    The grid starts at the stream's first timestamp and keeps every point
    inside the recorded span, so resampling at the native rate of a uniform
    stream is the identity.
    """
    if target_hz <= 0:
        raise ConfigError(f"target rate must be positive, got {target_hz}")
    if target_hz > stream.rate_hz * (1 + 1e-9):
        raise ConfigError(
            f"resample only downsamples: target {target_hz} Hz > native {stream.rate_hz} Hz")
    if len(stream.timestamps) < 2:
        raise DegenerateInputError(
            f"stream {stream.device_id} has {len(stream.timestamps)} samples, need >= 2")
    t0 = stream.timestamps[0]
    span = stream.timestamps[-1] - t0
    count = int(np.floor(span * target_hz + 1e-9)) + 1
    grid = t0 + np.arange(count) / target_hz
    out = np.empty((count, 6))
    for c in range(6):
        out[:, c] = np.interp(grid, stream.timestamps, stream.samples[:, c])
    return SampleStream(
        device_id=stream.device_id,
        rate_hz=target_hz,
        timestamps=grid,
        samples=out,
    )


def resample_bundle(bundle: SequenceBundle) -> SequenceBundle:
    """All streams resampled to the bundle's common rate."""
    return SequenceBundle(
        sequence_id=bundle.sequence_id,
        streams=[resample(s, bundle.common_rate_hz) for s in bundle.streams],
        ground_truth=bundle.ground_truth,
        common_rate_hz=bundle.common_rate_hz,
    )


def make_windows(bundle: SequenceBundle, window_len: int, stride: int) -> WindowBatch:
    """Slice aligned multi-device windows and their mean-velocity targets.

    Streams must already be at the common rate. Devices are aligned onto a
    shared grid over their overlapping span; a window whose span leaves the
    ground-truth record is dropped and counted in ``dropped``.
    """
    if window_len < 1 or stride < 1:
        raise ConfigError(f"window_len and stride must be >= 1, got {window_len}, {stride}")
    fc = bundle.common_rate_hz
    for s in bundle.streams:
        if abs(s.rate_hz - fc) > 1e-6 * fc:
            raise ConfigError(
                f"stream {s.device_id} is at {s.rate_hz} Hz, expected common rate {fc}; "
                "resample first")
    t_lo, t_hi = bundle.overlap_span()
    n = int(np.floor((t_hi - t_lo) * fc + 1e-9)) + 1
    if n < window_len:
        raise DegenerateInputError(
            f"sequence {bundle.sequence_id}: {n} aligned samples < window length {window_len}")
    grid = t_lo + np.arange(n) / fc

    stacked = np.empty((bundle.j, 6, n))
    for d, s in enumerate(bundle.streams):
        for c in range(6):
            stacked[d, c] = np.interp(grid, s.timestamps, s.samples[:, c])

    gt = bundle.ground_truth
    span = window_len / fc
    eps = 1e-9
    starts = []
    dropped = 0
    for k in range(0, n - window_len + 1, stride):
        t_start = grid[k]
        t_end = t_start + span
        if t_start < gt.timestamps[0] - eps or t_end > gt.timestamps[-1] + eps:
            dropped += 1
            continue
        starts.append(k)
    if not starts:
        raise DegenerateInputError(
            f"sequence {bundle.sequence_id}: ground truth covers none of the windows")

    idx = np.asarray(starts)
    windows = np.empty((len(starts), bundle.j, 6, window_len), dtype=np.float32)
    for i, k in enumerate(starts):
        windows[i] = stacked[:, :, k:k + window_len]
    start_times = grid[idx]
    ends = gt.interp(start_times + span)
    begins = gt.interp(start_times)
    targets = (ends - begins) / span
    return WindowBatch(
        windows=windows,
        targets=targets,
        window_start_times=start_times,
        window_len=window_len,
        rate_hz=fc,
        device_ids=bundle.device_ids,
        sequence_id=bundle.sequence_id,
        dropped=dropped,
    )


def prepare_windows(bundle: SequenceBundle, window_len: int, stride: int) -> WindowBatch:
    """Resample to the common rate, then window."""
    return make_windows(resample_bundle(bundle), window_len, stride)
