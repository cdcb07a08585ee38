"""Trajectory reconstruction from window velocities, and ATE/RTE scoring.

Conventions:

* integration holds each window's mean velocity constant over its span,
  starting from the ground-truth position at the first window start; where
  windows overlap, the covering windows' velocities are averaged
* ATE is the RMSE of pointwise 2D position error over all predicted
  timestamps, with the ground truth linearly interpolated onto them and no
  similarity alignment (the trajectories share a known start point)
* RTE re-anchors the prediction to the ground truth at the start of each
  consecutive, non-overlapping interval and averages the endpoint error
  norms over all full intervals
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import network as N
from . import tensor as T
from .dataio import SequenceBundle, WindowBatch, prepare_windows
from .errors import ContractError, EvaluationError
from .network import ModelConfig, ParamStore
from .tensor import Tensor


@dataclass
class Trajectory:
    timestamps: np.ndarray  # [N] seconds, strictly increasing
    positions: np.ndarray   # [N, 2] meters

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.shape != (len(self.timestamps), 2):
            raise EvaluationError(
                f"positions shape {self.positions.shape} does not match "
                f"{len(self.timestamps)} timestamps")
        if len(self.timestamps) >= 2 and np.any(np.diff(self.timestamps) <= 0):
            raise EvaluationError("trajectory timestamps must be strictly increasing")
        if not np.all(np.isfinite(self.positions)):
            raise EvaluationError("trajectory positions contain non-finite values")

    def interp(self, times: np.ndarray) -> np.ndarray:
        times = np.asarray(times, dtype=np.float64)
        out = np.empty((len(times), 2))
        out[:, 0] = np.interp(times, self.timestamps, self.positions[:, 0])
        out[:, 1] = np.interp(times, self.timestamps, self.positions[:, 1])
        return out

    @property
    def duration_s(self) -> float:
        return float(self.timestamps[-1] - self.timestamps[0])


def integrate(velocities: np.ndarray, window_times: np.ndarray, y0) -> Trajectory:
    """Rectangle-rule integration of per-window mean velocities.

    ``window_times`` is [N, 2] of (start, end) seconds per window. Over
    regions covered by several windows the covering velocities are averaged;
    uncovered gaps (stride > window length) advance time at zero velocity.
    """
    velocities = np.asarray(velocities, dtype=np.float64)
    window_times = np.asarray(window_times, dtype=np.float64)
    if velocities.ndim != 2 or velocities.shape[1] != 2:
        raise EvaluationError(f"velocities must be [N, 2], got {velocities.shape}")
    if window_times.shape != (len(velocities), 2):
        raise EvaluationError(
            f"window_times shape {window_times.shape} does not match {len(velocities)} windows")
    starts, ends = window_times[:, 0], window_times[:, 1]
    if np.any(ends <= starts):
        raise ContractError("every window must end after it starts")
    if np.any(np.diff(starts) <= 0):
        raise ContractError("windows must be ordered by strictly increasing start time")

    bounds = np.unique(np.concatenate([starts, ends]))
    positions = np.empty((len(bounds), 2))
    positions[0] = np.asarray(y0, dtype=np.float64)
    for k in range(len(bounds) - 1):
        lo, hi = bounds[k], bounds[k + 1]
        covering = (starts <= lo + 1e-12) & (ends >= hi - 1e-12)
        v = velocities[covering].mean(axis=0) if covering.any() else np.zeros(2)
        positions[k + 1] = positions[k] + v * (hi - lo)
    return Trajectory(timestamps=bounds, positions=positions)


def _require_overlap(pred: Trajectory, gt: Trajectory) -> None:
    lo = max(pred.timestamps[0], gt.timestamps[0])
    hi = min(pred.timestamps[-1], gt.timestamps[-1])
    if hi <= lo:
        raise EvaluationError(
            f"trajectories do not overlap in time: pred spans "
            f"[{pred.timestamps[0]:.3f}, {pred.timestamps[-1]:.3f}]s, "
            f"gt spans [{gt.timestamps[0]:.3f}, {gt.timestamps[-1]:.3f}]s")


def ate(pred: Trajectory, gt: Trajectory) -> float:
    """RMSE of 2D position error over all predicted timestamps."""
    _require_overlap(pred, gt)
    err = pred.positions - gt.interp(pred.timestamps)
    return float(np.sqrt(np.mean(np.sum(err * err, axis=1))))


def rte(pred: Trajectory, gt: Trajectory, interval_s: float = 60.0) -> float:
    """Mean re-anchored endpoint error over consecutive fixed intervals."""
    if interval_s <= 0:
        raise EvaluationError(f"interval_s must be positive, got {interval_s}")
    _require_overlap(pred, gt)
    t0 = pred.timestamps[0]
    t_end = pred.timestamps[-1]
    n_intervals = int(np.floor((t_end - t0) / interval_s + 1e-9))
    if n_intervals < 1:
        raise EvaluationError(
            f"trajectory spans {t_end - t0:.3f}s, shorter than one interval of "
            f"{interval_s}s; use a smaller --rte-interval")
    anchors = t0 + interval_s * np.arange(n_intervals + 1)
    pred_pts = pred.interp(anchors)
    gt_pts = gt.interp(anchors)
    rel = (pred_pts[1:] - pred_pts[:-1]) - (gt_pts[1:] - gt_pts[:-1])
    return float(np.mean(np.linalg.norm(rel, axis=1)))


@dataclass
class EvalReport:
    sequence_id: str
    ate_m: float
    rte_m: float
    interval_s: float
    n_windows: int
    trajectory: Trajectory

    def to_json_dict(self) -> dict:
        return {
            "sequence_id": self.sequence_id,
            "ate_m": self.ate_m,
            "rte_m": self.rte_m,
            "interval_s": self.interval_s,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2) + "\n"


def predict_window_velocities(batch: WindowBatch, params: ParamStore,
                              config: ModelConfig, head: int = 0,
                              chunk: int = 256) -> np.ndarray:
    """Aggregated-head (or device-head) velocity for every window."""
    out = np.empty((batch.count, 2))
    with T.no_grad():
        for lo in range(0, batch.count, chunk):
            hi = min(lo + chunk, batch.count)
            x = Tensor(batch.windows[lo:hi])
            _, velocities = N.forward(x, params, config, with_private=False)
            out[lo:hi] = velocities[head].data.astype(np.float64)
    return out


def evaluate_sequence(params: ParamStore, config: ModelConfig, bundle: SequenceBundle,
                      stride: int | None = None, rte_interval_s: float = 10.0,
                      oracle: bool = False, head: int = 0) -> EvalReport:
    """Window a sequence, predict velocities, integrate, and score.

    ``oracle=True`` substitutes the ground-truth window targets for the
    network predictions: an exactness check of the windowing/integration
    path and an upper bound for any trained model.
    """
    N.check_window_compat(config, bundle.j)
    stride = config.window_len if stride is None else stride
    batch = prepare_windows(bundle, config.window_len, stride)
    if oracle:
        velocities = batch.targets
    else:
        velocities = predict_window_velocities(batch, params, config, head=head)
    spans = np.stack([batch.window_start_times,
                      batch.window_start_times + batch.span_s], axis=1)
    y0 = bundle.ground_truth.interp(np.asarray([spans[0, 0]]))[0]
    pred = integrate(velocities, spans, y0)
    gt = Trajectory(bundle.ground_truth.timestamps, bundle.ground_truth.positions)
    return EvalReport(
        sequence_id=bundle.sequence_id,
        ate_m=ate(pred, gt),
        rte_m=rte(pred, gt, rte_interval_s),
        interval_s=rte_interval_s,
        n_windows=batch.count,
        trajectory=pred,
    )


def aggregate_csv(reports: Sequence[EvalReport]) -> str:
    lines = ["sequence_id,ate_m,rte_m"]
    for r in reports:
        lines.append(f"{r.sequence_id},{r.ate_m!r},{r.rte_m!r}")
    return "\n".join(lines) + "\n"


def trajectory_csv(traj: Trajectory) -> str:
    lines = ["t,px,py"]
    for t, (x, y) in zip(traj.timestamps, traj.positions):
        lines.append(f"{t!r},{x!r},{y!r}")
    return "\n".join(lines) + "\n"


def trajectory_from_csv(text: str, source: str = "trajectory") -> Trajectory:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or [c.strip() for c in lines[0].split(",")] != ["t", "px", "py"]:
        raise EvaluationError(f"{source}: expected header 't,px,py'")
    rows = []
    for ln, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 3:
            raise EvaluationError(f"{source}:{ln}: expected 3 fields")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as e:
            raise EvaluationError(f"{source}:{ln}: malformed number ({e})") from e
    data = np.asarray(rows)
    return Trajectory(timestamps=data[:, 0], positions=data[:, 1:3])
