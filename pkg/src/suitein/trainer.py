"""Mini-batch training with adaptive-moment updates, deterministic given a
seed, plus checkpoint save/load.

Ablation switches:

* ``use_contrastive=False`` drops the contrastive and orthogonality terms
  and never instantiates the private extractors (checkpoints then carry no
  ``private.*`` tensors)
* ``use_aggregation=False`` trains on a single designated device: the
  caller restricts the window batch to that device (J=1), so the aggregated
  head coincides with the device head
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import losses as L
from . import network as N
from . import tensor as T
from .dataio import WindowBatch
from .errors import CheckpointError, ConfigError, NaNLossError
from .losses import LossWeights
from .network import ModelConfig, ParamStore
from .tensor import Tensor


@dataclass
class Ablation:
    use_aggregation: bool = True
    use_contrastive: bool = True
    single_device: str | None = None  # device id for use_aggregation=False


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    shuffle: bool = True
    ablation: Ablation = field(default_factory=Ablation)
    window_len: int = 50
    stride: int = 25
    lr_decay_every: int = 0   # optional step decay; 0 disables
    lr_decay_factor: float = 0.5
    orth_clamped: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.window_len < 4 or self.stride < 1:
            raise ConfigError("window_len must be >= 4 and stride >= 1")

    @staticmethod
    def from_dict(data: dict) -> "TrainConfig":
        kwargs = dict(data)
        if "loss_weights" in kwargs:
            kwargs["loss_weights"] = LossWeights(**kwargs["loss_weights"])
        if "ablation" in kwargs:
            kwargs["ablation"] = Ablation(**kwargs["ablation"])
        kwargs.pop("model", None)  # model widths are handled by the caller
        try:
            return TrainConfig(**kwargs)
        except TypeError as e:
            raise ConfigError(f"bad train config: {e}") from e


@dataclass
class EpochStats:
    epoch: int
    total: float
    vel: float
    con: float
    orth: float
    val_mse: float
    seconds: float


@dataclass
class TrainLog:
    epochs: list[EpochStats] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["epoch,total,vel,con,orth,val_mse,seconds"]
        for e in self.epochs:
            lines.append(f"{e.epoch},{e.total!r},{e.vel!r},{e.con!r},{e.orth!r},"
                         f"{e.val_mse!r},{e.seconds!r}")
        return "\n".join(lines) + "\n"


class Adam:
    """Adaptive-moment estimation over a ParamStore, float32 state."""

    def __init__(self, params: ParamStore, learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self, learning_rate: float | None = None) -> None:
        lr = self.learning_rate if learning_rate is None else learning_rate
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name] = b1 * self.m[name] + (1 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1 - b2) * (g * g)
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _batch_tensors(batch: WindowBatch, idx: np.ndarray) -> tuple[Tensor, Tensor]:
    x = Tensor(batch.windows[idx])
    y = Tensor(batch.targets[idx].astype(np.float32))
    return x, y


def validation_mse(batch: WindowBatch, params: ParamStore, config: ModelConfig,
                   chunk: int = 256) -> float:
    """Velocity MSE of the aggregated head (the head used for trajectories)."""
    total = 0.0
    n = batch.count
    with T.no_grad():
        for lo in range(0, n, chunk):
            idx = np.arange(lo, min(lo + chunk, n))
            x, y = _batch_tensors(batch, idx)
            _, velocities = N.forward(x, params, config, with_private=False)
            err = T.sub(velocities[0], y)
            total += T.reduce_mean(T.mul(err, err)).item() * len(idx)
    return total / n


def train(dataset: WindowBatch, params: ParamStore, model_config: ModelConfig,
          config: TrainConfig, val_dataset: WindowBatch | None = None
          ) -> tuple[ParamStore, TrainLog]:
    """Optimize ``params`` in place on the window batch; returns it with a log."""
    if dataset.count < 1:
        raise ConfigError("training dataset is empty")
    if dataset.windows.shape[1] != model_config.j:
        raise ConfigError(
            f"dataset provides J={dataset.windows.shape[1]} devices but the model "
            f"expects J={model_config.j}")
    use_contrastive = config.ablation.use_contrastive
    if use_contrastive and "private.j1.conv1.w" not in params:
        raise ConfigError("contrastive training requires private extractor parameters")

    rng = np.random.default_rng(config.seed)
    optimizer = Adam(params, config.learning_rate, config.beta1, config.beta2, config.eps)
    weights = config.loss_weights
    log = TrainLog()

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(dataset.count) if config.shuffle else np.arange(dataset.count)
        lr = config.learning_rate
        if config.lr_decay_every > 0:
            lr *= config.lr_decay_factor ** ((epoch - 1) // config.lr_decay_every)
        sums = {"total": 0.0, "vel": 0.0, "con": 0.0, "orth": 0.0}
        for bi, lo in enumerate(range(0, dataset.count, config.batch_size)):
            idx = order[lo:lo + config.batch_size]
            x, y = _batch_tensors(dataset, idx)
            bundle, velocities = N.forward(x, params, model_config,
                                           with_private=use_contrastive)
            l_vel = L.velocity_loss(velocities, y)
            if use_contrastive:
                l_con = L.contrastive_loss(bundle, weights.tau)
                l_orth = L.orthogonality_loss(bundle, clamped=config.orth_clamped)
                total = L.weighted_total(l_vel, l_con, l_orth, weights)
            else:
                l_con = l_orth = None
                total = L.weighted_total(l_vel, None, None, weights)
            total_val = total.item()
            if not np.isfinite(total_val):
                raise NaNLossError(epoch, bi, "training loss became non-finite")
            params.zero_grad()
            T.backward(total)
            optimizer.step(lr)
            w = len(idx)
            sums["total"] += total_val * w
            sums["vel"] += l_vel.item() * w
            sums["con"] += (l_con.item() if l_con is not None else 0.0) * w
            sums["orth"] += (l_orth.item() if l_orth is not None else 0.0) * w
        val = (validation_mse(val_dataset, params, model_config)
               if val_dataset is not None and val_dataset.count else float("nan"))
        log.epochs.append(EpochStats(
            epoch=epoch,
            total=sums["total"] / dataset.count,
            vel=sums["vel"] / dataset.count,
            con=sums["con"] / dataset.count,
            orth=sums["orth"] / dataset.count,
            val_mse=val,
            seconds=time.perf_counter() - t0,
        ))
    return params, log


def resolve_ablation_devices(device_ids: Sequence[str], ablation: Ablation) -> tuple[str, ...]:
    """Device subset implied by the ablation flags (J=1 when aggregation is off)."""
    if ablation.use_aggregation:
        return tuple(device_ids)
    chosen = ablation.single_device or device_ids[0]
    if chosen not in device_ids:
        raise ConfigError(
            f"designated single device {chosen!r} not among {tuple(device_ids)}")
    return (chosen,)


# -- checkpointing ---------------------------------------------------------------

def save_checkpoint(params: ParamStore, model_config: ModelConfig, path) -> None:
    """Atomic JSON write: the file either appears complete or not at all."""
    path = Path(path)
    payload = N.checkpoint_payload(params, model_config)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload))
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[ParamStore, ModelConfig]:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except OSError as e:
        raise CheckpointError(f"{path}: cannot read checkpoint ({e})") from e
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: checkpoint is not valid JSON ({e.msg})") from e
    return N.params_from_payload(payload)
