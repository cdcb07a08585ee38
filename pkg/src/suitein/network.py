"""The fusion model: shallow cross-device map, per-device shared and private
feature extractors, arithmetic-mean aggregation, and one shared velocity
regressor applied to every feature head.

Architecture per window of J devices x 6 channels x L samples:

* shallow map: two dense layers applied per timestep across the concatenated
  6J channels, producing C channels per device, then split by device
* per-device extractor (one ``shared`` and one ``private`` set of weights per
  device): two temporal convolutions (kernel 1x3, same padding), each
  followed by temporal max pooling and ReLU, a time-distributed dense layer
  to the feature dimension, then a temporal global average
* aggregation: arithmetic mean of the per-device shared features
* regressor: one dense d -> hidden -> 2 network reused for the aggregated
  feature and every per-device shared feature (J+1 call sites, one weight set)

All forward functions accept a single window or a leading batch axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import CheckpointError, ConfigError, DegenerateInputError, ShapeError
from .tensor import Tensor

CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    j: int
    window_len: int = 50
    shallow_channels: int = 16
    conv_channels: tuple[int, int] = (32, 64)
    feature_dim: int = 64
    regressor_hidden: int = 32
    tau: float = 0.1
    devices: tuple[str, ...] | None = None

    def __post_init__(self):
        self.conv_channels = tuple(self.conv_channels)
        if self.devices is not None:
            self.devices = tuple(self.devices)
            if len(self.devices) != self.j:
                raise ConfigError(
                    f"{len(self.devices)} device names for j={self.j}")
        if self.j < 1:
            raise ConfigError(f"device count must be >= 1, got {self.j}")
        if self.window_len < 4:
            raise ConfigError(
                f"window length {self.window_len} too short for two temporal poolings (need >= 4)")
        for name, value in (("shallow_channels", self.shallow_channels),
                            ("feature_dim", self.feature_dim),
                            ("regressor_hidden", self.regressor_hidden)):
            if value < 1:
                raise ConfigError(f"{name} must be positive, got {value}")
        if len(self.conv_channels) != 2 or any(c < 1 for c in self.conv_channels):
            raise ConfigError(f"conv_channels must be two positive ints, got {self.conv_channels}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")

    @property
    def pooled_len(self) -> int:
        return self.window_len // 2 // 2

    def to_dict(self) -> dict:
        return {
            "j": self.j,
            "window_len": self.window_len,
            "shallow_channels": self.shallow_channels,
            "conv_channels": list(self.conv_channels),
            "feature_dim": self.feature_dim,
            "regressor_hidden": self.regressor_hidden,
            "tau": self.tau,
            "devices": list(self.devices) if self.devices else None,
        }

    @staticmethod
    def from_dict(data: dict) -> "ModelConfig":
        kwargs = dict(data)
        if kwargs.get("devices"):
            kwargs["devices"] = tuple(kwargs["devices"])
        try:
            return ModelConfig(**kwargs)
        except TypeError as e:
            raise ConfigError(f"bad model config: {e}") from e


class ParamStore:
    """Ordered, named trainable tensors."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, tensor: Tensor) -> None:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        self._params[name] = tensor

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise KeyError(f"no parameter named {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def namespaces(self) -> set[str]:
        return {name.split(".", 1)[0] for name in self._params}

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def total_size(self) -> int:
        return sum(t.data.size for t in self._params.values())


def param_spec(config: ModelConfig, include_private: bool = True) -> dict[str, tuple[int, ...]]:
    """Name -> shape map in canonical creation order."""
    c = config.shallow_channels
    c1, c2 = config.conv_channels
    d = config.feature_dim
    wide = c * config.j
    spec: dict[str, tuple[int, ...]] = {
        "mlp.w1": (6 * config.j, wide),
        "mlp.b1": (wide,),
        "mlp.w2": (wide, wide),
        "mlp.b2": (wide,),
    }
    roles = ("shared", "private") if include_private else ("shared",)
    for role in roles:
        for j in range(1, config.j + 1):
            prefix = f"{role}.j{j}"
            spec[f"{prefix}.conv1.w"] = (c1, 1, 1, 3)
            spec[f"{prefix}.conv1.b"] = (c1,)
            spec[f"{prefix}.conv2.w"] = (c2, c1, 1, 3)
            spec[f"{prefix}.conv2.b"] = (c2,)
            spec[f"{prefix}.dense.w"] = (c2 * c, d)
            spec[f"{prefix}.dense.b"] = (d,)
    spec["regressor.w1"] = (d, config.regressor_hidden)
    spec["regressor.b1"] = (config.regressor_hidden,)
    spec["regressor.w2"] = (config.regressor_hidden, 2)
    spec["regressor.b2"] = (2,)
    return spec


def _fan_in(shape: tuple[int, ...]) -> int:
    if len(shape) == 4:  # conv kernels [C_out, C_in, 1, K]
        return shape[1] * shape[3]
    return shape[0]


def init_params(config: ModelConfig, seed: int, include_private: bool = True,
                dtype=np.float32) -> ParamStore:
    """Fan-in-scaled uniform weights, zero biases, fixed draw order."""
    rng = np.random.default_rng(seed)
    params = ParamStore()
    for name, shape in param_spec(config, include_private).items():
        if name.rsplit(".", 1)[-1].startswith("b"):
            data = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(_fan_in(shape))
            data = rng.uniform(-bound, bound, size=shape)
        params.add(name, Tensor(data, requires_grad=True, dtype=dtype))
    return params


@dataclass
class FeatureBundle:
    """Per-window latent features: per-device shared and private, plus their mean."""

    shared: list[Tensor]
    private: list[Tensor]
    aggregated: Tensor


def forward_shallow(window: Tensor, params: ParamStore, config: ModelConfig) -> list[Tensor]:
    """Two dense layers per timestep over all 6J channels, then split by device."""
    batched = window.ndim == 4
    w = window if batched else T.reshape(window, (1,) + window.shape)
    b, j, ch, length = w.shape
    if j != config.j or ch != 6 or length != config.window_len:
        raise ShapeError(
            f"window shape {window.shape} does not match model (J={config.j}, 6, "
            f"L={config.window_len})")
    c = config.shallow_channels
    x = T.reshape(w, (b, j * 6, length))
    x = T.transpose(x, (0, 2, 1))
    x = T.reshape(x, (b * length, j * 6))
    h = T.relu(T.add(T.matmul(x, params["mlp.w1"]), params["mlp.b1"]))
    z = T.add(T.matmul(h, params["mlp.w2"]), params["mlp.b2"])
    z = T.reshape(z, (b, length, c * j))
    z = T.transpose(z, (0, 2, 1))
    blocks = [T.narrow(z, 1, k * c, c) for k in range(j)]
    if not batched:
        blocks = [T.reshape(blk, (c, length)) for blk in blocks]
    return blocks


def _extractor(z: Tensor, params: ParamStore, prefix: str, config: ModelConfig) -> Tensor:
    batched = z.ndim == 3
    x = z if batched else T.reshape(z, (1,) + z.shape)
    b, c, length = x.shape
    if c != config.shallow_channels:
        raise ShapeError(
            f"extractor input has {c} channels, expected {config.shallow_channels}")
    x = T.reshape(x, (b, 1, c, length))
    c1, c2 = config.conv_channels
    x = T.conv2d(x, params[f"{prefix}.conv1.w"])
    x = T.add(x, T.reshape(params[f"{prefix}.conv1.b"], (c1, 1, 1)))
    x = T.relu(T.maxpool_temporal(x, 2))
    x = T.conv2d(x, params[f"{prefix}.conv2.w"])
    x = T.add(x, T.reshape(params[f"{prefix}.conv2.b"], (c2, 1, 1)))
    x = T.relu(T.maxpool_temporal(x, 2))
    pooled = x.shape[-1]
    x = T.transpose(x, (0, 3, 1, 2))
    x = T.reshape(x, (b * pooled, c2 * c))
    x = T.add(T.matmul(x, params[f"{prefix}.dense.w"]), params[f"{prefix}.dense.b"])
    x = T.reshape(x, (b, pooled, config.feature_dim))
    out = T.reduce_mean(x, axis=1)
    return out if batched else T.reshape(out, (config.feature_dim,))


def forward_shared(z_j: Tensor, j: int, params: ParamStore, config: ModelConfig) -> Tensor:
    return _extractor(z_j, params, f"shared.j{j}", config)


def forward_private(z_j: Tensor, j: int, params: ParamStore, config: ModelConfig) -> Tensor:
    return _extractor(z_j, params, f"private.j{j}", config)


def aggregate(shared: Sequence[Tensor]) -> Tensor:
    """Elementwise arithmetic mean of the per-device features."""
    if not shared:
        raise DegenerateInputError("aggregate requires at least one feature tensor")
    acc = shared[0]
    for t in shared[1:]:
        acc = T.add(acc, t)
    return T.scale(acc, 1.0 / len(shared))


def regress_velocity(h: Tensor, params: ParamStore) -> Tensor:
    """The shared regressor D: dense d -> hidden -> 2."""
    batched = h.ndim == 2
    x = h if batched else T.reshape(h, (1,) + h.shape)
    x = T.relu(T.add(T.matmul(x, params["regressor.w1"]), params["regressor.b1"]))
    x = T.add(T.matmul(x, params["regressor.w2"]), params["regressor.b2"])
    return x if batched else T.reshape(x, (2,))


def forward(window: Tensor, params: ParamStore, config: ModelConfig,
            with_private: bool | None = None) -> tuple[FeatureBundle, list[Tensor]]:
    """Full forward pass: features plus J+1 velocity heads (aggregated first)."""
    if with_private is None:
        with_private = "private.j1.conv1.w" in params
    blocks = forward_shallow(window, params, config)
    shared = [forward_shared(blocks[k], k + 1, params, config) for k in range(config.j)]
    private = ([forward_private(blocks[k], k + 1, params, config) for k in range(config.j)]
               if with_private else [])
    aggregated = aggregate(shared)
    velocities = [regress_velocity(aggregated, params)]
    velocities += [regress_velocity(h, params) for h in shared]
    return FeatureBundle(shared=shared, private=private, aggregated=aggregated), velocities


# -- checkpoint format -------------------------------------------------------------

def checkpoint_payload(params: ParamStore, config: ModelConfig) -> dict:
    return {
        "format_version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "params": {
            name: {"shape": list(t.shape), "data": t.data.astype(np.float32).ravel().tolist()}
            for name, t in params.items()
        },
    }


def params_from_payload(payload: dict) -> tuple[ParamStore, ModelConfig]:
    """Rebuild and validate a ParamStore from checkpoint JSON content."""
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointError("checkpoint missing format_version")
    if payload["format_version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format_version {payload['format_version']!r}, "
            f"expected {CHECKPOINT_VERSION}")
    for key in ("config", "params"):
        if key not in payload:
            raise CheckpointError(f"checkpoint missing {key!r}")
    config = ModelConfig.from_dict(payload["config"])
    stored = payload["params"]
    include_private = any(name.startswith("private.") for name in stored)
    expected = param_spec(config, include_private=include_private)
    missing = [n for n in expected if n not in stored]
    extra = [n for n in stored if n not in expected]
    if missing or extra:
        raise CheckpointError(
            f"checkpoint parameter names do not match config: missing {missing}, "
            f"unexpected {extra}")
    params = ParamStore()
    for name, shape in expected.items():
        entry = stored[name]
        got = tuple(entry["shape"])
        if got != shape:
            raise CheckpointError(
                f"tensor {name}: checkpoint shape {list(got)} != expected {list(shape)}")
        data = np.asarray(entry["data"], dtype=np.float32)
        if data.size != int(np.prod(shape)):
            raise CheckpointError(
                f"tensor {name}: {data.size} values for shape {list(shape)}")
        params.add(name, Tensor(data.reshape(shape), requires_grad=True))
    return params, config


def check_window_compat(config: ModelConfig, device_count: int) -> None:
    """Reject a dataset whose device count disagrees with the checkpoint."""
    if device_count != config.j:
        raise CheckpointError(
            f"tensor mlp.w1 has shape [{6 * config.j}, "
            f"{config.shallow_channels * config.j}] (built for J={config.j}), but the "
            f"dataset provides J={device_count} devices")
