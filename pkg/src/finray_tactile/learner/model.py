"""The convolutional regressor: four conv blocks and a two-layer head.

Each block is conv (same padding, stride 1) -> batch norm -> ReLU -> 2x2
max pool, so a 128x128 input leaves an 8x8 feature map after four blocks.
Targets are min-max normalized per axis; the public ``forward`` returns
denormalized physical-unit predictions (depth mm, location-from-tip mm).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .layers import BatchNorm2d, Conv2d, Flatten, Layer, Linear, MaxPool2d, Parameter, ReLU

DEFAULT_TARGET_LOW = (1.0, 10.0)
DEFAULT_TARGET_HIGH = (5.5, 50.0)


@dataclass(frozen=True)
class ModelConfig:
    input_resolution: int = 128
    block_filters: tuple[int, ...] = (32, 32, 32, 32)
    block_kernels: tuple[int, ...] = (11, 9, 7, 5)
    fc_units: tuple[int, ...] = (512, 512)
    n_outputs: int = 2
    target_low: tuple[float, ...] = DEFAULT_TARGET_LOW
    target_high: tuple[float, ...] = DEFAULT_TARGET_HIGH
    dtype: str = "float32"

    def __post_init__(self):
        if len(self.block_filters) != len(self.block_kernels):
            raise ValueError("block_filters and block_kernels must have equal length")
        if self.n_outputs != len(self.target_low) or self.n_outputs != len(self.target_high):
            raise ValueError("normalization constants must match n_outputs")
        res = self.input_resolution
        for _ in self.block_kernels:
            if res % 2:
                raise ValueError(
                    f"input resolution {self.input_resolution} does not pool to integral "
                    f"dimensions over {len(self.block_kernels)} blocks"
                )
            res //= 2
        if any(k % 2 == 0 for k in self.block_kernels):
            raise ValueError("kernel sizes must be odd (same padding)")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def feature_map_shape(self) -> tuple[int, int, int]:
        """(height, width, channels) entering the flatten stage."""
        res = self.input_resolution // (2 ** len(self.block_kernels))
        return (res, res, self.block_filters[-1])

    @property
    def flat_features(self) -> int:
        h, w, c = self.feature_map_shape
        return h * w * c

    def to_dict(self) -> dict:
        return {
            "input_resolution": self.input_resolution,
            "block_filters": list(self.block_filters),
            "block_kernels": list(self.block_kernels),
            "fc_units": list(self.fc_units),
            "n_outputs": self.n_outputs,
            "target_low": list(self.target_low),
            "target_high": list(self.target_high),
            "dtype": self.dtype,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            input_resolution=d["input_resolution"],
            block_filters=tuple(d["block_filters"]),
            block_kernels=tuple(d["block_kernels"]),
            fc_units=tuple(d["fc_units"]),
            n_outputs=d["n_outputs"],
            target_low=tuple(d["target_low"]),
            target_high=tuple(d["target_high"]),
            dtype=d["dtype"],
        )


class RegressionModel:
    """Layer stack plus target normalization; carries its training log and
    the hash of the dataset it was trained on once ``train`` has run."""

    def __init__(self, cfg: ModelConfig, layers: list[Layer]):
        self.cfg = cfg
        self.layers = layers
        self.dtype = np.dtype(cfg.dtype)
        self.target_low = np.asarray(cfg.target_low, dtype=np.float64)
        self.target_high = np.asarray(cfg.target_high, dtype=np.float64)
        self.train_log: list[dict] = []
        self.dataset_hash: bytes = bytes(32)

    # construction ----------------------------------------------------------

    @classmethod
    def build(cls, cfg: ModelConfig, seed: int) -> "RegressionModel":
        """Deterministic initialization: uniform fan-in scaling from one seed."""
        rng = np.random.default_rng(seed)
        dtype = np.dtype(cfg.dtype)
        layers: list[Layer] = []
        cin = 1
        for i, (filters, kernel) in enumerate(zip(cfg.block_filters, cfg.block_kernels)):
            layers.append(
                Conv2d(cin, filters, kernel, rng, dtype, name=f"block{i + 1}.conv", bias=False)
            )
            layers.append(BatchNorm2d(filters, dtype, name=f"block{i + 1}.bn"))
            layers.append(ReLU())
            layers.append(MaxPool2d())
            cin = filters
        layers.append(Flatten())
        features = cfg.flat_features
        for j, units in enumerate(cfg.fc_units):
            layers.append(Linear(features, units, rng, dtype, name=f"fc{j + 1}"))
            layers.append(ReLU())
            features = units
        layers.append(Linear(features, cfg.n_outputs, rng, dtype, name="head"))
        return cls(cfg, layers)

    # parameters ------------------------------------------------------------

    def parameters(self) -> list[Parameter]:
        out = []
        for layer in self.layers:
            out.extend(layer.params)
        return out

    def named_tensors(self) -> list[Parameter]:
        """Trainable parameters plus persistent buffers, in layer order."""
        out = []
        for layer in self.layers:
            out.extend(layer.params)
            out.extend(layer.buffers)
        return out

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    # target scaling ---------------------------------------------------------

    def normalize_targets(self, targets_mm: np.ndarray) -> np.ndarray:
        t = np.asarray(targets_mm, dtype=np.float64)
        return (t - self.target_low) / (self.target_high - self.target_low)

    def denormalize(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        return z * (self.target_high - self.target_low) + self.target_low

    # passes ------------------------------------------------------------------

    def _as_input(self, frames: np.ndarray) -> np.ndarray:
        x = np.asarray(frames)
        if x.ndim == 2:
            x = x[None]
        if x.ndim == 3:
            x = x[:, None]
        if x.ndim != 4 or x.shape[1] != 1:
            raise ValueError("frames must be (N, res, res) or (N, 1, res, res)")
        res = self.cfg.input_resolution
        if x.shape[2] != res or x.shape[3] != res:
            raise ValueError(
                f"frame resolution {x.shape[2]}x{x.shape[3]} does not match the "
                f"model's configured {res}x{res}"
            )
        return x.astype(self.dtype, copy=False)

    def forward_normalized(self, frames: np.ndarray, training: bool) -> np.ndarray:
        x = self._as_input(frames)
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, dz: np.ndarray) -> np.ndarray:
        d = dz.astype(self.dtype, copy=False)
        for layer in reversed(self.layers):
            d = layer.backward(d)
        return d

    def forward(self, frames: np.ndarray, batch_size: int = 64) -> np.ndarray:
        """Inference in physical units: (N, 2) of (depth mm, location-from-tip mm).

        Uses frozen batch-norm statistics, so predictions are independent of
        batch composition.
        """
        x = self._as_input(frames)
        outs = []
        for i in range(0, len(x), batch_size):
            outs.append(self.forward_normalized(x[i : i + batch_size], training=False))
        return self.denormalize(np.concatenate(outs, axis=0))

    def config_json(self) -> str:
        return json.dumps(self.cfg.to_dict(), sort_keys=True)


def build_model(cfg: ModelConfig, seed: int) -> RegressionModel:
    return RegressionModel.build(cfg, seed)


def reduced_config(dtype: str = "float64") -> ModelConfig:
    """Small double-precision configuration for finite-difference checking."""
    return ModelConfig(
        input_resolution=16,
        block_filters=(4, 4),
        block_kernels=(11, 9),
        fc_units=(8,),
        dtype=dtype,
    )
