"""Versioned binary persistence for trained models.

Layout (little-endian): magic "TFRM", version u16, config-JSON blob
(u32 length + UTF-8), dataset hash (32 bytes), normalization constants
(2 * n_outputs f64: lows then highs), tensor table (u32 count; per tensor
a u16-length name, u8 ndim, u32 dims, f32 data), and the training log
(u32 rows of epoch u32, train_mse f64, val_mse f64). Parameters are stored
as f32, so float32 models round-trip bit-exactly.
"""

from __future__ import annotations

import struct

import numpy as np

from .model import ModelConfig, RegressionModel

MODEL_MAGIC = b"TFRM"
MODEL_VERSION = 1


class ModelFormatError(Exception):
    """Base class for model file problems."""


class NotAModelError(ModelFormatError):
    pass


class ModelVersionError(ModelFormatError):
    pass


class ModelTruncatedError(ModelFormatError):
    pass


def save_model(model: RegressionModel, path) -> None:
    cfg_blob = model.config_json().encode()
    tensors = model.named_tensors()
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<H", MODEL_VERSION))
        fh.write(struct.pack("<I", len(cfg_blob)))
        fh.write(cfg_blob)
        fh.write(model.dataset_hash)
        fh.write(model.target_low.astype("<f8").tobytes())
        fh.write(model.target_high.astype("<f8").tobytes())
        fh.write(struct.pack("<I", len(tensors)))
        for p in tensors:
            name = p.name.encode()
            fh.write(struct.pack("<H", len(name)))
            fh.write(name)
            fh.write(struct.pack("<B", p.data.ndim))
            fh.write(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
        fh.write(struct.pack("<I", len(model.train_log)))
        for row in model.train_log:
            fh.write(struct.pack("<Idd", row["epoch"], row["train_mse"], row["val_mse"]))


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.blob):
            raise ModelTruncatedError(f"{self.path}: model file truncated")
        out = self.blob[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_model(path) -> RegressionModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != MODEL_MAGIC:
        raise NotAModelError(f"{path}: not a model file (bad magic)")
    r = _Reader(blob, path)
    r.take(4)
    (version,) = r.unpack("<H")
    if version != MODEL_VERSION:
        raise ModelVersionError(
            f"{path}: unsupported model version {version} (expected {MODEL_VERSION})"
        )
    (cfg_len,) = r.unpack("<I")
    import json

    cfg = ModelConfig.from_dict(json.loads(r.take(cfg_len).decode()))
    model = RegressionModel.build(cfg, seed=0)
    model.dataset_hash = r.take(32)
    n_out = cfg.n_outputs
    model.target_low = np.frombuffer(r.take(8 * n_out), dtype="<f8").copy()
    model.target_high = np.frombuffer(r.take(8 * n_out), dtype="<f8").copy()
    (n_tensors,) = r.unpack("<I")
    table = {p.name: p for p in model.named_tensors()}
    if n_tensors != len(table):
        raise ModelFormatError(
            f"{path}: file holds {n_tensors} tensors, architecture needs {len(table)}"
        )
    for _ in range(n_tensors):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        if name not in table:
            raise ModelFormatError(f"{path}: unexpected tensor {name!r}")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        p = table[name]
        if shape != p.data.shape:
            raise ModelFormatError(
                f"{path}: tensor {name!r} has shape {shape}, expected {p.data.shape}"
            )
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
        p.data[...] = data.astype(model.dtype)
    (n_log,) = r.unpack("<I")
    model.train_log = []
    for _ in range(n_log):
        epoch, tr, va = r.unpack("<Idd")
        model.train_log.append({"epoch": epoch, "train_mse": tr, "val_mse": va})
    return model
