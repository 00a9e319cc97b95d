"""Reverse-mode layers for the convolutional regressor.

Each layer implements forward(x, training) and backward(dy) -> dx, and
accumulates parameter gradients into Parameter.grad. Convolutions run as
real-FFT spectral products (same zero padding, stride 1), which is both
exact (up to float rounding) and much faster than im2col GEMM for the
large kernels used here; gradients are computed as spectral correlations
of the cached spectra, so no adjoint-of-FFT bookkeeping is needed.
"""

from __future__ import annotations

import numpy as np
import scipy.fft as sfft


class Parameter:
    __slots__ = ("name", "data", "grad")

    def __init__(self, name: str, data: np.ndarray):
        self.name = name
        self.data = data
        self.grad = np.zeros_like(data)

    def zero_grad(self):
        self.grad[...] = 0.0


class Layer:
    """Base layer: stateless unless it declares parameters or buffers."""

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def params(self) -> list[Parameter]:
        return []

    # buffers are saved/loaded but not trained (batch-norm running stats)
    @property
    def buffers(self) -> list[Parameter]:
        return []


def _complex_dtype(dtype) -> np.dtype:
    return np.dtype(np.complex64) if np.dtype(dtype) == np.float32 else np.dtype(np.complex128)


def _crop_wrapped(a: np.ndarray, offset: int, out_h: int, out_w: int) -> np.ndarray:
    """out[i, j] = a[(i + offset) % Lf, (j + offset) % Lf] on the last two axes."""
    lf_h, lf_w = a.shape[-2], a.shape[-1]
    ih = (np.arange(out_h) + offset) % lf_h
    iw = (np.arange(out_w) + offset) % lf_w
    return a[..., ih[:, None], iw[None, :]]


class Conv2d(Layer):
    """2D cross-correlation, stride 1, 'same' zero padding, odd kernel."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, dtype=np.float32, name: str = "conv",
                 bias: bool = True):
        if kernel_size % 2 != 1:
            raise ValueError("kernel size must be odd for symmetric same padding")
        self.cin = in_channels
        self.cout = out_channels
        self.k = kernel_size
        self.dtype = np.dtype(dtype)
        bound = 1.0 / np.sqrt(in_channels * kernel_size * kernel_size)
        w = rng.uniform(-bound, bound, size=(out_channels, in_channels, kernel_size, kernel_size))
        self.weight = Parameter(f"{name}.weight", w.astype(self.dtype))
        # a bias in front of batch norm is cancelled by the mean subtraction,
        # so block convs are built bias-free
        self.bias = Parameter(f"{name}.bias", np.zeros(out_channels, dtype=self.dtype)) if bias else None
        self._cache = None

    @property
    def params(self) -> list[Parameter]:
        return [self.weight] if self.bias is None else [self.weight, self.bias]

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        n, c, h, w = x.shape
        if c != self.cin:
            raise ValueError(f"expected {self.cin} input channels, got {c}")
        if h != w:
            raise ValueError("conv expects square feature maps")
        k, pad = self.k, self.k // 2
        lf = sfft.next_fast_len(h + k - 1, real=True)
        s_half = lf * (lf // 2 + 1)
        cplx = _complex_dtype(self.dtype)

        xh = sfft.rfft2(x, s=(lf, lf)).astype(cplx, copy=False)
        wh = sfft.rfft2(self.weight.data, s=(lf, lf)).astype(cplx, copy=False)
        xs = xh.reshape(n, c, s_half).transpose(2, 0, 1)                 # (S, N, C)
        ws_conj = np.conj(wh.reshape(self.cout, c, s_half)).transpose(2, 1, 0)  # (S, C, F)
        ys = xs @ ws_conj                                                # (S, N, F)
        yh = ys.transpose(1, 2, 0).reshape(n, self.cout, lf, lf // 2 + 1)
        yfull = sfft.irfft2(yh, s=(lf, lf))
        y = np.ascontiguousarray(_crop_wrapped(yfull, -pad, h, w)).astype(self.dtype, copy=False)
        if self.bias is not None:
            y += self.bias.data[None, :, None, None]
        self._cache = (xs, ws_conj, n, c, h, w, lf, pad)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xs, ws_conj, n, c, h, w, lf, pad = self._cache
        k = self.k
        cplx = _complex_dtype(self.dtype)
        s_half = lf * (lf // 2 + 1)

        if self.bias is not None:
            self.bias.grad += dy.sum(axis=(0, 2, 3))

        dh = sfft.rfft2(dy, s=(lf, lf)).astype(cplx, copy=False)
        ds = dh.reshape(n, self.cout, s_half).transpose(2, 0, 1)         # (S, N, F)

        # dx = convolution of dy with the kernel: spectra product without conj
        dxs = ds @ np.conj(ws_conj).transpose(0, 2, 1)                   # (S, N, C)
        dxh = dxs.transpose(1, 2, 0).reshape(n, c, lf, lf // 2 + 1)
        dxfull = sfft.irfft2(dxh, s=(lf, lf))
        dx = np.ascontiguousarray(_crop_wrapped(dxfull, pad, h, w)).astype(self.dtype, copy=False)

        # dW[f, c, j] = sum_n corr(x[n, c], dy[n, f]) at lag j - pad
        dws = xs.transpose(0, 2, 1) @ np.conj(ds)                        # (S, C, F)
        dwh = dws.transpose(2, 1, 0).reshape(self.cout, c, lf, lf // 2 + 1)
        dwfull = sfft.irfft2(dwh, s=(lf, lf))
        dw = _crop_wrapped(dwfull, -pad, k, k)
        self.weight.grad += dw.astype(self.dtype, copy=False)
        self._cache = None
        return dx


class BatchNorm2d(Layer):
    """Per-channel batch normalization with running statistics for inference."""

    def __init__(self, channels: int, dtype=np.float32, momentum: float = 0.1,
                 eps: float = 1e-5, name: str = "bn"):
        self.channels = channels
        self.dtype = np.dtype(dtype)
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(f"{name}.gamma", np.ones(channels, dtype=self.dtype))
        self.beta = Parameter(f"{name}.beta", np.zeros(channels, dtype=self.dtype))
        self.running_mean = Parameter(f"{name}.running_mean", np.zeros(channels, dtype=self.dtype))
        self.running_var = Parameter(f"{name}.running_var", np.ones(channels, dtype=self.dtype))
        self._cache = None

    @property
    def params(self) -> list[Parameter]:
        return [self.gamma, self.beta]

    @property
    def buffers(self) -> list[Parameter]:
        return [self.running_mean, self.running_var]

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        if training:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = self.momentum
            self.running_mean.data[...] = (1 - m) * self.running_mean.data + m * mean
            self.running_var.data[...] = (1 - m) * self.running_var.data + m * var
        else:
            mean = self.running_mean.data
            var = self.running_var.data
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        y = self.gamma.data[None, :, None, None] * xhat + self.beta.data[None, :, None, None]
        if training:
            self._cache = (xhat, inv_std, x.shape)
        else:
            self._cache = None
        return y.astype(self.dtype, copy=False)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("BatchNorm2d.backward requires a training-mode forward")
        xhat, inv_std, shape = self._cache
        n_count = shape[0] * shape[2] * shape[3]
        dgamma = (dy * xhat).sum(axis=(0, 2, 3))
        dbeta = dy.sum(axis=(0, 2, 3))
        self.gamma.grad += dgamma
        self.beta.grad += dbeta
        g = (self.gamma.data * inv_std)[None, :, None, None]
        dx = g * (dy
                  - dbeta[None, :, None, None] / n_count
                  - xhat * dgamma[None, :, None, None] / n_count)
        self._cache = None
        return dx.astype(self.dtype, copy=False)


class ReLU(Layer):
    def __init__(self):
        self._mask = None

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, 0)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dx = np.where(self._mask, dy, 0)
        self._mask = None
        return dx


class MaxPool2d(Layer):
    """2x2 max pooling, stride 2. Gradient routes to the first maximal
    element in window scan order (row-major), a deterministic subgradient."""

    def __init__(self):
        self._cache = None

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ValueError("MaxPool2d requires even spatial dimensions")
        windows = (
            x.reshape(n, c, h // 2, 2, w // 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h // 2, w // 2, 4)
        )
        idx = np.argmax(windows, axis=-1)  # first max in scan order
        y = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
        self._cache = (idx, x.shape)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        idx, (n, c, h, w) = self._cache
        dwin = np.zeros((n, c, h // 2, w // 2, 4), dtype=dy.dtype)
        np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
        dx = (
            dwin.reshape(n, c, h // 2, w // 2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h, w)
        )
        self._cache = None
        return dx


class Flatten(Layer):
    def __init__(self):
        self._shape = None

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dx = dy.reshape(self._shape)
        self._shape = None
        return dx


class Linear(Layer):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 dtype=np.float32, name: str = "fc"):
        self.dtype = np.dtype(dtype)
        bound = 1.0 / np.sqrt(in_features)
        w = rng.uniform(-bound, bound, size=(in_features, out_features))
        self.weight = Parameter(f"{name}.weight", w.astype(self.dtype))
        self.bias = Parameter(f"{name}.bias", np.zeros(out_features, dtype=self.dtype))
        self._x = None

    @property
    def params(self) -> list[Parameter]:
        return [self.weight, self.bias]

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        self._x = x
        return x @ self.weight.data + self.bias.data

    def backward(self, dy: np.ndarray) -> np.ndarray:
        self.weight.grad += self._x.T @ dy
        self.bias.grad += dy.sum(axis=0)
        dx = dy @ self.weight.data.T
        self._x = None
        return dx
