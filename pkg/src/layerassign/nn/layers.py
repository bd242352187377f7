"""Layer primitives with explicit forward/backward passes.

Activations flow through the network in channel-major ``(C, N, H, W)``
layout so that a 3x3 convolution is a single matrix product over an
unfolded input without any transposes.  Parametric layers expose
``params`` (name -> array, updated in place by optimizers) and ``grads``
(filled by ``backward``).
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Layer",
    "Conv3x3",
    "BatchNorm",
    "Linear",
    "relu_forward",
    "relu_backward",
    "maxpool_forward",
    "maxpool_backward",
    "BN_EPS",
]

BN_EPS = 1e-5
GEMM_BLOCK = 16


def _padded(n: int) -> int:
    # BLAS handles a ragged tail block with a different kernel, so the same
    # sample could round differently depending on its position in the batch.
    # Padding the sample axis to whole blocks keeps every row bit-identical.
    return -(-n // GEMM_BLOCK) * GEMM_BLOCK


class Layer:
    """Base class for parametric layers."""

    kind = "layer"

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._cache = None

    def astype(self, dtype) -> None:
        for store in (self.params, self.buffers):
            for k in store:
                store[k] = store[k].astype(dtype)
        self.grads = {}

    def clone(self) -> "Layer":
        new = object.__new__(type(self))
        new.__dict__.update(self.__dict__)
        new.params = {k: v.copy() for k, v in self.params.items()}
        new.buffers = {k: v.copy() for k, v in self.buffers.items()}
        new.grads = {}
        new._cache = None
        return new

    def macs(self, in_hw: tuple[int, int]) -> int:
        return 0


class Conv3x3(Layer):
    """3x3 convolution, padding 1, no bias (always followed by batch norm)."""

    kind = "conv"

    def __init__(self, c_in: int, c_out: int, stride: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.c_in, self.c_out, self.stride = c_in, c_out, stride
        std = np.sqrt(2.0 / (c_in * 9))
        self.params["weight"] = (rng.standard_normal((c_out, c_in, 3, 3)) * std).astype(dtype)

    def out_hw(self, in_hw: tuple[int, int]) -> tuple[int, int]:
        h, w = in_hw
        s = self.stride
        return (h - 1) // s + 1, (w - 1) // s + 1

    def macs(self, in_hw):
        ho, wo = self.out_hw(in_hw)
        return ho * wo * self.c_out * self.c_in * 9

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        c, n, h, w = x.shape
        if c != self.c_in:
            raise ValueError(f"conv expects {self.c_in} input channels, got {c}")
        s = self.stride
        ho, wo = self.out_hw((h, w))
        xp = np.zeros((c, n, h + 2, w + 2), dtype=x.dtype)
        xp[:, :, 1:-1, 1:-1] = x
        cols_len = n * ho * wo
        padded = np.zeros((c * 9, _padded(cols_len)), dtype=x.dtype)
        cols = padded[:, :cols_len]
        view = cols.reshape(c, 3, 3, n, ho, wo)
        for kh in range(3):
            for kw in range(3):
                view[:, kh, kw] = xp[:, :, kh:kh + s * ho:s, kw:kw + s * wo:s]
        wmat = self.params["weight"].reshape(self.c_out, c * 9)
        out = (wmat @ padded)[:, :cols_len]
        if train:
            self._cache = (cols, x.shape)
        return out.reshape(self.c_out, n, ho, wo)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        cols, (c, n, h, w) = self._cache
        s = self.stride
        _, _, ho, wo = dout.shape
        d2 = dout.reshape(self.c_out, -1)
        wmat = self.params["weight"].reshape(self.c_out, c * 9)
        self.grads["weight"] = (d2 @ cols.T).reshape(self.params["weight"].shape)
        dcols = (wmat.T @ d2).reshape(c, 3, 3, n, ho, wo)
        dxp = np.zeros((c, n, h + 2, w + 2), dtype=dout.dtype)
        for kh in range(3):
            for kw in range(3):
                dxp[:, :, kh:kh + s * ho:s, kw:kw + s * wo:s] += dcols[:, kh, kw]
        self._cache = None
        return dxp[:, :, 1:-1, 1:-1]


class BatchNorm(Layer):
    """Per-channel batch normalization over the ``(N, H, W)`` axes.

    Running statistics use biased (population) variance.  ``momentum`` is the
    weight of the new batch: 1.0 replaces the running stats outright.

    While ``calibrating`` is set, training-mode forwards normalize with batch
    statistics as usual but, instead of updating the running statistics,
    accumulate exact per-channel sums of the inputs (see ``begin_calibration``).
    """

    kind = "bn"

    def __init__(self, channels: int, momentum: float = 0.1, dtype=np.float32):
        super().__init__()
        self.channels = channels
        self.momentum = momentum
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)
        self._calib = None

    def begin_calibration(self) -> None:
        # count, per-channel sum, per-channel sum of squares (float64)
        self._calib = [0, np.zeros(self.channels), np.zeros(self.channels)]

    def end_calibration(self) -> None:
        count, s1, s2 = self._calib
        self._calib = None
        if count == 0:
            raise ValueError("batch norm saw no calibration data")
        mean = s1 / count
        var = np.maximum(s2 / count - mean * mean, 0.0)
        dtype = self.buffers["running_mean"].dtype
        self.buffers["running_mean"] = mean.astype(dtype)
        self.buffers["running_var"] = var.astype(dtype)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        c = x.shape[0]
        x2 = x.reshape(c, -1)
        gamma = self.params["gamma"][:, None]
        beta = self.params["beta"][:, None]
        if not train:
            mean = self.buffers["running_mean"][:, None]
            var = self.buffers["running_var"][:, None]
            y = (x2 - mean) / np.sqrt(var + BN_EPS) * gamma + beta
            return y.reshape(x.shape)
        mean = x2.mean(axis=1, keepdims=True)
        xc = x2 - mean
        var = (xc * xc).mean(axis=1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = xc * inv_std
        if self._calib is not None:
            x64 = x2.astype(np.float64)
            self._calib[0] += x2.shape[1]
            self._calib[1] += x64.sum(axis=1)
            self._calib[2] += (x64 * x64).sum(axis=1)
        else:
            m = self.momentum
            rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
            rm *= 1.0 - m
            rm += m * mean[:, 0]
            rv *= 1.0 - m
            rv += m * var[:, 0]
        self._cache = (xhat, inv_std)
        return (xhat * gamma + beta).reshape(x.shape)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        xhat, inv_std = self._cache
        c = dout.shape[0]
        d2 = dout.reshape(c, -1)
        self.grads["gamma"] = (d2 * xhat).sum(axis=1)
        self.grads["beta"] = d2.sum(axis=1)
        dxhat = d2 * self.params["gamma"][:, None]
        dx = inv_std * (dxhat - dxhat.mean(axis=1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
        self._cache = None
        return dx.reshape(dout.shape)


class Linear(Layer):
    """Fully connected layer on ``(N, features)`` inputs."""

    kind = "fc"

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.d_in, self.d_out = d_in, d_out
        std = np.sqrt(2.0 / d_in)
        self.params["weight"] = (rng.standard_normal((d_out, d_in)) * std).astype(dtype)
        self.params["bias"] = np.zeros(d_out, dtype=dtype)

    def macs(self, in_hw=None):
        return self.d_in * self.d_out

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if train:
            self._cache = x
        n = x.shape[0]
        xp = np.zeros((_padded(n), x.shape[1]), dtype=x.dtype)
        xp[:n] = x
        return (xp @ self.params["weight"].T)[:n] + self.params["bias"]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        x = self._cache
        self.grads["weight"] = dout.T @ x
        self.grads["bias"] = dout.sum(axis=0)
        self._cache = None
        return dout @ self.params["weight"]


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(dout: np.ndarray, out: np.ndarray) -> np.ndarray:
    return dout * (out > 0)


def maxpool_forward(x: np.ndarray):
    """2x2/stride-2 max pooling on ``(C, N, H, W)``; returns output and argmax mask."""
    c, n, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"max-pool needs even spatial size, got {h}x{w}")
    win = x.reshape(c, n, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(c, n, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool_backward(dout: np.ndarray, idx: np.ndarray) -> np.ndarray:
    c, n, ho, wo = dout.shape
    win = np.zeros((c, n, ho, wo, 4), dtype=dout.dtype)
    np.put_along_axis(win, idx[..., None], dout[..., None], axis=-1)
    return win.reshape(c, n, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(c, n, ho * 2, wo * 2)
