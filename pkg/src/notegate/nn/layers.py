"""Layers with hand-written backward passes.

Activations are ``(N, H, W, C)`` arrays (H = frequency, W = time). Every
layer keeps what its backward pass needs from the latest forward call, so a
network instance must not be shared between concurrent training loops.

Modes passed to :meth:`Layer.forward`:

``"train"``
    batch statistics (running averages updated) and dropout.
``"eval"``
    running statistics, no dropout.
``"check"``
    batch statistics without updating running averages, no dropout; used
    by the gradient checker.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

MODES = ("train", "eval", "check")


class Layer:
    name = ""
    param_names: tuple[str, ...] = ()
    buffer_names: tuple[str, ...] = ()
    kind = "none"

    def init_params(self, rng, dtype) -> dict:
        return {}

    def init_buffers(self, dtype) -> dict:
        return {}

    def output_shape(self, shape):
        return shape

    def forward(self, x, params, buffers, mode, rng):
        raise NotImplementedError

    def backward(self, dout, params):
        """Return ``(dx, {param_name: grad})``."""
        raise NotImplementedError


def same_padding(size: int, stride: int, kernel: int = 3) -> tuple[int, int, int]:
    """``(out, pad_before, pad_after)`` for "same" convolution: out = ceil(size/stride),
    extra padding at the trailing edge."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return out, total // 2, total - total // 2


class Conv2D(Layer):
    kind = "conv"

    def __init__(self, name, in_channels, out_channels, stride=(1, 1), bias=True, kernel=3):
        self.name = name
        self.cin, self.cout = in_channels, out_channels
        self.stride = tuple(stride)
        self.k = kernel
        self.bias = bias
        self.param_names = (f"{name}.W", f"{name}.b") if bias else (f"{name}.W",)

    def init_params(self, rng, dtype):
        fan_in = self.k * self.k * self.cin
        lim = math.sqrt(6.0 / fan_in)
        p = {f"{self.name}.W": rng.uniform(-lim, lim, (self.k, self.k, self.cin, self.cout)).astype(dtype)}
        if self.bias:
            p[f"{self.name}.b"] = np.zeros(self.cout, dtype=dtype)
        return p

    def output_shape(self, shape):
        H, W, C = shape
        if C != self.cin:
            raise ValueError(f"{self.name}: expected {self.cin} input channels, got {C}")
        return (same_padding(H, self.stride[0], self.k)[0],
                same_padding(W, self.stride[1], self.k)[0], self.cout)

    def forward(self, x, params, buffers, mode, rng):
        N, H, W, C = x.shape
        if C != self.cin:
            raise ValueError(f"{self.name}: expected {self.cin} input channels, got {C}")
        sh, sw = self.stride
        k = self.k
        Ho, pt, pb = same_padding(H, sh, k)
        Wo, pl, pr = same_padding(W, sw, k)
        xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
        win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::sh, ::sw][:, :Ho, :Wo]
        # (N, Ho, Wo, C, kh, kw) -> rows ordered (kh, kw, C) to match W's layout
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(N * Ho * Wo, k * k * C)
        Wm = params[f"{self.name}.W"].reshape(k * k * C, self.cout)
        out = cols @ Wm
        if self.bias:
            out += params[f"{self.name}.b"]
        self._cache = (x.shape, xp.shape, cols, (Ho, Wo, pt, pl))
        return out.reshape(N, Ho, Wo, self.cout)

    def backward(self, dout, params):
        xshape, xpshape, cols, (Ho, Wo, pt, pl) = self._cache
        N, H, W, C = xshape
        k = self.k
        sh, sw = self.stride
        d2 = dout.reshape(-1, self.cout)
        Wm = params[f"{self.name}.W"].reshape(k * k * C, self.cout)
        grads = {f"{self.name}.W": (cols.T @ d2).reshape(k, k, C, self.cout)}
        if self.bias:
            grads[f"{self.name}.b"] = d2.sum(axis=0)
        dcols = (d2 @ Wm.T).reshape(N, Ho, Wo, k, k, C)
        dxp = np.zeros(xpshape, dtype=dout.dtype)
        for a in range(k):
            for b in range(k):
                dxp[:, a:a + sh * (Ho - 1) + 1:sh, b:b + sw * (Wo - 1) + 1:sw, :] += dcols[:, :, :, a, b, :]
        return dxp[:, pt:pt + H, pl:pl + W, :], grads


class BatchNorm(Layer):
    """Per-channel normalization over every axis but the last."""

    kind = "batchnorm"

    def __init__(self, name, channels, momentum=0.9, eps=1e-5):
        self.name = name
        self.c = channels
        self.momentum = momentum
        self.eps = eps
        self.param_names = (f"{name}.gamma", f"{name}.beta")
        self.buffer_names = (f"{name}.running_mean", f"{name}.running_var")

    def init_params(self, rng, dtype):
        return {f"{self.name}.gamma": np.ones(self.c, dtype=dtype),
                f"{self.name}.beta": np.zeros(self.c, dtype=dtype)}

    def init_buffers(self, dtype):
        return {f"{self.name}.running_mean": np.zeros(self.c, dtype=dtype),
                f"{self.name}.running_var": np.ones(self.c, dtype=dtype)}

    def forward(self, x, params, buffers, mode, rng):
        gamma = params[f"{self.name}.gamma"]
        beta = params[f"{self.name}.beta"]
        axes = tuple(range(x.ndim - 1))
        if mode == "eval":
            mu = buffers[f"{self.name}.running_mean"]
            var = buffers[f"{self.name}.running_var"]
        else:
            mu = x.mean(axis=axes)
            var = x.var(axis=axes)
            if mode == "train":
                m = self.momentum
                rm, rv = f"{self.name}.running_mean", f"{self.name}.running_var"
                buffers[rm] = (m * buffers[rm] + (1 - m) * mu).astype(buffers[rm].dtype)
                buffers[rv] = (m * buffers[rv] + (1 - m) * var).astype(buffers[rv].dtype)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv_std
        self._cache = (xhat, inv_std, mode == "eval")
        return xhat * gamma + beta

    def backward(self, dout, params):
        xhat, inv_std, frozen = self._cache
        gamma = params[f"{self.name}.gamma"]
        axes = tuple(range(dout.ndim - 1))
        grads = {f"{self.name}.gamma": (dout * xhat).sum(axis=axes),
                 f"{self.name}.beta": dout.sum(axis=axes)}
        dxhat = dout * gamma
        if frozen:
            return dxhat * inv_std, grads
        M = dout.size // dout.shape[-1]
        dx = inv_std / M * (M * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
        return dx, grads


class Dropout(Layer):
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)``."""

    kind = "dropout"

    def __init__(self, name, rate):
        if not 0 <= rate < 1:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.name = name
        self.rate = rate

    def forward(self, x, params, buffers, mode, rng):
        if mode != "train" or self.rate == 0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError(f"{self.name}: train mode needs an explicit random generator")
        keep = (rng.random(x.shape) >= self.rate).astype(x.dtype) / (1 - self.rate)
        self._mask = keep
        return x * keep

    def backward(self, dout, params):
        return (dout if self._mask is None else dout * self._mask), {}


class LeakyReLU(Layer):
    kind = "activation"

    def __init__(self, name, slope=0.01):
        self.name = name
        self.slope = slope

    def forward(self, x, params, buffers, mode, rng):
        self._pos = x > 0
        return np.where(self._pos, x, x * self.slope)

    def backward(self, dout, params):
        return np.where(self._pos, dout, dout * self.slope), {}


class ReLU(LeakyReLU):
    def __init__(self, name):
        super().__init__(name, 0.0)


class Flatten(Layer):
    kind = "reshape"

    def __init__(self, name):
        self.name = name

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, params, buffers, mode, rng):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout, params):
        return dout.reshape(self._shape), {}


class Dense(Layer):
    kind = "dense"

    def __init__(self, name, n_in, n_out):
        self.name = name
        self.n_in, self.n_out = n_in, n_out
        self.param_names = (f"{name}.W", f"{name}.b")

    def init_params(self, rng, dtype):
        lim = math.sqrt(6.0 / self.n_in)
        return {f"{self.name}.W": rng.uniform(-lim, lim, (self.n_in, self.n_out)).astype(dtype),
                f"{self.name}.b": np.zeros(self.n_out, dtype=dtype)}

    def output_shape(self, shape):
        if shape != (self.n_in,):
            raise ValueError(f"{self.name}: expected input ({self.n_in},), got {shape}")
        return (self.n_out,)

    def forward(self, x, params, buffers, mode, rng):
        if x.shape[1:] != (self.n_in,):
            raise ValueError(f"{self.name}: expected input ({self.n_in},), got {x.shape[1:]}")
        self._x = x
        return x @ params[f"{self.name}.W"] + params[f"{self.name}.b"]

    def backward(self, dout, params):
        grads = {f"{self.name}.W": self._x.T @ dout, f"{self.name}.b": dout.sum(axis=0)}
        return dout @ params[f"{self.name}.W"].T, grads
