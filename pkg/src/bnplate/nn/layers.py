"""Forward/backward kernels and layer objects.

Activations are NHWC batches; a single (h, w, c) sample is accepted by the
functional kernels and promoted to a batch of one.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# below this patch size (kh*kw*c_in) an explicit im2col matrix is cheaper
_IM2COL_MAX_COLS = 128


def _batched(x: np.ndarray, rank: int):
    if x.ndim == rank - 1:
        return x[None], True
    if x.ndim != rank:
        raise ValueError(f"expected rank {rank - 1} or {rank} input, got shape {x.shape}")
    return x, False


def _im2col(x, kh, kw):
    n, h, w, c = x.shape
    view = sliding_window_view(x, (kh, kw), axis=(1, 2))  # n, ho, wo, c, kh, kw
    ho, wo = view.shape[1:3]
    cols = view.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * c)
    return cols


def _row_cols(x, kw):
    """Unfold along width only: (n, h, wo, kw*c), contiguous per image row."""
    n, h, w, c = x.shape
    view = sliding_window_view(x, kw, axis=2)  # n, h, wo, c, kw
    return np.ascontiguousarray(view.transpose(0, 1, 2, 4, 3)).reshape(n, h, w - kw + 1, kw * c)


def _conv_rows(rows, kernel):
    """Valid conv from width-unfolded input: one matmul per kernel row per image."""
    kh, kw, c_in, c_out = kernel.shape
    n, h, wo, k = rows.shape
    ho = h - kh + 1
    wr = kernel.reshape(kh, k, c_out)
    out = np.empty((n, ho * wo, c_out), dtype=np.result_type(rows, kernel))
    for s in range(n):
        acc = rows[s, 0:ho].reshape(-1, k) @ wr[0]
        for i in range(1, kh):
            acc += rows[s, i:i + ho].reshape(-1, k) @ wr[i]
        out[s] = acc
    return out.reshape(n, ho, wo, c_out)


def _check_conv(x, kernel):
    kh, kw, c_in, _ = kernel.shape
    _, h, w, c = x.shape
    if c != c_in:
        raise ValueError(f"input has {c} channels, kernel expects {c_in}")
    if h < kh or w < kw:
        raise ValueError(f"kernel {kh}x{kw} larger than input {h}x{w}")


def _conv_raw(x, kernel, rows=None):
    kh, kw, c_in, c_out = kernel.shape
    if kh * kw * c_in <= _IM2COL_MAX_COLS:
        n, h, w, _ = x.shape
        out = _im2col(x, kh, kw) @ kernel.reshape(-1, c_out)
        return out.reshape(n, h - kh + 1, w - kw + 1, c_out)
    if rows is None:
        rows = _row_cols(x, kw)
    return _conv_rows(rows, kernel)


def conv2d_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Valid, stride-1 cross-correlation plus per-channel bias."""
    x, single = _batched(x, 4)
    _check_conv(x, kernel)
    out = _conv_raw(x, kernel)
    out += bias
    return out[0] if single else out


def conv2d_backward(x, kernel, dout, need_dx=True, rows=None):
    """Return ``(dx, dkernel, dbias)`` for :func:`conv2d_forward`.

    ``dx`` is None when ``need_dx`` is false. ``rows`` may carry the
    width-unfolded input cached by the forward pass.
    """
    x, single = _batched(x, 4)
    dout, _ = _batched(dout, 4)
    kh, kw, c_in, c_out = kernel.shape
    n, ho, wo, _ = dout.shape
    dbias = dout.reshape(-1, c_out).sum(axis=0)
    if kh * kw * c_in <= _IM2COL_MAX_COLS:
        dkernel = (_im2col(x, kh, kw).T @ dout.reshape(-1, c_out)).reshape(kernel.shape)
    else:
        if rows is None:
            rows = _row_cols(x, kw)
        k = kw * c_in
        dk = np.zeros((kh, k, c_out), dtype=np.result_type(x, dout))
        for s in range(n):
            d2 = dout[s].reshape(-1, c_out)
            for i in range(kh):
                dk[i] += rows[s, i:i + ho].reshape(-1, k).T @ d2
        dkernel = dk.reshape(kernel.shape)
    dx = None
    if need_dx:
        # input gradient = full convolution of dout with the flipped kernel
        flipped = np.ascontiguousarray(kernel[::-1, ::-1].transpose(0, 1, 3, 2))
        padded = np.pad(dout, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1), (0, 0)))
        dx = _conv_raw(padded, flipped)
        if single:
            dx = dx[0]
    return dx, dkernel, dbias


def maxpool_forward(x: np.ndarray):
    """2x2 / stride-2 max pooling. Returns ``(out, argmax)``."""
    x, single = _batched(x, 4)
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool needs even spatial dims, got {h}x{w}")
    win = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h // 2, w // 2, c, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    if single:
        return out[0], arg[0]
    return out, arg


def maxpool_backward(dout: np.ndarray, argmax: np.ndarray) -> np.ndarray:
    dout, single = _batched(dout, 4)
    argmax, _ = _batched(argmax, 4)
    n, h2, w2, c = dout.shape
    win = np.zeros((n, h2, w2, c, 4), dtype=dout.dtype)
    np.put_along_axis(win, argmax[..., None], dout[..., None], axis=-1)
    dx = win.reshape(n, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, h2 * 2, w2 * 2, c)
    return dx[0] if single else dx


def dense_forward(x, weight, bias):
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"dense expects {weight.shape[0]} inputs, got {x.shape[-1]}")
    return x @ weight + bias


def relu_forward(x):
    return np.maximum(x, 0)


def flatten(x):
    return x.reshape(x.shape[0], -1)


def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def sigmoid(z):
    z = np.asarray(z)
    out = np.empty_like(z, dtype=np.result_type(z, np.float32))
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class Layer:
    """Base layer: caches what backward needs; parameters live in ``params``."""

    kind = "layer"

    def __init__(self, name: str):
        self.name = name
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def output_shape(self, shape):
        return shape

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def _cached(self):
        if self._cache is None:
            raise RuntimeError(f"{self.name}: backward called before forward")
        return self._cache

    def clear(self):
        self._cache = None


class Conv2D(Layer):
    kind = "conv"

    def __init__(self, name, kh, kw, c_in, c_out):
        super().__init__(name)
        if min(kh, kw, c_in, c_out) < 1:
            raise ValueError("conv dimensions must be >= 1")
        self.shape = (kh, kw, c_in, c_out)
        self.params = {"weight": np.zeros(self.shape), "bias": np.zeros(c_out)}

    @property
    def fan_in(self):
        kh, kw, c_in, _ = self.shape
        return kh * kw * c_in

    def output_shape(self, shape):
        h, w, c = shape
        kh, kw, c_in, c_out = self.shape
        if c != c_in:
            raise ValueError(f"{self.name}: input has {c} channels, expected {c_in}")
        if h < kh or w < kw:
            raise ValueError(f"{self.name}: kernel larger than {h}x{w} input")
        return (h - kh + 1, w - kw + 1, c_out)

    def forward(self, x):
        _check_conv(x, self.params["weight"])
        kh, kw, c_in, _ = self.shape
        rows = _row_cols(x, kw) if kh * kw * c_in > _IM2COL_MAX_COLS else None
        self._cache = (x, rows)
        out = _conv_raw(x, self.params["weight"], rows)
        out += self.params["bias"]
        return out

    def backward(self, dout, need_dx=True):
        x, rows = self._cached()
        dx, dw, db = conv2d_backward(x, self.params["weight"], dout, need_dx=need_dx, rows=rows)
        self.grads = {"weight": dw, "bias": db}
        return dx


class MaxPool2D(Layer):
    kind = "maxpool"

    def output_shape(self, shape):
        h, w, c = shape
        if h % 2 or w % 2:
            raise ValueError(f"{self.name}: odd spatial dims {h}x{w}")
        return (h // 2, w // 2, c)

    def forward(self, x):
        out, arg = maxpool_forward(x)
        self._cache = arg
        return out

    def backward(self, dout):
        return maxpool_backward(dout, self._cached())


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        self._cache = x > 0
        return x * self._cache

    def backward(self, dout):
        return dout * self._cached()


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._cached())


class Dense(Layer):
    kind = "dense"

    def __init__(self, name, n_in, n_out):
        super().__init__(name)
        if n_in < 1 or n_out < 1:
            raise ValueError("dense dimensions must be >= 1")
        self.shape = (n_in, n_out)
        self.params = {"weight": np.zeros(self.shape), "bias": np.zeros(n_out)}

    @property
    def fan_in(self):
        return self.shape[0]

    def output_shape(self, shape):
        if shape != (self.shape[0],):
            raise ValueError(f"{self.name}: expects ({self.shape[0]},) input, got {shape}")
        return (self.shape[1],)

    def forward(self, x):
        self._cache = x
        return dense_forward(x, self.params["weight"], self.params["bias"])

    def backward(self, dout):
        x = self._cached()
        self.grads = {"weight": x.T @ dout, "bias": dout.sum(axis=0)}
        return dout @ self.params["weight"].T


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x):
        out = softmax(x)
        self._cache = out
        return out

    def backward(self, dout):
        s = self._cached()
        return s * (dout - (dout * s).sum(axis=-1, keepdims=True))


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x):
        out = sigmoid(x)
        self._cache = out
        return out

    def backward(self, dout):
        s = self._cached()
        return dout * s * (1 - s)
