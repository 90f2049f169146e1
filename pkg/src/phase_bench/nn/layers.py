"""Differentiable primitives with hand-written backward passes.

Internally tensors are channel-major numpy arrays shaped
``(channels, batch, height, width)``: patch extraction then reduces to k*k
contiguous slice copies and convolution outputs need no transpose.
Every layer caches what its backward pass needs during ``forward``;
``backward`` takes the upstream gradient, stores parameter gradients in
``self.grads`` and returns the gradient with respect to the input.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatchError


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def __call__(self, x):
        return self.forward(x)

    def parameters(self):
        """``(name, array)`` pairs in a fixed order."""
        return list(self.params.items())


def _im2col(xp, k, stride, ho, wo):
    """Patches of a padded (C, B, H, W) array as a ``(C*k*k, B*Ho*Wo)`` matrix."""
    c, b = xp.shape[:2]
    cols = np.empty((c, k, k, b, ho, wo), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols.reshape(c * k * k, b * ho * wo)


def conv2d_forward(x, weight, bias=None, stride=1):
    """Zero-padded ('same' for stride 1) correlation. Returns ``(y, cols)``."""
    k = weight.shape[-1]
    p = k // 2
    _, b, h, w = x.shape
    ho, wo = (h + 2 * p - k) // stride + 1, (w + 2 * p - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    cols = _im2col(xp, k, stride, ho, wo)
    y = weight.reshape(weight.shape[0], -1) @ cols
    if bias is not None:
        y += bias[:, None]
    return y.reshape(weight.shape[0], b, ho, wo), cols


class Conv2d(Layer):
    """``k x k`` convolution (odd ``k``), stride 1 or 2, zero padding ``k // 2``."""

    def __init__(self, c_in, c_out, kernel=3, stride=1, rng=None, dtype=np.float64,
                 init="he", bias=True):
        super().__init__()
        if kernel % 2 != 1:
            raise ValueError("kernel size must be odd")
        if stride not in (1, 2):
            raise ValueError("stride must be 1 or 2")
        self.c_in, self.c_out, self.kernel, self.stride = c_in, c_out, kernel, stride
        fan_in = c_in * kernel * kernel
        if init == "zero":
            w = np.zeros((c_out, c_in, kernel, kernel))
        else:
            rng = rng if rng is not None else np.random.default_rng(0)
            std = np.sqrt(2.0 / fan_in) if init == "he" else np.sqrt(1.0 / fan_in)
            w = rng.standard_normal((c_out, c_in, kernel, kernel)) * std
        self.params["weight"] = w.astype(dtype)
        if bias:
            self.params["bias"] = np.zeros(c_out, dtype=dtype)

    def forward(self, x):
        if x.ndim != 4 or x.shape[0] != self.c_in:
            raise ShapeMismatchError(f"Conv2d expects ({self.c_in}, B, H, W), got {x.shape}")
        if self.stride == 2 and (x.shape[2] % 2 or x.shape[3] % 2):
            raise ShapeMismatchError(f"stride-2 convolution needs even spatial size, got {x.shape}")
        y, self._cols = conv2d_forward(x, self.params["weight"], self.params.get("bias"),
                                       self.stride)
        self._x_shape = x.shape
        return y

    def backward(self, dy):
        w = self.params["weight"]
        c_out = w.shape[0]
        dym = dy.reshape(c_out, -1)
        self.grads["weight"] = (dym @ self._cols.T).reshape(w.shape)
        if "bias" in self.params:
            self.grads["bias"] = dym.sum(axis=1)
        self._cols = None
        c, b, h, wd = self._x_shape
        if self.stride == 2:
            # spread dy onto the input lattice, then correlate with the flipped kernel
            up = np.zeros((c_out, b, h, wd), dtype=dy.dtype)
            up[:, :, ::2, ::2] = dy
            dy = up
        w_t = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        dx, _ = conv2d_forward(dy, w_t)
        return dx

    def parameter_count(self):
        return sum(p.size for p in self.params.values())


class Upsample2x(Layer):
    """Nearest-neighbor upsampling by 2 along both spatial axes."""

    def forward(self, x):
        self._shape = x.shape
        return x.repeat(2, axis=2).repeat(2, axis=3)

    def backward(self, dy):
        c, b, h, w = self._shape
        return dy.reshape(c, b, h, 2, w, 2).sum(axis=(3, 5))


class ReLU(Layer):
    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask


class ChannelNorm(Layer):
    """Per-example, per-channel standardization over space with learned scale and shift."""

    def __init__(self, channels, eps=1e-5, dtype=np.float64):
        super().__init__()
        self.eps = eps
        self.params["scale"] = np.ones(channels, dtype=dtype)
        self.params["shift"] = np.zeros(channels, dtype=dtype)

    def forward(self, x):
        mu = x.mean(axis=(2, 3), keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=(2, 3), keepdims=True)
        self._inv = 1.0 / np.sqrt(var + self.eps)
        self._xhat = xc * self._inv
        scale = self.params["scale"][:, None, None, None]
        shift = self.params["shift"][:, None, None, None]
        return self._xhat * scale + shift

    def backward(self, dy):
        xhat = self._xhat
        self.grads["scale"] = (dy * xhat).sum(axis=(1, 2, 3))
        self.grads["shift"] = dy.sum(axis=(1, 2, 3))
        g = dy * self.params["scale"][:, None, None, None]
        g_mean = g.mean(axis=(2, 3), keepdims=True)
        gx_mean = (g * xhat).mean(axis=(2, 3), keepdims=True)
        dx = self._inv * (g - g_mean - xhat * gx_mean)
        self._xhat = self._inv = None
        return dx


def residual_add(a, b):
    """Elementwise sum; its backward passes the upstream gradient to both inputs."""
    if a.shape != b.shape:
        raise ShapeMismatchError(f"residual shapes differ: {a.shape} vs {b.shape}")
    return a + b


def concat_channels(a, b):
    if a.shape[1:] != b.shape[1:]:
        raise ShapeMismatchError(f"cannot concatenate {a.shape} and {b.shape}")
    return np.concatenate([a, b], axis=0)


def split_channels(dy, first):
    """Backward of :func:`concat_channels`: gradient slices for each input."""
    return dy[:first], dy[first:]
