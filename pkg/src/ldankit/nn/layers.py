"""Layer kinds with explicit forward/backward.

Internally image activations are NHWC (channels last) and convolution
kernels are (3, 3, C_in, C_out); `Network` converts from and to the public
N x C x H x W layout at its boundary.

Each layer object is stateless; parameters and running buffers live in plain
dicts owned by the `Network`.  ``forward`` returns ``(y, cache)`` and
``backward`` consumes the cache.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import InvalidInputError

BN_EPS = 1e-5
BN_MOMENTUM = 0.9

KINDS = (
    "conv3x3",
    "batchnorm",
    "relu",
    "fc",
    "dropout",
    "residual_block",
    "global_flatten",
    "tanh",
)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out: Optional[int] = None
    stride: int = 1
    rate: float = 0.0
    init_seed: Optional[int] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv3x3" and self.stride not in (1, 2):
            raise InvalidInputError("conv stride must be 1 or 2")
        if self.kind == "dropout" and not 0.0 <= self.rate < 1.0:
            raise InvalidInputError("dropout rate must be in [0, 1)")
        if self.kind in ("conv3x3", "fc") and (self.out is None or self.out < 1):
            raise InvalidInputError(f"{self.kind} needs a positive output size")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def conv3x3(out_ch, stride=1, init_seed=None):
    return LayerSpec("conv3x3", out=out_ch, stride=stride, init_seed=init_seed)


def batchnorm():
    return LayerSpec("batchnorm")


def relu():
    return LayerSpec("relu")


def fc(out_dim, init_seed=None):
    return LayerSpec("fc", out=out_dim, init_seed=init_seed)


def dropout(rate):
    return LayerSpec("dropout", rate=rate)


def residual_block(init_seed=None):
    return LayerSpec("residual_block", init_seed=init_seed)


def global_flatten():
    return LayerSpec("global_flatten")


def tanh():
    return LayerSpec("tanh")


# ---------------------------------------------------------------------------
# primitive kernels


def _im2col(x, stride):
    """NHWC input -> ``(N*Ho*Wo, 9*C)`` patch matrix, zero padding 1."""
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))[:, ::stride, ::stride]
    n, ho, wo, c = win.shape[:4]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, 9 * c)
    return cols, (n, ho, wo)


def conv_forward(x, w, b, stride):
    """3x3 convolution, NHWC; ``w`` has layout (3, 3, C_in, C_out)."""
    cols, (n, ho, wo) = _im2col(x, stride)
    out_ch = w.shape[3]
    y = cols @ w.reshape(-1, out_ch)
    if b is not None:
        y += b
    return y.reshape(n, ho, wo, out_ch), (cols, x.shape, stride)


def conv_backward(cache, w, gy):
    cols, xshape, stride = cache
    n, h, wd, c = xshape
    out_ch = w.shape[3]
    g = gy.reshape(-1, out_ch)
    gw = (cols.T @ g).reshape(w.shape)
    gb = g.sum(axis=0)
    # The input gradient is a stride-1 convolution of the (zero-dilated)
    # output gradient with the spatially flipped, channel-transposed kernel.
    if stride == 1:
        gd = gy
    else:
        gd = np.zeros((n, h, wd, out_ch), dtype=gy.dtype)
        gd[:, ::stride, ::stride] = gy
    wt = np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2))
    gx, _ = conv_forward(gd, wt, None, 1)
    return gx, gw, gb


def _bn_axes(x):
    return tuple(range(x.ndim - 1))


def bn_forward(x, gamma, beta, buf, mode):
    """Batch norm over every axis but the last (channels)."""
    axes = _bn_axes(x)
    if mode == "train":
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        buf["running_mean"][...] = BN_MOMENTUM * buf["running_mean"] + (1 - BN_MOMENTUM) * mean
        buf["running_var"][...] = BN_MOMENTUM * buf["running_var"] + (1 - BN_MOMENTUM) * var
    else:
        mean, var = buf["running_mean"], buf["running_var"]
    inv = (1.0 / np.sqrt(var + BN_EPS)).astype(x.dtype)
    xhat = (x - mean) * inv
    return gamma * xhat + beta, (xhat, inv, mode)


def bn_backward(cache, gamma, gy):
    xhat, inv, mode = cache
    axes = _bn_axes(gy)
    ggamma = (gy * xhat).sum(axis=axes)
    gbeta = gy.sum(axis=axes)
    gxhat = gy * gamma
    if mode == "train":
        m = gy.size // gy.shape[-1]
        gx = (inv / m) * (m * gxhat - gxhat.sum(axis=axes) - xhat * (gxhat * xhat).sum(axis=axes))
    else:
        gx = gxhat * inv
    return gx, ggamma, gbeta


# ---------------------------------------------------------------------------
# layer objects


class Layer:
    def out_shape(self, in_shape):
        return in_shape

    def init(self, in_shape, rng, dtype):
        return {}, {}

    def forward(self, x, p, buf, mode, rng):
        raise NotImplementedError

    def backward(self, cache, p, gy):
        raise NotImplementedError


def _he(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv3x3(Layer):
    def __init__(self, spec):
        self.out, self.stride = spec.out, spec.stride

    def out_shape(self, s):
        h, w, c = s
        return ((h - 1) // self.stride + 1, (w - 1) // self.stride + 1, self.out)

    def init(self, s, rng, dtype):
        c = s[-1]
        return {
            "w": _he(rng, (3, 3, c, self.out), c * 9, dtype),
            "b": np.zeros(self.out, dtype=dtype),
        }, {}

    def forward(self, x, p, buf, mode, rng):
        return conv_forward(x, p["w"], p["b"], self.stride)

    def backward(self, cache, p, gy):
        gx, gw, gb = conv_backward(cache, p["w"], gy)
        return gx, {"w": gw, "b": gb}


class BatchNorm(Layer):
    def init(self, s, rng, dtype):
        c = s[-1]
        return (
            {"gamma": np.ones(c, dtype=dtype), "beta": np.zeros(c, dtype=dtype)},
            {"running_mean": np.zeros(c, dtype=dtype), "running_var": np.ones(c, dtype=dtype)},
        )

    def forward(self, x, p, buf, mode, rng):
        return bn_forward(x, p["gamma"], p["beta"], buf, mode)

    def backward(self, cache, p, gy):
        gx, gg, gb = bn_backward(cache, p["gamma"], gy)
        return gx, {"gamma": gg, "beta": gb}


class ReLU(Layer):
    min_abs_preact = np.inf  # diagnostic for finite-difference checks

    def forward(self, x, p, buf, mode, rng):
        self.min_abs_preact = float(np.abs(x).min()) if x.size else np.inf
        mask = x > 0
        return x * mask, mask

    def backward(self, mask, p, gy):
        return gy * mask, {}


class Tanh(Layer):
    def forward(self, x, p, buf, mode, rng):
        y = np.tanh(x)
        return y, y

    def backward(self, y, p, gy):
        return gy * (1.0 - y * y), {}


class FC(Layer):
    def __init__(self, spec):
        self.out = spec.out

    def out_shape(self, s):
        return (self.out,)

    def init(self, s, rng, dtype):
        if len(s) != 1:
            raise InvalidInputError(f"fc expects a flat input, got shape {s}")
        return {
            "w": _he(rng, (s[0], self.out), s[0], dtype),
            "b": np.zeros(self.out, dtype=dtype),
        }, {}

    def forward(self, x, p, buf, mode, rng):
        return x @ p["w"] + p["b"], x

    def backward(self, x, p, gy):
        return gy @ p["w"].T, {"w": x.T @ gy, "b": gy.sum(axis=0)}


class Dropout(Layer):
    def __init__(self, spec):
        self.rate = spec.rate

    def forward(self, x, p, buf, mode, rng):
        if mode != "train" or self.rate == 0.0:
            return x, None
        if rng is None:
            raise InvalidInputError("train-mode dropout needs an rng")
        keep = 1.0 - self.rate
        mask = (rng.random(x.shape) < keep).astype(x.dtype) / x.dtype.type(keep)
        return x * mask, mask

    def backward(self, mask, p, gy):
        return (gy if mask is None else gy * mask), {}


class GlobalFlatten(Layer):
    def out_shape(self, s):
        return (int(np.prod(s)),)

    def forward(self, x, p, buf, mode, rng):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, shape, p, gy):
        return gy.reshape(shape), {}


class ResidualBlock(Layer):
    """conv-bn-relu-conv-bn plus identity skip, then relu.  Channel count and
    spatial size are preserved; the convolutions carry no bias."""

    min_abs_preact = np.inf

    def init(self, s, rng, dtype):
        c = s[-1]
        p = {
            "conv1.w": _he(rng, (3, 3, c, c), c * 9, dtype),
            "bn1.gamma": np.ones(c, dtype=dtype),
            "bn1.beta": np.zeros(c, dtype=dtype),
            "conv2.w": _he(rng, (3, 3, c, c), c * 9, dtype),
            "bn2.gamma": np.ones(c, dtype=dtype),
            "bn2.beta": np.zeros(c, dtype=dtype),
        }
        b = {}
        for k in ("bn1", "bn2"):
            b[f"{k}.running_mean"] = np.zeros(c, dtype=dtype)
            b[f"{k}.running_var"] = np.ones(c, dtype=dtype)
        return p, b

    @staticmethod
    def _buf(buf, k):
        return {"running_mean": buf[f"{k}.running_mean"], "running_var": buf[f"{k}.running_var"]}

    def forward(self, x, p, buf, mode, rng):
        h1, c1 = conv_forward(x, p["conv1.w"], None, 1)
        h2, b1 = bn_forward(h1, p["bn1.gamma"], p["bn1.beta"], self._buf(buf, "bn1"), mode)
        m1 = h2 > 0
        h3 = h2 * m1
        h4, c2 = conv_forward(h3, p["conv2.w"], None, 1)
        h5, b2 = bn_forward(h4, p["bn2.gamma"], p["bn2.beta"], self._buf(buf, "bn2"), mode)
        s = h5 + x
        m2 = s > 0
        self.min_abs_preact = float(min(np.abs(h2).min(), np.abs(s).min()))
        return s * m2, (c1, b1, m1, c2, b2, m2)

    def backward(self, cache, p, gy):
        c1, b1, m1, c2, b2, m2 = cache
        gs = gy * m2
        gh4, gg2, gbe2 = bn_backward(b2, p["bn2.gamma"], gs)
        gh3, gw2, _ = conv_backward(c2, p["conv2.w"], gh4)
        gh2 = gh3 * m1
        gh1, gg1, gbe1 = bn_backward(b1, p["bn1.gamma"], gh2)
        gx, gw1, _ = conv_backward(c1, p["conv1.w"], gh1)
        return gx + gs, {
            "conv1.w": gw1,
            "bn1.gamma": gg1,
            "bn1.beta": gbe1,
            "conv2.w": gw2,
            "bn2.gamma": gg2,
            "bn2.beta": gbe2,
        }


_WITH_SPEC = {"conv3x3": Conv3x3, "fc": FC, "dropout": Dropout}
_PLAIN = {
    "batchnorm": BatchNorm,
    "relu": ReLU,
    "tanh": Tanh,
    "global_flatten": GlobalFlatten,
    "residual_block": ResidualBlock,
}


def make_layer(spec: LayerSpec) -> Layer:
    if spec.kind in _WITH_SPEC:
        return _WITH_SPEC[spec.kind](spec)
    return _PLAIN[spec.kind]()
