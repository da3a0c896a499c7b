"""Minimal convolutional network with explicit backpropagation.

Layers are implemented directly on numpy so training is deterministic and
parameter gradients are available for finite-difference verification.
Convolutions are 3x3 stride-1 with same-padding; every stage ends in a
2x2 max pool.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class Architecture:
    """Network shape descriptor.

    conv_stages lists the conv channel widths of each stage; a 2x2 max
    pool follows each stage. dense lists hidden fully-connected widths
    before the final class-logit layer.
    """

    name: str
    conv_stages: tuple = ((16,), (32,), (64,), (64,))
    dense: tuple = ()
    dtype: str = "float32"

    def __post_init__(self):
        if not self.conv_stages:
            raise ConfigError("architecture needs at least one conv stage")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"unsupported dtype {self.dtype!r}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


ARCHITECTURES = {
    "compact": Architecture(name="compact", conv_stages=((16,), (32,), (64,), (64,))),
    # A deliberately small net for gradient checking and fast tests.
    "tiny": Architecture(name="tiny", conv_stages=((2,), (2,)), dtype="float64"),
    # VGG configuration E sized head; desk-scale runs should prefer "compact".
    "vgg-e": Architecture(
        name="vgg-e",
        conv_stages=((64, 64), (128, 128), (256, 256, 256, 256), (512, 512, 512, 512), (512, 512, 512, 512)),
        dense=(4096, 4096),
    ),
}


def resolve_architecture(arch) -> Architecture:
    if isinstance(arch, Architecture):
        return arch
    try:
        return ARCHITECTURES[arch]
    except KeyError:
        raise ConfigError(f"unknown architecture {arch!r}; known: {sorted(ARCHITECTURES)}") from None


class Conv3x3:
    """3x3 convolution, stride 1, zero same-padding."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, dtype):
        fan_in = c_in * 9
        self.w = (rng.standard_normal((c_out, c_in, 3, 3)) * np.sqrt(2.0 / fan_in)).astype(dtype)
        self.b = np.zeros(c_out, dtype=dtype)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._cols = None
        self._shape = None

    def _im2col(self, x):
        b, c, h, w = x.shape
        xp = np.zeros((b, c, h + 2, w + 2), dtype=x.dtype)
        xp[:, :, 1:-1, 1:-1] = x
        cols = np.empty((b, c, 3, 3, h, w), dtype=x.dtype)
        for dy in range(3):
            for dx in range(3):
                cols[:, :, dy, dx] = xp[:, :, dy : dy + h, dx : dx + w]
        return cols.reshape(b, c * 9, h * w)

    def forward(self, x, train: bool):
        b, c, h, w = x.shape
        cols = self._im2col(x)
        w2 = self.w.reshape(self.w.shape[0], -1)
        out = np.matmul(w2, cols) + self.b[None, :, None]
        if train:
            self._cols = cols
            self._shape = x.shape
        return out.reshape(b, self.w.shape[0], h, w)

    def backward(self, g):
        b, c_out, h, w = g.shape
        g2 = g.reshape(b, c_out, h * w)
        w2 = self.w.reshape(c_out, -1)
        self.dw = np.matmul(g2, self._cols.transpose(0, 2, 1)).sum(axis=0).reshape(self.w.shape)
        self.db = g2.sum(axis=(0, 2))
        dcols = np.matmul(w2.T, g2)  # (b, c_in*9, h*w)
        _, c_in, hh, ww = self._shape
        dcols = dcols.reshape(b, c_in, 3, 3, hh, ww)
        dxp = np.zeros((b, c_in, hh + 2, ww + 2), dtype=g.dtype)
        for dy in range(3):
            for dx in range(3):
                dxp[:, :, dy : dy + hh, dx : dx + ww] += dcols[:, :, dy, dx]
        self._cols = None
        return dxp[:, :, 1:-1, 1:-1]

    def params(self):
        return [self.w, self.b]

    def grads(self):
        return [self.dw, self.db]


class ReLU:
    def __init__(self):
        self._mask = None

    def forward(self, x, train: bool):
        if train:
            self._mask = x > 0
            return x * self._mask
        return np.maximum(x, 0)

    def backward(self, g):
        out = g * self._mask
        self._mask = None
        return out

    def params(self):
        return []

    def grads(self):
        return []


class MaxPool2x2:
    """2x2 max pool, stride 2. Ties go to the first position in row-major
    order within the window, so the gradient route is deterministic."""

    def __init__(self):
        self._idx = None
        self._shape = None

    def forward(self, x, train: bool):
        b, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ConfigError(f"max pool needs even spatial dims, got {h}x{w}")
        r = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        r = r.reshape(b, c, h // 2, w // 2, 4)
        idx = np.argmax(r, axis=-1)
        out = np.take_along_axis(r, idx[..., None], axis=-1)[..., 0]
        if train:
            self._idx = idx
            self._shape = x.shape
        return out

    def backward(self, g):
        b, c, h, w = self._shape
        z = np.zeros((b, c, h // 2, w // 2, 4), dtype=g.dtype)
        np.put_along_axis(z, self._idx[..., None], g[..., None], axis=-1)
        z = z.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        self._idx = None
        return z.reshape(b, c, h, w)

    def params(self):
        return []

    def grads(self):
        return []


class Flatten:
    def __init__(self):
        self._shape = None

    def forward(self, x, train: bool):
        if train:
            self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g):
        return g.reshape(self._shape)

    def params(self):
        return []

    def grads(self):
        return []


class Dense:
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype):
        self.w = (rng.standard_normal((n_out, n_in)) * np.sqrt(2.0 / n_in)).astype(dtype)
        self.b = np.zeros(n_out, dtype=dtype)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._x = None

    def forward(self, x, train: bool):
        if train:
            self._x = x
        return x @ self.w.T + self.b

    def backward(self, g):
        self.dw = g.T @ self._x
        self.db = g.sum(axis=0)
        self._x = None
        return g @ self.w

    def params(self):
        return [self.w, self.b]

    def grads(self):
        return [self.dw, self.db]


class ConvNet:
    """Stack of conv stages plus a dense head emitting K class logits."""

    def __init__(self, arch: Architecture, input_shape: tuple, k: int, rng: np.random.Generator):
        self.arch = arch
        self.input_shape = tuple(input_shape)  # (n_mels, seg_frames)
        self.k = k
        dtype = arch.np_dtype
        h, w = input_shape
        layers = []
        c = 1
        for stage in arch.conv_stages:
            for width in stage:
                layers.append(Conv3x3(c, width, rng, dtype))
                layers.append(ReLU())
                c = width
            if h % 2 or w % 2:
                raise ConfigError(
                    f"architecture {arch.name!r} pools {h}x{w} below even dims for input {input_shape}"
                )
            layers.append(MaxPool2x2())
            h, w = h // 2, w // 2
        layers.append(Flatten())
        n_in = c * h * w
        for width in arch.dense:
            layers.append(Dense(n_in, width, rng, dtype))
            layers.append(ReLU())
            n_in = width
        layers.append(Dense(n_in, k, rng, dtype))
        self.layers = layers

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        """x: (batch, n_mels, seg_frames) -> logits (batch, k)."""
        out = x.astype(self.arch.np_dtype, copy=False).reshape(x.shape[0], 1, *self.input_shape)
        for layer in self.layers:
            out = layer.forward(out, train)
        return out

    def backward(self, dlogits: np.ndarray) -> None:
        g = dlogits.astype(self.arch.np_dtype, copy=False)
        for layer in reversed(self.layers):
            g = layer.backward(g)

    def params(self) -> list:
        return [p for layer in self.layers for p in layer.params()]

    def grads(self) -> list:
        return [g for layer in self.layers for g in layer.grads()]

    def snapshot(self) -> list:
        return [p.copy() for p in self.params()]

    def restore(self, arrays) -> None:
        for p, a in zip(self.params(), arrays, strict=True):
            p[...] = a


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction; never NaN/Inf for finite input."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def batch_cross_entropy(logits: np.ndarray, targets: np.ndarray):
    """Mean soft-target cross-entropy and its gradient w.r.t. the logits.

    Probabilities are clamped at 1e-12 inside the log for stability.
    """
    p = softmax(logits)
    loss = float(-np.sum(targets * np.log(np.maximum(p, 1e-12))) / logits.shape[0])
    dlogits = (p - targets) / logits.shape[0]
    return loss, dlogits


class Adam:
    """Adaptive-moment gradient method, standard defaults."""

    def __init__(self, params, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads, lr: float) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v, strict=True):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
