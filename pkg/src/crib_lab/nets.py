"""Policy/value networks with hand-written reverse-mode gradients.

Everything is plain numpy. Each layer caches what its backward pass needs on
a small stack, so an encoder with shared weights (the conv stack runs on both
eye images) can be applied twice per step: forward pushes a context, backward
pops one, and callers unwind in reverse order of the forward calls.

Dimensions are constructor arguments throughout. Tests instantiate miniature
float64 copies (a few hundred parameters) and compare every gradient against
central finite differences; training uses the float32 default sizes.
"""

from __future__ import annotations

import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def orthogonal(rng: np.random.Generator, shape: Tuple[int, int],
               gain: float = 1.0, dtype=np.float32) -> np.ndarray:
    rows, cols = shape
    big, small = max(rows, cols), min(rows, cols)
    a = rng.standard_normal((big, small))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(gain * q, dtype=dtype)


class Param:
    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = np.ascontiguousarray(value)
        self.grad = np.zeros_like(self.value)


class Layer:
    def params(self) -> Dict[str, Param]:
        return {}


class Linear(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator,
                 gain: float = math.sqrt(2.0), dtype=np.float32):
        self.W = Param(orthogonal(rng, (n_in, n_out), gain, dtype))
        self.b = Param(np.zeros(n_out, dtype=dtype))
        self._ctx: List[np.ndarray] = []

    def params(self):
        return {"W": self.W, "b": self.b}

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._ctx.append(x)
        return x @ self.W.value + self.b.value

    def backward(self, g: np.ndarray) -> np.ndarray:
        x = self._ctx.pop()
        self.W.grad += x.T @ g
        self.b.grad += g.sum(axis=0)
        return g @ self.W.value.T


class Relu(Layer):
    def __init__(self):
        self._ctx: List[np.ndarray] = []

    def forward(self, x: np.ndarray) -> np.ndarray:
        y = np.maximum(x, 0.0)
        self._ctx.append(x > 0.0)
        return y

    def backward(self, g: np.ndarray) -> np.ndarray:
        return g * self._ctx.pop()


class Tanh(Layer):
    def __init__(self):
        self._ctx: List[np.ndarray] = []

    def forward(self, x: np.ndarray) -> np.ndarray:
        y = np.tanh(x)
        self._ctx.append(y)
        return y

    def backward(self, g: np.ndarray) -> np.ndarray:
        y = self._ctx.pop()
        return g * (1.0 - y * y)


class Softplus(Layer):
    """log(1 + e^x), numerically stable in both directions."""

    def __init__(self):
        self._ctx: List[np.ndarray] = []

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._ctx.append(x)
        return np.logaddexp(0.0, x)

    def backward(self, g: np.ndarray) -> np.ndarray:
        x = self._ctx.pop()
        sig = 0.5 * (1.0 + np.tanh(0.5 * x))
        return g * sig


class Conv2d(Layer):
    """Strided 2D convolution on NCHW input, via im2col."""

    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int,
                 pad: int, rng: np.random.Generator,
                 gain: float = math.sqrt(2.0), dtype=np.float32):
        self.c_in, self.c_out = c_in, c_out
        self.kernel, self.stride, self.pad = kernel, stride, pad
        self.W = Param(orthogonal(rng, (c_out, c_in * kernel * kernel),
                                  gain, dtype))
        self.b = Param(np.zeros(c_out, dtype=dtype))
        self._ctx: List[Tuple] = []

    def params(self):
        return {"W": self.W, "b": self.b}

    def out_size(self, size: int) -> int:
        return (size + 2 * self.pad - self.kernel) // self.stride + 1

    def forward(self, x: np.ndarray) -> np.ndarray:
        bsz, c, h, w = x.shape
        k, s, p = self.kernel, self.stride, self.pad
        ho, wo = self.out_size(h), self.out_size(w)
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        # (B, C, Ho, Wo, k, k) -> (B, C*k*k, Ho*Wo)
        cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(bsz, c * k * k, ho * wo)
        out = self.W.value @ cols + self.b.value[:, None]
        self._ctx.append((cols, x.shape))
        return out.reshape(bsz, self.c_out, ho, wo)

    def backward(self, g: np.ndarray) -> np.ndarray:
        cols, x_shape = self._ctx.pop()
        bsz, c, h, w = x_shape
        k, s, p = self.kernel, self.stride, self.pad
        ho, wo = self.out_size(h), self.out_size(w)
        gm = g.reshape(bsz, self.c_out, ho * wo)
        self.b.grad += gm.sum(axis=(0, 2))
        # one flat GEMM per gradient; einsum here would bypass BLAS
        gm_flat = gm.transpose(1, 0, 2).reshape(self.c_out, bsz * ho * wo)
        cols_flat = cols.transpose(1, 0, 2).reshape(cols.shape[1],
                                                    bsz * ho * wo)
        self.W.grad += gm_flat @ cols_flat.T
        dcols = np.matmul(self.W.value.T, gm)
        dwin = dcols.reshape(bsz, c, k, k, ho, wo)
        dxp = np.zeros((bsz, c, h + 2 * p, w + 2 * p), dtype=g.dtype)
        for ky in range(k):
            for kx in range(k):
                dxp[:, :, ky:ky + s * ho:s, kx:kx + s * wo:s] += dwin[:, :, ky, kx]
        return dxp[:, :, p:p + h, p:p + w]


class GlobalAvgPool(Layer):
    def __init__(self):
        self._ctx: List[Tuple[int, ...]] = []

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._ctx.append(x.shape)
        return x.mean(axis=(2, 3))

    def backward(self, g: np.ndarray) -> np.ndarray:
        bsz, c, h, w = self._ctx.pop()
        return np.broadcast_to(g[:, :, None, None] / (h * w),
                               (bsz, c, h, w)).copy()


class Chain(Layer):
    def __init__(self, *layers: Layer):
        self.layers = list(layers)

    def params(self):
        out = {}
        for i, layer in enumerate(self.layers):
            for name, p in layer.params().items():
                out[f"{i}.{name}"] = p
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, g: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g


def mlp(dims: Sequence[int], rng: np.random.Generator, dtype,
        final_relu: bool = True) -> Chain:
    layers: List[Layer] = []
    for i in range(len(dims) - 1):
        layers.append(Linear(dims[i], dims[i + 1], rng, dtype=dtype))
        if final_relu or i < len(dims) - 2:
            layers.append(Relu())
    return Chain(*layers)


class PolicyHeads(Layer):
    """Gaussian policy heads (squashed mean, softplus scale) plus a value head."""

    def __init__(self, trunk_dim: int, action_dim: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.mu_lin = Linear(trunk_dim, action_dim, rng, gain=0.01, dtype=dtype)
        self.mu_act = Tanh()
        self.sigma_lin = Linear(trunk_dim, action_dim, rng, gain=0.01, dtype=dtype)
        self.sigma_act = Softplus()
        self.value_lin = Linear(trunk_dim, 1, rng, gain=1.0, dtype=dtype)

    def params(self):
        out = {}
        for prefix, layer in (("mu", self.mu_lin), ("sigma", self.sigma_lin),
                              ("value", self.value_lin)):
            for name, p in layer.params().items():
                out[f"{prefix}.{name}"] = p
        return out

    def forward(self, h: np.ndarray):
        mu = self.mu_act.forward(self.mu_lin.forward(h))
        sigma = self.sigma_act.forward(self.sigma_lin.forward(h))
        value = self.value_lin.forward(h)[:, 0]
        return mu, sigma, value

    def backward(self, dmu: np.ndarray, dsigma: np.ndarray,
                 dvalue: np.ndarray) -> np.ndarray:
        dh = self.value_lin.backward(dvalue[:, None])
        dh = dh + self.sigma_lin.backward(self.sigma_act.backward(dsigma))
        dh = dh + self.mu_lin.backward(self.mu_act.backward(dmu))
        return dh


class _BaseNet:
    """Name-indexed parameter registry shared by both policy networks."""

    def _register(self, parts: Dict[str, Layer]) -> None:
        self._params: Dict[str, Param] = {}
        for prefix, layer in parts.items():
            for name, p in layer.params().items():
                self._params[f"{prefix}.{name}"] = p

    def params(self) -> Dict[str, Param]:
        return self._params

    def param_values(self) -> Dict[str, np.ndarray]:
        return {k: p.value for k, p in self._params.items()}

    def load_param_values(self, values: Dict[str, np.ndarray]) -> None:
        mine = set(self._params)
        theirs = set(values)
        if mine != theirs:
            raise ValueError(f"parameter name mismatch: missing {sorted(mine - theirs)}, "
                             f"unexpected {sorted(theirs - mine)}")
        for k, p in self._params.items():
            if p.value.shape != values[k].shape:
                raise ValueError(f"{k}: shape {values[k].shape} != {p.value.shape}")
            p.value = values[k].astype(p.value.dtype, copy=True)
            p.grad = np.zeros_like(p.value)

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad[:] = 0.0

    def num_params(self) -> int:
        return sum(p.value.size for p in self._params.values())

    def grad_vector(self) -> np.ndarray:
        return np.concatenate([p.grad.ravel() for p in self._params.values()])


class TouchPolicyNet(_BaseNet):
    """Touch + proprioception actor-critic."""

    def __init__(self, touch_dim: int = 68, proprio_dim: int = 44,
                 action_dim: int = 22,
                 touch_hidden: Sequence[int] = (128, 256),
                 proprio_hidden: Sequence[int] = (128, 256),
                 fusion_dim: int = 512,
                 trunk_hidden: Sequence[int] = (256, 256),
                 seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.touch_dim, self.proprio_dim = touch_dim, proprio_dim
        self.action_dim = action_dim
        self.touch_enc = mlp([touch_dim, *touch_hidden], rng, dtype)
        self.proprio_enc = mlp([proprio_dim, *proprio_hidden], rng, dtype)
        fused_in = touch_hidden[-1] + proprio_hidden[-1]
        self.fusion = Chain(Linear(fused_in, fusion_dim, rng, dtype=dtype), Relu())
        self.trunk = mlp([fusion_dim, *trunk_hidden], rng, dtype)
        self.heads = PolicyHeads(trunk_hidden[-1], action_dim, rng, dtype)
        self._register({"touch": self.touch_enc, "proprio": self.proprio_enc,
                        "fusion": self.fusion, "trunk": self.trunk,
                        "heads": self.heads})
        self._split = touch_hidden[-1]

    def forward(self, touch: np.ndarray, proprio: np.ndarray):
        et = self.touch_enc.forward(touch)
        ep = self.proprio_enc.forward(proprio)
        h = self.trunk.forward(self.fusion.forward(np.concatenate([et, ep], axis=1)))
        return self.heads.forward(h)

    def backward(self, dmu: np.ndarray, dsigma: np.ndarray,
                 dvalue: np.ndarray) -> None:
        dh = self.heads.backward(dmu, dsigma, dvalue)
        dfused = self.fusion.backward(self.trunk.backward(dh))
        self.proprio_enc.backward(dfused[:, self._split:])
        self.touch_enc.backward(dfused[:, :self._split])


class VisionPolicyNet(_BaseNet):
    """Stereo vision + proprioception actor-critic with a shared conv encoder."""

    def __init__(self, image_size: int = 64, in_channels: int = 3,
                 conv_channels: Sequence[int] = (32, 64, 128, 256),
                 proprio_dim: int = 44,
                 proprio_hidden: Sequence[int] = (64, 64),
                 fusion_dim: int = 256,
                 trunk_hidden: Sequence[int] = (256, 256),
                 action_dim: int = 22, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.image_size = image_size
        self.action_dim = action_dim
        specs = [(5, 2, 2)] + [(3, 2, 1)] * (len(conv_channels) - 1)
        layers: List[Layer] = []
        c_prev = in_channels
        for c_out, (k, s, p) in zip(conv_channels, specs):
            layers.append(Conv2d(c_prev, c_out, k, s, p, rng, dtype=dtype))
            layers.append(Relu())
            c_prev = c_out
        layers.append(GlobalAvgPool())
        self.conv = Chain(*layers)
        self.proprio_enc = mlp([proprio_dim, *proprio_hidden], rng, dtype)
        fused_in = 2 * conv_channels[-1] + proprio_hidden[-1]
        # plain linear fusion, no activation before the trunk
        self.fusion = Linear(fused_in, fusion_dim, rng, dtype=dtype)
        self.trunk = mlp([fusion_dim, *trunk_hidden], rng, dtype)
        self.heads = PolicyHeads(trunk_hidden[-1], action_dim, rng, dtype)
        self._register({"conv": self.conv, "proprio": self.proprio_enc,
                        "fusion": self.fusion, "trunk": self.trunk,
                        "heads": self.heads})
        self._eye_dim = conv_channels[-1]

    def forward(self, left: np.ndarray, right: np.ndarray, proprio: np.ndarray):
        el = self.conv.forward(left)
        er = self.conv.forward(right)
        ep = self.proprio_enc.forward(proprio)
        fused = self.fusion.forward(np.concatenate([el, er, ep], axis=1))
        return self.heads.forward(self.trunk.forward(fused))

    def backward(self, dmu: np.ndarray, dsigma: np.ndarray,
                 dvalue: np.ndarray) -> None:
        dh = self.heads.backward(dmu, dsigma, dvalue)
        dfused = self.fusion.backward(self.trunk.backward(dh))
        d = self._eye_dim
        self.proprio_enc.backward(dfused[:, 2 * d:])
        # shared conv weights: unwind in reverse forward order
        self.conv.backward(dfused[:, d:2 * d])
        self.conv.backward(dfused[:, :d])
