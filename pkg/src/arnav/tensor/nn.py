"""Layer primitives built on the autodiff engine: affine, conv, layer norm,
feed-forward, and masked multi-head self-attention."""

from __future__ import annotations

import math
from typing import Dict, List, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor

__all__ = [
    "truncated_normal",
    "Layer",
    "Linear",
    "Conv2d",
    "LayerNorm",
    "FeedForward",
    "MaskedMultiHeadAttention",
    "DecoderLayer",
]


def truncated_normal(
    rng: np.random.Generator, shape, std: float, bound_sigmas: float = 2.0
) -> np.ndarray:
    """Normal(0, std) resampled until within +-bound_sigmas*std."""
    out = rng.standard_normal(shape) * std
    limit = bound_sigmas * std
    bad = np.abs(out) > limit
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum())) * std
        bad = np.abs(out) > limit
    return out


class Layer:
    """Base class: children register parameters under dotted names."""

    def __init__(self, name: str):
        self.name = name
        self._params: List[Parameter] = []
        self._children: List["Layer"] = []

    def _param(self, suffix: str, data) -> Parameter:
        p = Parameter(f"{self.name}.{suffix}", data)
        self._params.append(p)
        return p

    def _child(self, layer: "Layer") -> "Layer":
        self._children.append(layer)
        return layer

    def parameters(self) -> List[Parameter]:
        out = list(self._params)
        for c in self._children:
            out.extend(c.parameters())
        return out

    def parameter_map(self) -> Dict[str, Parameter]:
        m: Dict[str, Parameter] = {}
        for p in self.parameters():
            if p.name in m:
                raise ValueError(f"duplicate parameter name {p.name}")
            m[p.name] = p
        return m


class Linear(Layer):
    def __init__(self, name: str, d_in: int, d_out: int, rng: np.random.Generator):
        super().__init__(name)
        std = 1.0 / math.sqrt(d_in)
        self.w = self._param("w", truncated_normal(rng, (d_in, d_out), std))
        self.b = self._param("b", np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.linear(x, self.w, self.b)


class Conv2d(Layer):
    def __init__(
        self,
        name: str,
        c_in: int,
        c_out: int,
        kernel: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
    ):
        super().__init__(name)
        self.stride = stride
        self.padding = padding
        std = 1.0 / math.sqrt(c_in * kernel * kernel)
        self.w = self._param("w", truncated_normal(rng, (c_out, c_in, kernel, kernel), std))
        self.b = self._param("b", np.zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv_2d(x, self.w, self.b, stride=self.stride, padding=self.padding)


class LayerNorm(Layer):
    def __init__(self, name: str, d: int):
        super().__init__(name)
        self.gamma = self._param("gamma", np.ones(d))
        self.beta = self._param("beta", np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gamma, self.beta)


class FeedForward(Layer):
    """Two-layer position-wise MLP with ReLU."""

    def __init__(self, name: str, d_model: int, d_hidden: int, rng: np.random.Generator):
        super().__init__(name)
        self.fc1 = self._child(Linear(f"{name}.fc1", d_model, d_hidden, rng))
        self.fc2 = self._child(Linear(f"{name}.fc2", d_hidden, d_model, rng))

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ad.relu(self.fc1(x)))


class MaskedMultiHeadAttention(Layer):
    """Causal scaled-dot-product self-attention.

    Accepts [T, D] or [B, T, D]; output row t depends only on input rows <= t
    (future logits are set to -inf before the softmax).
    """

    def __init__(self, name: str, d_model: int, heads: int, rng: np.random.Generator):
        super().__init__(name)
        if d_model % heads != 0:
            raise ValueError(f"d_model {d_model} not divisible by heads {heads}")
        self.d_model = d_model
        self.heads = heads
        self.d_head = d_model // heads
        self.wq = self._child(Linear(f"{name}.wq", d_model, d_model, rng))
        self.wk = self._child(Linear(f"{name}.wk", d_model, d_model, rng))
        self.wv = self._child(Linear(f"{name}.wv", d_model, d_model, rng))
        self.wo = self._child(Linear(f"{name}.wo", d_model, d_model, rng))

    def __call__(self, x: Tensor) -> Tensor:
        squeeze = x.data.ndim == 2
        if squeeze:
            x = ad.reshape(x, (1,) + x.shape)
        b, t, d = x.shape
        if d != self.d_model:
            raise ad.ShapeError("masked_mha", x.shape, (self.d_model,))

        def split(h: Tensor) -> Tensor:
            h = ad.reshape(h, (b, t, self.heads, self.d_head))
            return ad.transpose(h, (0, 2, 1, 3))  # [B, H, T, Dh]

        q = split(self.wq(x))
        k = split(self.wk(x))
        v = split(self.wv(x))

        logits = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2)))
        logits = ad.mul(logits, Tensor(1.0 / math.sqrt(self.d_head)))
        mask = np.where(np.arange(t)[None, :] > np.arange(t)[:, None], -np.inf, 0.0)
        logits = ad.add(logits, Tensor(mask))
        attn = ad.softmax(logits, axis=-1)
        ctx = ad.matmul(attn, v)  # [B, H, T, Dh]
        ctx = ad.transpose(ctx, (0, 2, 1, 3))
        ctx = ad.reshape(ctx, (b, t, d))
        out = self.wo(ctx)
        if squeeze:
            out = ad.reshape(out, (t, d))
        return out


class DecoderLayer(Layer):
    """Pre-norm transformer decoder layer: x + MHA(LN(x)), then
    x + FFN(LN(x))."""

    def __init__(self, name: str, d_model: int, heads: int, d_ffn: int, rng: np.random.Generator):
        super().__init__(name)
        self.ln1 = self._child(LayerNorm(f"{name}.ln1", d_model))
        self.attn = self._child(MaskedMultiHeadAttention(f"{name}.attn", d_model, heads, rng))
        self.ln2 = self._child(LayerNorm(f"{name}.ln2", d_model))
        self.ffn = self._child(FeedForward(f"{name}.ffn", d_model, d_ffn, rng))

    def __call__(self, x: Tensor) -> Tensor:
        x = ad.add(x, self.attn(self.ln1(x)))
        x = ad.add(x, self.ffn(self.ln2(x)))
        return x
