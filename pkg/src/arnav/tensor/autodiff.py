"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Tensors wrap numpy arrays (float64 by default).  Each primitive builds the
forward value eagerly and records a backward closure; ``Tensor.backward()``
walks the tape in reverse topological order and accumulates gradients into
every tensor with ``requires_grad`` set.

Shapes follow numpy broadcasting for elementwise ops; gradient flow through
broadcasting sums the broadcast axes back out.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "ShapeError",
    "no_grad",
    "grad_enabled",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "concat",
    "reshape",
    "transpose",
    "index",
    "tsum",
    "tmean",
    "exp",
    "relu",
    "hardtanh",
    "softmax",
    "linear",
    "layer_norm",
    "dropout",
    "embedding_lookup",
    "mean_pool_2d",
    "conv_2d",
    "cross_entropy",
    "mse",
]


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for a primitive."""

    def __init__(self, op: str, *shapes: Tuple[int, ...]):
        super().__init__(f"{op}: incompatible shapes {', '.join(map(str, shapes))}")
        self.op = op
        self.shapes = shapes


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape construction inside the block (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    # -- bookkeeping ------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, seed: Optional[np.ndarray] = None) -> None:
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() without seed requires a scalar output")
            seed = np.ones_like(self.data)
        topo: List[Tensor] = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        grads = {id(self): np.asarray(seed, dtype=np.float64)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node._accumulate(g)
            if node._backward is not None:
                for parent, pg in node._backward(g):
                    if pg is None:
                        continue
                    if id(parent) in grads:
                        grads[id(parent)] += pg
                    else:
                        grads[id(parent)] = pg

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # convenience operators used internally
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __neg__(self):
        return neg(self)


class Parameter(Tensor):
    """A named trainable tensor."""

    __slots__ = ("name",)

    def __init__(self, name: str, data):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _needs_tape(*tensors: Tensor) -> bool:
    if not _GRAD_ENABLED:
        return False
    for t in tensors:
        if t.requires_grad or t._backward is not None:
            return True
    return False


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _needs_tape(*parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise ----------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError("add", a.shape, b.shape)
    return _make(
        data,
        (a, b),
        lambda g: ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape))),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError("sub", a.shape, b.shape)
    return _make(
        data,
        (a, b),
        lambda g: ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape))),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError("mul", a.shape, b.shape)
    return _make(
        data,
        (a, b),
        lambda g: (
            (a, _unbroadcast(g * b.data, a.shape)),
            (b, _unbroadcast(g * a.data, b.shape)),
        ),
    )


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: ((a, -g),))


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)
    return _make(data, (a,), lambda g: ((a, g * data),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: ((a, g * mask),))


def hardtanh(a: Tensor, lo: float = -1.0, hi: float = 1.0) -> Tensor:
    inside = (a.data > lo) & (a.data < hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: ((a, g * inside),))


# -- reductions / shaping -------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        gg = np.asarray(g)
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        return ((a, np.broadcast_to(gg, a.shape).copy()),)

    return _make(data, (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    data = a.data.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        gg = np.asarray(g) / count
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        return ((a, np.broadcast_to(gg, a.shape).copy()),)

    return _make(data, (a,), backward)


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    orig = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: ((a, g.reshape(orig)),))


def transpose(a: Tensor, axes: Tuple[int, ...]) -> Tensor:
    inv = np.argsort(axes)
    return _make(
        np.ascontiguousarray(a.data.transpose(axes)),
        (a,),
        lambda g: ((a, g.transpose(inv)),),
    )


def index(a: Tensor, key) -> Tensor:
    """Basic slicing/indexing with gradient scatter-add."""
    data = a.data[key]

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, key, g)
        return ((a, out),)

    return _make(np.ascontiguousarray(data), (a,), backward)


def concat(parts: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[p.shape for p in parts])

    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        out = []
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            out.append((p, np.ascontiguousarray(g[tuple(sl)])))
        return tuple(out)

    out = Tensor(data)
    if _needs_tape(*parts):
        out._parents = tuple(parts)
        out._backward = backward
    return out


# -- linear algebra -------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data @ b.data
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape)

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return ((a, _unbroadcast(ga, a.shape)), (b, _unbroadcast(gb, b.shape)))

    return _make(data, (a, b), backward)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Affine map ``x @ w + b`` with ``w`` shaped [in, out]."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError("linear", x.shape, w.shape)
    y = matmul(x, w)
    if b is not None:
        if b.shape != (w.shape[1],):
            raise ShapeError("linear-bias", b.shape, w.shape)
        y = add(y, b)
    return y


# -- normalization / activation over features -----------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((a, y * (g - dot)),)

    return _make(y, (a,), backward)


def layer_norm(
    x: Tensor,
    gamma: Optional[Tensor] = None,
    beta: Optional[Tensor] = None,
    eps: float = 1e-5,
) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then optionally
    apply the affine (gamma, beta)."""
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    parents: List[Tensor] = [x]
    if gamma is not None:
        parents.append(gamma)
    if beta is not None:
        parents.append(beta)

    gdata = gamma.data if gamma is not None else None
    y = xhat if gdata is None else xhat * gdata
    if beta is not None:
        y = y + beta.data

    def backward(g):
        grads = []
        gy = g if gdata is None else g * gdata
        # d xhat / d x contributions
        gsum = gy.sum(axis=-1, keepdims=True)
        gdotx = (gy * xhat).sum(axis=-1, keepdims=True)
        gx = inv * (gy - gsum / d - xhat * gdotx / d)
        grads.append((x, gx))
        if gamma is not None:
            axes = tuple(range(g.ndim - 1))
            grads.append((gamma, (g * xhat).sum(axis=axes)))
        if beta is not None:
            axes = tuple(range(g.ndim - 1))
            grads.append((beta, g.sum(axis=axes)))
        return tuple(grads)

    return _make(y, parents, backward)


# -- stochastic / lookup --------------------------------------------------


def dropout(x: Tensor, rate: float, rng: np.random.Generator, train: bool) -> Tensor:
    """Inverted dropout: identity in eval mode, kept values scaled by
    1/(1-rate) in train mode."""
    if not train or rate == 0.0:
        return x
    if not (0.0 <= rate < 1.0):
        raise ValueError(f"dropout rate {rate} outside [0, 1)")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _make(x.data * keep, (x,), lambda g: ((x, g * keep),))


def embedding_lookup(table: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows of ``table`` by integer index array."""
    idx = np.asarray(idx)
    data = table.data[idx]

    def backward(g):
        out = np.zeros_like(table.data)
        np.add.at(out, idx, g)
        return ((table, out),)

    return _make(np.ascontiguousarray(data), (table,), backward)


# -- convolution / pooling ------------------------------------------------


def mean_pool_2d(x: Tensor) -> Tensor:
    """Global average pool over the trailing (H, W) axes: [..., C, H, W] ->
    [..., C]."""
    if x.data.ndim < 3:
        raise ShapeError("mean_pool_2d", x.shape)
    h, w = x.shape[-2], x.shape[-1]
    data = x.data.mean(axis=(-1, -2))

    def backward(g):
        gx = np.broadcast_to(g[..., None, None] / (h * w), x.shape).copy()
        return ((x, gx),)

    return _make(data, (x,), backward)


def conv_2d(
    x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, padding: int = 0
) -> Tensor:
    """2-D convolution.  x: [N, C, H, W]; w: [F, C, KH, KW]; b: [F]."""
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError("conv_2d", x.shape, w.shape)
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    if h + 2 * padding < kh or wd + 2 * padding < kw:
        raise ShapeError("conv_2d", x.shape, w.shape)
    xp = (
        np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        if padding
        else x.data
    )
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride, :, :]  # [N, C, OH, OW, KH, KW]
    data = np.einsum("nchwij,fcij->nfhw", windows, w.data, optimize=True)
    if b is not None:
        if b.shape != (f,):
            raise ShapeError("conv_2d-bias", b.shape, w.shape)
        data = data + b.data[None, :, None, None]

    def backward(g):
        grads = []
        gw = np.einsum("nchwij,nfhw->fcij", windows, g, optimize=True)
        gxp = np.zeros_like(xp)
        for ki in range(kh):
            for kj in range(kw):
                patch = np.einsum("nfhw,fc->nchw", g, w.data[:, :, ki, kj], optimize=True)
                gxp[:, :, ki : ki + oh * stride : stride, kj : kj + ow * stride : stride] += patch
        gx = gxp[:, :, padding : padding + h, padding : padding + wd] if padding else gxp
        grads.append((x, np.ascontiguousarray(gx)))
        grads.append((w, gw))
        if b is not None:
            grads.append((b, g.sum(axis=(0, 2, 3))))
        return tuple(grads)

    parents = [x, w] + ([b] if b is not None else [])
    return _make(data, parents, backward)


# -- losses ---------------------------------------------------------------


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy; logits [N, C], labels int [N]."""
    labels = np.asarray(labels)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError("cross_entropy", logits.shape, labels.shape)
    n, c = logits.shape
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"cross_entropy: label outside [0, {c})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    loge = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    data = -loge[np.arange(n), labels].mean()

    def backward(g):
        p = np.exp(loge)
        p[np.arange(n), labels] -= 1.0
        return ((logits, g * p / n),)

    return _make(np.asarray(data), (logits,), backward)


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over all elements."""
    target = _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError("mse", pred.shape, target.shape)
    diff = pred.data - target.data
    data = np.asarray((diff * diff).mean())
    n = pred.size

    def backward(g):
        gd = g * 2.0 * diff / n
        return ((pred, gd), (target, -gd))

    return _make(data, (pred, target), backward)
