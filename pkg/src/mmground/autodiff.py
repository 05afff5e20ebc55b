"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just enough machinery for a small transformer stack: broadcasting
elementwise ops, batched matmul, embedding lookup, layer norm, softmax,
GELU and a masked sequence NLL. Everything runs in float64 and in a fixed
reduction order, so identical seeds give bitwise-identical results.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

DTYPE = np.float64

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "name")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: Tuple["Tensor", ...] = (),
        backward: Optional[Callable[[np.ndarray], None]] = None,
        name: Optional[str] = None,
    ):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad and _grad_enabled
        self._backward = backward if _grad_enabled else None
        self._parents = parents if _grad_enabled else ()
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE)
        else:
            self.grad += g

    def backward(self) -> None:
        """Backpropagate from a scalar root."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar root")
        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def item(self) -> float:
        return float(self.data)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}, name={self.name})"


def _topo_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    seen = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str) -> Tensor:
    return Tensor(np.array(data, dtype=DTYPE), requires_grad=True, name=name)


def _needs_graph(*tensors: Tensor) -> bool:
    return _grad_enabled and any(t.requires_grad or t._parents for t in tensors)


def _reduce_to(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data
    if not _needs_graph(a, b):
        return Tensor(out_data)

    def bwd(g):
        if a.requires_grad or a._parents:
            a.accumulate(_reduce_to(g, a.data.shape))
        if b.requires_grad or b._parents:
            b.accumulate(_reduce_to(g, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data
    if not _needs_graph(a, b):
        return Tensor(out_data)

    def bwd(g):
        if a.requires_grad or a._parents:
            a.accumulate(_reduce_to(g * b.data, a.data.shape))
        if b.requires_grad or b._parents:
            b.accumulate(_reduce_to(g * a.data, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=bwd)


def _swap_last(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data @ b.data
    if not _needs_graph(a, b):
        return Tensor(out_data)

    def bwd(g):
        if a.requires_grad or a._parents:
            ga = g @ _swap_last(b.data)
            a.accumulate(_reduce_to(ga, a.data.shape))
        if b.requires_grad or b._parents:
            gb = _swap_last(a.data) @ g
            b.accumulate(_reduce_to(gb, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=bwd)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.reshape(shape)
    if not _needs_graph(a):
        return Tensor(out_data)

    def bwd(g):
        a.accumulate(g.reshape(a.data.shape))

    return Tensor(out_data, parents=(a,), backward=bwd)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.transpose(axes)
    if not _needs_graph(a):
        return Tensor(out_data)
    inverse = np.argsort(axes)

    def bwd(g):
        a.accumulate(g.transpose(inverse))

    return Tensor(out_data, parents=(a,), backward=bwd)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    if not _needs_graph(*tensors):
        return Tensor(out_data)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad or t._parents:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.accumulate(g[tuple(idx)])

    return Tensor(out_data, parents=tuple(tensors), backward=bwd)


def index0(x: Tensor, i: int) -> Tensor:
    """Select one row along the leading axis."""
    x = as_tensor(x)
    out_data = x.data[i]
    if not _needs_graph(x):
        return Tensor(out_data)

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[i] = g
        x.accumulate(gx)

    return Tensor(out_data, parents=(x,), backward=bwd)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    out_data = table.data[ids]
    if not _needs_graph(table):
        return Tensor(out_data)

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        table.accumulate(gt)

    return Tensor(out_data, parents=(table,), backward=bwd)


def layer_norm(x, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = xhat * gain.data + bias.data
    if not _needs_graph(x, gain, bias):
        return Tensor(out_data)

    def bwd(g):
        if gain.requires_grad or gain._parents:
            gain.accumulate(_reduce_to(g * xhat, gain.data.shape))
        if bias.requires_grad or bias._parents:
            bias.accumulate(_reduce_to(g, bias.data.shape))
        if x.requires_grad or x._parents:
            gx = g * gain.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            x.accumulate((gx - m1 - xhat * m2) * inv)

    return Tensor(out_data, parents=(x, gain, bias), backward=bwd)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x) -> Tensor:
    x = as_tensor(x)
    u = _GELU_C * (x.data + 0.044715 * x.data**3)
    t = np.tanh(u)
    out_data = 0.5 * x.data * (1.0 + t)
    if not _needs_graph(x):
        return Tensor(out_data)

    def bwd(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x.data**2)
        dx = 0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t**2) * du
        x.accumulate(g * dx)

    return Tensor(out_data, parents=(x,), backward=bwd)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    if not _needs_graph(x):
        return Tensor(y)

    def bwd(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        x.accumulate((g - inner) * y)

    return Tensor(y, parents=(x,), backward=bwd)


def tsum(x, weights: Optional[np.ndarray] = None) -> Tensor:
    """Weighted sum of all entries (weights are constants, not differentiated)."""
    x = as_tensor(x)
    w = None if weights is None else np.asarray(weights, dtype=DTYPE)
    out_data = np.sum(x.data if w is None else x.data * w)
    if not _needs_graph(x):
        return Tensor(out_data)

    def bwd(g):
        x.accumulate(g * (np.ones_like(x.data) if w is None else w))

    return Tensor(out_data, parents=(x,), backward=bwd)


def masked_sequence_nll(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Per-sample mean NLL over masked positions.

    logits: (B, L, V); targets: (B, L) int ids; mask: (B, L) in {0,1}.
    Returns a (B,) tensor; every sample must have at least one masked-in
    position (callers validate and raise their own error otherwise).
    """
    targets = np.asarray(targets)
    mask = np.asarray(mask, dtype=DTYPE)
    counts = mask.sum(axis=-1)
    if np.any(counts == 0):
        raise ValueError("masked_sequence_nll: sample with empty mask")
    m = logits.data.max(axis=-1, keepdims=True)
    e = np.exp(logits.data - m)
    z = e.sum(axis=-1, keepdims=True)
    lse = m[..., 0] + np.log(z[..., 0])
    b_idx, l_idx = np.indices(targets.shape)
    picked = logits.data[b_idx, l_idx, targets]
    nll = (lse - picked) * mask
    out_data = nll.sum(axis=-1) / counts
    if not _needs_graph(logits):
        return Tensor(out_data)
    probs = e / z

    def bwd(g):
        scale = (g / counts)[:, None] * mask
        glogits = probs * scale[..., None]
        glogits[b_idx, l_idx, targets] -= scale
        logits.accumulate(glogits)

    return Tensor(out_data, parents=(logits,), backward=bwd)


def grad_check(
    build_loss: Callable[[], Tensor],
    params: Iterable[Tensor],
    h: float = 1e-5,
    max_entries: int = 0,
    floor: float = 1e-3,
):
    """Central-difference check; returns the max relative error over params.

    ``build_loss`` must rebuild the scalar loss from current parameter data.
    With ``max_entries`` 0, every entry of every tensor is checked. The
    denominator is floored: float64 central differences carry ~1e-8 absolute
    noise (loss round-off / 2h), so entries whose true gradient sits below
    ``floor`` are held to an absolute tolerance of floor*rtol instead of a
    meaningless pure ratio.
    """
    params = list(params)
    for p in params:
        p.grad = None
    loss = build_loss()
    loss.backward()
    analytic = {id(p): np.zeros_like(p.data) if p.grad is None else np.array(p.grad) for p in params}
    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        n = flat.size if max_entries == 0 else min(flat.size, max_entries)
        for i in range(n):
            orig = flat[i]
            flat[i] = orig + h
            up = build_loss().item()
            flat[i] = orig - h
            down = build_loss().item()
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            a = analytic[id(p)].reshape(-1)[i]
            denom = max(abs(a), abs(numeric), floor)
            worst = max(worst, abs(a - numeric) / denom)
    return worst
