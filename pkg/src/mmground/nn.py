"""Shared transformer building blocks on top of the autodiff core."""

from __future__ import annotations

from typing import Dict, Optional

import numpy as np

from .autodiff import Tensor, add, gelu, layer_norm, matmul, mul, parameter, reshape, softmax, transpose


def normal_init(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    out = matmul(x, w)
    return add(out, b) if b is not None else out


class ParamStore:
    """Flat name->Tensor registry shared by every trainable component."""

    def __init__(self):
        self.params: Dict[str, Tensor] = {}

    def create(self, name: str, data: np.ndarray, trainable: bool = True) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name}")
        t = parameter(data, name)
        t.requires_grad = trainable
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def names_with_prefix(self, prefix: str):
        return [n for n in self.params if n.startswith(prefix)]


def split_heads(x: Tensor, heads: int) -> Tensor:
    b, l, d = x.shape
    x = reshape(x, (b, l, heads, d // heads))
    return transpose(x, (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    b, h, l, dh = x.shape
    x = transpose(x, (0, 2, 1, 3))
    return reshape(x, (b, l, h * dh))


def multihead_attention(
    store: ParamStore,
    prefix: str,
    q_src: Tensor,
    kv_src: Tensor,
    heads: int,
    additive_mask: Optional[np.ndarray] = None,
) -> Tensor:
    """Projections named {prefix}/wq|wk|wv|wo; mask broadcasts over scores."""
    q = split_heads(linear(q_src, store[f"{prefix}/wq"]), heads)
    k = split_heads(linear(kv_src, store[f"{prefix}/wk"]), heads)
    v = split_heads(linear(kv_src, store[f"{prefix}/wv"]), heads)
    dh = q.shape[-1]
    scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    if additive_mask is not None:
        scores = add(scores, Tensor(additive_mask))
    weights = softmax(scores, axis=-1)
    ctx = merge_heads(matmul(weights, v))
    return linear(ctx, store[f"{prefix}/wo"])


def feed_forward(store: ParamStore, prefix: str, x: Tensor) -> Tensor:
    h = gelu(linear(x, store[f"{prefix}/w1"], store[f"{prefix}/b1"]))
    return linear(h, store[f"{prefix}/w2"], store[f"{prefix}/b2"])


def layer_norm_named(store: ParamStore, prefix: str, x: Tensor) -> Tensor:
    return layer_norm(x, store[f"{prefix}/gain"], store[f"{prefix}/bias"])


def init_attention(store: ParamStore, prefix: str, d: int, rng: np.random.Generator, std: float) -> None:
    for w in ("wq", "wk", "wv", "wo"):
        store.create(f"{prefix}/{w}", normal_init(rng, (d, d), std))


def init_feed_forward(store: ParamStore, prefix: str, d: int, d_ff: int, rng: np.random.Generator, std: float) -> None:
    store.create(f"{prefix}/w1", normal_init(rng, (d, d_ff), std))
    store.create(f"{prefix}/b1", np.zeros(d_ff))
    store.create(f"{prefix}/w2", normal_init(rng, (d_ff, d), std))
    store.create(f"{prefix}/b2", np.zeros(d))


def init_layer_norm(store: ParamStore, prefix: str, d: int) -> None:
    store.create(f"{prefix}/gain", np.ones(d))
    store.create(f"{prefix}/bias", np.zeros(d))


def causal_mask(length: int) -> np.ndarray:
    m = np.zeros((length, length))
    m[np.triu_indices(length, k=1)] = -1e30
    return m


def key_padding_mask(valid: np.ndarray) -> np.ndarray:
    """(B, L) boolean validity -> (B, 1, 1, L) additive mask."""
    mask = np.where(np.asarray(valid, dtype=bool), 0.0, -1e30)
    return mask[:, None, None, :]
