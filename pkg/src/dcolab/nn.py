"""Layers with hand-written backward passes for the teacher and the reranker.

Each ``*_forward`` returns ``(out, cache)``; the matching ``*_backward`` takes
the cache and the upstream gradient and returns input and parameter
gradients. Sequence tensors are ``(batch, length, width)``; a boolean
``mask`` of shape ``(batch, length)`` marks real (unpadded) positions.
"""
from __future__ import annotations

import numpy as np

from .errors import InvalidArgument

NEG_INF = -1e30     # finite stand-in for -inf keeps fully masked rows NaN-free


def _mm(x, W):
    # 2-d matmul is much faster than numpy's broadcast path for (b, l, w) @ (w, k)
    return (x.reshape(-1, x.shape[-1]) @ W).reshape(x.shape[:-1] + (W.shape[1],))


def linear_forward(x, W, b):
    return _mm(x, W) + b, x


def linear_backward(dy, x, W):
    """Returns ``(dx, dW, db)``; leading axes of ``x`` are flattened for dW."""
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return (dy2 @ W.T).reshape(x.shape), x2.T @ dy2, dy2.sum(axis=0)


def relu_forward(x):
    return np.maximum(x, 0.0), x > 0


def relu_backward(dy, positive):
    return dy * positive


def layernorm_forward(x, gain, shift, eps: float = 1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return xhat * gain + shift, (xhat, inv)


def layernorm_backward(dy, cache, gain):
    xhat, inv = cache
    n = xhat.shape[-1]
    dxhat = dy * gain
    dx = inv / n * (n * dxhat - dxhat.sum(axis=-1, keepdims=True)
                    - xhat * np.sum(dxhat * xhat, axis=-1, keepdims=True))
    dgain = np.sum((dy * xhat).reshape(-1, n), axis=0)
    dshift = dy.reshape(-1, n).sum(axis=0)
    return dx, dgain, dshift


def dropout_forward(x, rate: float, rng=None):
    """Inverted dropout; identity when ``rng`` is None or ``rate`` is 0."""
    if rng is None or rate <= 0.0:
        return x, None
    keep = (rng.uniform(size=x.shape) >= rate) / (1.0 - rate)
    return x * keep, keep


def dropout_backward(dy, keep):
    return dy if keep is None else dy * keep


def scaled_attention_forward(Q, K, V, key_mask=None):
    """``softmax(Q K^T / sqrt(d)) V`` over the last two axes.

    ``key_mask`` (broadcastable to the score shape without the query axis)
    hides keys; at least one key per row must stay visible.
    """
    d = Q.shape[-1]
    S = Q @ np.swapaxes(K, -1, -2) / np.sqrt(d)
    if key_mask is not None:
        S = np.where(key_mask[..., None, :], S, NEG_INF)
    S = S - S.max(axis=-1, keepdims=True)
    A = np.exp(S)
    A /= A.sum(axis=-1, keepdims=True)
    return A @ V, (Q, K, V, A)


def scaled_attention_backward(dO, cache):
    Q, K, V, A = cache
    d = Q.shape[-1]
    dV = np.swapaxes(A, -1, -2) @ dO
    dA = dO @ np.swapaxes(V, -1, -2)
    dS = A * (dA - np.sum(dA * A, axis=-1, keepdims=True)) / np.sqrt(d)
    dQ = dS @ K
    dK = np.swapaxes(dS, -1, -2) @ Q
    return dQ, dK, dV


def _split(x, heads):
    b, l, w = x.shape
    return x.reshape(b, l, heads, w // heads).transpose(0, 2, 1, 3)


def _merge(x):
    b, h, l, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, l, h * dh)


def mha_forward(x, p: dict, prefix: str, heads: int, mask=None):
    """Multi-head self-attention with output projection.

    Parameters are read from ``p[prefix + name]`` for names ``Wq, bq, Wk, bk,
    Wv, bv, Wo, bo``.
    """
    width = x.shape[-1]
    if width % heads:
        raise InvalidArgument(f"width {width} is not divisible by {heads} heads")
    q = _split(_mm(x, p[prefix + "Wq"]) + p[prefix + "bq"], heads)
    k = _split(_mm(x, p[prefix + "Wk"]) + p[prefix + "bk"], heads)
    v = _split(_mm(x, p[prefix + "Wv"]) + p[prefix + "bv"], heads)
    km = None if mask is None else mask[:, None, :]
    o, att = scaled_attention_forward(q, k, v, km)
    om = _merge(o)
    return _mm(om, p[prefix + "Wo"]) + p[prefix + "bo"], (x, att, om)


def mha_backward(dy, cache, p: dict, prefix: str, heads: int):
    """Returns ``(dx, grads)`` with grads keyed like the parameters."""
    x, att, om = cache
    g = {}
    dom, g[prefix + "Wo"], g[prefix + "bo"] = linear_backward(dy, om, p[prefix + "Wo"])
    dq, dk, dv = scaled_attention_backward(_split(dom, heads), att)
    dx = np.zeros_like(x)
    for name, dpart in (("q", dq), ("k", dk), ("v", dv)):
        dxp, g[prefix + "W" + name], g[prefix + "b" + name] = linear_backward(
            _merge(dpart), x, p[prefix + "W" + name])
        dx += dxp
    return dx, g


def init_mha(p: dict, prefix: str, width: int, rng, scale: float | None = None) -> None:
    s = 1.0 / np.sqrt(width) if scale is None else scale
    for name in ("q", "k", "v", "o"):
        p[prefix + "W" + name] = rng.normal(0.0, s, (width, width))
        p[prefix + "b" + name] = np.zeros(width)
