"""Small numerical toolkit: stable softmax, keyed RNG streams and a gradient checker.

Dense matrices are plain ``numpy.ndarray`` objects of dtype float64 (C order,
i.e. row-major). Every model module in the package hand-derives its gradients
and verifies them with :func:`finite_diff_check`.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import InvalidArgument, NumericalFailure

FLOAT = np.float64

_MASK64 = (1 << 64) - 1


def as_matrix(data, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Return ``data`` as a finite row-major float64 matrix."""
    arr = np.ascontiguousarray(data, dtype=FLOAT)
    if rows is not None and cols is not None:
        if arr.size != rows * cols:
            raise InvalidArgument(f"expected {rows * cols} entries, got {arr.size}")
        arr = arr.reshape(rows, cols)
    if arr.ndim != 2:
        raise InvalidArgument(f"expected a 2-d matrix, got shape {arr.shape}")
    check_finite(arr, "matrix")
    return arr


def check_finite(arr, what: str = "value") -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericalFailure(f"non-finite {what}")


def softmax(v, axis: int = -1) -> np.ndarray:
    """Max-subtracted softmax along ``axis``."""
    x = np.asarray(v, dtype=FLOAT)
    if x.size == 0 or x.shape[axis] == 0:
        raise InvalidArgument("softmax of an empty vector")
    if not np.all(np.isfinite(x)):
        raise InvalidArgument("softmax input must be finite")
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(v, axis: int = -1) -> np.ndarray:
    x = np.asarray(v, dtype=FLOAT)
    if x.size == 0 or x.shape[axis] == 0:
        raise InvalidArgument("log_softmax of an empty vector")
    z = x - np.max(x, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def masked_softmax(x: np.ndarray, mask: np.ndarray | None, axis: int = -1) -> np.ndarray:
    """Softmax where ``mask == False`` entries get -inf before normalisation.

    Rows that are fully masked come back as all zeros instead of NaN.
    """
    x = np.asarray(x, dtype=FLOAT)
    if mask is None:
        z = x - np.max(x, axis=axis, keepdims=True)
        e = np.exp(z)
        return e / np.sum(e, axis=axis, keepdims=True)
    mask = np.broadcast_to(mask, x.shape)
    filled = np.where(mask, x, -np.inf)
    mx = np.max(filled, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.where(mask, np.exp(filled - mx), 0.0)
    s = np.sum(e, axis=axis, keepdims=True)
    return np.divide(e, s, out=np.zeros_like(e), where=s > 0)


def sigmoid(x):
    x = np.asarray(x, dtype=FLOAT)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logloss(p, y, eps: float = 1e-12) -> float:
    """Mean binary cross-entropy; labels may be fractional."""
    p = np.clip(np.asarray(p, dtype=FLOAT), eps, 1.0 - eps)
    y = np.asarray(y, dtype=FLOAT)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def logloss_from_logits(logits, y) -> float:
    """Mean binary cross-entropy computed from logits without clipping."""
    z = np.asarray(logits, dtype=FLOAT)
    y = np.asarray(y, dtype=FLOAT)
    # log(1 + e^z) - y z, written stably
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def finite_diff_check(
    f: Callable[[np.ndarray], float],
    params,
    analytic_grad,
    eps: float = 1e-6,
) -> float:
    """Max relative error between ``analytic_grad`` and a central-difference gradient.

    The error for coordinate ``i`` is ``|g_fd - g| / max(1, |g_fd|, |g|)``.
    """
    if not (0.0 < eps <= 1e-2):
        raise InvalidArgument("eps must lie in (0, 1e-2]")
    x = np.array(params, dtype=FLOAT).ravel()
    g = np.asarray(analytic_grad, dtype=FLOAT).ravel()
    if g.shape != x.shape:
        raise InvalidArgument("gradient and parameter shapes differ")
    worst = 0.0
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + eps
        fp = f(x.copy())
        x[i] = orig - eps
        fm = f(x.copy())
        x[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalFailure(f"loss not finite around coordinate {i}")
        fd = (fp - fm) / (2.0 * eps)
        err = abs(fd - g[i]) / max(1.0, abs(fd), abs(g[i]))
        worst = max(worst, err)
    return float(worst)


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class RngStream:
    """Counter-based random stream keyed by ``(seed, stream_id)``.

    Backed by numpy's Philox generator with the 128-bit key set to the pair, so the
    sequence depends only on the key and is the same on every platform.
    """

    __slots__ = ("seed", "stream_id", "_gen")

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def child(self, *labels: int | str) -> "RngStream":
        """Derive an independent stream; labels are mixed into the stream id."""
        sid = self.stream_id
        for lab in labels:
            if isinstance(lab, str):
                lab = int.from_bytes(lab.encode("utf-8")[:8].ljust(8, b"\0"), "little") ^ len(lab)
            sid = _splitmix64(sid ^ _splitmix64(int(lab) & _MASK64))
        return RngStream(self.seed, sid)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def bernoulli(self, p, size=None):
        return self._gen.random(size) < p

    def beta(self, a, b, size=None):
        return self._gen.beta(a, b, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def choice(self, a, size=None, replace=True, p=None):
        return self._gen.choice(a, size=size, replace=replace, p=p)

    def permutation(self, x):
        return self._gen.permutation(x)


def seeded_rng(seed: int, stream_id: int = 0) -> RngStream:
    return RngStream(seed, stream_id)


def flatten_params(params: dict[str, np.ndarray], keys: Sequence[str] | None = None) -> np.ndarray:
    keys = list(params) if keys is None else list(keys)
    return np.concatenate([np.asarray(params[k], dtype=FLOAT).ravel() for k in keys]) if keys else np.zeros(0)


def unflatten_params(vec: np.ndarray, like: dict[str, np.ndarray], keys: Sequence[str] | None = None) -> dict:
    keys = list(like) if keys is None else list(keys)
    out = dict(like)
    pos = 0
    for k in keys:
        n = np.asarray(like[k]).size
        out[k] = np.asarray(vec[pos:pos + n], dtype=FLOAT).reshape(np.shape(like[k]))
        pos += n
    if pos != vec.size:
        raise InvalidArgument("vector length does not match parameter layout")
    return out


class Adam:
    """Adam over a dict of arrays. Used by the teacher and the reranker."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / (1 - b1 ** self.t)
            vhat = self.v[k] / (1 - b2 ** self.t)
            params[k] = params[k] - self.lr * mhat / (np.sqrt(vhat) + self.eps)
