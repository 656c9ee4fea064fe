"""Shared numeric primitives: stable nonlinearities, a deterministic PRNG,
and the central-difference gradient oracle used to check every hand-written
backward pass.

All array math in this package is float64.  Dense matrices are plain
C-contiguous ``np.ndarray`` objects; there is no wrapper type.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class Rng:
    """SplitMix64 generator with explicit 64-bit state.

    The platform RNGs are avoided on purpose: the whole pipeline has to be
    bit-reproducible across OSes, so the generator is small enough to spell
    out exactly.  Instances are single-owner; parallel work should derive
    independent children via :meth:`spawn`.
    """

    def __init__(self, seed: int):
        if seed < 0:
            raise ValueError("seed must be a nonnegative integer")
        self.seed = seed & _MASK64
        self._state = self.seed
        self._spare_normal: float | None = None

    def _next64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def spawn(self, key: int) -> "Rng":
        """Derive an independent child generator (does not advance self)."""
        mix = Rng((self.seed ^ ((key + 1) * _GOLDEN)) & _MASK64)
        return Rng(mix._next64())

    def uniform(self, size=None):
        """Uniform draws in [0, 1)."""
        if size is None:
            return (self._next64() >> 11) * 2.0**-53
        n = int(np.prod(size))
        out = np.empty(n)
        for i in range(n):
            out[i] = (self._next64() >> 11) * 2.0**-53
        return out.reshape(size)

    def normal(self, size=None, scale: float = 1.0):
        """Standard normal draws via Marsaglia's polar method.

        Only sqrt/log are used (no trig) to keep the libm surface small.
        """
        if size is None:
            return self._one_normal() * scale
        n = int(np.prod(size))
        out = np.empty(n)
        for i in range(n):
            out[i] = self._one_normal()
        return out.reshape(size) * scale

    def _one_normal(self) -> float:
        if self._spare_normal is not None:
            z = self._spare_normal
            self._spare_normal = None
            return z
        while True:
            u = 2.0 * ((self._next64() >> 11) * 2.0**-53) - 1.0
            v = 2.0 * ((self._next64() >> 11) * 2.0**-53) - 1.0
            s = u * u + v * v
            if 0.0 < s < 1.0:
                f = math.sqrt(-2.0 * math.log(s) / s)
                self._spare_normal = v * f
                return u * f

    def randbelow(self, n: int) -> int:
        """Integer in [0, n) by multiply-shift (no platform modulo)."""
        if n <= 0:
            raise ValueError("n must be positive")
        return (self._next64() * n) >> 64

    def randint(self, lo: int, hi: int) -> int:
        """Integer in [lo, hi] inclusive."""
        if hi < lo:
            raise ValueError("empty range")
        return lo + self.randbelow(hi - lo + 1)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample_indices(self, n: int, k: int) -> list[int]:
        """k distinct indices from range(n), order randomized."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot sample {k} from {n}")
        idx = list(range(n))
        for i in range(k):
            j = i + self.randbelow(n - i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx[:k]


def sigmoid(x):
    """Numerically stable logistic function; never overflows for finite x."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def softmax(v):
    """Probability vector from a finite score vector (max-subtracted).

    For a 2-D input the softmax is applied row-wise.
    """
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise ValueError("softmax of empty input")
    if not np.all(np.isfinite(v)):
        raise ValueError("softmax of non-finite input")
    shifted = v - v.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def logsumexp(a, axis=None):
    a = np.asarray(a, dtype=float)
    m = a.max(axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return out.item()
    return np.squeeze(out, axis=axis)


def finite_diff_grad(f, theta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function.

    This is the verification oracle for the analytic backward passes; it is
    deliberately independent of any of them.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    theta = np.asarray(theta, dtype=float)
    grad = np.empty_like(theta)
    flat = theta.reshape(-1)
    gflat = grad.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + eps
        fp = f(theta)
        flat[j] = orig - eps
        fm = f(theta)
        flat[j] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite function value at coordinate {j}")
        gflat[j] = (fp - fm) / (2.0 * eps)
    return grad
