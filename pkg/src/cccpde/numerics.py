"""Deterministic RNG, dense linear algebra helpers, and special functions.

Matrices are plain 2-D float64 numpy arrays throughout the package.
Randomness comes from the xoshiro256** generator below, which produces an
identical stream on every platform for a given seed; subsystems obtain
their own streams through `derive_seed`.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .errors import DomainError, NumericError, ShapeError

LOG_TWO_PI = math.log(2.0 * math.pi)

_MASK64 = (1 << 64) - 1
_DOUBLE_SCALE = 1.0 / (1 << 53)


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def derive_seed(seed: int, label: str) -> int:
    """Derive a subsystem seed from a root seed and a fixed label."""
    h = 0xCBF29CE484222325  # FNV-1a
    for byte in label.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    state, z = _splitmix64(seed & _MASK64)
    _, out = _splitmix64((z ^ h) & _MASK64)
    return out


class Rng:
    """xoshiro256** generator seeded through splitmix64.

    One Rng is owned by one thread of control; concurrent callers derive
    independent instances via `derive_seed`. Normal variates come from
    Box-Muller on the uniform stream, consumed in pairs.
    """

    def __init__(self, seed: int):
        self.seed = seed & _MASK64
        state = self.seed
        s = []
        for _ in range(4):
            state, z = _splitmix64(state)
            s.append(z)
        if not any(s):
            s[0] = 1  # the all-zero state is the one forbidden xoshiro state
        self._s = s

    def _next64(self) -> int:
        s0, s1, s2, s3 = self._s
        r = (s1 * 5) & _MASK64
        r = (((r << 7) | (r >> 57)) & _MASK64) * 9 & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & _MASK64
        self._s = [s0, s1, s2, s3]
        return r

    def random(self) -> float:
        """One uniform draw in [0, 1) with 53 random bits."""
        return (self._next64() >> 11) * _DOUBLE_SCALE

    def uniforms(self, n: int) -> np.ndarray:
        """n uniform draws in [0, 1), identical to n calls of random()."""
        if n < 0:
            raise DomainError(f"draw count must be nonnegative, got {n}")
        s0, s1, s2, s3 = self._s
        out = [0.0] * n
        for i in range(n):
            r = (s1 * 5) & _MASK64
            r = (((r << 7) | (r >> 57)) & _MASK64) * 9 & _MASK64
            t = (s1 << 17) & _MASK64
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = ((s3 << 45) | (s3 >> 19)) & _MASK64
            out[i] = (r >> 11) * _DOUBLE_SCALE
        self._s = [s0, s1, s2, s3]
        return np.array(out, dtype=np.float64)

    def normals(self, n: int) -> np.ndarray:
        """n standard-normal draws via Box-Muller on paired uniforms."""
        if n < 0:
            raise DomainError(f"draw count must be nonnegative, got {n}")
        if n == 0:
            return np.empty(0)
        pairs = (n + 1) // 2
        u = self.uniforms(2 * pairs)
        u1 = 1.0 - u[0::2]  # (0, 1], keeps the log finite
        u2 = u[1::2]
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = (2.0 * math.pi) * u2
        z = np.empty(2 * pairs)
        z[0::2] = radius * np.cos(angle)
        z[1::2] = radius * np.sin(angle)
        return z[:n]

    def randint_below(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection (no modulo bias)."""
        if n <= 0:
            raise DomainError(f"randint_below requires n >= 1, got {n}")
        span = _MASK64 + 1
        limit = span - span % n
        while True:
            r = self._next64()
            if r < limit:
                return r % n

    def permutation(self, n: int) -> np.ndarray:
        """Uniform random permutation of range(n) (Fisher-Yates)."""
        out = np.arange(n, dtype=np.int64)
        for i in range(n - 1, 0, -1):
            j = self.randint_below(i + 1)
            out[i], out[j] = out[j], out[i]
        return out


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit conformability check."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def gaussian_draws(rng: Rng, n: int) -> np.ndarray:
    """n independent standard-normal variates; n = 0 yields an empty array."""
    return rng.normals(n)


# Lanczos approximation, g = 7, 9 coefficients.
_LANCZOS_G = 7.0
_LANCZOS_COEFFS = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-06,
    1.5056327351493116e-07,
)


def log_gamma(x: float) -> float:
    """ln Gamma(x) for x > 0."""
    if not x > 0:
        raise DomainError(f"log_gamma requires x > 0, got {x}")
    if x < 0.5:
        # reflection keeps the series on its accurate range
        return math.log(math.pi / math.sin(math.pi * x)) - log_gamma(1.0 - x)
    x -= 1.0
    acc = _LANCZOS_COEFFS[0]
    for i in range(1, 9):
        acc += _LANCZOS_COEFFS[i] / (x + i)
    t = x + _LANCZOS_G + 0.5
    return 0.5 * LOG_TWO_PI + (x + 0.5) * math.log(t) - t + math.log(acc)


def finite_diff_grad(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function, entry by entry."""
    if h <= 0:
        raise DomainError(f"finite_diff_grad requires h > 0, got {h}")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        hi = float(f(x))
        x[idx] = orig - h
        lo = float(f(x))
        x[idx] = orig
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise NumericError(f"non-finite function value near index {idx}")
        grad[idx] = (hi - lo) / (2.0 * h)
    return grad


def logsumexp(a: np.ndarray, axis: int | None = None) -> np.ndarray:
    """log(sum(exp(a))) along an axis, safe against -inf rows."""
    a = np.asarray(a, dtype=np.float64)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return float(out)
    return np.squeeze(out, axis=axis)
