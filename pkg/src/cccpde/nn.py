"""Trainable dense-network pieces: layers, activations, losses, Adam.

Forward and backward passes are explicit; every backward pass is checked
against central differences in the test suite. Layers accumulate parameter
gradients, so callers zero them before each optimizer step.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DomainError, ShapeError
from .numerics import LOG_TWO_PI, Rng, matmul

LEAKY_SLOPE = 0.01
PROB_CLAMP = 1e-7
LAYER_NORM_EPS = 1e-5

ACTIVATION_TAGS = ("elu", "leaky_relu", "tanh", "sigmoid", "identity")


class Param:
    """A trainable array with an accumulated gradient."""

    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def activation(tag: str, x: np.ndarray) -> np.ndarray:
    """Elementwise activation for one of ACTIVATION_TAGS."""
    if tag == "identity":
        return x
    if tag == "tanh":
        return np.tanh(x)
    if tag == "sigmoid":
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out
    if tag == "elu":
        out = x.copy()
        neg = x < 0
        out[neg] = np.expm1(x[neg])
        return out
    if tag == "leaky_relu":
        out = x.copy()
        neg = x < 0
        out[neg] = LEAKY_SLOPE * x[neg]
        return out
    raise DomainError(f"unknown activation tag: {tag!r}")


def activation_grad(tag: str, x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Upstream gradient times the activation derivative, elementwise."""
    if tag == "identity":
        return upstream
    if tag == "tanh":
        t = np.tanh(x)
        return upstream * (1.0 - t * t)
    if tag == "sigmoid":
        s = activation("sigmoid", x)
        return upstream * s * (1.0 - s)
    if tag == "elu":
        d = np.ones_like(x)
        neg = x < 0
        d[neg] = np.exp(x[neg])
        return upstream * d
    if tag == "leaky_relu":
        d = np.ones_like(x)
        d[x < 0] = LEAKY_SLOPE
        return upstream * d
    raise DomainError(f"unknown activation tag: {tag!r}")


def glorot_uniform(rng: Rng, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    u = rng.uniforms(fan_in * fan_out)
    return ((2.0 * u - 1.0) * bound).reshape(fan_in, fan_out)


class DenseLayer:
    """x @ W + b with the input cached for the backward pass."""

    def __init__(self, in_size: int, out_size: int, rng: Rng | None = None,
                 zero_init: bool = False):
        if zero_init or rng is None:
            w = np.zeros((in_size, out_size))
        else:
            w = glorot_uniform(rng, in_size, out_size)
        self.in_size = in_size
        self.out_size = out_size
        self.weight = Param(w)
        self.bias = Param(np.zeros(out_size))
        self._x: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_size:
            raise ShapeError(
                f"dense layer expects (n, {self.in_size}) input, got {x.shape}")
        self._x = x
        return matmul(x, self.weight.value) + self.bias.value

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        x = self._x
        self.weight.grad += x.T @ upstream
        self.bias.grad += upstream.sum(axis=0)
        return upstream @ self.weight.value.T

    def params(self) -> list[Param]:
        return [self.weight, self.bias]


class LayerNorm:
    """Per-row standardization followed by a learned affine map."""

    def __init__(self, dim: int):
        self.dim = dim
        self.gain = Param(np.ones(dim))
        self.bias = Param(np.zeros(dim))
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        mean = x.mean(axis=1, keepdims=True)
        var = x.var(axis=1, keepdims=True)  # population variance
        inv = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
        xhat = (x - mean) * inv
        self._cache = (xhat, inv)
        return xhat * self.gain.value + self.bias.value

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        xhat, inv = self._cache
        self.gain.grad += (upstream * xhat).sum(axis=0)
        self.bias.grad += upstream.sum(axis=0)
        g = upstream * self.gain.value
        return inv * (
            g
            - g.mean(axis=1, keepdims=True)
            - xhat * (g * xhat).mean(axis=1, keepdims=True)
        )

    def params(self) -> list[Param]:
        return [self.gain, self.bias]


def _zero_positions(n: int, rate: float, rng: Rng) -> list[int]:
    # Geometric gaps between hits; exactly iid Bernoulli(rate) per entry
    # while consuming ~rate*n uniforms instead of n.
    positions: list[int] = []
    log_keep = math.log1p(-rate)
    pos = 0
    while True:
        u = 1.0 - rng.random()
        pos += int(math.log(u) / log_keep)
        if pos >= n:
            return positions
        positions.append(pos)
        pos += 1


def dropout(x: np.ndarray, rate: float, rng: Rng | None,
            training: bool) -> tuple[np.ndarray, np.ndarray]:
    """Inverted dropout: zero with probability `rate`, rescale survivors.

    Returns (output, keep mask). Inference mode is the identity and draws
    nothing from the rng.
    """
    if not 0.0 <= rate < 1.0:
        raise DomainError(f"dropout rate must be in [0, 1), got {rate}")
    mask = np.ones(x.shape)
    if not training or rate == 0.0:
        return x, mask
    if rng is None:
        raise DomainError("training-mode dropout needs an rng")
    flat = mask.reshape(-1)
    hits = _zero_positions(flat.size, rate, rng)
    if hits:
        flat[hits] = 0.0
    return x * mask / (1.0 - rate), mask


class DenseBlock:
    """Dropout, dense layer, layer norm, then activation, in that order."""

    def __init__(self, in_size: int, out_size: int, dropout_rate: float,
                 rng: Rng | None = None, activation_tag: str = "elu"):
        if not 0.0 <= dropout_rate < 1.0:
            raise DomainError(f"dropout rate must be in [0, 1), got {dropout_rate}")
        self.dropout_rate = dropout_rate
        self.dense = DenseLayer(in_size, out_size, rng)
        self.norm = LayerNorm(out_size)
        self.activation_tag = activation_tag
        self._cache = None

    def forward(self, x: np.ndarray, rng: Rng | None = None,
                training: bool = False) -> np.ndarray:
        if training and self.dropout_rate > 0.0:
            dropped, mask = dropout(x, self.dropout_rate, rng, True)
        else:
            dropped, mask = x, None
        pre = self.norm.forward(self.dense.forward(dropped))
        self._cache = (mask, pre)
        return activation(self.activation_tag, pre)

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        mask, pre = self._cache
        g = activation_grad(self.activation_tag, pre, upstream)
        g = self.dense.backward(self.norm.backward(g))
        if mask is not None:
            g = g * mask / (1.0 - self.dropout_rate)
        return g

    def params(self) -> list[Param]:
        return self.dense.params() + self.norm.params()


class MLP:
    """Plain dense stack with per-layer activations.

    `sizes` lists the layer widths end to end; hidden layers share one
    activation and the last layer gets its own. Used for the coupling
    scale/shift nets and small regression heads.
    """

    def __init__(self, sizes: list[int], rng: Rng | None = None,
                 hidden_activation: str = "leaky_relu",
                 output_activation: str = "identity",
                 zero_init_last: bool = False):
        if len(sizes) < 2:
            raise DomainError("MLP needs at least an input and an output size")
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation
        last = len(sizes) - 2
        self.layers = [
            DenseLayer(sizes[i], sizes[i + 1], rng,
                       zero_init=(zero_init_last and i == last))
            for i in range(len(sizes) - 1)
        ]
        self._pres: list[np.ndarray] | None = None

    def _tag(self, i: int) -> str:
        return self.output_activation if i == len(self.layers) - 1 \
            else self.hidden_activation

    def forward(self, x: np.ndarray) -> np.ndarray:
        pres = []
        h = x
        for i, layer in enumerate(self.layers):
            h = layer.forward(h)
            pres.append(h)
            h = activation(self._tag(i), h)
        self._pres = pres
        return h

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        g = upstream
        for i in reversed(range(len(self.layers))):
            g = activation_grad(self._tag(i), self._pres[i], g)
            g = self.layers[i].backward(g)
        return g

    def params(self) -> list[Param]:
        return [p for layer in self.layers for p in layer.params()]


def bce_loss(p: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross entropy on probabilities.

    Probabilities are clamped to [1e-7, 1 - 1e-7] before the logs; the
    returned gradient is exact for the clamped function (zero where the
    clamp is active).
    """
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeError(f"probability shape {p.shape} != label shape {y.shape}")
    clamped = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    n = p.size
    loss = float(np.mean(-(y * np.log(clamped) + (1.0 - y) * np.log1p(-clamped))))
    inside = (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)
    grad = np.where(inside, (clamped - y) / (clamped * (1.0 - clamped)), 0.0) / n
    return loss, grad


def gaussian_nll_loss(mu: np.ndarray, log_var: np.ndarray,
                      y: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean Gaussian negative log likelihood with a log-variance head.

    Per sample: 0.5*(log 2 pi + log_var) + (y - mu)^2 / (2 exp(log_var)).
    Returns (loss, d/d mu, d/d log_var).
    """
    mu = np.asarray(mu, dtype=np.float64)
    log_var = np.asarray(log_var, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if mu.shape != log_var.shape or mu.shape != y.shape:
        raise ShapeError(
            f"shapes disagree: mu {mu.shape}, log_var {log_var.shape}, y {y.shape}")
    var = np.exp(log_var)
    resid = y - mu
    per = 0.5 * (LOG_TWO_PI + log_var) + resid * resid / (2.0 * var)
    n = mu.size
    loss = float(per.mean())
    grad_mu = (mu - y) / var / n
    grad_log_var = 0.5 * (1.0 - resid * resid / var) / n
    return loss, grad_mu, grad_log_var


class AdamState:
    """Adam with bias correction; moment buffers allocate on first use."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: list[np.ndarray] | None = None
        self._v: list[np.ndarray] | None = None

    def apply(self, params: list[np.ndarray],
              grads: list[np.ndarray]) -> list[np.ndarray]:
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        if len(params) != len(self._m) or len(grads) != len(params):
            raise ShapeError("parameter group size changed between steps")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self._m, self._v):
            if p.shape != g.shape or p.shape != m.shape:
                raise ShapeError(f"param shape {p.shape} != grad shape {g.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return params

    def step(self, params: list[Param]) -> None:
        self.apply([p.value for p in params], [p.grad for p in params])


def adam_step(state: AdamState, params: list[np.ndarray],
              grads: list[np.ndarray]) -> list[np.ndarray]:
    """One Adam update; mutates and returns the parameter arrays."""
    return state.apply(params, grads)
