"""Shared test utilities: error metrics, gradient oracles, AUC brute force."""

from __future__ import annotations

import numpy as np

from cccpde.numerics import finite_diff_grad


def rel_err(a, b) -> float:
    """Max absolute difference scaled by the larger operand magnitude."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-12)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def worst_param_grad_err(params, run_backward, eval_loss, h=1e-6) -> float:
    """Analytic parameter gradients vs central differences, worst case."""
    for p in params:
        p.zero_grad()
    run_backward()
    worst = 0.0
    for p in params:
        def f(v, p=p):
            old = p.value.copy()
            p.value[...] = v
            out = eval_loss()
            p.value[...] = old
            return out
        fd = finite_diff_grad(f, p.value.copy(), h)
        worst = max(worst, rel_err(fd, p.grad))
    return worst


def input_grad_err(forward, backward, x, weights, h=1e-6) -> float:
    """Input gradient of sum(weights * forward(x)) vs central differences.

    The finite-difference sweep runs first because forward passes clobber
    layer caches; the canonical forward/backward pair runs after.
    """
    def f(v):
        return float((forward(v) * weights).sum())

    fd = finite_diff_grad(f, x.copy(), h)
    forward(x)
    g = backward(weights)
    return rel_err(fd, g)


def auc_bruteforce(scores, labels) -> float:
    """Pair-counting AUC: correctly ordered pairs plus half credit on ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return (wins + 0.5 * ties) / (pos.size * neg.size)


def constant_coupling(dim, scale_value, shift_value, hidden=4):
    """Coupling layer with constant scale/shift and identity permutation."""
    from cccpde.flow import CouplingLayer

    layer = CouplingLayer(dim, hidden, rng=None)
    layer.scale_net.layers[-1].bias.value[...] = np.arctanh(scale_value)
    layer.shift_net.layers[-1].bias.value[...] = shift_value
    return layer


def random_coupling(dim, hidden, rng, split=None):
    """Coupling layer with randomized (non-identity) transform weights."""
    from cccpde.flow import CouplingLayer

    return CouplingLayer(dim, hidden, rng, split=split, zero_init_outputs=False)


def numerical_coupling_logdet(layer, x_row, h=1e-6) -> float:
    """log |det| of the layer Jacobian at one point, by central differences."""
    dim = layer.dim
    jac = np.zeros((dim, dim))
    for j in range(dim):
        xp = x_row.copy()
        xm = x_row.copy()
        xp[j] += h
        xm[j] -= h
        yp, _ = layer.forward(xp[None, :])
        ym, _ = layer.forward(xm[None, :])
        jac[:, j] = (yp - ym)[0] / (2.0 * h)
    sign, logdet = np.linalg.slogdet(jac)
    assert sign != 0  # permutation parity may flip the sign; magnitude matters
    return float(logdet)
