"""Compiled fast path for three-layer dense nets (the default architecture).

Semantics match the generic numpy code in ``nn.py`` up to the order of
floating-point reductions; ``tests/test_nn.py`` checks the two against each
other.
"""

from __future__ import annotations

import numpy as np
from numba import njit

ACT_CODES = {"identity": 0, "tanh": 1, "relu": 2}


@njit(cache=True)
def _layer(x, w, b, code, out):
    np.dot(x, w, out)
    n, m = out.shape
    for i in range(n):
        for j in range(m):
            z = out[i, j] + b[j]
            if code == 1:
                z = np.tanh(z)
            elif code == 2 and z < 0.0:
                z = 0.0
            out[i, j] = z


@njit(cache=True)
def _dact(g, out, code):
    if code == 0:
        return
    n, m = g.shape
    for i in range(n):
        for j in range(m):
            if code == 1:
                g[i, j] *= 1.0 - out[i, j] * out[i, j]
            elif out[i, j] <= 0.0:
                g[i, j] = 0.0


@njit(cache=True)
def _forward_into(x, w1, b1, w2, b2, w3, b3, c1, c2, c3, h1, h2, y):
    _layer(x, w1, b1, c1, h1)
    _layer(h1, w2, b2, c2, h2)
    _layer(h2, w3, b3, c3, y)


@njit(cache=True)
def _backward_into(h1, h2, y, w1, w2, w3, c1, c2, c3, g3, g2, g1, gx):
    """``g3`` holds the upstream gradient on entry; on exit ``g3, g2, g1`` hold
    pre-activation gradients and ``gx`` the input gradient."""
    _dact(g3, y, c3)
    np.dot(g3, w3.T, g2)
    _dact(g2, h2, c2)
    np.dot(g2, w2.T, g1)
    _dact(g1, h1, c1)
    np.dot(g1, w1.T, gx)


@njit(cache=True)
def forward3(x, w1, b1, w2, b2, w3, b3, c1, c2, c3):
    n = x.shape[0]
    h1 = np.empty((n, w1.shape[1]))
    h2 = np.empty((n, w2.shape[1]))
    y = np.empty((n, w3.shape[1]))
    _forward_into(x, w1, b1, w2, b2, w3, b3, c1, c2, c3, h1, h2, y)
    return h1, h2, y


@njit(cache=True)
def backward3(x, h1, h2, y, w1, w2, w3, c1, c2, c3, g, grad, offs, need_params):
    """Writes parameter gradients into ``grad`` (flat, block offsets ``offs``)
    when ``need_params``; returns the input gradient."""
    n = x.shape[0]
    g3 = g.copy()
    g2 = np.empty((n, w2.shape[1]))
    g1 = np.empty((n, w1.shape[1]))
    gx = np.empty((n, w1.shape[0]))
    _backward_into(h1, h2, y, w1, w2, w3, c1, c2, c3, g3, g2, g1, gx)
    if need_params:
        np.dot(x.T, g1, grad[offs[0]:offs[1]].reshape(w1.shape))
        grad[offs[1]:offs[2]] = g1.sum(axis=0)
        np.dot(h1.T, g2, grad[offs[2]:offs[3]].reshape(w2.shape))
        grad[offs[3]:offs[4]] = g2.sum(axis=0)
        np.dot(h2.T, g3, grad[offs[4]:offs[5]].reshape(w3.shape))
        grad[offs[5]:offs[6]] = g3.sum(axis=0)
    return gx


@njit(cache=True)
def pgd3(s, a, eps, K, eta, w1, b1, w2, b2, w3, b3, c1, c2, c3):
    """Best-iterate signed-gradient descent on ``q(s, clip(a + delta))``."""
    n, n_obs = s.shape
    n_act = a.shape[1]
    x = np.empty((n, n_obs + n_act))
    x[:, :n_obs] = s
    h1 = np.empty((n, w1.shape[1]))
    h2 = np.empty((n, w2.shape[1]))
    y = np.empty((n, 1))
    g3 = np.empty((n, 1))
    g2 = np.empty((n, w2.shape[1]))
    g1 = np.empty((n, w1.shape[1]))
    gx = np.empty((n, n_obs + n_act))
    pert = np.empty((n, n_act))
    delta = np.zeros((n, n_act))
    best_delta = np.zeros((n, n_act))
    best_q = np.full(n, np.inf)
    for k in range(K + 1):
        for i in range(n):
            for j in range(n_act):
                p = a[i, j] + delta[i, j]
                pert[i, j] = p
                x[i, n_obs + j] = min(max(p, -1.0), 1.0)
        _forward_into(x, w1, b1, w2, b2, w3, b3, c1, c2, c3, h1, h2, y)
        for i in range(n):
            if y[i, 0] < best_q[i]:
                best_q[i] = y[i, 0]
                best_delta[i, :] = delta[i, :]
        if k == K:
            break
        g3[:, 0] = 1.0
        _backward_into(h1, h2, y, w1, w2, w3, c1, c2, c3, g3, g2, g1, gx)
        for i in range(n):
            for j in range(n_act):
                p = pert[i, j]
                gj = gx[i, n_obs + j] if (p >= -1.0 and p <= 1.0) else 0.0
                step = 0.0
                if gj > 0.0:
                    step = -eta
                elif gj < 0.0:
                    step = eta
                delta[i, j] = min(max(delta[i, j] + step, -eps), eps)
    return best_delta, best_q
