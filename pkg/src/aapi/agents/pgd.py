from __future__ import annotations

from typing import Optional

import numpy as np

from .. import nn
from ..nn import DenseNet, backward, forward

DEFAULT_TRAIN_STEPS = 16
DEFAULT_ATTACK_STEPS = 30


def pgd_min_delta(q_net: DenseNet, s: np.ndarray, a: np.ndarray, eps: float,
                  K: int = DEFAULT_TRAIN_STEPS, eta: Optional[float] = None,
                  return_value: bool = False):
    """Search the l-inf ball of radius ``eps`` for the perturbation that lowers
    ``q_net(s, clip(a + delta))`` the most.

    Signed-gradient descent from ``delta = 0`` with step ``eta`` (default
    ``eps / K``), projected back onto the ball after every step.  The lowest
    value seen over all ``K + 1`` iterates is kept, so the returned perturbation
    never does worse than ``delta = 0``.  Works row-wise on batches.
    """
    s = np.asarray(s, dtype=float)
    a = np.asarray(a, dtype=float)
    single = a.ndim == 1
    s2, a2 = np.atleast_2d(s), np.atleast_2d(a)
    n_obs = s2.shape[1]
    x = np.concatenate([s2, a2], axis=1)
    if eps <= 0:
        delta = np.zeros_like(a2)
        if return_value:
            x[:, n_obs:] = np.clip(a2, -1.0, 1.0)
            q = forward(q_net, x)[0][:, 0]
            return (delta[0], q[0]) if single else (delta, q)
        return delta[0] if single else delta
    if K < 1:
        raise ValueError("PGD needs K >= 1")
    eta = eps / K if eta is None else eta
    if nn.USE_KERNELS and q_net._fast:
        best_delta, best_q = nn._kernels.pgd3(
            np.ascontiguousarray(s2), np.ascontiguousarray(a2), float(eps), int(K), float(eta),
            *q_net._flat_layers, *q_net._codes)
        if single:
            return (best_delta[0], best_q[0]) if return_value else best_delta[0]
        return (best_delta, best_q) if return_value else best_delta
    delta = np.zeros_like(a2)
    best_delta = delta.copy()
    best_q = np.full(len(a2), np.inf)
    ones = np.ones((len(a2), 1))
    for k in range(K + 1):
        pert = a2 + delta
        x[:, n_obs:] = np.clip(pert, -1.0, 1.0)
        q, tape = forward(q_net, x)
        q = q[:, 0]
        better = q < best_q
        best_q[better] = q[better]
        best_delta[better] = delta[better]
        if k == K:
            break
        _, gx = backward(tape, ones, need_params=False)
        grad = gx[:, n_obs:] * ((pert >= -1.0) & (pert <= 1.0))
        delta = np.clip(delta - eta * np.sign(grad), -eps, eps)
    if single:
        return (best_delta[0], best_q[0]) if return_value else best_delta[0]
    return (best_delta, best_q) if return_value else best_delta
