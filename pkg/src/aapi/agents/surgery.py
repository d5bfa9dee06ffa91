from __future__ import annotations

import numpy as np

from ..errors import DimensionError


def project_out(g_i: np.ndarray, g_j: np.ndarray) -> np.ndarray:
    """Remove from ``g_i`` its component along ``g_j``."""
    return g_i - (g_i @ g_j) / (g_j @ g_j) * g_j


def gradient_surgery_combine(g_q: np.ndarray, g_adv: np.ndarray, omega: float) -> np.ndarray:
    """Weighted sum of two gradients, each projected onto the other's normal
    plane first when they conflict (negative inner product)."""
    g_q = np.asarray(g_q, dtype=float)
    g_adv = np.asarray(g_adv, dtype=float)
    if g_q.shape != g_adv.shape:
        raise DimensionError("gradient", g_q.shape, g_adv.shape)
    if g_q @ g_adv >= 0:
        return omega * g_q + (1.0 - omega) * g_adv
    return omega * project_out(g_q, g_adv) + (1.0 - omega) * project_out(g_adv, g_q)
