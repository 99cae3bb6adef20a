"""Smooth radial cutoff: 1 on [0, 1], 0 on [2, inf), C-infinity in between."""
from __future__ import annotations

import numpy as np
from scipy.special import expit


def _step(s: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """S(s) = sigma(s) / (sigma(s) + sigma(1 - s)), sigma(s) = exp(-1/s), with two derivatives."""
    s = np.asarray(s, dtype=float)
    inner = (s > 0) & (s < 1)
    S = np.where(s >= 1, 1.0, 0.0)
    d1 = np.zeros_like(s)
    d2 = np.zeros_like(s)
    if np.any(inner):
        x = s[inner]
        val = expit(1.0 / (1.0 - x) - 1.0 / x)
        q = 1.0 / x**2 + 1.0 / (1.0 - x) ** 2
        dq = -2.0 / x**3 + 2.0 / (1.0 - x) ** 3
        g = val * (1.0 - val)
        first = g * q
        S[inner] = val
        d1[inner] = first
        d2[inner] = first * (1.0 - 2.0 * val) * q + g * dq
    return S, d1, d2


def cutoff(t) -> np.ndarray:
    """chi(t): 1 for t <= 1, 0 for t >= 2."""
    return _step(2.0 - np.asarray(t, dtype=float))[0]


def cutoff_derivatives(t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """chi, chi', chi'' at ``t``."""
    S, d1, d2 = _step(2.0 - np.asarray(t, dtype=float))
    return S, -d1, d2
