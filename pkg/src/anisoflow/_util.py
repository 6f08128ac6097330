"""Small numeric helpers shared across modules."""

from __future__ import annotations

import numpy as np

TWO_PI = 2.0 * np.pi

# 1/phi^2 with phi the golden ratio, the interval shrink factor per probe
_INV_GOLD = (3.0 - np.sqrt(5.0)) / 2.0


def wrap_angle(theta):
    """Reduce angles to the interval (-pi, pi].

    Works elementwise on arrays; scalars come back as numpy scalars.
    """
    return np.pi - np.remainder(np.pi - np.asarray(theta, dtype=float), TWO_PI)


def golden_min(f, lo: float, hi: float, width: float) -> tuple[float, float]:
    """Golden-section search for a local minimum of ``f`` on [lo, hi].

    Shrinks the bracket until it is narrower than ``width`` and returns
    (argmin, min). Assumes f is unimodal on the bracket; on non-unimodal
    input it still converges to a local minimum inside the bracket.
    """
    a, b = float(lo), float(hi)
    if not b > a:
        x = 0.5 * (a + b)
        return x, f(x)
    x1 = a + _INV_GOLD * (b - a)
    x2 = b - _INV_GOLD * (b - a)
    f1, f2 = f(x1), f(x2)
    while (b - a) > width:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = a + _INV_GOLD * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = b - _INV_GOLD * (b - a)
            f2 = f(x2)
    if f1 <= f2:
        return x1, f1
    return x2, f2


def golden_max(f, lo: float, hi: float, width: float) -> tuple[float, float]:
    """Golden-section search for a local maximum of ``f`` on [lo, hi]."""
    x, fneg = golden_min(lambda t: -f(t), lo, hi, width)
    return x, -fneg


def bisect_sign_change(f, lo: float, hi: float, width: float) -> float:
    """Bisect a sign change of ``f`` on [lo, hi] down to the given width."""
    a, b = float(lo), float(hi)
    fa = f(a)
    while (b - a) > width:
        m = 0.5 * (a + b)
        fm = f(m)
        if (fa < 0.0) == (fm < 0.0):
            a, fa = m, fm
        else:
            b = m
    return 0.5 * (a + b)
