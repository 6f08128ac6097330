"""Orientation-dependent surface energy densities and their stability check.

A surface energy density is a positive, 2pi-periodic function of the
inclination angle together with its first two derivatives. The catalog
covers the families used throughout the solver (constant, cosine-fold,
ellipsoidal, sums of Riemannian metric terms, a fixed piecewise form) plus
user-supplied densities. The module also provides the stabilized 2x2
surface-energy matrix and the grid-based checker for the energy stability
condition 3*gamma(theta) >= gamma(theta - pi).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from ._util import TWO_PI, bisect_sign_change, golden_min, wrap_angle

#: absolute margin band (scaled by max(1, gamma)) declaring a critical angle
STABILITY_MARGIN_TOL = 1e-9
#: |gamma'| threshold at a critical angle
STABILITY_DERIVATIVE_TOL = 1e-6


class AnisotropyDomainError(ValueError):
    """A user-supplied density evaluated to a non-positive value."""


class Anisotropy:
    """Base class for surface energy densities gamma(theta).

    Subclasses implement ``_eval`` for angles already reduced to (-pi, pi]
    and may declare ``kinks``, the angles in (-pi, pi] where the second
    derivative jumps. Instances are immutable and safe to share.
    """

    kinks: tuple[float, ...] = ()

    def evaluate(self, theta):
        """Return (gamma, gamma', gamma'') at ``theta`` (scalar or array).

        Angles are reduced to (-pi, pi] first, so the result is exactly
        2pi-periodic. At a kink the second derivative is the value of the
        branch selected by the sign convention of the family.
        """
        return self._eval(wrap_angle(theta))

    def gamma(self, theta):
        """Shorthand for the density value alone."""
        return self.evaluate(theta)[0]

    def _eval(self, t):
        raise NotImplementedError

    def to_config(self) -> dict:
        """JSON-serializable description, used by manifests and caching."""
        raise TypeError(f"{type(self).__name__} has no config representation")


@dataclass(frozen=True)
class Isotropic(Anisotropy):
    """The constant density gamma == 1."""

    def _eval(self, t):
        one = np.ones_like(t)
        return one, np.zeros_like(t), np.zeros_like(t)

    def to_config(self) -> dict:
        return {"kind": "isotropic"}


@dataclass(frozen=True)
class MFold(Anisotropy):
    """gamma(theta) = 1 + beta * cos(m * (theta - theta0))."""

    m: int
    beta: float
    theta0: float = 0.0

    def __post_init__(self):
        if not (isinstance(self.m, (int, np.integer)) and self.m >= 1):
            raise ValueError(f"fold number must be a positive integer, got {self.m}")
        if not abs(self.beta) < 1.0:
            raise ValueError(f"fold strength must satisfy |beta| < 1, got {self.beta}")

    def _eval(self, t):
        arg = self.m * (t - self.theta0)
        c = np.cos(arg)
        s = np.sin(arg)
        m, b = self.m, self.beta
        return 1.0 + b * c, -m * b * s, -m * m * b * c

    def to_config(self) -> dict:
        return {"kind": "mfold", "m": int(self.m), "beta": self.beta, "theta0": self.theta0}


@dataclass(frozen=True)
class Ellipsoidal(Anisotropy):
    """gamma(theta) = sqrt(a + b * cos(theta)^2) with a > 0 and a + b > 0."""

    a: float
    b: float

    def __post_init__(self):
        if not self.a > 0.0:
            raise ValueError(f"ellipsoidal density needs a > 0, got a={self.a}")
        if not self.a + self.b > 0.0:
            raise ValueError(f"ellipsoidal density needs a + b > 0, got a+b={self.a + self.b}")

    def _eval(self, t):
        b = self.b
        g = np.sqrt(self.a + b * np.cos(t) ** 2)
        s2 = np.sin(2.0 * t)
        c2 = np.cos(2.0 * t)
        g1 = -b * s2 / (2.0 * g)
        g2 = -b * c2 / g - b * b * s2 * s2 / (4.0 * g**3)
        return g, g1, g2

    def to_config(self) -> dict:
        return {"kind": "ellipsoidal", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class RiemannianSum(Anisotropy):
    """gamma(theta) = sum_l sqrt(n(theta)^T G_l n(theta)) with SPD matrices G_l.

    ``matrices`` is stored as nested tuples; constructors accept any nested
    sequence of 2x2 symmetric positive-definite matrices.
    """

    matrices: tuple

    def __post_init__(self):
        mats = np.asarray(self.matrices, dtype=float)
        if mats.ndim != 3 or mats.shape[1:] != (2, 2) or mats.shape[0] < 1:
            raise ValueError("expected a nonempty sequence of 2x2 matrices")
        for G in mats:
            if not np.allclose(G, G.T, rtol=0.0, atol=1e-12):
                raise ValueError(f"matrix {G.tolist()} is not symmetric")
            if np.linalg.eigvalsh(G).min() <= 0.0:
                raise ValueError(f"matrix {G.tolist()} is not positive definite")
        object.__setattr__(self, "matrices", tuple(tuple(tuple(row) for row in G) for G in mats))

    def _eval(self, t):
        g = np.zeros_like(t)
        g1 = np.zeros_like(t)
        g2 = np.zeros_like(t)
        s2 = np.sin(2.0 * t)
        c2 = np.cos(2.0 * t)
        for (g11, g12), (_, g22) in self.matrices:
            # q(t) = n^T G n with n = (-sin t, cos t)
            q = 0.5 * (g11 + g22) + 0.5 * (g22 - g11) * c2 - g12 * s2
            qp = -(g22 - g11) * s2 - 2.0 * g12 * c2
            qpp = -2.0 * (g22 - g11) * c2 + 4.0 * g12 * s2
            r = np.sqrt(q)
            g = g + r
            g1 = g1 + qp / (2.0 * r)
            g2 = g2 + qpp / (2.0 * r) - qp * qp / (4.0 * q * r)
        return g, g1, g2

    def to_config(self) -> dict:
        return {"kind": "riemannian", "matrices": [list(map(list, G)) for G in self.matrices]}


@dataclass(frozen=True)
class PiecewiseSgn(Anisotropy):
    """The fixed density sqrt((5/2 + 3/2 sgn(n1)) n1^2 + n2^2), n = (-sin t, cos t).

    Globally C1 with second-derivative jumps where sin(theta) = 0; the
    convention sgn(0) = +1 selects the steeper branch at the kinks.
    """

    kinks = (0.0, np.pi)

    def _eval(self, t):
        n1 = -np.sin(t)
        coeff = np.where(n1 >= 0.0, 4.0, 1.0)  # 5/2 + 3/2*sgn(n1), sgn(0) = +1
        # q = coeff*sin^2 + cos^2 = 1 + (coeff-1)*sin^2
        a = coeff - 1.0
        q = 1.0 + a * np.sin(t) ** 2
        qp = a * np.sin(2.0 * t)
        qpp = 2.0 * a * np.cos(2.0 * t)
        g = np.sqrt(q)
        g1 = qp / (2.0 * g)
        g2 = qpp / (2.0 * g) - qp * qp / (4.0 * q * g)
        return g, g1, g2

    def to_config(self) -> dict:
        return {"kind": "piecewise_sgn"}


class Custom(Anisotropy):
    """A user-supplied density given as a (gamma, gamma', gamma'') evaluator.

    The evaluator must be globally C1 and piecewise C2; the angles where the
    second derivative jumps must be declared in ``kinks`` so derivative
    checks and the stabilizer can avoid or target them. Positivity and
    approximate 2pi-periodicity are probed on a sample grid at construction;
    a non-positive value at evaluation raises AnisotropyDomainError.
    """

    def __init__(self, evaluator: Callable, kinks: tuple[float, ...] = ()):
        self.kinks = tuple(float(wrap_angle(k)) for k in kinks)
        self._evaluator = self._vectorize(evaluator)
        probe = np.linspace(-np.pi, np.pi, 721)
        g, g1, g2 = self._evaluator(probe)
        for arr in (g, g1, g2):
            if np.asarray(arr).shape != probe.shape:
                raise ValueError("evaluator must return three arrays matching the input shape")
        if np.min(g) <= 0.0:
            raise AnisotropyDomainError("custom density is not positive on the sample grid")
        gp = self._evaluator(probe[:8] + TWO_PI)[0]
        if not np.allclose(gp, g[:8], rtol=1e-8, atol=1e-10):
            raise ValueError("custom density is not 2pi-periodic on sampled angles")

    @staticmethod
    def _vectorize(evaluator):
        try:
            out = evaluator(np.array([0.1, 0.2]))
            if len(out) == 3 and np.shape(out[0]) == (2,):
                return evaluator
        except Exception:
            pass

        def wrapped(t):
            t = np.atleast_1d(np.asarray(t, dtype=float))
            vals = [evaluator(float(x)) for x in t]
            g, g1, g2 = (np.array([v[i] for v in vals]) for i in range(3))
            return g, g1, g2

        return wrapped

    def _eval(self, t):
        scalar = np.ndim(t) == 0
        g, g1, g2 = self._evaluator(np.atleast_1d(t))
        if np.min(g) <= 0.0:
            raise AnisotropyDomainError("custom density returned a non-positive value")
        if scalar:
            return g[0], g1[0], g2[0]
        return g, g1, g2


def g_matrix(a: Anisotropy, k_value: float, theta: float) -> np.ndarray:
    """Stabilized surface-energy matrix at one angle.

    Returns [[g + k sin^2, -g' - k sin cos], [g' - k sin cos, g + k cos^2]],
    i.e. g*I + g'*J + k*n n^T with n = (-sin, cos). ``k_value`` must be
    nonnegative; the k-term annihilates the tangent direction.
    """
    if k_value < 0.0:
        raise ValueError(f"stabilizing value must be nonnegative, got {k_value}")
    t = float(wrap_angle(theta))
    g, g1, _ = (float(v) for v in a.evaluate(t))
    s, c = np.sin(t), np.cos(t)
    return np.array(
        [
            [g + k_value * s * s, -g1 - k_value * s * c],
            [g1 - k_value * s * c, g + k_value * c * c],
        ]
    )


def g_matrices(a: Anisotropy, k_values, thetas) -> np.ndarray:
    """Vectorized stabilized matrices, shape (n, 2, 2); used by the solvers."""
    t = wrap_angle(thetas)
    k = np.asarray(k_values, dtype=float)
    if np.any(k < 0.0):
        raise ValueError("stabilizing values must be nonnegative")
    g, g1, _ = a.evaluate(t)
    s, c = np.sin(t), np.cos(t)
    out = np.empty(t.shape + (2, 2))
    out[..., 0, 0] = g + k * s * s
    out[..., 0, 1] = -g1 - k * s * c
    out[..., 1, 0] = g1 - k * s * c
    out[..., 1, 1] = g + k * c * c
    return out


class CriticalAngle(NamedTuple):
    theta: float
    dgamma_abs: float


@dataclass(frozen=True)
class StabilityReport:
    """Outcome of the energy-stability scan of a density.

    ``min_margin`` is the smallest observed value of
    3*gamma(theta) - gamma(theta - pi); ``critical_angles`` lists angles
    where the margin touches zero together with |gamma'| there, and
    ``violations`` the angles where it is negative.
    """

    satisfied: bool
    min_margin: float
    critical_angles: tuple[CriticalAngle, ...]
    violations: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "satisfied": self.satisfied,
            "min_margin": self.min_margin,
            "critical_angles": [
                {"theta": c.theta, "dgamma_abs": c.dgamma_abs} for c in self.critical_angles
            ],
            "violations": list(self.violations),
        }


def check_energy_stable(a: Anisotropy, n_grid: int = 1440, tol: float = STABILITY_MARGIN_TOL) -> StabilityReport:
    """Scan 3*gamma(theta) - gamma(theta - pi) >= 0 over (-pi, pi].

    The margin is sampled on a uniform grid of ``n_grid`` points; every
    local minimum is refined by golden-section search and sign changes are
    bisected, both to bracket width below 1e-6. An angle is critical when
    the refined margin is within tol*max(1, gamma) of zero, and the report
    is satisfied only if there are no negative margins and every critical
    angle has |gamma'| below the derivative tolerance.
    """
    if n_grid < 360:
        raise ValueError(f"n_grid must be at least 360, got {n_grid}")
    if not tol > 0.0:
        raise ValueError("tolerance must be positive")

    def margin(theta):
        return 3.0 * a.gamma(theta) - a.gamma(np.asarray(theta) - np.pi)

    thetas = -np.pi + TWO_PI * np.arange(n_grid) / n_grid
    m = margin(thetas)
    band = tol * np.maximum(1.0, a.gamma(thetas))

    violations = [float(t) for t, mv, bv in zip(thetas, m, band) if mv < -bv]

    # refine every cyclic local minimum; tangential zeros do not change sign
    prev_m = np.roll(m, 1)
    next_m = np.roll(m, -1)
    local_min = (m <= prev_m) & (m <= next_m)
    refined: list[tuple[float, float]] = []
    step = TWO_PI / n_grid
    for i in np.nonzero(local_min)[0]:
        lo, hi = thetas[i] - step, thetas[i] + step
        # width well below 1e-6 so |gamma'| at a tangential zero is resolved
        # far inside the derivative tolerance
        t_star, m_star = golden_min(lambda t: float(margin(t)), lo, hi, 1e-9)
        refined.append((float(wrap_angle(t_star)), float(m_star)))

    # bisect sign changes so violation boundaries appear among the reports
    sign = m < 0.0
    for i in np.nonzero(sign != np.roll(sign, -1))[0]:
        t_cross = bisect_sign_change(lambda t: float(margin(t)), thetas[i], thetas[i] + step, 1e-6)
        refined.append((float(wrap_angle(t_cross)), float(margin(t_cross))))

    min_margin = float(min(m.min(), min(mv for _, mv in refined))) if refined else float(m.min())

    criticals: list[CriticalAngle] = []
    for t_star, m_star in refined:
        g_star, g1_star, _ = (float(v) for v in a.evaluate(t_star))
        if m_star < -tol * max(1.0, g_star):
            violations.append(t_star)
        elif abs(m_star) <= tol * max(1.0, g_star):
            if all(abs(t_star - c.theta) > 1e-5 for c in criticals):
                criticals.append(CriticalAngle(t_star, abs(g1_star)))

    violations = sorted(set(violations))
    satisfied = not violations and all(
        c.dgamma_abs <= STABILITY_DERIVATIVE_TOL for c in criticals
    )
    return StabilityReport(
        satisfied=satisfied,
        min_margin=min_margin,
        critical_angles=tuple(sorted(criticals)),
        violations=tuple(violations),
    )
