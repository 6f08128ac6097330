"""Minimal stabilizing function: computation, tabulation, and verifiers.

For a density gamma satisfying the energy stability condition there is a
smallest nonnegative k0(theta) such that
P_alpha(phi, theta) >= Q(phi, theta) for all relative angles phi, where

    P_alpha = 2 sqrt(gamma(theta)^2 + alpha gamma(theta) sin(phi)^2)
    Q       = gamma(theta - phi) + gamma(theta) cos(phi) + gamma'(theta) sin(phi).

For Q > 0 and sin(phi) != 0 the condition is equivalent to
alpha >= (Q^2 - 4 gamma^2) / (4 gamma sin(phi)^2), so k0 is the clamped
supremum of that ratio. The solver consumes k0 through a periodic
piecewise-linear table sampled at uniformly spaced angles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._util import TWO_PI, golden_max, wrap_angle
from .anisotropy import Anisotropy, g_matrix, g_matrices

#: the supremand ratio is meaningless closer to its removable singularities
PHI_EXCLUSION = 1e-6
#: golden-section brackets stay this far from phi in {0, +-pi}; closer in,
#: cancellation noise in Q^2 - 4 gamma^2 exceeds the removable limits, which
#: are supplied analytically instead
PHI_REFINE_GUARD = 3e-4
#: a supremum beyond this indicates a stability violation
DIVERGENCE_LIMIT = 1e8


class StabilizerDivergenceError(RuntimeError):
    """The stabilizing supremum diverged, i.e. no finite k0 exists."""

    def __init__(self, theta: float, bound: float):
        self.theta = float(theta)
        super().__init__(
            f"stabilizing supremum exceeds {bound:g} at theta={theta:.6f}; "
            "the density violates the energy stability condition"
        )


def auxiliary_pq(a: Anisotropy, theta: float, phi: float, alpha: float):
    """Evaluate the auxiliary pair (P_alpha, Q) at (phi, theta)."""
    g, g1, _ = a.evaluate(theta)
    gq = a.gamma(np.asarray(theta) - np.asarray(phi))
    p = 2.0 * np.sqrt(g * g + alpha * g * np.sin(phi) ** 2)
    q = gq + g * np.cos(phi) + g1 * np.sin(phi)
    return p, q


def f_value(a: Anisotropy, theta: float, phi: float, alpha: float):
    """P_alpha^2 - Q^2 = 4 gamma (gamma + alpha sin^2 phi) - Q^2."""
    g, g1, _ = a.evaluate(theta)
    gq = a.gamma(np.asarray(theta) - np.asarray(phi))
    q = gq + g * np.cos(phi) + g1 * np.sin(phi)
    return 4.0 * g * (g + alpha * np.sin(phi) ** 2) - q * q


def _ratio(a: Anisotropy, theta: float, phi):
    """Supremand (Q^2 - 4 gamma^2)/(4 gamma sin^2 phi); -inf where vacuous."""
    phi = np.asarray(phi, dtype=float)
    g, g1, _ = a.evaluate(theta)
    gq = a.gamma(theta - phi)
    q = gq + g * np.cos(phi) + g1 * np.sin(phi)
    s2 = np.sin(phi) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        r = (q - 2.0 * g) * (q + 2.0 * g) / (4.0 * g * s2)
    return np.where(q > 0.0, r, -np.inf)


def _limit_candidates(a: Anisotropy, theta: float) -> list[float]:
    """Values of the removable limits of the supremand at phi -> 0 and pi.

    The phi -> 0 limit is (gamma'' - gamma)/2; the phi -> pi limit is finite
    only at critical angles, where it equals (gamma''(theta - pi) + gamma)/2.
    One-sided second derivatives at kinks are covered by nudged evaluations.
    """
    g = float(a.gamma(theta))
    out = []
    for t in (theta, theta - 1e-7, theta + 1e-7):
        g2 = float(a.evaluate(t)[2])
        out.append(0.5 * (g2 - g))
    g_op = float(a.gamma(theta - np.pi))
    if abs(3.0 * g - g_op) <= 1e-8 * max(1.0, g):
        for t in (theta - np.pi, theta - np.pi - 1e-7, theta - np.pi + 1e-7):
            g2 = float(a.evaluate(t)[2])
            out.append(0.5 * (g2 + g))
    return out


def k0_at(a: Anisotropy, theta: float, phi_samples: int = 2001) -> float:
    """Minimal stabilizing value at one angle.

    The supremand is sampled on a uniform phi grid over (-pi, pi] excluding
    |sin phi| < 1e-6 and augmented so theta - phi hits declared kinks; the
    grid maximizer's bracket is refined by golden-section search to width
    1e-10, and the analytic removable limits at phi in {0, pi} join the
    candidate set. Raises StabilizerDivergenceError when the supremum
    exceeds 1e8, the signature of a stability violation.
    """
    if phi_samples < 2001:
        raise ValueError(f"phi_samples must be at least 2001, got {phi_samples}")
    theta = float(wrap_angle(theta))

    phi = -np.pi + TWO_PI * np.arange(1, phi_samples + 1) / phi_samples
    extra = []
    for kink in a.kinks:
        for nudge in (0.0, -1e-7, 1e-7):
            extra.append(float(wrap_angle(theta - kink + nudge)))
    if extra:
        phi = np.sort(np.concatenate([phi, np.array(extra)]))
    phi = phi[np.abs(np.sin(phi)) >= PHI_EXCLUSION]

    values = _ratio(a, theta, phi)
    i_best = int(np.argmax(values))
    best = float(values[i_best])

    lo = phi[i_best - 1] if i_best > 0 else phi[i_best]
    hi = phi[i_best + 1] if i_best < len(phi) - 1 else phi[i_best]
    for s in (-np.pi, 0.0, np.pi):
        if lo < s < hi:
            if phi[i_best] >= s:
                lo = s + PHI_REFINE_GUARD
            else:
                hi = s - PHI_REFINE_GUARD
        if s <= lo < s + PHI_REFINE_GUARD:
            lo = s + PHI_REFINE_GUARD
        if s - PHI_REFINE_GUARD < hi <= s:
            hi = s - PHI_REFINE_GUARD
    if hi > lo:
        _, refined = golden_max(lambda p: float(_ratio(a, theta, p)), lo, hi, 1e-10)
        best = max(best, refined)

    best = max(best, max(_limit_candidates(a, theta)))
    if best > DIVERGENCE_LIMIT:
        raise StabilizerDivergenceError(theta, DIVERGENCE_LIMIT)
    return max(0.0, best)


@dataclass(frozen=True)
class StabilizerTable:
    """Sampled minimal stabilizing function with periodic linear interpolation.

    ``thetas`` are strictly increasing samples covering [-pi, pi] with equal
    values at both endpoints (they are the same angle); ``k0_values`` are
    nonnegative.
    """

    thetas: np.ndarray
    k0_values: np.ndarray

    def __post_init__(self):
        thetas = np.asarray(self.thetas, dtype=float)
        values = np.asarray(self.k0_values, dtype=float)
        if thetas.ndim != 1 or thetas.shape != values.shape or len(thetas) < 2:
            raise ValueError("thetas and k0_values must be matching 1-d arrays")
        if np.any(np.diff(thetas) <= 0.0):
            raise ValueError("sample angles must be strictly increasing")
        if abs(thetas[0] + np.pi) > 1e-12 or abs(thetas[-1] - np.pi) > 1e-12:
            raise ValueError("sample angles must cover [-pi, pi]")
        if np.any(values < 0.0):
            raise ValueError("stabilizing values must be nonnegative")
        if abs(values[0] - values[-1]) > 1e-12 * max(1.0, abs(values[0])):
            raise ValueError("endpoint values at -pi and pi must agree")
        thetas.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "thetas", thetas)
        object.__setattr__(self, "k0_values", values)

    def __call__(self, theta):
        t = wrap_angle(theta)
        return np.interp(t, self.thetas, self.k0_values)

    def to_config(self) -> dict:
        return {"thetas": self.thetas.tolist(), "values": self.k0_values.tolist()}


def k_of_theta(table: StabilizerTable, theta):
    """Periodic piecewise-linear interpolation of the table; exact at samples."""
    return table(theta)


def build_table(a: Anisotropy, n_samples: int = 20, phi_samples: int = 2001) -> StabilizerTable:
    """Sample k0 at ``n_samples`` uniform angles in [-pi, pi].

    The two endpoint samples describe the same angle; their separately
    computed values are reconciled by averaging. Each sample is verified to
    keep P^2 - Q^2 above -1e-9 on a 2001-point phi grid.
    """
    if n_samples < 2:
        raise ValueError("need at least two samples")
    thetas = np.linspace(-np.pi, np.pi, n_samples)
    values = np.array([k0_at(a, t, phi_samples) for t in thetas])
    joint = 0.5 * (values[0] + values[-1])
    values[0] = values[-1] = joint
    phi = np.linspace(-np.pi, np.pi, 2001)
    for t, k in zip(thetas, values):
        fmin = float(np.min(f_value(a, t, phi, k)))
        if fmin < -1e-9:
            raise StabilizerDivergenceError(t, DIVERGENCE_LIMIT)
    return StabilizerTable(thetas=thetas, k0_values=values)


def local_estimate_residuals(a: Anisotropy, k_fn, h: np.ndarray, h_hat: np.ndarray):
    """Vectorized residual of the local energy estimate for segment pairs.

    ``h`` and ``h_hat`` are arrays of 2-vectors; ``k_fn`` maps angles to
    stabilizing values. Returns
    (G_k(theta) h_hat) . (h_hat - h)/|h| - (|h_hat| gamma(theta_hat) - |h| gamma(theta)),
    which is nonnegative whenever k_fn dominates the minimal stabilizing
    function at the angles of ``h``.
    """
    h = np.asarray(h, dtype=float)
    h_hat = np.asarray(h_hat, dtype=float)
    ln = np.linalg.norm(h, axis=-1)
    ln_hat = np.linalg.norm(h_hat, axis=-1)
    if np.any(ln == 0.0) or np.any(ln_hat == 0.0):
        raise ValueError("segment vectors must be nonzero")
    theta = np.arctan2(h[..., 1], h[..., 0])
    theta_hat = np.arctan2(h_hat[..., 1], h_hat[..., 0])
    k = np.asarray(k_fn(theta), dtype=float)
    G = g_matrices(a, np.broadcast_to(k, theta.shape), theta)
    gh = np.einsum("...ij,...j->...i", G, h_hat)
    lhs = np.einsum("...i,...i->...", gh, h_hat - h) / ln
    rhs = ln_hat * a.gamma(theta_hat) - ln * a.gamma(theta)
    return lhs - rhs


def local_estimate_residual(a: Anisotropy, k_fn, h, h_hat) -> float:
    """Scalar form of :func:`local_estimate_residuals` for one pair."""
    h = np.asarray(h, dtype=float)
    h_hat = np.asarray(h_hat, dtype=float)
    if np.linalg.norm(h) == 0.0 or np.linalg.norm(h_hat) == 0.0:
        raise ValueError("segment vectors must be nonzero")
    theta = float(np.arctan2(h[1], h[0]))
    k = float(np.asarray(k_fn(theta), dtype=float))
    G = g_matrix(a, k, theta)
    theta_hat = float(np.arctan2(h_hat[1], h_hat[0]))
    lhs = float((G @ h_hat) @ (h_hat - h)) / float(np.linalg.norm(h))
    rhs = float(np.linalg.norm(h_hat)) * float(a.gamma(theta_hat)) - float(
        np.linalg.norm(h)
    ) * float(a.gamma(theta))
    return lhs - rhs
