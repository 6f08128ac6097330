"""Open-curve solver for solid-state dewetting with contact-line migration.

The film/vapor interface is an open curve pinned to the substrate y = 0 at
both contact points, which slide horizontally with a relaxed contact-angle
law of mobility eta against the substrate energy imbalance sigma. The
implicit step mirrors the closed-curve scheme: the test space for the
potential block is unconstrained in x (the two x-rows at the contact nodes
pick up the mobility and substrate terms) and vanishes in y at the ends,
where the vertical coordinates are pinned to zero. Zero mass flux at the
ends is natural and needs no extra term. The discrete area between curve
and substrate is conserved exactly and the total energy, including the
substrate term -sigma (x_right - x_left), is non-increasing for an
adequately stabilized density.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._util import wrap_angle
from .anisotropy import Anisotropy, g_matrices
from .curve import (
    DegenerateMeshError,
    PolygonalCurve,
    Topology,
    area,
    energy,
    mesh_ratio,
    segment_geometry,
)
from .records import OPEN_COLUMNS, RunRecord
from .solver import RunConfig, StepFailureError, StepStats


@dataclass(frozen=True)
class DewettingParams:
    """Substrate energy imbalance sigma = cos(Young angle) and mobility eta."""

    sigma: float
    eta: float = 100.0

    def __post_init__(self):
        if not -1.0 < self.sigma < 1.0:
            raise ValueError(f"sigma must lie in (-1, 1), got {self.sigma}")
        if not self.eta > 0.0:
            raise ValueError(f"contact line mobility must be positive, got {self.eta}")


@dataclass(frozen=True)
class OpenSolverState:
    """Open curve on the substrate, nodal potential, and the clock."""

    curve: PolygonalCurve
    mu: np.ndarray
    time: float = 0.0
    step: int = 0

    def __post_init__(self):
        if self.curve.topology is not Topology.OPEN_ON_SUBSTRATE:
            raise ValueError("open solver state needs an open-on-substrate curve")
        mu = np.asarray(self.mu, dtype=float)
        if mu.shape != (self.curve.n_vertices,):
            raise ValueError("mu must hold one value per vertex")
        mu.flags.writeable = False
        object.__setattr__(self, "mu", mu)


def young_residual(a: Anisotropy, theta: float, sigma: float):
    """gamma(theta) cos(theta) - gamma'(theta) sin(theta) - sigma.

    Vanishes exactly at the anisotropic Young angle; the contact points move
    at eta times this imbalance.
    """
    g, g1, _ = a.evaluate(theta)
    t = wrap_angle(theta)
    return g * np.cos(t) - g1 * np.sin(t) - sigma


def contact_angles(c: PolygonalCurve) -> tuple[float, float]:
    """Diagnostic contact angles (left, right), both reduced to (-pi, pi].

    The left angle is the first segment's inclination; the right angle is
    the negated inclination of the last segment, so both report the Young
    angle at a symmetric equilibrium.
    """
    if c.topology is not Topology.OPEN_ON_SUBSTRATE:
        raise ValueError("contact angles are defined for open-on-substrate curves")
    geo = segment_geometry(c)
    theta_l = float(geo.thetas[0])
    theta_r = float(wrap_angle(-geo.thetas[-1]))
    return theta_l, theta_r


@dataclass(frozen=True)
class _FrozenOpen:
    X0: np.ndarray  # (M, 2), M = N + 1 nodes
    lengths: np.ndarray  # (N,)
    normals: np.ndarray  # (N, 2)
    G: np.ndarray  # (N, 2, 2)
    tau: float
    sigma: float
    eta: float


def _freeze_open(curve: PolygonalCurve, cfg: RunConfig, a: Anisotropy,
                 p: DewettingParams) -> _FrozenOpen:
    geo = segment_geometry(curve)
    k = np.asarray(cfg.k_source.k_values(geo.thetas), dtype=float)
    G = g_matrices(a, k, geo.thetas)
    return _FrozenOpen(curve.vertices, geo.lengths, geo.normals, G,
                       cfg.resolved_tau, p.sigma, p.eta)


def _perp(v):
    return np.stack([v[..., 1], -v[..., 0]], axis=-1)


def _pad_rows(arr, shape_tail=()):
    zero = np.zeros((1,) + shape_tail)
    return np.concatenate([zero, arr, zero], axis=0)


def _residual_open(fz: _FrozenOpen, cand_X, cand_mu) -> np.ndarray:
    """Residual [block_a (M); block_b (M, 2) raveled]; y-rows at the contact
    nodes carry the pinned condition y = 0."""
    M = len(fz.X0)
    L = fz.lengths
    h0 = fz.X0[1:] - fz.X0[:-1]
    h1 = cand_X[1:] - cand_X[:-1]
    nav = -_perp(h0 + h1) / (2.0 * L[:, None])
    dXt = (cand_X - fz.X0) / fz.tau
    mu = cand_mu

    Lnav_pad = _pad_rows(L[:, None] * nav, (2,))
    w = 0.5 * (Lnav_pad[:-1] + Lnav_pad[1:])  # (M, 2)

    block_a = np.einsum("ij,ij->i", w, dXt)
    flux_pad = np.concatenate([[0.0], (mu[1:] - mu[:-1]) / L, [0.0]])
    block_a += flux_pad[:-1] - flux_pad[1:]

    Gh_pad = _pad_rows(np.einsum("jkl,jl->jk", fz.G, h1) / L[:, None], (2,))
    block_b = mu[:, None] * w - Gh_pad[:-1] + Gh_pad[1:]
    block_b[0, 0] += -(cand_X[0, 0] - fz.X0[0, 0]) / (fz.eta * fz.tau) - fz.sigma
    block_b[-1, 0] += -(cand_X[-1, 0] - fz.X0[-1, 0]) / (fz.eta * fz.tau) + fz.sigma
    block_b[0, 1] = cand_X[0, 1]
    block_b[-1, 1] = cand_X[-1, 1]
    return np.concatenate([block_a, block_b.ravel()])


def _jacobian_open(fz: _FrozenOpen, cand_X, cand_mu) -> sp.csc_matrix:
    M = len(fz.X0)
    N = M - 1
    L = fz.lengths
    h0 = fz.X0[1:] - fz.X0[:-1]
    h1 = cand_X[1:] - cand_X[:-1]
    nav = -_perp(h0 + h1) / (2.0 * L[:, None])
    dXt = (cand_X - fz.X0) / fz.tau
    mu = cand_mu
    tau = fz.tau

    Lnav_pad = _pad_rows(L[:, None] * nav, (2,))
    w = 0.5 * (Lnav_pad[:-1] + Lnav_pad[1:])

    idx = np.arange(M)
    col_x = 2 * idx
    col_y = 2 * idx + 1
    col_mu = 2 * M + idx
    row_a = idx
    row_bx = M + 2 * idx
    row_by = M + 2 * idx + 1

    has_prev = (idx > 0).astype(float)
    has_next = (idx < N).astype(float)
    inv_prev = np.concatenate([[0.0], 1.0 / L])  # 1/L_{i-1}, zero at i=0
    inv_next = np.concatenate([1.0 / L, [0.0]])  # 1/L_i, zero at i=N

    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(np.asarray(r))
        cols.append(np.asarray(c))
        vals.append(np.asarray(v, dtype=float))

    # block a / mu
    add(row_a, col_mu, inv_prev + inv_next)
    add(row_a[1:], col_mu[:-1], -inv_prev[1:])
    add(row_a[:-1], col_mu[1:], -inv_next[:-1])
    # block a / X_i, direct
    add(row_a, col_x, w[:, 0] / tau)
    add(row_a, col_y, w[:, 1] / tau)
    # block a / X through the half-step normal; P v = (v_y, -v_x)
    add(row_a[1:], col_x[:-1], -0.25 * dXt[1:, 1] * has_prev[1:])
    add(row_a[1:], col_y[:-1], 0.25 * dXt[1:, 0] * has_prev[1:])
    add(row_a[:-1], col_x[1:], 0.25 * dXt[:-1, 1] * has_next[:-1])
    add(row_a[:-1], col_y[1:], -0.25 * dXt[:-1, 0] * has_next[:-1])
    dsame = 0.25 * (has_next - has_prev)
    add(row_a, col_x, -dsame * dXt[:, 1])
    add(row_a, col_y, dsame * dXt[:, 0])

    # block b / mu (skip the constraint rows at the ends)
    add(row_bx, col_mu, w[:, 0])
    add(row_by[1:-1], col_mu[1:-1], w[1:-1, 1])

    Gprev = _pad_rows(fz.G / L[:, None, None], (2, 2))[:-1]  # G_{i-1}/L_{i-1}
    Gnext = _pad_rows(fz.G / L[:, None, None], (2, 2))[1:]  # G_i/L_i

    interior_by = row_by[1:-1]

    # d/dX_{i-1}
    add(row_bx[1:], col_x[:-1], Gprev[1:, 0, 0] + 0.0)
    add(row_bx[1:], col_y[:-1], Gprev[1:, 0, 1] + 0.25 * mu[1:])
    add(interior_by, col_x[:-2], Gprev[1:-1, 1, 0] - 0.25 * mu[1:-1])
    add(interior_by, col_y[:-2], Gprev[1:-1, 1, 1] + 0.0)
    # d/dX_i
    diag = -(Gprev + Gnext)
    add(row_bx, col_x, diag[:, 0, 0] + 0.0)
    add(row_bx, col_y, diag[:, 0, 1] + dsame * mu)
    add(interior_by, col_x[1:-1], diag[1:-1, 1, 0] - dsame[1:-1] * mu[1:-1])
    add(interior_by, col_y[1:-1], diag[1:-1, 1, 1] + 0.0)
    # d/dX_{i+1}
    add(row_bx[:-1], col_x[1:], Gnext[:-1, 0, 0] + 0.0)
    add(row_bx[:-1], col_y[1:], Gnext[:-1, 0, 1] - 0.25 * mu[:-1])
    add(interior_by, col_x[2:], Gnext[1:-1, 1, 0] + 0.25 * mu[1:-1])
    add(interior_by, col_y[2:], Gnext[1:-1, 1, 1] + 0.0)

    # contact-line mobility on the end x-rows; pinned y constraint rows
    add(row_bx[[0, -1]], col_x[[0, -1]], np.full(2, -1.0 / (fz.eta * tau)))
    add(row_by[[0, -1]], col_y[[0, -1]], np.ones(2))

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return sp.coo_matrix((vals, (rows, cols)), shape=(3 * M, 3 * M)).tocsc()


def assemble_residual_open(prev: OpenSolverState, cand_X, cand_mu, cfg: RunConfig,
                           a: Anisotropy, p: DewettingParams) -> np.ndarray:
    """Residual of the open-curve step at a candidate, length 3(N+1)."""
    cand_X = np.asarray(cand_X, dtype=float)
    cand_mu = np.asarray(cand_mu, dtype=float)
    M = prev.curve.n_vertices
    if cand_X.shape != (M, 2) or cand_mu.shape != (M,):
        raise ValueError("candidate arrays must match the vertex count")
    return _residual_open(_freeze_open(prev.curve, cfg, a, p), cand_X, cand_mu)


def assemble_jacobian_open(prev: OpenSolverState, cand_X, cand_mu, cfg: RunConfig,
                           a: Anisotropy, p: DewettingParams) -> np.ndarray:
    """Dense exact Jacobian of :func:`assemble_residual_open`."""
    cand_X = np.asarray(cand_X, dtype=float)
    cand_mu = np.asarray(cand_mu, dtype=float)
    fz = _freeze_open(prev.curve, cfg, a, p)
    return _jacobian_open(fz, cand_X, cand_mu).toarray()


def initial_mu_open(curve: PolygonalCurve, cfg: RunConfig, a: Anisotropy,
                    p: DewettingParams) -> np.ndarray:
    """Per-node least-squares weighted curvature on the initial open curve.

    Uses the surface terms only; the mobility term vanishes at the initial
    positions and the substrate term is a boundary effect the first Newton
    solve absorbs.
    """
    fz = _freeze_open(curve, cfg, a, p)
    L = fz.lengths
    Lnav_pad = _pad_rows(L[:, None] * fz.normals, (2,))
    w = 0.5 * (Lnav_pad[:-1] + Lnav_pad[1:])
    h0 = fz.X0[1:] - fz.X0[:-1]
    Gh_pad = _pad_rows(np.einsum("jkl,jl->jk", fz.G, h0) / L[:, None], (2,))
    r = Gh_pad[:-1] - Gh_pad[1:]
    denom = np.einsum("ij,ij->i", w, w)
    return np.einsum("ij,ij->i", w, r) / np.maximum(denom, 1e-300)


def initial_state_open(curve: PolygonalCurve, cfg: RunConfig, a: Anisotropy,
                       p: DewettingParams, time: float = 0.0) -> OpenSolverState:
    return OpenSolverState(curve, initial_mu_open(curve, cfg, a, p), time=time, step=0)


def solve_step_open(prev: OpenSolverState, cfg: RunConfig, a: Anisotropy,
                    p: DewettingParams) -> tuple[OpenSolverState, StepStats]:
    """Advance one implicit step; fails on Newton stall, contact-point
    crossover, or mesh collapse."""
    fz = _freeze_open(prev.curve, cfg, a, p)
    M = len(fz.X0)
    X = fz.X0.copy()
    mu = np.asarray(prev.mu, dtype=float)
    r = _residual_open(fz, X, mu)
    norm = float(np.max(np.abs(r)))
    history = [norm]
    iters = 0
    while norm >= cfg.newton_tol:
        if iters >= cfg.newton_max_iters:
            raise StepFailureError(
                f"Newton stalled at residual {norm:.3e} after {iters} iterations",
                residual_history=history,
            )
        J = _jacobian_open(fz, X, mu)
        delta = spla.splu(J).solve(-r)
        X = X + delta[: 2 * M].reshape(M, 2)
        mu = mu + delta[2 * M :]
        r = _residual_open(fz, X, mu)
        norm = float(np.max(np.abs(r)))
        history.append(norm)
        iters += 1
    X[0, 1] = 0.0
    X[-1, 1] = 0.0
    if X[0, 0] > X[-1, 0]:
        raise StepFailureError(
            f"contact points crossed (x_left={X[0, 0]:.6f} > x_right={X[-1, 0]:.6f})",
            residual_history=history,
        )
    lengths = np.linalg.norm(X[1:] - X[:-1], axis=1)
    if lengths.min() < cfg.min_edge_factor * lengths.mean():
        raise DegenerateMeshError(
            f"segment {int(np.argmin(lengths))} collapsed during step {prev.step + 1}"
        )
    new_curve = prev.curve.with_vertices(X)
    state = OpenSolverState(new_curve, mu, time=prev.time + fz.tau, step=prev.step + 1)
    stats = StepStats(iters, norm, area(new_curve), energy(new_curve, a, p.sigma))
    return state, stats


def evolve_open(state: OpenSolverState, cfg: RunConfig, a: Anisotropy,
                p: DewettingParams, observers=()) -> tuple[OpenSolverState, RunRecord]:
    """Open-curve evolution loop; rows gain contact positions and angles."""
    record = RunRecord(columns=OPEN_COLUMNS)
    record.meta = {
        "topology": "open_on_substrate",
        "n_vertices": cfg.n_vertices,
        "tau": cfg.resolved_tau,
        "t_end": cfg.t_end,
        "k_source": cfg.k_source.describe(),
        "sigma": p.sigma,
        "eta": p.eta,
    }

    def row(st: OpenSolverState, iters: int):
        th_l, th_r = contact_angles(st.curve)
        return (st.time, area(st.curve), energy(st.curve, a, p.sigma),
                mesh_ratio(st.curve, a), iters,
                float(st.curve.vertices[0, 0]), float(st.curve.vertices[-1, 0]),
                th_l, th_r)

    record.append(row(state, 0))
    for obs in observers:
        obs(state)
    guard = 1e-12 * max(1.0, abs(cfg.t_end))
    while state.time < cfg.t_end - guard:
        try:
            state, stats = solve_step_open(state, cfg, a, p)
        except StepFailureError as err:
            err.record = record
            raise
        record.append(row(state, stats.newton_iters))
        for obs in observers:
            obs(state)
    return state, record
