"""The discrete action as a convex program over the whole trajectory.

For a Hamiltonian whose gradient is affine in z with a constant Hessian, every
term of the discrete action is a convex function of the stacked states
z_1..z_N: the rates and evaluation points are linear in them, the polar term
is the conjugate of phi composed with an affine map, and the terminal energy
is a convex quadratic.  Each shipped potential family has an exact conic
representation, so the minimiser can be computed by an interior-point solver
without reference to the step-by-step inclusion.
"""

from __future__ import annotations

import numpy as np

from ..convex import (BoxSupport, IndicatorBox, IndicatorPoint, Linear, Potential, Quadratic, Rotated,
                      SeparableSum, Zero)
from .._cvx import import_cvxpy
from ..grid import TimeGrid
from ..phase import j_matrix


class NotRepresentable(ValueError):
    """The problem falls outside the convex-program formulation."""


def _psd_factor(Q, what):
    Q = 0.5 * (Q + Q.T)
    d, V = np.linalg.eigh(Q)
    if d.min() < -1e-10 * max(1.0, np.abs(d).max()):
        raise NotRepresentable(f"{what} is not positive semidefinite")
    keep = d > 1e-14 * max(1.0, np.abs(d).max())
    return V[:, keep] * np.sqrt(d[keep])


def _rows_term(p: Potential, V, w, cp):
    """(sum_k w_k p(V_k), constraints) for a cvxpy matrix expression V with rows V_k."""
    N = V.shape[0]
    if isinstance(p, Zero):
        return 0.0, []
    if isinstance(p, Linear):
        return w @ (V @ p.a), []
    if isinstance(p, IndicatorPoint):
        return 0.0, [V == np.tile(p.anchor, (N, 1))]
    if isinstance(p, Quadratic):
        L = _psd_factor(p.Q, "quadratic weight")
        if L.shape[1] == 0:
            return 0.0, []
        return 0.5 * cp.sum_squares(cp.multiply(np.sqrt(w)[:, None], V @ L)), []
    if isinstance(p, BoxSupport):
        lo, hi = np.tile(p.lower, (N, 1)), np.tile(p.upper, (N, 1))
        return cp.sum(cp.multiply(w[:, None], cp.maximum(cp.multiply(V, hi), cp.multiply(V, lo)))), []
    if isinstance(p, IndicatorBox):
        return 0.0, [V >= np.tile(p.lower, (N, 1)), V <= np.tile(p.upper, (N, 1))]
    if isinstance(p, SeparableSum):
        total, cons = 0.0, []
        for part, idx in p.parts:
            S = np.zeros((p.dim, idx.size))
            S[idx, np.arange(idx.size)] = 1.0
            e, c = _rows_term(part, V @ S, w, cp)
            total = total + e
            cons += c
        return total, cons
    if isinstance(p, Rotated):
        return _rows_term(p.inner, V @ p.R.T, w, cp)
    raise NotRepresentable(f"no conic representation for {type(p).__name__}")


def affine_structure(h, grid: TimeGrid):
    """Constant Hessian K plus per-node DH(t, 0) and H(t, 0); checks that DH is affine in z."""
    t = grid.nodes
    d = h.dim
    K = np.asarray(h.hessian(t[0], np.zeros(d)), dtype=float)
    g0 = np.array([h.gradient(tk, np.zeros(d)) for tk in t])
    c0 = np.array([h.evaluate(tk, np.zeros(d)) for tk in t])
    probe = np.cos(1.0 + np.arange(d))
    for k in (0, t.size // 2, t.size - 1):
        Kk = h.hessian(t[k], probe)
        if not np.allclose(Kk, K, rtol=1e-12, atol=1e-12 * (1 + np.abs(K).max())):
            raise NotRepresentable("Hamiltonian Hessian varies with time or state")
        if not np.allclose(h.gradient(t[k], probe), K @ probe + g0[k], rtol=1e-10, atol=1e-10):
            raise NotRepresentable("Hamiltonian gradient is not affine in the state")
    return 0.5 * (K + K.T), g0, c0


def minimize_action(h, p: Potential, z0, grid: TimeGrid, theta: float = 0.5):
    """Minimise the discrete action over z_1..z_N; returns the (N+1, 2n) state array and solver status."""
    cp = import_cvxpy()

    K, g0, c0 = affine_structure(h, grid)
    d = h.dim
    N = grid.steps
    dt = grid.dt
    J = j_matrix(h.n)
    Z = cp.Variable((N, d))
    full = cp.vstack([z0[None, :], Z])
    V = cp.multiply(1.0 / dt[:, None], full[1:] - full[:-1])
    Zs = (1 - theta) * full[:-1] + theta * full[1:]
    gbar = 0.5 * (g0[:-1] + g0[1:])
    polar_arg = V @ J.T - Zs @ K - gbar
    phi_term, cons_a = _rows_term(p, V, dt, cp)
    polar_term, cons_b = _rows_term(p.conj, polar_arg, dt, cp)
    # dt * partial_t H at the evaluation point: increments of DH(., 0).z* + H(., 0)
    time_term = cp.sum(cp.multiply(g0[1:] - g0[:-1], Zs)) + float(c0[-1] - c0[0])
    zN = full[N]
    L = _psd_factor(K, "Hamiltonian Hessian")
    terminal = (0.5 * cp.sum_squares(L.T @ zN) if L.shape[1] else 0.0) + g0[-1] @ zN + float(c0[-1])
    objective = phi_term + polar_term - time_term + terminal
    prob = cp.Problem(cp.Minimize(objective), cons_a + cons_b)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12, max_iter=400)
    if Z.value is None:
        raise NotRepresentable(f"space-time program failed: {prob.status}")
    return np.vstack([z0, Z.value]), prob.status
