"""Trajectory solvers for the discrete BEN principle.

Step k looks for the rate v = (z_k - z_{k-1})/dt with

    J v - DH(t*, z_{k-1} + theta dt v)  in  d phi(v),

i.e. zero BEN gap.  With A(v) = -J v + DH(...) this is 0 in d phi(v) + A(v),
a monotone inclusion whenever H is convex in z.  It is written as the
fixed point v = prox_{gamma phi}(v - gamma A(v)) and solved by semismooth
Newton on that residual, with Douglas-Rachford iterations as the fallback
(the resolvent of A is the implicit Hamiltonian solve).
"""

from __future__ import annotations

import logging

import numpy as np

from ..convex import Potential
from ..grid import TimeGrid, Trajectory
from ..hamiltonian import HamiltonianModel
from ..phase import as_flat, j_matrix
from .core import BenReport, SolverOptions, action_value, averaged_gradient, make_report

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    """A step exhausted its iteration budget; ``partial`` holds the accepted states z_0..z_{step-1}."""

    def __init__(self, step: int, gap: float, partial=None):
        super().__init__(f"step {step} did not converge (last gap {gap:.3e})")
        self.step = step
        self.gap = gap
        self.partial = partial


class InfeasibleStartError(ValueError):
    pass


class _Step:
    """Residual machinery for one implicit step."""

    def __init__(self, h, p, J, t0, t1, z_prev, theta, gamma):
        self.h, self.p, self.J = h, p, J
        self.t0, self.t1, self.zp, self.dt = t0, t1, z_prev, t1 - t0
        self.theta, self.gamma = theta, gamma
        self.I = np.eye(z_prev.size)

    def z_eval(self, v):
        return self.zp + self.theta * self.dt * v

    def A(self, v):
        return -self.J @ v + self.grad(self.z_eval(v))

    def grad(self, z):
        return averaged_gradient(self.h, self.t0, self.t1, z)

    def hess(self, z):
        return 0.5 * (self.h.hessian(self.t0, z) + self.h.hessian(self.t1, z))

    def dA(self, v):
        return -self.J + self.theta * self.dt * self.hess(self.z_eval(v))

    def residual(self, v):
        w = v - self.gamma * self.A(v)
        return v - self.p.prox(w, self.gamma), w

    def gap(self, v):
        g = self.J @ v - self.grad(self.z_eval(v))
        return self.p.value(v) + self.p.conj.value(g) - float(g @ v)

    def resolvent_A(self, y, tol):
        # u + gamma A(u) = y
        u = y.copy()
        for _ in range(50):
            F = u + self.gamma * self.A(u) - y
            if np.linalg.norm(F) <= tol * (1.0 + np.linalg.norm(y)):
                break
            u = u - np.linalg.solve(self.I + self.gamma * self.dA(u), F)
        return u


def _newton_direction(M, rhs):
    try:
        return np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(M, rhs, rcond=None)[0]


def _solve_step(st: _Step, v0, tol, max_iter, rtol=1e-13):
    """Return (v, gap, iterations); raises ConvergenceError on budget exhaustion."""
    v = v0.copy()
    it = 0
    R, w = st.residual(v)
    while it < max_iter:
        nR = np.linalg.norm(R)
        scale = 1.0 + np.linalg.norm(v) + np.linalg.norm(w)
        if nR <= rtol * scale and st.gap(v) <= tol:
            return v, st.gap(v), it
        P = st.p.prox_jacobian(w, st.gamma)
        M = st.I - P @ (st.I - st.gamma * st.dA(v))
        d = _newton_direction(M, -R)
        alpha = 1.0
        while alpha >= 1e-6:
            v_new = v + alpha * d
            R_new, w_new = st.residual(v_new)
            it += 1
            nR_new = np.linalg.norm(R_new)
            if nR_new < (1 - 1e-4 * alpha) * nR or nR_new <= rtol * scale:
                break
            alpha *= 0.5
        else:
            # Newton stalled: Douglas-Rachford on (d phi, A)
            x = w.copy()
            for _ in range(20):
                u = st.p.prox(x, st.gamma)
                x = x + st.resolvent_A(2 * u - x, 1e-14) - u
                it += 1
            v_new = st.p.prox(x, st.gamma)
            R_new, w_new = st.residual(v_new)
        v, R, w = v_new, R_new, w_new
    gap = st.gap(v)
    if gap <= tol:
        return v, gap, it
    raise ConvergenceError(-1, gap)


def _energy_scale(h, z0, t0):
    return 1.0 + abs(h.evaluate(t0, z0))


def incremental_solve(h: HamiltonianModel, p: Potential, z0, grid: TimeGrid,
                      opts: SolverOptions | None = None) -> tuple[Trajectory, BenReport]:
    """March the discrete BEN inclusion step by step."""
    opts = opts or SolverOptions()
    z0 = as_flat(z0).astype(float)
    if z0.size != h.dim or p.dim != h.dim:
        raise ValueError("initial state, Hamiltonian and potential dimensions differ")
    tol, gap_tol = opts.resolved(_energy_scale(h, z0, grid.nodes[0]))
    J = j_matrix(h.n)
    t = grid.nodes
    Z = np.empty((t.size, z0.size))
    Z[0] = z0
    v = -J @ h.gradient(t[0], z0)
    if not np.isfinite(p.value(v)):
        v = np.zeros_like(z0)
        if not np.isfinite(p.value(v)):
            raise InfeasibleStartError("dissipation potential is infinite at the starting rate")
    iters = []
    for k in range(1, t.size):
        st = _Step(h, p, J, t[k - 1], t[k], Z[k - 1], opts.theta, opts.gamma)
        try:
            v, gap, it = _solve_step(st, v, tol, opts.max_iter)
        except ConvergenceError as e:
            raise ConvergenceError(k, e.gap, Z[:k].copy()) from None
        Z[k] = Z[k - 1] + (t[k] - t[k - 1]) * v
        iters.append(it)
    traj = Trajectory(grid, Z)
    return traj, make_report(h, p, traj, "incremental", tol, gap_tol, iters, opts.theta)


def global_solve(h: HamiltonianModel, p: Potential, z0, grid: TimeGrid,
                 opts: SolverOptions | None = None, initial: Trajectory | None = None) -> tuple[Trajectory, BenReport]:
    """Minimise the discrete action over the whole trajectory at once.

    When DH is affine in z the action is a convex function of z_1..z_N and is
    minimised directly as a conic program.  The minimiser is then polished by
    semismooth Newton sweeps on the stacked optimality system (all states
    updated together; the linear system is block lower-bidiagonal), tracking
    the action per sweep.  Without the affine structure the sweeps start from
    ``initial`` or the constant extension of z0.  Sweeping stops when the
    residual vanishes and the action changes by less than ``tol_rel``; budget
    exhaustion is recorded in the report notes and flags it unconverged.
    """
    from .spacetime import NotRepresentable, minimize_action

    opts = opts or SolverOptions()
    z0 = as_flat(z0).astype(float)
    if z0.size != h.dim or p.dim != h.dim:
        raise ValueError("initial state, Hamiltonian and potential dimensions differ")
    tol, gap_tol = opts.resolved(_energy_scale(h, z0, grid.nodes[0]))
    theta, gamma = opts.theta, opts.gamma
    notes = []
    try:
        Z, status = minimize_action(h, p, z0, grid, theta)
        notes.append(f"space-time program: {status}")
    except NotRepresentable as e:
        notes.append(f"space-time program unavailable ({e}); Newton sweeps from the initial trajectory")
        if initial is None:
            Z = np.tile(z0, (grid.nodes.size, 1))
        else:
            Z = np.array(initial.states, dtype=float)
            if Z.shape != (grid.nodes.size, z0.size):
                raise ValueError("initial trajectory does not match the grid") from None
    Z[0] = z0
    Z, sweeps, exhausted = _newton_sweeps(h, p, Z, grid, theta, gamma, opts)
    if exhausted:
        notes.append(f"sweep budget {opts.sweeps} exhausted")
        log.warning("global_solve: sweep budget exhausted")
    traj = Trajectory(grid, Z)
    rep = make_report(h, p, traj, "global", tol, gap_tol, [sweeps], theta, notes)
    if exhausted:
        rep.converged = False
    return traj, rep


def _newton_sweeps(h, p, Z, grid, theta, gamma, opts):
    """Semismooth Newton on the stacked residual, with backtracking on its norm."""
    J = j_matrix(h.n)
    t = grid.nodes
    N, d = t.size - 1, Z.shape[1]
    dts = np.diff(t)
    I = np.eye(d)
    dw_dv = I + gamma * J

    def residuals(Z):
        out = np.empty((N, d))
        W = np.empty((N, d))
        for k in range(1, N + 1):
            v = (Z[k] - Z[k - 1]) / dts[k - 1]
            ze = (1 - theta) * Z[k - 1] + theta * Z[k]
            w = v - gamma * (-J @ v + averaged_gradient(h, t[k - 1], t[k], ze))
            W[k - 1] = w
            out[k - 1] = v - p.prox(w, gamma)
        return out, W

    def pi_of(Z):
        return float(action_value(h, p, Trajectory(grid, Z), theta))

    R, W = residuals(Z)
    nR = np.linalg.norm(R)
    Pi_prev = pi_of(Z)
    for sweep in range(1, opts.sweeps + 1):
        scale = (1.0 + float(np.max(np.abs(Z)))) / min(1.0, dts.min())
        if nR <= 1e-13 * scale * np.sqrt(N):
            return Z, sweep - 1, False
        dZ = np.zeros_like(Z)
        for k in range(1, N + 1):
            dt = dts[k - 1]
            ze = (1 - theta) * Z[k - 1] + theta * Z[k]
            Hs = 0.5 * (h.hessian(t[k - 1], ze) + h.hessian(t[k], ze))
            P = p.prox_jacobian(W[k - 1], gamma)
            Dk = I / dt - P @ (dw_dv / dt - gamma * theta * Hs)
            Lk = -I / dt - P @ (-dw_dv / dt - gamma * (1 - theta) * Hs)
            dZ[k] = _newton_direction(Dk, -R[k - 1] - Lk @ dZ[k - 1])
        alpha = 1.0
        while alpha >= 1e-4:
            Z_new = Z + alpha * dZ
            R_new, W_new = residuals(Z_new)
            nR_new = np.linalg.norm(R_new)
            if nR_new < (1 - 1e-4 * alpha) * nR:
                break
            alpha *= 0.5
        else:
            # no further progress possible from here
            return Z, sweep - 1, nR > 1e-9 * scale * np.sqrt(N)
        Z, R, W, nR = Z_new, R_new, W_new, nR_new
        Pi = pi_of(Z)
        if nR <= 1e-13 * scale * np.sqrt(N) and abs(Pi_prev - Pi) <= opts.tol_rel * (1.0 + abs(Pi)):
            return Z, sweep, False
        Pi_prev = Pi
    return Z, opts.sweeps, True
