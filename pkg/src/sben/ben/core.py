"""Discrete BEN residuals, the action functional and the balance diagnostics.

All quantities share one quadrature: the rate of step k is the backward
difference (z_k - z_{k-1})/dt_k and every state-dependent term (DH, dH/dt,
observable gradients) is evaluated at the step's evaluation point
``z* = (1-theta) z_{k-1} + theta z_k``.  Explicit time dependence is
averaged over the step: the gradient is 1/2 [DH(t_{k-1}, z*) + DH(t_k, z*)]
and the partial time rate is the difference quotient of H(., z*).  With
theta = 1/2 and H quadratic in z the discrete chain rule
``dt (<DH, v> + dH/dt) = H(t_k, z_k) - H(t_{k-1}, z_{k-1})`` is exact, so the
balance identities hold to solver precision rather than to O(dt).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..convex import ExtReal, Potential, ben_gap
from ..grid import Trajectory
from ..hamiltonian import HamiltonianModel, decompose_rate
from ..phase import as_flat, jmap

SCHEMA_VERSION = "1.0"


class PreconditionError(ValueError):
    pass


@dataclass
class SolverOptions:
    """Solver settings; ``None`` tolerances resolve against the energy scale 1 + |H(0, z0)|."""

    tol: float | None = None
    gap_tol: float | None = None
    max_iter: int = 500
    theta: float = 0.5
    gamma: float = 1.0
    sweeps: int = 200
    tol_rel: float = 1e-10

    def resolved(self, scale: float) -> tuple[float, float]:
        tol = 1e-8 * scale if self.tol is None else self.tol
        gap_tol = 1e-6 * scale if self.gap_tol is None else self.gap_tol
        return tol, gap_tol

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("tol", "gap_tol", "max_iter", "theta", "gamma", "sweeps", "tol_rel")}


@dataclass
class StepTerms:
    """Per-step quantities of a trajectory (arrays of length N)."""

    dt: np.ndarray
    t_eval: np.ndarray
    z_eval: np.ndarray
    rates: np.ndarray
    grad_H: np.ndarray
    X_H: np.ndarray
    dH_dt_partial: np.ndarray
    phi: np.ndarray
    polar: np.ndarray
    omega_term: np.ndarray

    @property
    def gap(self) -> np.ndarray:
        return self.phi + self.polar - self.omega_term

    @property
    def dissipation(self) -> np.ndarray:
        return self.phi + self.polar


def averaged_gradient(f, t0: float, t1: float, z) -> np.ndarray:
    """Step gradient of f at state z: the mean of its gradients at the step's end times."""
    return 0.5 * (f.gradient(t0, z) + f.gradient(t1, z))


def time_increment_rate(f, t0: float, t1: float, z) -> float:
    """Step partial time rate of f at state z: (f(t1, z) - f(t0, z)) / (t1 - t0)."""
    return (f.evaluate(t1, z) - f.evaluate(t0, z)) / (t1 - t0)


def step_terms(h: HamiltonianModel, p: Potential, traj: Trajectory, theta: float = 0.5) -> StepTerms:
    t_eval, z_eval = traj.midpoints(theta)
    T = traj.times
    V = traj.rates
    G = np.array([averaged_gradient(h, a, b, z) for a, b, z in zip(T[:-1], T[1:], z_eval)])
    XH = -np.array([jmap(g) for g in G])
    # J(zdot - XH) = J zdot - DH
    Gs = np.array([jmap(v) for v in V]) - G
    return StepTerms(
        dt=traj.grid.dt,
        t_eval=t_eval,
        z_eval=z_eval,
        rates=V,
        grad_H=G,
        X_H=XH,
        dH_dt_partial=np.array([time_increment_rate(h, a, b, z) for a, b, z in zip(T[:-1], T[1:], z_eval)]),
        phi=p.values(V),
        polar=p.conj.values(Gs),
        omega_term=np.einsum("ij,ij->i", Gs, V),
    )


def step_residual(h: HamiltonianModel, p: Potential, t: float, z, zdot) -> ExtReal:
    """BEN gap of a single rate zdot at state (t, z)."""
    zdot_R, zdot_I = decompose_rate(h, t, z, zdot)
    return ben_gap(p, as_flat(zdot), zdot_I)


def action_value(h: HamiltonianModel, p: Potential, traj: Trajectory, theta: float = 0.5) -> ExtReal:
    """Discrete action: sum dt [phi + phi^{*omega} - dH/dt] + H(T, z_N)."""
    st = step_terms(h, p, traj, theta)
    integrand = st.phi + st.polar - st.dH_dt_partial
    if not np.all(np.isfinite(integrand)):
        return ExtReal.inf()
    return ExtReal(float(st.dt @ integrand) + h.evaluate(traj.times[-1], traj.states[-1]))


def energy_balance(h: HamiltonianModel, p: Potential, traj: Trajectory, theta: float = 0.5) -> np.ndarray:
    """Dissipated energy minus (H(0) - H(tau) + int dH/dt) at every node tau."""
    st = step_terms(h, p, traj, theta)
    H = np.array([h.evaluate(t, z) for t, z in zip(traj.times, traj.states)])
    lhs = np.concatenate([[0.0], np.cumsum(st.dt * st.dissipation)])
    rhs = H[0] - H + np.concatenate([[0.0], np.cumsum(st.dt * st.dH_dt_partial)])
    return lhs - rhs


def dissipation_inequality(h: HamiltonianModel, p: Potential, traj: Trajectory, theta: float = 0.5) -> np.ndarray:
    """phi(zdot_I) - [dH/dt - partial_t H + phi(zdot)] per step.

    +inf where phi(zdot_I) is infinite (vacuously satisfied), -inf where
    phi(zdot) is infinite.
    """
    st = step_terms(h, p, traj, theta)
    H = np.array([h.evaluate(t, z) for t, z in zip(traj.times, traj.states)])
    lhs = p.values(st.rates - st.X_H)
    rhs = np.diff(H) / st.dt - st.dH_dt_partial + st.phi
    return _defect(lhs, rhs)


def _defect(lhs, rhs):
    out = np.empty_like(lhs)
    bad_rhs = ~np.isfinite(rhs)
    bad_lhs = ~np.isfinite(lhs)
    out[bad_rhs] = -np.inf
    out[bad_lhs & ~bad_rhs] = np.inf
    ok = ~bad_lhs & ~bad_rhs
    out[ok] = lhs[ok] - rhs[ok]
    return out


def _observable_terms(f, st: StepTerms, T):
    return -np.array([jmap(averaged_gradient(f, a, b, z)) for a, b, z in zip(T[:-1], T[1:], st.z_eval)])


def _omega_rows(A, B):
    n = A.shape[1] // 2
    return np.einsum("ij,ij->i", A[:, :n], B[:, n:]) - np.einsum("ij,ij->i", B[:, :n], A[:, n:])


def variational_inequality_check(h, p: Potential, traj: Trajectory, f, theta: float = 0.5) -> np.ndarray:
    """phi(zdot - Xf) - [omega(Xf, zdot) + omega(XH, Xf) + phi(zdot)] per step."""
    st = step_terms(h, p, traj, theta)
    Xf = _observable_terms(f, st, traj.times)
    lhs = p.values(st.rates - Xf)
    rhs = _omega_rows(Xf, st.rates) + _omega_rows(st.X_H, Xf) + st.phi
    return _defect(lhs, rhs)


def integral_of_motion_check(h, p: Potential, traj: Trajectory, f, theta: float = 0.5,
                             bracket_tol: float = 1e-9) -> np.ndarray:
    """phi(zdot - Xf) - [omega(Xf, zdot) + phi(zdot)] per step, for f with {f, H} = 0."""
    st = step_terms(h, p, traj, theta)
    Xf = _observable_terms(f, st, traj.times)
    bracket = _omega_rows(Xf, st.X_H)
    scale = 1.0 + np.linalg.norm(Xf, axis=1) * np.linalg.norm(st.X_H, axis=1)
    worst = float(np.max(np.abs(bracket) / scale))
    if worst > bracket_tol:
        raise PreconditionError(f"observable is not an integral of motion: max |{{f,H}}| = {worst:.3e}")
    lhs = p.values(st.rates - Xf)
    rhs = _omega_rows(Xf, st.rates) + st.phi
    return _defect(lhs, rhs)


def time_integrated_inequality(h, p: Potential, traj: Trajectory, f, theta: float = 0.5) -> float:
    """int [phi(zdot - Xf) - phi(zdot)] - (f(T) - f(0) + int [{H,f} - df/dt])."""
    st = step_terms(h, p, traj, theta)
    Xf = _observable_terms(f, st, traj.times)
    lhs_terms = p.values(st.rates - Xf) - st.phi
    if not np.all(np.isfinite(st.phi)):
        return -math.inf
    if not np.all(np.isfinite(lhs_terms)):
        return math.inf
    bracket = _omega_rows(st.X_H, Xf)
    T, Z = traj.times, traj.states
    df_partial = np.array([time_increment_rate(f, a, b, z) for a, b, z in zip(T[:-1], T[1:], st.z_eval)])
    rhs = f.evaluate(T[-1], Z[-1]) - f.evaluate(T[0], Z[0]) + float(st.dt @ (bracket - df_partial))
    return float(st.dt @ lhs_terms) - rhs


@dataclass
class BenReport:
    method: str
    gaps: np.ndarray
    dissipation: np.ndarray
    energy_balance_defect: np.ndarray
    dissipation_inequality_defect: np.ndarray
    dt: np.ndarray
    Pi_value: float
    H0: float
    tol: float
    gap_tol: float
    converged: bool
    iterations: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def certificate(self) -> float:
        """Pi - H(0, z0); zero at an exact discrete BEN solution."""
        return self.Pi_value - self.H0

    @property
    def total_dissipation(self) -> float:
        return float(self.dt @ self.dissipation)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "method": self.method,
            "converged": bool(self.converged),
            "certificate": _num(self.certificate),
            "Pi_value": _num(self.Pi_value),
            "H0": _num(self.H0),
            "tolerances": {"step_gap": self.tol, "certificate": self.gap_tol},
            "max_step_gap": _num(float(np.max(self.gaps))) if self.gaps.size else 0.0,
            "total_dissipation": _num(self.total_dissipation),
            "max_abs_energy_balance_defect": _num(float(np.max(np.abs(self.energy_balance_defect)))),
            "min_dissipation_inequality_defect": _num(float(np.min(self.dissipation_inequality_defect))),
            "iterations": [int(i) for i in self.iterations],
            "step_gaps": [_num(g) for g in self.gaps],
            "dissipation_rates": [_num(d) for d in self.dissipation],
            "energy_balance_defect": [_num(d) for d in self.energy_balance_defect],
            "dissipation_inequality_defect": [_num(d) for d in self.dissipation_inequality_defect],
            "notes": list(self.notes),
        }


def _num(x):
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def make_report(h, p, traj: Trajectory, method: str, tol: float, gap_tol: float,
                iterations, theta: float = 0.5, notes=()) -> BenReport:
    st = step_terms(h, p, traj, theta)
    gaps = st.gap
    gaps = np.where(np.isfinite(gaps), gaps, np.inf)
    Pi = float(action_value(h, p, traj, theta))
    H0 = h.evaluate(traj.times[0], traj.states[0])
    converged = bool(np.all(gaps <= tol) and Pi - H0 <= gap_tol)
    return BenReport(
        method=method,
        gaps=gaps,
        dissipation=st.dissipation,
        energy_balance_defect=energy_balance(h, p, traj, theta),
        dissipation_inequality_defect=dissipation_inequality(h, p, traj, theta),
        dt=st.dt,
        Pi_value=Pi,
        H0=H0,
        tol=tol,
        gap_tol=gap_tol,
        converged=converged,
        iterations=list(iterations),
        notes=list(notes),
    )
