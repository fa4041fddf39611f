"""Hamiltonian models, their symplectic gradients and the conservative flow."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import TimeGrid, Trajectory
from .phase import as_flat, j_matrix, jmap, omega


class FlowDivergence(RuntimeError):
    def __init__(self, step: int, residual: float):
        super().__init__(f"implicit midpoint Newton failed at step {step} (residual {residual:.3e})")
        self.step = step
        self.residual = residual


@dataclass(frozen=True)
class LoadCurve:
    """Scalar time program with an analytic derivative.

    kinds: ``constant`` (value), ``piecewise_linear`` (times, values; clamped
    outside the table), ``sinusoidal`` (amplitude, omega, phase, offset).
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind == "piecewise_linear":
            t = np.asarray(self.params["times"], dtype=float)
            v = np.asarray(self.params["values"], dtype=float)
            if t.ndim != 1 or t.shape != v.shape or t.size < 1:
                raise ValueError("piecewise_linear needs equal-length times and values")
            if np.any(np.diff(t) <= 0):
                raise ValueError("piecewise_linear breakpoints must be strictly increasing")
        elif self.kind not in ("constant", "sinusoidal"):
            raise ValueError(f"unknown load kind {self.kind!r}")

    @classmethod
    def constant(cls, value: float = 0.0) -> LoadCurve:
        return cls("constant", {"value": float(value)})

    @classmethod
    def piecewise_linear(cls, times, values) -> LoadCurve:
        return cls("piecewise_linear", {"times": [float(x) for x in times], "values": [float(x) for x in values]})

    @classmethod
    def sinusoidal(cls, amplitude: float, omega: float, phase: float = 0.0, offset: float = 0.0) -> LoadCurve:
        return cls("sinusoidal", {"amplitude": float(amplitude), "omega": float(omega),
                                  "phase": float(phase), "offset": float(offset)})

    def value(self, t: float) -> float:
        p = self.params
        if self.kind == "constant":
            return p["value"]
        if self.kind == "sinusoidal":
            return p["offset"] + p["amplitude"] * np.sin(p["omega"] * t + p["phase"])
        return float(np.interp(t, p["times"], p["values"]))

    def rate(self, t: float) -> float:
        p = self.params
        if self.kind == "constant":
            return 0.0
        if self.kind == "sinusoidal":
            return p["amplitude"] * p["omega"] * np.cos(p["omega"] * t + p["phase"])
        times, values = p["times"], p["values"]
        if t < times[0] or t >= times[-1] or len(times) < 2:
            return 0.0
        i = int(np.searchsorted(times, t, side="right")) - 1
        return (values[i + 1] - values[i]) / (times[i + 1] - times[i])


class HamiltonianModel:
    """Time-dependent Hamiltonian H(t, z) on a 2n phase space.

    Subclasses supply ``evaluate``, ``gradient`` (flat DH), ``time_derivative``
    and ``hessian`` (used by the implicit solvers).
    """

    n: int
    metadata: dict

    @property
    def dim(self) -> int:
        return 2 * self.n

    def evaluate(self, t: float, z) -> float:
        raise NotImplementedError

    def gradient(self, t: float, z) -> np.ndarray:
        raise NotImplementedError

    def time_derivative(self, t: float, z) -> float:
        raise NotImplementedError

    def hessian(self, t: float, z) -> np.ndarray:
        raise NotImplementedError


class QuadraticHamiltonian(HamiltonianModel):
    """H(t, z) = 1/2 z.K.z - sum_j l_j(t) b_j.z + 1/2 sum_ij C_ij l_i(t) l_j(t).

    Every shipped model has this form: kinetic and elastic energies are
    quadratic and loads or imposed displacements enter through the curves l_j.
    """

    def __init__(self, K, loads=(), C=None, metadata=None):
        K = np.asarray(K, dtype=float)
        if K.ndim != 2 or K.shape[0] != K.shape[1] or K.shape[0] % 2:
            raise ValueError("K must be a square matrix of even size")
        self.K = 0.5 * (K + K.T)
        self.n = K.shape[0] // 2
        self.curves = [c for c, _ in loads]
        self.B = np.array([np.asarray(b, dtype=float) for _, b in loads]).reshape(len(self.curves), 2 * self.n)
        m = len(self.curves)
        self.C = np.zeros((m, m)) if C is None else np.asarray(C, dtype=float).reshape(m, m)
        self.metadata = dict(metadata or {})

    def _l(self, t):
        return np.array([c.value(t) for c in self.curves])

    def _ldot(self, t):
        return np.array([c.rate(t) for c in self.curves])

    def evaluate(self, t, z):
        z = np.asarray(z, dtype=float)
        l = self._l(t)
        return float(0.5 * z @ self.K @ z - l @ (self.B @ z) + 0.5 * l @ self.C @ l)

    def gradient(self, t, z):
        return self.K @ np.asarray(z, dtype=float) - self._l(t) @ self.B

    def time_derivative(self, t, z):
        z = np.asarray(z, dtype=float)
        l, ld = self._l(t), self._ldot(t)
        return float(-ld @ (self.B @ z) + ld @ self.C @ l)

    def hessian(self, t, z):
        return self.K


class TransformedHamiltonian(HamiltonianModel):
    """H'(t, z') = H(t, Psi^-1 z') for an invertible linear map Psi."""

    def __init__(self, base: HamiltonianModel, Psi):
        self.base = base
        self.Psi = np.asarray(Psi, dtype=float)
        self.Psi_inv = np.linalg.inv(self.Psi)
        self.n = base.n
        self.metadata = dict(base.metadata, transformed=True)

    def evaluate(self, t, z):
        return self.base.evaluate(t, self.Psi_inv @ z)

    def gradient(self, t, z):
        return self.Psi_inv.T @ self.base.gradient(t, self.Psi_inv @ z)

    def time_derivative(self, t, z):
        return self.base.time_derivative(t, self.Psi_inv @ z)

    def hessian(self, t, z):
        return self.Psi_inv.T @ self.base.hessian(t, self.Psi_inv @ z) @ self.Psi_inv


def symp_grad_H(h: HamiltonianModel, t: float, z) -> np.ndarray:
    """XH = -J DH."""
    return -jmap(h.gradient(t, as_flat(z)))


def decompose_rate(h: HamiltonianModel, t: float, z, zdot):
    """Split zdot into the reversible part XH and the irreversible remainder."""
    zdot_R = symp_grad_H(h, t, z)
    return zdot_R, as_flat(zdot) - zdot_R


def dH_along(h: HamiltonianModel, t: float, z, zdot) -> float:
    """dH/dt along a curve through (t, z) with velocity zdot."""
    z = as_flat(z)
    return h.time_derivative(t, z) + omega(symp_grad_H(h, t, z), zdot)


def conservative_flow(h: HamiltonianModel, z0, grid: TimeGrid, tol: float = 1e-12, max_iter: int = 50) -> Trajectory:
    """Integrate zdot = XH(t, z) with the implicit midpoint rule (Newton-solved)."""
    z0 = as_flat(z0)
    J = j_matrix(h.n)
    I = np.eye(z0.size)
    Z = np.empty((grid.nodes.size, z0.size))
    Z[0] = z0
    t = grid.nodes
    for k in range(1, t.size):
        dt = t[k] - t[k - 1]
        tm = 0.5 * (t[k] + t[k - 1])
        zp = Z[k - 1]
        z = zp.copy()
        res = np.inf
        for _ in range(max_iter):
            mid = 0.5 * (zp + z)
            F = z - zp + dt * (J @ h.gradient(tm, mid))
            res = np.linalg.norm(F)
            if res <= tol * (1.0 + np.linalg.norm(z)):
                break
            Jac = I + 0.5 * dt * (J @ h.hessian(tm, mid))
            z = z - np.linalg.solve(Jac, F)
        else:
            raise FlowDivergence(k, res)
        if not np.all(np.isfinite(z)):
            raise FlowDivergence(k, np.inf)
        Z[k] = z
    return Trajectory(grid, Z)
