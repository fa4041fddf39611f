"""Extended-real convex potentials with closed-form conjugates and proxes.

Every family acts on its own local coordinates ``v in R^d``.  Families are
closed under conjugation::

    Zero            <-> IndicatorPoint(0)
    Linear(a)       <-> IndicatorPoint(a)
    Quadratic(Q)    <-> Quadratic(Q^-1) (+ point indicators on ker Q)
    ScaledNorm(c)   <-> IndicatorBox(-c, c)
    BoxSupport(l,u) <-> IndicatorBox(l, u)
    SeparableSum    <-> SeparableSum of conjugates
    Rotated(P, R)   <-> Rotated(P*, R)          (R orthogonal)

``ScaledNorm`` is the l1 norm ``c * sum |v_i|``, which for a single
coordinate is the usual ``c |v|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import total_ordering

import numpy as np

from .phase import PhaseVector, jmap, omega

FEAS_TOL = 1e-9


class InfeasiblePointError(ValueError):
    """Subdifferential requested at a point where the potential is +inf."""


@total_ordering
@dataclass(frozen=True)
class ExtReal:
    """A value in R u {+inf}; -inf is not representable."""

    value: float = 0.0
    infinite: bool = False

    def __post_init__(self):
        if not self.infinite:
            v = float(self.value)
            if math.isnan(v) or v == -math.inf:
                raise ValueError(f"invalid extended real {self.value!r}")
            if v == math.inf:
                object.__setattr__(self, "infinite", True)
                object.__setattr__(self, "value", 0.0)
            else:
                object.__setattr__(self, "value", v)
        else:
            object.__setattr__(self, "value", 0.0)

    @classmethod
    def inf(cls) -> ExtReal:
        return cls(0.0, True)

    @classmethod
    def of(cls, v) -> ExtReal:
        return v if isinstance(v, ExtReal) else cls(float(v))

    @property
    def is_finite(self) -> bool:
        return not self.infinite

    def __float__(self):
        return math.inf if self.infinite else self.value

    def __add__(self, other):
        other = ExtReal.of(other)
        if self.infinite or other.infinite:
            return ExtReal.inf()
        return ExtReal(self.value + other.value)

    __radd__ = __add__

    def __sub__(self, other):
        other = ExtReal.of(other)
        if other.infinite:
            raise ArithmeticError("cannot subtract +inf from an extended real")
        return ExtReal.inf() if self.infinite else ExtReal(self.value - other.value)

    def __eq__(self, other):
        try:
            return float(self) == float(other)
        except (TypeError, ValueError):
            return NotImplemented

    def __lt__(self, other):
        return float(self) < float(other)

    def __hash__(self):
        return hash(float(self))

    def __repr__(self):
        return "ExtReal(+inf)" if self.infinite else f"ExtReal({self.value!r})"


def _vec(v) -> np.ndarray:
    if isinstance(v, PhaseVector):
        return v.flat
    return np.atleast_1d(np.asarray(v, dtype=float))


def _rows(V, dim):
    V = np.asarray(V, dtype=float)
    if V.ndim == 1:
        V = V[None, :]
    if V.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got {V.shape[1]}")
    return V


class Potential:
    """Base class: a proper convex lsc function on R^dim.

    Subclasses implement ``values`` (vectorised, +inf allowed), ``conjugate_potential``,
    ``prox``, ``prox_jacobian`` and ``subgradient``.
    """

    dim: int

    def values(self, V) -> np.ndarray:
        raise NotImplementedError

    def value(self, v) -> float:
        return float(self.values(np.asarray(v, dtype=float)[None, :])[0])

    def conjugate_potential(self) -> Potential:
        raise NotImplementedError

    def prox(self, w, lam: float) -> np.ndarray:
        raise NotImplementedError

    def prox_jacobian(self, w, lam: float) -> np.ndarray:
        """An element of the generalized Jacobian of ``prox(., lam)`` at w."""
        raise NotImplementedError

    def subgradient(self, v) -> np.ndarray:
        """The minimum-norm-style canonical element of the subdifferential at v."""
        raise NotImplementedError

    @property
    def conj(self) -> Potential:
        c = self.__dict__.get("_conj")
        if c is None:
            c = self.conjugate_potential()
            self.__dict__["_conj"] = c
        return c

    def conj_value(self, w) -> float:
        return self.conj.value(w)

    def _check(self, v):
        v = _vec(v)
        if v.shape != (self.dim,):
            raise ValueError(f"dimension mismatch: potential has dim {self.dim}, got {v.shape}")
        return v


class Zero(Potential):
    def __init__(self, dim: int):
        self.dim = int(dim)

    def values(self, V):
        return np.zeros(_rows(V, self.dim).shape[0])

    def conjugate_potential(self):
        return IndicatorPoint(np.zeros(self.dim))

    def prox(self, w, lam):
        return np.array(w, dtype=float)

    def prox_jacobian(self, w, lam):
        return np.eye(self.dim)

    def subgradient(self, v):
        return np.zeros(self.dim)

    def __repr__(self):
        return f"Zero({self.dim})"


class Linear(Potential):
    """v -> <a, v>."""

    def __init__(self, a):
        self.a = np.atleast_1d(np.asarray(a, dtype=float)).copy()
        self.dim = self.a.size

    def values(self, V):
        return _rows(V, self.dim) @ self.a

    def conjugate_potential(self):
        return IndicatorPoint(self.a)

    def prox(self, w, lam):
        return np.asarray(w, dtype=float) - lam * self.a

    def prox_jacobian(self, w, lam):
        return np.eye(self.dim)

    def subgradient(self, v):
        return self.a.copy()

    def __repr__(self):
        return f"Linear({self.a.tolist()})"


class IndicatorPoint(Potential):
    def __init__(self, anchor):
        self.anchor = np.atleast_1d(np.asarray(anchor, dtype=float)).copy()
        self.dim = self.anchor.size
        self.tol = FEAS_TOL * max(1.0, float(np.max(np.abs(self.anchor), initial=0.0)))

    def values(self, V):
        V = _rows(V, self.dim)
        far = np.max(np.abs(V - self.anchor), axis=1, initial=0.0) > self.tol
        return np.where(far, np.inf, 0.0)

    def conjugate_potential(self):
        return Linear(self.anchor)

    def prox(self, w, lam):
        return self.anchor.copy()

    def prox_jacobian(self, w, lam):
        return np.zeros((self.dim, self.dim))

    def subgradient(self, v):
        return np.zeros(self.dim)

    def __repr__(self):
        return f"IndicatorPoint({self.anchor.tolist()})"


class Quadratic(Potential):
    """v -> 1/2 v.Q.v with Q positive semidefinite.

    ``weights`` may be a scalar (with ``dim``), a vector (diagonal Q) or a
    symmetric matrix.
    """

    def __init__(self, weights, dim: int | None = None):
        W = np.asarray(weights, dtype=float)
        if W.ndim == 0:
            if dim is None:
                dim = 1
            W = np.full(dim, float(W))
        if W.ndim == 1:
            if np.any(W < 0):
                raise ValueError("quadratic weights must be >= 0")
            self.diag = W.copy()
            self.Q = np.diag(W)
        else:
            if W.shape[0] != W.shape[1] or not np.allclose(W, W.T, atol=1e-12 * (1 + np.abs(W).max())):
                raise ValueError("quadratic weight matrix must be square symmetric")
            d, V = np.linalg.eigh(0.5 * (W + W.T))
            if d.min() < -1e-12 * max(1.0, abs(d).max()):
                raise ValueError("quadratic weight matrix must be positive semidefinite")
            self.diag = None
            self.Q = 0.5 * (W + W.T)
            self._eig = (np.clip(d, 0.0, None), V)
        self.dim = self.Q.shape[0]

    def values(self, V):
        V = _rows(V, self.dim)
        return 0.5 * np.einsum("ij,jk,ik->i", V, self.Q, V)

    def conjugate_potential(self):
        if self.diag is not None:
            pos = self.diag > 0
            if pos.all():
                return Quadratic(1.0 / self.diag)
            parts = []
            if pos.any():
                parts.append((Quadratic(1.0 / self.diag[pos]), np.flatnonzero(pos)))
            parts.append((IndicatorPoint(np.zeros(int((~pos).sum()))), np.flatnonzero(~pos)))
            return SeparableSum(self.dim, parts)
        d, V = self._eig
        # 1/2 v.Q.v = psi(V^T v) with psi diagonal
        return Rotated(Quadratic(d).conjugate_potential(), V.T)

    def prox(self, w, lam):
        w = np.asarray(w, dtype=float)
        if self.diag is not None:
            return w / (1.0 + lam * self.diag)
        return np.linalg.solve(np.eye(self.dim) + lam * self.Q, w)

    def prox_jacobian(self, w, lam):
        if self.diag is not None:
            return np.diag(1.0 / (1.0 + lam * self.diag))
        return np.linalg.inv(np.eye(self.dim) + lam * self.Q)

    def subgradient(self, v):
        return self.Q @ np.asarray(v, dtype=float)

    def __repr__(self):
        w = self.diag.tolist() if self.diag is not None else self.Q.tolist()
        return f"Quadratic({w})"


class BoxSupport(Potential):
    """Support function of the box [l, u]: v -> sum max(u_i v_i, l_i v_i)."""

    def __init__(self, lower, upper):
        self.lower = np.atleast_1d(np.asarray(lower, dtype=float)).copy()
        self.upper = np.atleast_1d(np.asarray(upper, dtype=float)).copy()
        if self.lower.shape != self.upper.shape or np.any(self.lower > self.upper):
            raise ValueError("box bounds must satisfy lower <= upper")
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise ValueError("box bounds must be finite")
        self.dim = self.lower.size

    def values(self, V):
        V = _rows(V, self.dim)
        return np.maximum(V * self.upper, V * self.lower).sum(axis=1)

    def conjugate_potential(self):
        return IndicatorBox(self.lower, self.upper)

    def prox(self, w, lam):
        w = np.asarray(w, dtype=float)
        hi, lo = lam * self.upper, lam * self.lower
        # exact zero on the flat part, including the kink
        return np.where(w > hi, w - hi, np.where(w < lo, w - lo, 0.0))

    def prox_jacobian(self, w, lam):
        w = np.asarray(w, dtype=float)
        return np.diag(((w > lam * self.upper) | (w < lam * self.lower)).astype(float))

    def subgradient(self, v):
        v = np.asarray(v, dtype=float)
        return np.where(v > 0, self.upper, np.where(v < 0, self.lower, np.clip(0.0, self.lower, self.upper)))

    def __repr__(self):
        return f"BoxSupport({self.lower.tolist()}, {self.upper.tolist()})"


class ScaledNorm(BoxSupport):
    """v -> c * ||v||_1 (c >= 0)."""

    def __init__(self, c: float, dim: int = 1):
        if c < 0:
            raise ValueError("ScaledNorm needs c >= 0")
        self.c = float(c)
        super().__init__(np.full(dim, -self.c), np.full(dim, self.c))

    def __repr__(self):
        return f"ScaledNorm({self.c}, dim={self.dim})"


class IndicatorBox(Potential):
    """Indicator of {l <= v <= u}; points within FEAS_TOL*max(1, radius) count as inside."""

    def __init__(self, lower, upper):
        self.lower = np.atleast_1d(np.asarray(lower, dtype=float)).copy()
        self.upper = np.atleast_1d(np.asarray(upper, dtype=float)).copy()
        if self.lower.shape != self.upper.shape or np.any(self.lower > self.upper):
            raise ValueError("box bounds must satisfy lower <= upper")
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise ValueError("box bounds must be finite")
        self.dim = self.lower.size
        radius = np.maximum(np.abs(self.lower), np.abs(self.upper))
        self.tol = FEAS_TOL * np.maximum(1.0, radius)

    def values(self, V):
        V = _rows(V, self.dim)
        bad = np.any((V < self.lower - self.tol) | (V > self.upper + self.tol), axis=1)
        return np.where(bad, np.inf, 0.0)

    def conjugate_potential(self):
        return BoxSupport(self.lower, self.upper)

    def prox(self, w, lam):
        return np.clip(np.asarray(w, dtype=float), self.lower, self.upper)

    def prox_jacobian(self, w, lam):
        w = np.asarray(w, dtype=float)
        return np.diag(((w > self.lower) & (w < self.upper)).astype(float))

    def subgradient(self, v):
        return np.zeros(self.dim)

    def __repr__(self):
        return f"IndicatorBox({self.lower.tolist()}, {self.upper.tolist()})"


class SeparableSum(Potential):
    """sum_i P_i(v[idx_i]); coordinates not covered by any part contribute Zero."""

    def __init__(self, dim: int, parts):
        self.dim = int(dim)
        self.parts = []
        seen = np.zeros(self.dim, dtype=bool)
        for p, idx in parts:
            idx = np.atleast_1d(np.asarray(idx, dtype=int))
            if idx.size != p.dim:
                raise ValueError(f"part {p!r} has dim {p.dim} but {idx.size} indices")
            if np.any(seen[idx]) or len(set(idx.tolist())) != idx.size:
                raise ValueError("SeparableSum index subsets must be disjoint")
            seen[idx] = True
            self.parts.append((p, idx))
        self.free = np.flatnonzero(~seen)

    def values(self, V):
        V = _rows(V, self.dim)
        out = np.zeros(V.shape[0])
        for p, idx in self.parts:
            out = out + p.values(V[:, idx])
        return out

    def conjugate_potential(self):
        parts = [(p.conj, idx) for p, idx in self.parts]
        if self.free.size:
            parts.append((IndicatorPoint(np.zeros(self.free.size)), self.free))
        return SeparableSum(self.dim, parts)

    def prox(self, w, lam):
        w = np.asarray(w, dtype=float)
        out = w.copy()
        for p, idx in self.parts:
            out[idx] = p.prox(w[idx], lam)
        return out

    def prox_jacobian(self, w, lam):
        w = np.asarray(w, dtype=float)
        M = np.eye(self.dim)
        for p, idx in self.parts:
            M[np.ix_(idx, idx)] = p.prox_jacobian(w[idx], lam)
        return M

    def subgradient(self, v):
        v = np.asarray(v, dtype=float)
        g = np.zeros(self.dim)
        for p, idx in self.parts:
            g[idx] = p.subgradient(v[idx])
        return g

    def __repr__(self):
        inner = ", ".join(f"({p!r}, {idx.tolist()})" for p, idx in self.parts)
        return f"SeparableSum({self.dim}, [{inner}])"


class Rotated(Potential):
    """v -> P(R v) for an orthogonal matrix R."""

    def __init__(self, inner: Potential, R):
        R = np.asarray(R, dtype=float)
        if R.shape != (inner.dim, inner.dim):
            raise ValueError("rotation matrix shape does not match inner potential")
        if not np.allclose(R @ R.T, np.eye(inner.dim), atol=1e-10):
            raise ValueError("Rotated requires an orthogonal matrix")
        self.inner = inner
        self.R = R
        self.dim = inner.dim

    def values(self, V):
        return self.inner.values(_rows(V, self.dim) @ self.R.T)

    def conjugate_potential(self):
        return Rotated(self.inner.conj, self.R)

    def prox(self, w, lam):
        return self.R.T @ self.inner.prox(self.R @ np.asarray(w, dtype=float), lam)

    def prox_jacobian(self, w, lam):
        return self.R.T @ self.inner.prox_jacobian(self.R @ np.asarray(w, dtype=float), lam) @ self.R

    def subgradient(self, v):
        return self.R.T @ self.inner.subgradient(self.R @ np.asarray(v, dtype=float))

    def __repr__(self):
        return f"Rotated({self.inner!r})"


def on_block(p: Potential, block: str, n: int) -> Potential:
    """Place a potential of dim n on the x- or y-block of a 2n phase space."""
    if p.dim != n:
        raise ValueError("block potential must have dimension n")
    idx = np.arange(n) if block == "x" else np.arange(n, 2 * n)
    return SeparableSum(2 * n, [(p, idx)])


# -- module-level operations -------------------------------------------------

def evaluate(p: Potential, z) -> ExtReal:
    return ExtReal(p.value(p._check(z)))


def conjugate(p: Potential, w) -> ExtReal:
    w = p._check(w)
    return ExtReal(p.conj.value(w))


def symplectic_polar(p: Potential, z2) -> ExtReal:
    """phi^{*omega}(z2) = phi^*(J z2)."""
    return conjugate(p, jmap(z2))


def fenchel_gap(p: Potential, z, g) -> ExtReal:
    z, g = _vec(z), _vec(g)
    return evaluate(p, z) + conjugate(p, g) - float(g @ z)


def subdiff_contains(p: Potential, z, g, tol: float = 1e-10) -> bool:
    fz = evaluate(p, z)
    if not fz.is_finite:
        raise InfeasiblePointError("subdifferential undefined where the potential is +inf")
    return fenchel_gap(p, z, g) <= tol


def symp_subdiff_contains(p: Potential, z, z2, tol: float = 1e-10) -> bool:
    return subdiff_contains(p, z, jmap(z2), tol)


def ben_gap(p: Potential, zdot, zdot_I) -> ExtReal:
    """phi(zdot) + phi^{*omega}(zdot_I) - omega(zdot_I, zdot), >= 0 by the symplectic Fenchel inequality."""
    zdot, zdot_I = _vec(zdot), _vec(zdot_I)
    return evaluate(p, zdot) + symplectic_polar(p, zdot_I) - omega(zdot_I, zdot)


def positivity_defect(p: Potential, Z, Z2) -> float:
    """min over sample rows of phi(z) + phi^{*omega}(z2).

    A nonnegative result is consistent with (not a proof of) the sufficient
    condition phi + phi^{*omega} >= 0 under which the action's infimum is
    attained at zero gap; a negative one exhibits a violating pair.  Purely a
    diagnostic: no solver assumes the condition.
    """
    Z = _rows(Z, p.dim)
    Z2 = _rows(Z2, p.dim)
    vals = p.values(Z) + p.conj.values(np.array([jmap(z) for z in Z2]))
    return float(np.min(vals))


def prox(p: Potential, w, lam: float) -> np.ndarray:
    if not lam > 0:
        raise ValueError("prox parameter must be > 0")
    return p.prox(p._check(w), lam)
