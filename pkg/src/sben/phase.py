"""Flat phase-space algebra on R^n x R^n.

States and rates are stored as flat arrays ``z = (x_1..x_n, y_1..y_n)``.
:class:`PhaseVector` is the typed wrapper used at API boundaries; every
function here accepts either a ``PhaseVector`` or a flat array and returns
flat arrays for vector results.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class DimensionError(ValueError):
    """Raised when phase vectors of incompatible dimensions are combined."""


@dataclass(frozen=True, eq=False)
class PhaseVector:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float)).copy()
        y = np.atleast_1d(np.asarray(self.y, dtype=float)).copy()
        if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape or x.size == 0:
            raise DimensionError(f"x and y blocks must be 1-d of equal size >= 1, got {x.shape} and {y.shape}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("phase vector entries must be finite")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.size

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([self.x, self.y])

    @classmethod
    def from_flat(cls, z) -> PhaseVector:
        z = np.asarray(z, dtype=float)
        if z.ndim != 1 or z.size % 2 or z.size == 0:
            raise DimensionError(f"flat phase vector must have even length, got {z.shape}")
        n = z.size // 2
        return cls(z[:n], z[n:])

    @classmethod
    def zeros(cls, n: int) -> PhaseVector:
        return cls(np.zeros(n), np.zeros(n))

    def __add__(self, other):
        return PhaseVector.from_flat(self.flat + as_flat(other))

    def __sub__(self, other):
        return PhaseVector.from_flat(self.flat - as_flat(other))

    def __neg__(self):
        return PhaseVector(-self.x, -self.y)

    def __mul__(self, a: float):
        return PhaseVector(a * self.x, a * self.y)

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, PhaseVector):
            return NotImplemented
        return bool(np.array_equal(self.x, other.x) and np.array_equal(self.y, other.y))

    def __hash__(self):
        return hash((self.x.tobytes(), self.y.tobytes()))


def as_flat(z) -> np.ndarray:
    if isinstance(z, PhaseVector):
        return z.flat
    z = np.asarray(z, dtype=float)
    if z.ndim != 1 or z.size % 2 or z.size == 0:
        raise DimensionError(f"flat phase vector must have even length, got {z.shape}")
    return z


def _pair(z, z2):
    a, b = as_flat(z), as_flat(z2)
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.size} vs {b.size}")
    return a, b


def pairing(z, z2) -> float:
    """Euclidean duality <<z, z2>> = <x, x2> + <y, y2>."""
    a, b = _pair(z, z2)
    return float(a @ b)


def omega(z, z2) -> float:
    """Symplectic form <x, y2> - <x2, y>."""
    a, b = _pair(z, z2)
    n = a.size // 2
    return float(a[:n] @ b[n:] - b[:n] @ a[n:])


def jmap(z) -> np.ndarray:
    """J(x, y) = (-y, x)."""
    a = as_flat(z)
    n = a.size // 2
    return np.concatenate([-a[n:], a[:n]])


def jmap_inv(z) -> np.ndarray:
    a = as_flat(z)
    n = a.size // 2
    return np.concatenate([a[n:], -a[:n]])


def j_matrix(n: int) -> np.ndarray:
    J = np.zeros((2 * n, 2 * n))
    J[:n, n:] = -np.eye(n)
    J[n:, :n] = np.eye(n)
    return J


@dataclass(frozen=True)
class Observable:
    """Scalar function F(t, z) with analytic gradient DF and dF/dt.

    ``gradient`` returns the flat vector DF (not the symplectic gradient).
    """

    evaluate: Callable[[float, np.ndarray], float]
    gradient: Callable[[float, np.ndarray], np.ndarray]
    time_derivative: Callable[[float, np.ndarray], float] = field(default=lambda t, z: 0.0)
    name: str = "observable"

    def __add__(self, other: Observable) -> Observable:
        return Observable(
            lambda t, z: self.evaluate(t, z) + other.evaluate(t, z),
            lambda t, z: self.gradient(t, z) + other.gradient(t, z),
            lambda t, z: self.time_derivative(t, z) + other.time_derivative(t, z),
            f"({self.name}+{other.name})",
        )

    def scaled(self, a: float) -> Observable:
        return Observable(
            lambda t, z: a * self.evaluate(t, z),
            lambda t, z: a * self.gradient(t, z),
            lambda t, z: a * self.time_derivative(t, z),
            f"{a}*{self.name}",
        )


def symplectic_gradient(f, t: float, z) -> np.ndarray:
    """XF = -J DF, i.e. (D_y F, -D_x F)."""
    return -jmap(f.gradient(t, as_flat(z)))


def poisson_bracket(f, g, t: float, z) -> float:
    z = as_flat(z)
    return omega(symplectic_gradient(f, t, z), symplectic_gradient(g, t, z))


# -- stock observables -------------------------------------------------------

def constant_observable(c: float, dim: int) -> Observable:
    return Observable(lambda t, z: c, lambda t, z: np.zeros(dim), name="const")


def coordinate_observable(index: int, dim: int) -> Observable:
    e = np.zeros(dim)
    e[index] = 1.0
    return Observable(lambda t, z: float(z[index]), lambda t, z: e.copy(), name=f"z[{index}]")


def linear_observable(a, c: float = 0.0) -> Observable:
    a = np.asarray(a, dtype=float)
    return Observable(lambda t, z: float(a @ z) + c, lambda t, z: a.copy(), name="linear")


def omega_observable(z2) -> Observable:
    """f(z) = omega(z, z2); its symplectic gradient is the constant -z2."""
    z2 = as_flat(z2).copy()
    return linear_observable(-jmap(z2))


def quadratic_observable(Q, a=None, c: float = 0.0) -> Observable:
    """f(z) = 1/2 z.Q.z + a.z + c with Q symmetrised."""
    Q = np.asarray(Q, dtype=float)
    Q = 0.5 * (Q + Q.T)
    a = np.zeros(Q.shape[0]) if a is None else np.asarray(a, dtype=float)
    return Observable(
        lambda t, z: float(0.5 * z @ Q @ z + a @ z + c),
        lambda t, z: Q @ z + a,
        name="quadratic",
    )


def time_modulated(f: Observable, psi: Callable[[float], float], dpsi: Callable[[float], float]) -> Observable:
    """psi(t) * f(z) for a time-independent f."""
    return Observable(
        lambda t, z: psi(t) * f.evaluate(t, z),
        lambda t, z: psi(t) * f.gradient(t, z),
        lambda t, z: dpsi(t) * f.evaluate(t, z),
        f"psi*{f.name}",
    )


def angular_momentum() -> Observable:
    """L = q1 p2 - q2 p1 on the 2-dof phase space (q1, q2, p1, p2)."""
    return Observable(
        lambda t, z: float(z[0] * z[3] - z[1] * z[2]),
        lambda t, z: np.array([z[3], -z[2], -z[1], z[0]]),
        name="angular_momentum",
    )


def block_rotation(theta: float, n: int) -> np.ndarray:
    """Linear symplectic rotation (q, p) -> (q cos + p sin, -q sin + p cos) per dof."""
    c, s = np.cos(theta), np.sin(theta)
    I = np.eye(n)
    return np.block([[c * I, s * I], [-s * I, c * I]])
