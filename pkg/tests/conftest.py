from __future__ import annotations

import numpy as np
import pytest

from sben import convex
from sben.phase import block_rotation

FAMILIES = ("Zero", "Linear", "IndicatorPoint", "Quadratic", "QuadraticDense", "ScaledNorm",
            "BoxSupport", "IndicatorBox", "SeparableSum", "Rotated")


def make_potential(family: str, dim: int, rng: np.random.Generator) -> convex.Potential:
    """A random member of one potential family on R^dim."""
    if family == "Zero":
        return convex.Zero(dim)
    if family == "Linear":
        return convex.Linear(rng.normal(size=dim))
    if family == "IndicatorPoint":
        return convex.IndicatorPoint(rng.normal(size=dim))
    if family == "Quadratic":
        return convex.Quadratic(rng.uniform(0.2, 3.0, size=dim))
    if family == "QuadraticDense":
        A = rng.normal(size=(dim, dim))
        return convex.Quadratic(A @ A.T + 0.3 * np.eye(dim))
    if family == "ScaledNorm":
        return convex.ScaledNorm(rng.uniform(0.1, 2.0), dim)
    if family == "BoxSupport":
        lo = -rng.uniform(0.1, 2.0, size=dim)
        return convex.BoxSupport(lo, lo + rng.uniform(0.2, 3.0, size=dim))
    if family == "IndicatorBox":
        lo = -rng.uniform(0.1, 2.0, size=dim)
        return convex.IndicatorBox(lo, lo + rng.uniform(0.2, 3.0, size=dim))
    if family == "SeparableSum":
        if dim == 1:
            return convex.SeparableSum(1, [(convex.Quadratic(rng.uniform(0.5, 2.0), 1), np.array([0]))])
        k = dim // 2
        return convex.SeparableSum(dim, [(convex.ScaledNorm(rng.uniform(0.1, 2.0), k), np.arange(k)),
                                         (convex.Quadratic(rng.uniform(0.5, 2.0, size=dim - k)),
                                          np.arange(k, dim))])
    if family == "Rotated":
        if dim % 2:
            Q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        else:
            Q = block_rotation(rng.uniform(0, 2 * np.pi), dim // 2)
        return convex.Rotated(convex.Quadratic(rng.uniform(0.5, 2.0, size=dim)), Q)
    raise ValueError(family)


def feasible_point(p: convex.Potential, rng: np.random.Generator) -> np.ndarray:
    """A point where p is finite (prox of a random point always is)."""
    return p.prox(rng.normal(scale=2.0, size=p.dim), 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
