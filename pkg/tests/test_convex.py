from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sben import convex
from sben.convex import ExtReal, InfeasiblePointError
from sben.phase import jmap, omega
from sben.verify import GridOracle, brute_force_conjugates

from conftest import FAMILIES, feasible_point, make_potential

family_dims = st.tuples(st.sampled_from(FAMILIES), st.integers(1, 4), st.integers(0, 2**32 - 1))


def _setup(case):
    family, dim, seed = case
    rng = np.random.default_rng(seed)
    return make_potential(family, dim, rng), rng


# ---------------------------------------------------------------- extended reals

def test_extreal_arithmetic_and_order():
    inf = ExtReal.inf()
    assert (ExtReal(1.0) + inf).infinite
    assert float(ExtReal(2.0) - 0.5) == 1.5
    assert ExtReal(3.0) < inf
    assert ExtReal(math.inf) == inf
    with pytest.raises(ArithmeticError):
        ExtReal(1.0) - inf
    with pytest.raises(ValueError):
        ExtReal(-math.inf)
    with pytest.raises(ValueError):
        ExtReal(math.nan)


# ---------------------------------------------------------------- closed forms

def test_scaled_norm_conjugate_is_box_indicator():
    p = convex.ScaledNorm(1.5)
    assert float(convex.conjugate(p, [1.0])) == 0.0
    assert float(convex.conjugate(p, [1.5])) == 0.0
    assert math.isinf(float(convex.conjugate(p, [1.6])))


def test_zero_conjugate_is_indicator_of_origin():
    p = convex.Zero(2)
    assert float(convex.conjugate(p, [0.0, 0.0])) == 0.0
    assert math.isinf(float(convex.conjugate(p, [0.0, 1e-3])))


def test_quadratic_conjugate_inverts_weights():
    p = convex.Quadratic([2.0, 0.5])
    w = np.array([1.0, -3.0])
    assert float(convex.conjugate(p, w)) == pytest.approx(0.5 * (1.0 / 2.0 + 9.0 / 0.5))


def test_singular_quadratic_conjugate_is_infinite_off_the_range():
    p = convex.Quadratic([1.0, 0.0])
    assert float(convex.conjugate(p, [2.0, 0.0])) == pytest.approx(2.0)
    assert math.isinf(float(convex.conjugate(p, [2.0, 0.1])))


def test_indicator_box_conjugate_is_support_function():
    p = convex.IndicatorBox([-1.0, 0.0], [2.0, 3.0])
    assert float(convex.conjugate(p, [1.0, -1.0])) == pytest.approx(2.0)
    assert float(convex.conjugate(p, [-1.0, 1.0])) == pytest.approx(1.0 + 3.0)


def test_evaluate_rejects_wrong_dimension():
    with pytest.raises(ValueError):
        convex.evaluate(convex.Zero(2), [1.0])


def test_subdiff_undefined_outside_domain():
    p = convex.IndicatorBox([-1.0], [1.0])
    with pytest.raises(InfeasiblePointError):
        convex.subdiff_contains(p, [2.0], [0.0])


def test_prox_parameter_must_be_positive():
    with pytest.raises(ValueError):
        convex.prox(convex.Quadratic(1.0), [1.0], 0.0)


# ---------------------------------------------------------------- properties

@settings(max_examples=150, deadline=None)
@given(family_dims)
def test_fenchel_young_inequality(case):
    p, rng = _setup(case)
    for _ in range(5):
        z = rng.normal(scale=2.0, size=p.dim)
        g = rng.normal(scale=2.0, size=p.dim)
        gap = convex.fenchel_gap(p, z, g)
        scale = 1.0 + np.abs(z).max() * np.abs(g).max()
        assert float(gap) >= -1e-12 * scale


@settings(max_examples=150, deadline=None)
@given(family_dims)
def test_subgradient_attains_fenchel_equality(case):
    p, rng = _setup(case)
    z = feasible_point(p, rng)
    g = p.subgradient(z)
    assert float(convex.fenchel_gap(p, z, g)) <= 1e-10 * (1.0 + np.abs(z).max() * np.abs(g).max())
    assert convex.subdiff_contains(p, z, g)


@settings(max_examples=150, deadline=None)
@given(family_dims, st.floats(0.05, 5.0))
def test_moreau_decomposition(case, lam):
    # w = prox_{lam p}(w) + lam prox_{p*/lam}(w/lam)
    p, rng = _setup(case)
    w = rng.normal(scale=2.0, size=p.dim)
    a = p.prox(w, lam)
    b = p.conj.prox(w / lam, 1.0 / lam)
    assert np.allclose(a + lam * b, w, atol=1e-10 * (1 + np.abs(w).max()))


@settings(max_examples=100, deadline=None)
@given(family_dims, st.floats(0.1, 3.0))
def test_prox_is_characterised_by_subgradient_inclusion(case, lam):
    # v = prox(w) iff (w - v)/lam in d p(v)
    p, rng = _setup(case)
    w = rng.normal(scale=2.0, size=p.dim)
    v = p.prox(w, lam)
    assert math.isfinite(p.value(v))
    assert float(convex.fenchel_gap(p, v, (w - v) / lam)) <= 1e-9 * (1 + np.abs(w).max() ** 2)


@settings(max_examples=60, deadline=None)
@given(family_dims)
def test_prox_is_firmly_nonexpansive(case):
    p, rng = _setup(case)
    w1, w2 = rng.normal(size=(2, p.dim))
    d = p.prox(w1, 1.0) - p.prox(w2, 1.0)
    assert d @ d <= d @ (w1 - w2) + 1e-12


@settings(max_examples=60, deadline=None)
@given(family_dims)
def test_prox_jacobian_matches_finite_differences(case):
    p, rng = _setup(case)
    w = rng.normal(scale=2.0, size=p.dim)
    P = p.prox_jacobian(w, 0.7)
    e = 1e-7
    for i in range(p.dim):
        step = np.zeros(p.dim)
        step[i] = e
        fd = (p.prox(w + step, 0.7) - p.prox(w - step, 0.7)) / (2 * e)
        # kinks of piecewise-linear proxes are measure-zero; skip if the stencil straddles one
        fwd = (p.prox(w + step, 0.7) - p.prox(w, 0.7)) / e
        if np.allclose(fwd, fd, atol=1e-5):
            assert np.allclose(P[:, i], fd, atol=1e-5)


@settings(max_examples=100, deadline=None)
@given(family_dims)
def test_conjugate_is_involutive_on_values(case):
    p, rng = _setup(case)
    z = rng.normal(size=p.dim)
    a, b = p.value(z), p.conj.conj.value(z)
    if math.isinf(a):
        assert math.isinf(b)
    else:
        assert b == pytest.approx(a, abs=1e-10 * (1 + abs(a)))


# ---------------------------------------------------------------- symplectic forms

@settings(max_examples=150, deadline=None)
@given(st.sampled_from(FAMILIES), st.integers(1, 2), st.integers(0, 2**32 - 1))
def test_ben_gap_is_nonnegative(family, n, seed):
    rng = np.random.default_rng(seed)
    p = make_potential(family, 2 * n, rng)
    for _ in range(5):
        zdot, zI = rng.normal(scale=2.0, size=(2, 2 * n))
        assert float(convex.ben_gap(p, zdot, zI)) >= -1e-12 * (1 + np.abs(zdot).max() * np.abs(zI).max())


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(FAMILIES), st.integers(1, 2), st.integers(0, 2**32 - 1))
def test_symplectic_subdifferential_equality(family, n, seed):
    # J z' in d phi(z)  <=>  z' in d^omega phi(z), and then the BEN gap vanishes
    rng = np.random.default_rng(seed)
    p = make_potential(family, 2 * n, rng)
    z = feasible_point(p, rng)
    zI = -jmap(p.subgradient(z))
    assert np.allclose(jmap(zI), p.subgradient(z))
    assert convex.symp_subdiff_contains(p, z, zI)
    assert float(convex.ben_gap(p, z, zI)) <= 1e-10 * (1 + np.abs(z).max() * np.abs(zI).max())
    assert float(convex.symplectic_polar(p, zI)) == pytest.approx(p.conj.value(jmap(zI)), abs=1e-12)
    assert omega(zI, z) == pytest.approx(float(jmap(zI) @ z), abs=1e-12)


def test_polar_of_positively_homogeneous_potentials_is_zero_or_infinite(rng):
    for p in (convex.Zero(2), convex.ScaledNorm(1.0, 2), convex.BoxSupport([-1, -2], [1, 0.5])):
        vals = {float(convex.symplectic_polar(p, rng.normal(scale=3.0, size=2))) for _ in range(200)}
        vals.add(float(convex.symplectic_polar(p, np.zeros(2))))
        assert vals <= {0.0, math.inf}
        assert vals == {0.0, math.inf}


# ---------------------------------------------------------------- brute-force oracle

@pytest.mark.parametrize("family", FAMILIES)
def test_closed_form_conjugate_against_grid_oracle(family):
    rng = np.random.default_rng(11)
    p = make_potential(family, 2, rng)
    extra = p.anchor[None, :] if isinstance(p, convex.IndicatorPoint) else None
    if isinstance(p, convex.IndicatorBox):
        oracle = GridOracle(p.lower, p.upper, 201)
    else:
        oracle = GridOracle.cube(2, 6.0, 301, extra)
    # w in d p(z) has z as a maximiser, so sampling z inside the box keeps the supremum on the grid
    Z = [p.prox(rng.uniform(-1.5, 1.5, size=2), 1.0) for _ in range(40)]
    W = np.array([p.subgradient(z) for z in Z])
    brute = brute_force_conjugates(p, W, oracle)
    closed = p.conj.values(W)
    scale = 1.0 + np.abs(closed).max()
    # the grid supremum is a lower bound that approaches the closed form
    assert np.all(brute <= closed + 1e-9 * scale)
    assert np.all(closed - brute <= 1e-3 * scale)


def test_positivity_diagnostic(rng):
    Z, Z2 = rng.normal(size=(2, 200, 2))
    # quadratic: phi + its polar is a sum of squares
    assert convex.positivity_defect(convex.Quadratic([1.0, 2.0]), Z, Z2) >= 0
    # a linear potential changes sign, and its polar vanishes on J^-1 a only
    lin = convex.Linear([1.0, 0.0])
    a_pre = -jmap(np.array([1.0, 0.0]))
    assert convex.positivity_defect(lin, Z, np.tile(a_pre, (200, 1))) < 0
