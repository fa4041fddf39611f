from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sben import convex
from sben.ben import TimeGrid, Trajectory, incremental_solve
from sben.hamiltonian import LoadCurve
from sben.models import (ModelSpec, ModelSpecError, QuasiStaticInfeasible, build, chain_layout, element_stresses,
                         maxwell_relaxation, maxwell_stress, mixed_ben_objective, plastic_dissipation,
                         plasticity_constraints_defect, quasistatic_ben_solve, quasistatic_lower_bound,
                         quasistatic_objective, step_stresses)
from sben.verify import return_mapping_oracle

CYCLE = LoadCurve.piecewise_linear([0, 1, 2, 3, 4], [0, 1, 0, -1, 0])


def quasistatic_spec(n_elements=2, **kw):
    return ModelSpec("QuasiStaticBar", stiffness=1.0, yield_stress=0.5, n_elements=n_elements,
                     displacement=CYCLE, **kw)


# ---------------------------------------------------------------- validation

@pytest.mark.parametrize("kwargs, field", [
    (dict(kind="HarmonicOscillator", mass=-1.0), "mass"),
    (dict(kind="HarmonicOscillator", stiffness=float("nan")), "stiffness"),
    (dict(kind="ElastoplasticOscillator"), "yield_stress"),
    (dict(kind="MaxwellElement"), "viscosity"),
    (dict(kind="HarmonicOscillator", dof=3), "dof"),
    (dict(kind="BarChain", damping=0.1), "damping"),
    (dict(kind="BarChain", n_elements=2, clamped=(0,), driven=(0,)), "driven"),
    (dict(kind="HarmonicOscillator", initial_position=(1.0, 2.0)), "initial_position"),
    (dict(kind="Pendulum"), "kind"),
])
def test_invalid_specs_name_the_offending_field(kwargs, field):
    with pytest.raises(ModelSpecError) as err:
        ModelSpec(**kwargs)
    assert err.value.field == field


def test_bar_needs_a_support():
    with pytest.raises(ModelSpecError):
        ModelSpec("BarChain", n_elements=2, clamped=(), driven=())


# ---------------------------------------------------------------- builders

def test_harmonic_oscillator_energy():
    spec = ModelSpec("HarmonicOscillator", mass=2.0, stiffness=3.0, initial_position=(1.0,), initial_momentum=(4.0,))
    h, p, z0 = build(spec)
    assert isinstance(p, convex.Zero)
    assert h.evaluate(0.0, z0.flat) == pytest.approx(0.5 * 3.0 + 0.5 * 16.0 / 2.0)


def test_chain_layout_of_bar():
    spec = ModelSpec("BarChain", mass=2.0, n_elements=4, length=2.0, yield_stress=1.0)
    lay = chain_layout(spec)
    assert lay.free_nodes == (1, 2, 3, 4)
    assert lay.element_length == pytest.approx(0.5)
    # lumped masses rho h with half a cell at the free end
    assert np.allclose(lay.masses, [1.0, 1.0, 1.0, 0.5])
    h, p, z0 = build(spec)
    assert h.n == lay.n == 4 + 4


def test_chain_energy_is_elastic_plus_kinetic(rng):
    spec = ModelSpec("BarChain", n_elements=3, yield_stress=1.0, stiffness=2.0)
    h, _, _ = build(spec)
    lay = chain_layout(spec)
    z = rng.normal(size=h.dim)
    u = np.concatenate([[0.0], z[lay.u_idx]])
    eps_el = np.diff(u) / lay.element_length - z[lay.xi_idx] / lay.element_length
    kinetic = 0.5 * np.sum(z[lay.p_idx] ** 2 / lay.masses)
    elastic = 0.5 * spec.stiffness * lay.element_length * np.sum(eps_el ** 2)
    assert h.evaluate(0.0, z) == pytest.approx(kinetic + elastic)


# ---------------------------------------------------------------- Maxwell

def test_maxwell_relaxation_converges_to_closed_form():
    spec = ModelSpec("MaxwellElement", stiffness=2.0, viscosity=1.0, displacement=LoadCurve.constant(1.0))
    h, p, z0 = build(spec)
    tau = spec.viscosity / spec.stiffness
    errs = []
    for steps in (50, 100, 200):
        grid = TimeGrid.uniform(4 * tau, steps)
        traj, rep = incremental_solve(h, p, z0, grid)
        s = maxwell_stress(spec, traj)
        errs.append(np.abs(s - maxwell_relaxation(spec, grid.nodes)).max() / 2.0)
        assert rep.converged
    assert errs[1] < 0.02
    assert np.log2(errs[0] / errs[1]) > 1.8 and np.log2(errs[1] / errs[2]) > 1.8


# ---------------------------------------------------------------- dynamic plasticity

def epo_solution(steps):
    spec = ModelSpec("ElastoplasticOscillator", yield_stress=0.5, load=LoadCurve.sinusoidal(1.0, 1.0))
    h, p, z0 = build(spec)
    return spec, incremental_solve(h, p, z0, TimeGrid.uniform(6.0, steps))


def test_step_stresses_are_yield_admissible():
    spec, (traj, rep) = epo_solution(300)
    s = step_stresses(spec, traj)
    assert np.abs(s).max() <= spec.yield_stress * (1 + 1e-9)
    assert np.abs(s).max() == pytest.approx(spec.yield_stress, rel=1e-9)
    # the plastic work is all the dissipation there is
    assert plastic_dissipation(spec, traj) == pytest.approx(rep.total_dissipation, rel=1e-10)


def test_constraint_defects_shrink_with_the_step():
    maxima = []
    for steps in (150, 300, 600):
        spec, (traj, _) = epo_solution(steps)
        maxima.append(plasticity_constraints_defect(spec, traj).max(axis=0))
    maxima = np.array(maxima)
    assert np.all(maxima[1] < maxima[0]) and np.all(maxima[2] < maxima[1])
    # first order: each halving removes roughly half
    assert np.all(maxima[2] / maxima[0] < 0.4)


def test_nodal_and_step_stresses_agree_to_first_order():
    spec, (traj, _) = epo_solution(400)
    nodal = element_stresses(spec, traj)
    assert np.abs(nodal[1:] - step_stresses(spec, traj)).max() < 0.05


# ---------------------------------------------------------------- quasi-static

def test_quasistatic_solution_is_certified_and_matches_return_mapping():
    spec = quasistatic_spec()
    grid = TimeGrid.uniform(4.0, 40)
    res = quasistatic_ben_solve(spec, grid)
    assert res.certified and abs(res.certificate) < 1e-9
    ref = return_mapping_oracle(spec, grid)
    assert np.abs(res.stress - ref.stress[:, 0]).max() < 1e-6
    assert np.abs(res.plastic_strain - ref.plastic_strain[:, 0]).max() < 1e-6


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_quasistatic_functional_is_bounded_below(seed, n_elements):
    # Fenchel: every admissible uniform-stress history scores at least the bound
    rng = np.random.default_rng(seed)
    spec = quasistatic_spec(n_elements)
    grid = TimeGrid.uniform(4.0, 12)
    ubar = np.array([CYCLE.value(t) for t in grid.nodes])
    U = np.outer(ubar, np.arange(n_elements + 1) / n_elements)
    S = np.concatenate([[0.0], rng.uniform(-0.5, 0.5, size=grid.steps)])
    lb = quasistatic_lower_bound(spec)
    value = quasistatic_objective(spec, grid, U, S)
    assert value >= lb - 1e-12
    # statically admissible stresses make the internal pairing equal the boundary work
    assert mixed_ben_objective(spec, grid, U, S) == pytest.approx(value, abs=1e-12)


def test_quasistatic_functional_attains_bound_at_return_mapping():
    spec = quasistatic_spec()
    grid = TimeGrid.uniform(4.0, 16)
    ref = return_mapping_oracle(spec, grid)
    value = quasistatic_objective(spec, grid, ref.displacement, ref.stress)
    assert value == pytest.approx(quasistatic_lower_bound(spec), abs=1e-12)


def test_inadmissible_stress_scores_infinity():
    spec = quasistatic_spec()
    grid = TimeGrid.uniform(4.0, 4)
    U = np.zeros((5, 3))
    assert quasistatic_objective(spec, grid, U, np.full(5, 0.6)) == np.inf


def test_mixed_functional_rejects_kinematically_inadmissible_histories():
    spec = quasistatic_spec()
    grid = TimeGrid.uniform(4.0, 4)
    with pytest.raises(ValueError):
        mixed_ben_objective(spec, grid, np.ones((5, 3)), np.zeros(5))


def test_quasistatic_rejects_loads_and_overstressed_start():
    with pytest.raises(QuasiStaticInfeasible):
        quasistatic_ben_solve(quasistatic_spec(loaded=(1,)), TimeGrid.uniform(4.0, 4))
    spec = ModelSpec("QuasiStaticBar", yield_stress=0.5, displacement=LoadCurve.constant(2.0))
    with pytest.raises(QuasiStaticInfeasible):
        quasistatic_ben_solve(spec, TimeGrid.uniform(1.0, 4))


def test_trajectory_rejects_wrong_state_width():
    with pytest.raises(ValueError):
        Trajectory(TimeGrid.uniform(1.0, 2), np.zeros((3, 3)))
