"""Concrete mechanical systems written as dissipative Hamiltonian problems.

Bar chains use two-node linear elements of length h.  The phase variables are

    x = (u_free, xi_1..xi_ne),  y = (p_free, pi_1..pi_ne)

where xi_e = h * eps_I,e is the element's irreversible elongation.  With this
scaling the conjugate rate pi_dot_e equals the element stress at solutions, and
the dissipation potential acts on the pi_dot block only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .convex import IndicatorBox, Potential, Quadratic, SeparableSum, Zero
from .grid import TimeGrid, Trajectory
from .hamiltonian import LoadCurve, QuadraticHamiltonian
from ._cvx import import_cvxpy
from .phase import PhaseVector

KINDS = ("HarmonicOscillator", "MaxwellElement", "ElastoplasticOscillator", "BarChain", "QuasiStaticBar")
BAR_KINDS = ("ElastoplasticOscillator", "BarChain", "QuasiStaticBar")


class ModelSpecError(ValueError):
    """Invalid model description; ``field`` names the offending parameter."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class QuasiStaticInfeasible(ValueError):
    pass


def _zero_curve() -> LoadCurve:
    return LoadCurve.constant(0.0)


@dataclass(frozen=True)
class ModelSpec:
    """Model description.

    ``mass`` is m for the oscillators and the density for bars; ``stiffness``
    is k or Young's modulus.  ``load`` is the force program on the loaded
    nodes, ``displacement`` the imposed displacement on the driven nodes
    (the Maxwell element's total elongation).  Clamped nodes are held at zero.
    Node sets default per kind when left as ``None``.
    """

    kind: str
    mass: float = 1.0
    stiffness: float = 1.0
    yield_stress: float | None = None
    viscosity: float | None = None
    damping: float = 0.0
    dof: int = 1
    n_elements: int = 1
    length: float = 1.0
    load: LoadCurve = field(default_factory=_zero_curve)
    displacement: LoadCurve = field(default_factory=_zero_curve)
    clamped: tuple | None = None
    driven: tuple | None = None
    loaded: tuple | None = None
    initial_position: tuple = ()
    initial_momentum: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelSpecError("kind", f"unknown model kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        for name in ("mass", "stiffness", "length"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ModelSpecError(name, f"must be a positive finite number, got {v!r}")
        if not (math.isfinite(self.damping) and self.damping >= 0):
            raise ModelSpecError("damping", "must be >= 0")
        if self.damping and self.kind != "HarmonicOscillator":
            raise ModelSpecError("damping", "only the harmonic oscillator takes a damping coefficient")
        if self.yield_stress is not None and not (math.isfinite(self.yield_stress) and self.yield_stress > 0):
            raise ModelSpecError("yield_stress", "must be positive")
        if self.kind in ("ElastoplasticOscillator", "QuasiStaticBar") and self.yield_stress is None:
            raise ModelSpecError("yield_stress", f"required for {self.kind}")
        if self.yield_stress is not None and self.kind not in BAR_KINDS:
            raise ModelSpecError("yield_stress", f"not used by {self.kind}")
        if self.kind == "MaxwellElement":
            if self.viscosity is None or not (math.isfinite(self.viscosity) and self.viscosity > 0):
                raise ModelSpecError("viscosity", "MaxwellElement requires a positive viscosity")
        elif self.viscosity is not None:
            raise ModelSpecError("viscosity", f"not used by {self.kind}")
        if self.kind == "HarmonicOscillator" and self.dof not in (1, 2):
            raise ModelSpecError("dof", "harmonic oscillator supports 1 or 2 degrees of freedom")
        if self.kind != "HarmonicOscillator" and self.dof != 1:
            raise ModelSpecError("dof", f"not used by {self.kind}")
        if int(self.n_elements) != self.n_elements or self.n_elements < 1:
            raise ModelSpecError("n_elements", "must be a positive integer")
        if self.kind in ("HarmonicOscillator", "MaxwellElement", "ElastoplasticOscillator") and self.n_elements != 1:
            raise ModelSpecError("n_elements", f"{self.kind} has a single element")
        if self.kind in BAR_KINDS:
            self._check_node_sets()
        self._check_initial()

    def _check_node_sets(self):
        last = self.n_elements
        sets = {name: set(getattr(self, name) or ()) for name in ("clamped", "driven", "loaded")}
        for name, s in sets.items():
            if any(int(i) != i or not 0 <= i <= last for i in s):
                raise ModelSpecError(name, f"node ids must lie in 0..{last}")
        c, d, l = self.node_sets()
        if not (c or d):
            raise ModelSpecError("clamped", "at least one node must be clamped or driven")
        for a, b, na, nb in ((c, d, "clamped", "driven"), (c, l, "clamped", "loaded"), (d, l, "driven", "loaded")):
            if set(a) & set(b):
                raise ModelSpecError(nb, f"{na} and {nb} node sets must be disjoint")

    def _check_initial(self):
        n_pos = self.dof if self.kind == "HarmonicOscillator" else (0 if self.kind == "MaxwellElement" else None)
        if n_pos is None:
            n_pos = self.n_elements + 1 - len(self.node_sets()[0]) - len(self.node_sets()[1])
        for name in ("initial_position", "initial_momentum"):
            v = tuple(getattr(self, name))
            if v and len(v) != n_pos:
                raise ModelSpecError(name, f"expected {n_pos} values, got {len(v)}")
            if not all(math.isfinite(float(a)) for a in v):
                raise ModelSpecError(name, "values must be finite")

    def node_sets(self) -> tuple[tuple, tuple, tuple]:
        """(clamped, driven, loaded) with per-kind defaults filled in."""
        last = self.n_elements
        if self.kind == "QuasiStaticBar":
            defaults = ((0,), (last,), ())
        else:
            defaults = ((0,), (), (last,))
        given = (self.clamped, self.driven, self.loaded)
        return tuple(tuple(sorted(int(i) for i in (g if g is not None else dflt))) for g, dflt in zip(given, defaults))


@dataclass(frozen=True)
class ChainLayout:
    """Index bookkeeping for a bar chain's phase vector."""

    n_elements: int
    element_length: float
    modulus: float
    free_nodes: tuple
    clamped: tuple
    driven: tuple
    loaded: tuple
    masses: np.ndarray

    @property
    def n_u(self) -> int:
        return len(self.free_nodes)

    @property
    def n(self) -> int:
        return self.n_u + self.n_elements

    @property
    def u_idx(self) -> np.ndarray:
        return np.arange(self.n_u)

    @property
    def xi_idx(self) -> np.ndarray:
        return self.n_u + np.arange(self.n_elements)

    @property
    def p_idx(self) -> np.ndarray:
        return self.n + self.u_idx

    @property
    def pi_idx(self) -> np.ndarray:
        return self.n + self.xi_idx

    def nodal_displacements(self, Z, boundary_values) -> np.ndarray:
        """Full nodal displacement rows (clamped = 0, driven = program value)."""
        Z = np.atleast_2d(Z)
        U = np.zeros((Z.shape[0], self.n_elements + 1))
        U[:, list(self.free_nodes)] = Z[:, self.u_idx]
        for i in self.driven:
            U[:, i] = boundary_values
        return U


def chain_layout(spec: ModelSpec) -> ChainLayout:
    if spec.kind not in BAR_KINDS:
        raise ValueError(f"{spec.kind} is not a bar model")
    clamped, driven, loaded = spec.node_sets()
    ne = spec.n_elements
    if spec.kind == "ElastoplasticOscillator":
        h = 1.0
        node_mass = np.array([spec.mass, spec.mass])
    else:
        h = spec.length / ne
        node_mass = np.full(ne + 1, spec.mass * h)
        node_mass[[0, -1]] *= 0.5
    free = tuple(i for i in range(ne + 1) if i not in clamped and i not in driven)
    return ChainLayout(ne, h, spec.stiffness, free, clamped, driven, loaded, node_mass[list(free)])


def _build_chain(spec: ModelSpec):
    lay = chain_layout(spec)
    n, nu, ne, h, E = lay.n, lay.n_u, lay.n_elements, lay.element_length, lay.modulus
    pos = {node: j for j, node in enumerate(lay.free_nodes)}
    Kx = np.zeros((n, n))
    b_disp = np.zeros(2 * n)
    c_disp = 0.0
    for e in range(1, ne + 1):
        r = np.zeros(n)
        c = 0.0
        for node, sgn in ((e, 1.0), (e - 1, -1.0)):
            if node in pos:
                r[pos[node]] += sgn / h
            elif node in lay.driven:
                c += sgn / h
        r[nu + e - 1] = -1.0 / h
        Kx += E * h * np.outer(r, r)
        b_disp[:n] -= E * h * c * r
        c_disp += E * h * c * c
    K = np.zeros((2 * n, 2 * n))
    K[:n, :n] = Kx
    K[n + np.arange(nu), n + np.arange(nu)] = 1.0 / lay.masses
    b_load = np.zeros(2 * n)
    for node in lay.loaded:
        b_load[pos[node]] = 1.0
    C = np.diag([0.0, c_disp])
    meta = {"kind": spec.kind, "layout": lay}
    h_model = QuadraticHamiltonian(K, [(spec.load, b_load), (spec.displacement, b_disp)], C, meta)
    if spec.yield_stress is None:
        p = Zero(2 * n)
    else:
        sy = spec.yield_stress
        p = SeparableSum(2 * n, [(IndicatorBox(np.full(ne, -sy), np.full(ne, sy)), lay.pi_idx)])
    z0 = np.zeros(2 * n)
    if spec.initial_position:
        z0[lay.u_idx] = spec.initial_position
    if spec.initial_momentum:
        z0[lay.p_idx] = spec.initial_momentum
    return h_model, p, PhaseVector.from_flat(z0)


def _build_oscillator(spec: ModelSpec):
    d = spec.dof
    K = np.diag([spec.stiffness] * d + [1.0 / spec.mass] * d)
    b = np.zeros(2 * d)
    b[0] = 1.0
    h = QuadraticHamiltonian(K, [(spec.load, b)], metadata={"kind": spec.kind, "dof": d})
    if spec.damping:
        # viscous force c qdot: phi = c/2 |qdot|^2 on the position-rate block
        p = SeparableSum(2 * d, [(Quadratic(spec.damping, d), np.arange(d))])
    else:
        p = Zero(2 * d)
    z0 = np.zeros(2 * d)
    if spec.initial_position:
        z0[:d] = spec.initial_position
    if spec.initial_momentum:
        z0[d:] = spec.initial_momentum
    return h, p, PhaseVector.from_flat(z0)


def _build_maxwell(spec: ModelSpec):
    # z = (xi, pi), H = E/2 (ubar(t) - xi)^2, phi = pi_dot^2 / (2 eta)
    E = spec.stiffness
    K = np.diag([E, 0.0])
    h = QuadraticHamiltonian(K, [(spec.displacement, [E, 0.0])], [[E]], {"kind": spec.kind})
    p = SeparableSum(2, [(Quadratic(1.0 / spec.viscosity), [1])])
    return h, p, PhaseVector.from_flat(np.zeros(2))


def build(spec: ModelSpec):
    """Return (HamiltonianModel, Potential, initial PhaseVector) for a model spec."""
    if spec.kind == "HarmonicOscillator":
        return _build_oscillator(spec)
    if spec.kind == "MaxwellElement":
        return _build_maxwell(spec)
    return _build_chain(spec)


# ---------------------------------------------------------------- stresses

def maxwell_stress(spec: ModelSpec, traj: Trajectory) -> np.ndarray:
    """Nodal spring stress E (ubar(t_k) - xi_k)."""
    ubar = np.array([spec.displacement.value(t) for t in traj.times])
    return spec.stiffness * (ubar - traj.states[:, 0])


def maxwell_relaxation(spec: ModelSpec, t) -> np.ndarray:
    """Closed-form stress under a held elongation ubar(0): sigma0 exp(-E t / eta)."""
    sigma0 = spec.stiffness * spec.displacement.value(0.0)
    return sigma0 * np.exp(-spec.stiffness * np.asarray(t, dtype=float) / spec.viscosity)


def element_strains(spec: ModelSpec, traj: Trajectory) -> np.ndarray:
    lay = chain_layout(spec)
    U = lay.nodal_displacements(traj.states, [spec.displacement.value(t) for t in traj.times])
    return np.diff(U, axis=1) / lay.element_length


def plastic_strains(spec: ModelSpec, traj: Trajectory) -> np.ndarray:
    lay = chain_layout(spec)
    return traj.states[:, lay.xi_idx] / lay.element_length


def element_stresses(spec: ModelSpec, traj: Trajectory) -> np.ndarray:
    """Nodal stresses E (strain(u_k) - eps_I,k), shape (N+1, n_e)."""
    return spec.stiffness * (element_strains(spec, traj) - plastic_strains(spec, traj))


def step_stresses(spec: ModelSpec, traj: Trajectory) -> np.ndarray:
    """Per-step stresses pi_dot_k, shape (N, n_e): the discrete solution's stress on each step."""
    lay = chain_layout(spec)
    return traj.rates[:, lay.pi_idx]


def plastic_dissipation(spec: ModelSpec, traj: Trajectory) -> float:
    """sum_k sum_e sigma_y h |delta eps_I|."""
    lay = chain_layout(spec)
    return float(spec.yield_stress * lay.element_length * np.abs(np.diff(plastic_strains(spec, traj), axis=0)).sum())


def plasticity_constraints_defect(spec: ModelSpec, traj: Trajectory) -> np.ndarray:
    """Per-step max defects of p = m u_dot, momentum balance and pi_dot = sigma.

    Returns an (N, 3) array; nodal quantities are taken at the step's end.
    """
    if spec.kind not in BAR_KINDS:
        raise ValueError(f"constraint defects need a bar model, got {spec.kind}")
    lay = chain_layout(spec)
    Z, V, t = traj.states, traj.rates, traj.times
    sig = element_stresses(spec, traj)
    mom = np.abs(Z[1:, lay.p_idx] - lay.masses * V[:, lay.u_idx])
    ne = lay.n_elements
    # nodal force: sigma of the element on the right minus the one on the left
    padded = np.zeros((sig.shape[0], ne + 2))
    padded[:, 1:-1] = sig
    div = padded[:, 1:] - padded[:, :-1]
    force = div[:, list(lay.free_nodes)]
    fvals = np.array([spec.load.value(tk) for tk in t])
    for j, node in enumerate(lay.free_nodes):
        if node in lay.loaded:
            force[:, j] += fvals
    bal = np.abs(V[:, lay.p_idx] - force[1:])
    stress = np.abs(V[:, lay.pi_idx] - sig[1:])
    return np.column_stack([_rowmax(mom), _rowmax(bal), _rowmax(stress)])


def _rowmax(A):
    return A.max(axis=1) if A.shape[1] else np.zeros(A.shape[0])


# ---------------------------------------------------------------- quasi-static

@dataclass
class QuasiStaticResult:
    """Stress history minimising the discrete quasi-static BEN functional."""

    grid: TimeGrid
    stress: np.ndarray
    plastic_strain: np.ndarray
    displacement: np.ndarray
    objective: float
    lower_bound: float
    tol: float

    @property
    def certificate(self) -> float:
        return self.objective - self.lower_bound

    @property
    def certified(self) -> bool:
        return bool(self.certificate <= self.tol)


def _element_terms(spec: ModelSpec, U, S):
    lay = chain_layout(spec)
    h, E = lay.element_length, spec.stiffness
    S = np.asarray(S, dtype=float)
    if S.ndim == 1:
        S = np.repeat(S[:, None], lay.n_elements, axis=1)
    eps = np.diff(np.asarray(U, dtype=float), axis=1) / h
    if np.any(np.abs(S) > spec.yield_stress * (1 + 1e-9)):
        return None
    dS = np.diff(S, axis=0)
    flow = np.diff(eps, axis=0) - dS / E
    support = spec.yield_stress * h * np.abs(flow).sum()
    # complementary energy: increments plus the final state telescope to 1/2 S sigma_N^2
    # when paired with end-of-step stresses, which keeps the lower bound exact
    complementary = h * (float(np.sum(dS * dS)) + float(S[-1] @ S[-1])) / (2 * E)
    return support, complementary, S[1:], eps, h


def quasistatic_objective(spec: ModelSpec, grid: TimeGrid, U, S) -> float:
    """Discrete stress-based BEN functional with the pairing sum_e h sigma_k delta eps.

    Each step contributes sigma_y |delta eps - delta sigma / E| - sigma_k delta eps
    per unit length plus delta sigma^2 / (2E); the final complementary energy
    closes the sum.  By the Fenchel inequality the value is at least
    sigma_0^2 L / (2E), with equality exactly for the implicit return-mapping
    stresses.
    """
    terms = _element_terms(spec, U, S)
    if terms is None:
        return math.inf
    support, complementary, S_end, eps, h = terms
    return support - h * float(np.sum(S_end * np.diff(eps, axis=0))) + complementary


def mixed_ben_objective(spec: ModelSpec, grid: TimeGrid, U, S) -> float:
    """Mixed functional: the internal pairing is replaced by the work of loads and boundary reactions.

    U has one row of nodal displacements per grid node (boundary nodes
    included); S holds per-element stresses, or one uniform stress per row.
    """
    lay = chain_layout(spec)
    U = np.asarray(U, dtype=float)
    ubar = np.array([spec.displacement.value(t) for t in grid.nodes])
    for i in lay.clamped:
        if np.any(U[:, i] != 0.0):
            raise ValueError(f"displacement history violates the clamp at node {i}")
    for i in lay.driven:
        if not np.allclose(U[:, i], ubar, rtol=1e-12, atol=1e-14):
            raise ValueError(f"displacement history violates the imposed program at node {i}")
    terms = _element_terms(spec, U, S)
    if terms is None:
        return math.inf
    support, complementary, S_end, eps, h = terms
    dU = np.diff(U, axis=0)
    ne = lay.n_elements
    work = 0.0
    for i in lay.driven:
        if i == ne:
            work += float(S_end[:, -1] @ dU[:, i])
        if i == 0:
            work -= float(S_end[:, 0] @ dU[:, i])
    fvals = np.array([spec.load.value(t) for t in grid.nodes[1:]])
    for i in lay.loaded:
        work += float(fvals @ dU[:, i])
    return support - work + complementary


def quasistatic_lower_bound(spec: ModelSpec) -> float:
    """sigma0^2 L / (2E), the value of the functional at an exact solution."""
    s0 = _initial_stress(spec)
    return s0 * s0 * spec.length / (2 * spec.stiffness)


def _initial_stress(spec: ModelSpec) -> float:
    return spec.stiffness * spec.displacement.value(0.0) / spec.length


def _check_quasistatic(spec: ModelSpec):
    if spec.kind != "QuasiStaticBar":
        raise ValueError(f"quasi-static solve needs a QuasiStaticBar, got {spec.kind}")
    clamped, driven, loaded = spec.node_sets()
    if loaded or clamped != (0,) or driven != (spec.n_elements,):
        raise QuasiStaticInfeasible("uniform-stress parameterisation needs node 0 clamped and the last node driven, no loads")


def quasistatic_ben_solve(spec: ModelSpec, grid: TimeGrid, tol: float | None = None) -> QuasiStaticResult:
    """Minimise the discrete quasi-static BEN functional over uniform admissible stresses.

    Statics of an unloaded chain force a uniform stress, and for a given
    stress history the best displacement field strains every element alike,
    so the problem reduces to the scalar sequence sigma_1..sigma_N.  It is a
    small convex QP handed to cvxpy.
    """
    cp = import_cvxpy()

    _check_quasistatic(spec)
    E, L, sy = spec.stiffness, spec.length, spec.yield_stress
    s0 = _initial_stress(spec)
    if abs(s0) > sy * (1 + 1e-9):
        raise QuasiStaticInfeasible(f"initial stress {s0:g} exceeds the yield stress {sy:g}")
    ubar = np.array([spec.displacement.value(t) for t in grid.nodes])
    deps = np.diff(ubar) / L
    N = grid.steps
    s = cp.Variable(N)
    full = cp.hstack([np.array([s0]), s])
    dsig = full[1:] - full[:-1]
    obj = (L * (sy * cp.sum(cp.abs(deps - dsig / E)) - s @ deps)
           + L * (cp.sum_squares(dsig) + cp.square(s[N - 1])) / (2 * E))
    prob = cp.Problem(cp.Minimize(obj), [cp.abs(s) <= sy])
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    if s.value is None:
        raise QuasiStaticInfeasible(f"quasi-static solve failed: {prob.status}")
    sigma = np.concatenate([[s0], np.clip(s.value, -sy, sy)])
    eps_total = ubar / L
    eps_I = eps_total - sigma / E
    ne = spec.n_elements
    U = np.outer(ubar, np.arange(ne + 1) / ne)
    lb = quasistatic_lower_bound(spec)
    value = quasistatic_objective(spec, grid, U, sigma)
    if tol is None:
        tol = 1e-6 * (1.0 + L * sy * sy / (2 * E))
    return QuasiStaticResult(grid, sigma, eps_I, U, value, lb, tol)
