"""Independent oracles and invariant suites.

Nothing here calls the BEN solvers' internals: conjugates are brute-forced on
grids and the plasticity reference is a classical elastic-predictor /
plastic-corrector integrator written from scratch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .convex import Potential, Rotated
from .grid import TimeGrid, Trajectory
from .hamiltonian import HamiltonianModel, TransformedHamiltonian
from .models import ModelSpec, chain_layout
from .phase import as_flat, block_rotation

MAX_AXIS_POINTS = 401
MAX_GRID_POINTS = 2_000_000


@dataclass
class GridOracle:
    """Tensor grid over a box, with optional extra sample points.

    ``lower``/``upper`` give one range per axis.  Extra points let the grid
    contain isolated domain features such as the anchor of a point indicator.
    """

    lower: np.ndarray
    upper: np.ndarray
    resolution: int = MAX_AXIS_POINTS
    extra_points: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        self.lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        self.upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if self.lower.shape != self.upper.shape or np.any(self.lower > self.upper):
            raise ValueError("grid ranges need lower <= upper per axis")
        if not 2 <= self.resolution <= MAX_AXIS_POINTS:
            raise ValueError(f"resolution must be in 2..{MAX_AXIS_POINTS}")
        if self.resolution ** self.lower.size > MAX_GRID_POINTS:
            raise ValueError("grid too large; use a lower-dimensional section")
        self._points = None

    @classmethod
    def cube(cls, dim: int, radius: float, resolution: int = MAX_AXIS_POINTS, extra_points=None) -> GridOracle:
        return cls(np.full(dim, -radius), np.full(dim, radius), resolution, extra_points)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def spacing(self) -> np.ndarray:
        return (self.upper - self.lower) / (self.resolution - 1)

    @property
    def points(self) -> np.ndarray:
        if self._points is None:
            axes = [np.linspace(a, b, self.resolution) for a, b in zip(self.lower, self.upper)]
            mesh = np.meshgrid(*axes, indexing="ij")
            pts = np.stack([m.ravel() for m in mesh], axis=1)
            if self.extra_points is not None:
                pts = np.vstack([pts, np.atleast_2d(np.asarray(self.extra_points, dtype=float))])
            self._points = pts
        return self._points

    def values(self, p: Potential) -> np.ndarray:
        key = id(p)
        if key not in self._cache:
            self._cache[key] = (p, p.values(self.points))
        return self._cache[key][1]


def brute_force_conjugate(p: Potential, w, oracle: GridOracle) -> float:
    """max over the grid of <w, z> - p(z); a lower bound of the conjugate at w."""
    w = np.atleast_1d(np.asarray(w, dtype=float))
    vals = oracle.values(p)
    finite = np.isfinite(vals)
    if not finite.any():
        return -np.inf
    return float(np.max(oracle.points[finite] @ w - vals[finite]))


def brute_force_conjugates(p: Potential, W, oracle: GridOracle) -> np.ndarray:
    """Vectorised brute_force_conjugate over rows of W."""
    W = np.atleast_2d(np.asarray(W, dtype=float))
    vals = oracle.values(p)
    finite = np.isfinite(vals)
    if not finite.any():
        return np.full(W.shape[0], -np.inf)
    pts, v = oracle.points[finite], vals[finite]
    out = np.empty(W.shape[0])
    for start in range(0, W.shape[0], 64):
        block = W[start:start + 64]
        out[start:start + 64] = np.max(block @ pts.T - v, axis=1)
    return out


# ------------------------------------------------------------ return mapping

@dataclass
class OracleHistory:
    """Reference history on a grid: full nodal displacements, free-node momenta, element data."""

    times: np.ndarray
    displacement: np.ndarray
    momentum: np.ndarray
    plastic_strain: np.ndarray
    stress: np.ndarray

    def trajectory(self, spec: ModelSpec) -> Trajectory:
        """Phase-space image (u_free, h eps_I, p_free, pi) with pi accumulating dt * sigma."""
        lay = chain_layout(spec)
        dt = np.diff(self.times)
        pi = np.vstack([np.zeros(lay.n_elements), np.cumsum(dt[:, None] * self.stress[1:], axis=0)])
        Z = np.hstack([self.displacement[:, list(lay.free_nodes)], lay.element_length * self.plastic_strain,
                       self.momentum, pi])
        return Trajectory(TimeGrid(self.times), Z)


def _clip_stress(trial, sy):
    return np.clip(trial, -sy, sy)


def return_mapping_oracle(spec: ModelSpec, grid: TimeGrid) -> OracleHistory:
    """Implicit-Euler dynamics (or incremental statics) with elastic predictor and plastic corrector."""
    if spec.kind == "QuasiStaticBar":
        return _quasistatic_return_mapping(spec, grid)
    if spec.kind not in ("ElastoplasticOscillator", "BarChain"):
        raise ValueError(f"no return-mapping oracle for {spec.kind}")
    return _dynamic_return_mapping(spec, grid)


def _quasistatic_return_mapping(spec: ModelSpec, grid: TimeGrid) -> OracleHistory:
    E, L, sy, ne = spec.stiffness, spec.length, spec.yield_stress, spec.n_elements
    t = grid.nodes
    ubar = np.array([spec.displacement.value(tk) for tk in t])
    eps = ubar / L
    sig = np.empty(t.size)
    epl = np.zeros(t.size)
    for k in range(t.size):
        old = epl[k - 1] if k else 0.0
        trial = E * (eps[k] - old)
        sig[k] = _clip_stress(trial, sy)
        epl[k] = eps[k] - sig[k] / E
    U = np.outer(ubar, np.arange(ne + 1) / ne)
    return OracleHistory(t.copy(), U, np.zeros((t.size, 0)), np.repeat(epl[:, None], ne, axis=1),
                         np.repeat(sig[:, None], ne, axis=1))


def _dynamic_return_mapping(spec: ModelSpec, grid: TimeGrid) -> OracleHistory:
    E = spec.stiffness
    sy = np.inf if spec.yield_stress is None else spec.yield_stress
    clamped, driven, loaded = spec.node_sets()
    ne = spec.n_elements
    if spec.kind == "ElastoplasticOscillator":
        h, mass = 1.0, np.array([spec.mass, spec.mass])
    else:
        h = spec.length / ne
        mass = np.full(ne + 1, spec.mass * h)
        mass[[0, -1]] *= 0.5
    free = np.array([i for i in range(ne + 1) if i not in clamped and i not in driven], dtype=int)
    M = mass[free]
    # gradient operator: strain = G @ u_full / h
    G = np.zeros((ne, ne + 1))
    G[np.arange(ne), np.arange(1, ne + 1)] = 1.0
    G[np.arange(ne), np.arange(ne)] = -1.0
    G /= h
    Gf = G[:, free]
    t = grid.nodes
    nt = t.size
    U = np.zeros((nt, ne + 1))
    P = np.zeros((nt, free.size))
    EPL = np.zeros((nt, ne))
    SIG = np.zeros((nt, ne))
    if spec.initial_position:
        U[0, free] = spec.initial_position
    if spec.initial_momentum:
        P[0] = spec.initial_momentum
    U[0, list(driven)] = spec.displacement.value(t[0])
    SIG[0] = _clip_stress(E * (G @ U[0]), sy)
    EPL[0] = G @ U[0] - SIG[0] / E
    for k in range(1, nt):
        dt = t[k] - t[k - 1]
        fk = np.zeros(free.size)
        for j, node in enumerate(free):
            if node in loaded:
                fk[j] = spec.load.value(t[k])
        u_full = U[k - 1].copy()
        u_full[list(driven)] = spec.displacement.value(t[k])
        u = U[k - 1, free] + dt * P[k - 1] / M

        def residual(u):
            u_full[free] = u
            trial = E * (G @ u_full - EPL[k - 1])
            sig = _clip_stress(trial, sy)
            internal = -h * Gf.T @ sig
            r = M * (u - U[k - 1, free]) - dt * P[k - 1] - dt * dt * (internal + fk)
            return r, sig, np.abs(trial) < sy

        r, sig, elastic = residual(u)
        for _ in range(200):
            scale = 1.0 + np.abs(M * u).max() + dt * np.abs(P[k - 1]).max()
            if np.abs(r).max() <= 1e-14 * scale:
                break
            tangent = np.diag(M) + dt * dt * h * E * Gf.T @ (elastic[:, None] * Gf)
            du = np.linalg.solve(tangent, -r)
            step = 1.0
            while step > 1e-8:
                r_new, sig_new, el_new = residual(u + step * du)
                if np.linalg.norm(r_new) < np.linalg.norm(r):
                    break
                step *= 0.5
            u = u + step * du
            r, sig, elastic = r_new, sig_new, el_new
        r, sig, elastic = residual(u)
        U[k] = u_full
        SIG[k] = sig
        EPL[k] = G @ u_full - sig / E
        P[k] = M * (u - U[k - 1, free]) / dt
    return OracleHistory(t.copy(), U, P, EPL, SIG)


def hysteresis_area(spec: ModelSpec, history: OracleHistory) -> float:
    """Work dissipated along the oracle history: integral of sigma d(eps) minus the stored elastic energy.

    Trapezoidal in time per element, weighted by element length; for a closed
    stress-strain cycle this is the enclosed loop area.
    """
    lay = chain_layout(spec)
    eps = history.plastic_strain + history.stress / spec.stiffness
    sig = history.stress
    work = 0.5 * np.sum((sig[1:] + sig[:-1]) * np.diff(eps, axis=0))
    stored = (sig[-1] @ sig[-1] - sig[0] @ sig[0]) / (2 * spec.stiffness)
    return float(lay.element_length * (work - stored))


# ------------------------------------------------------------ gradients

def fd_gradient_check(f, samples, t: float = 0.0) -> float:
    """Max relative error of f.gradient against central differences (step 1e-6 (1 + |z|))."""
    worst = 0.0
    for z in samples:
        z = as_flat(z).astype(float)
        g = np.asarray(f.gradient(t, z), dtype=float)
        fd = np.empty_like(z)
        for i in range(z.size):
            step = 1e-6 * (1.0 + abs(z[i]))
            e = np.zeros_like(z)
            e[i] = step
            fd[i] = (f.evaluate(t, z + e) - f.evaluate(t, z - e)) / (2 * step)
        err = np.abs(fd - g).max() / max(1.0, np.abs(g).max())
        worst = max(worst, float(err))
    return worst


# ------------------------------------------------------------ invariance

@dataclass
class Problem:
    h: HamiltonianModel
    p: Potential
    z0: np.ndarray
    grid: TimeGrid
    opts: object = None


@dataclass
class InvarianceReport:
    theta: float
    discrepancy: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.discrepancy <= self.tolerance


def transform_problem(problem: Problem, Psi) -> Problem:
    """Push a problem forward by a linear orthogonal symplectic map Psi."""
    Psi = np.asarray(Psi, dtype=float)
    return Problem(TransformedHamiltonian(problem.h, Psi), Rotated(problem.p, Psi.T),
                   Psi @ as_flat(problem.z0), problem.grid, problem.opts)


def invariance_harness(problem: Problem, theta: float, solver=None) -> InvarianceReport:
    """Solve the problem and its image under the block rotation by theta; compare trajectories."""
    if solver is None:
        from .ben import incremental_solve as solver
    Psi = block_rotation(theta, problem.h.n)
    image = transform_problem(problem, Psi)
    traj, rep = solver(problem.h, problem.p, problem.z0, problem.grid, problem.opts)
    traj2, _ = solver(image.h, image.p, image.z0, image.grid, image.opts)
    diff = float(np.abs(traj.states @ Psi.T - traj2.states).max())
    return InvarianceReport(float(theta), diff, 10.0 * rep.tol)


# ------------------------------------------------------------ orders

def observed_orders(errors) -> np.ndarray:
    """log2 of successive error ratios for a sequence of halved step sizes."""
    e = np.asarray(errors, dtype=float)
    return np.log2(e[:-1] / e[1:])


def convergence_order(dts, errors) -> float:
    """Least-squares slope of log(error) against log(dt)."""
    return float(np.polyfit(np.log(np.asarray(dts, dtype=float)), np.log(np.asarray(errors, dtype=float)), 1)[0])
