"""Time grids and discrete trajectories."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TimeGrid:
    nodes: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.nodes, dtype=float).copy()
        if t.ndim != 1 or t.size < 2:
            raise ValueError("time grid needs at least two nodes")
        if not np.all(np.isfinite(t)) or np.any(np.diff(t) <= 0):
            raise ValueError("time grid nodes must be finite and strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "nodes", t)

    @classmethod
    def uniform(cls, t_end: float, steps: int, t0: float = 0.0) -> TimeGrid:
        if steps < 1 or not t_end > t0:
            raise ValueError("uniform grid needs steps >= 1 and t_end > t0")
        return cls(np.linspace(t0, t_end, steps + 1))

    @property
    def steps(self) -> int:
        return self.nodes.size - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def uniform_flag(self) -> bool:
        d = self.dt
        return bool(np.allclose(d, d[0], rtol=1e-12, atol=0))

    @property
    def t_end(self) -> float:
        return float(self.nodes[-1])

    def refined(self, factor: int = 2) -> TimeGrid:
        t = self.nodes
        pieces = [np.linspace(a, b, factor + 1)[:-1] for a, b in zip(t[:-1], t[1:])]
        return TimeGrid(np.concatenate(pieces + [t[-1:]]))


@dataclass(frozen=True)
class Trajectory:
    """States z_0..z_N on a grid; rates are backward differences."""

    grid: TimeGrid
    states: np.ndarray

    def __post_init__(self):
        Z = np.array(self.states, dtype=float)
        if Z.ndim != 2 or Z.shape[0] != self.grid.nodes.size or Z.shape[1] % 2:
            raise ValueError(f"states shape {Z.shape} does not match grid of {self.grid.nodes.size} nodes")
        Z.setflags(write=False)
        object.__setattr__(self, "states", Z)

    @property
    def n(self) -> int:
        return self.states.shape[1] // 2

    @property
    def times(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def rates(self) -> np.ndarray:
        """Array of shape (N, 2n): rate of step k (k = 1..N) in row k-1."""
        return np.diff(self.states, axis=0) / self.grid.dt[:, None]

    def midpoints(self, theta: float = 0.5):
        """Evaluation times and states t_{k-1} + theta dt, (1-theta) z_{k-1} + theta z_k."""
        t, Z = self.grid.nodes, self.states
        return (1 - theta) * t[:-1] + theta * t[1:], (1 - theta) * Z[:-1] + theta * Z[1:]
