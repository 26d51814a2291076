"""Discretized state spaces: grids, grid functions, history segments and lifts.

Two spatial settings are supported.  ``UnitInterval`` carries the sup-norm
space C_0([0,1]) (functions vanishing at 0); ``HalfLine`` carries L^1 or a
weighted L^1 on (0, inf) truncated to [0, truncation_length].  All integrals
use the composite trapezoid rule on uniform grids.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np


class GridError(ValueError):
    """Raised for inconsistent grids, tags or shapes."""


class GridKind(str, Enum):
    UNIT_INTERVAL = "unit_interval"
    HALF_LINE = "half_line"


def trapezoid_weights(n: int, h: float) -> np.ndarray:
    if n < 1:
        raise GridError("empty grid")
    if n == 1:
        return np.zeros(1)
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


@dataclass(frozen=True, eq=False)
class SpatialGrid:
    kind: GridKind
    n_points: int
    truncation_length: float = 1.0

    def __post_init__(self):
        if self.n_points < 2:
            raise GridError("a grid needs at least two nodes")
        if self.kind == GridKind.UNIT_INTERVAL and self.truncation_length != 1.0:
            raise GridError("the unit interval grid spans [0, 1]")
        if self.truncation_length <= 0:
            raise GridError("truncation length must be positive")
        nodes = np.linspace(0.0, self.truncation_length, self.n_points)
        nodes.setflags(write=False)
        w = trapezoid_weights(self.n_points, self.step)
        w.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", w)

    @classmethod
    def unit_interval(cls, n_points: int) -> "SpatialGrid":
        return cls(GridKind.UNIT_INTERVAL, n_points, 1.0)

    @classmethod
    def half_line(cls, n_cells: int, truncation_length: float) -> "SpatialGrid":
        """Truncated half-line grid with ``n_cells`` cells (``n_cells + 1`` nodes)."""
        return cls(GridKind.HALF_LINE, n_cells + 1, float(truncation_length))

    @property
    def step(self) -> float:
        return self.truncation_length / (self.n_points - 1)

    @property
    def length(self) -> float:
        return self.truncation_length

    def refined(self) -> "SpatialGrid":
        """Grid with every cell halved."""
        return SpatialGrid(self.kind, 2 * (self.n_points - 1) + 1, self.truncation_length)

    def same_as(self, other: "SpatialGrid") -> bool:
        return (self is other) or (
            self.kind == other.kind
            and self.n_points == other.n_points
            and self.truncation_length == other.truncation_length
        )

    def sample(self, fn) -> np.ndarray:
        return np.asarray(np.broadcast_to(fn(self.nodes), self.nodes.shape), dtype=float).copy()


@dataclass(frozen=True)
class SpaceTag:
    """Which norm a grid function carries: ``C0``, ``L1``, ``L1w`` or ``Rn``."""

    name: str
    weight: float = 0.0

    def __post_init__(self):
        if self.name not in ("C0", "L1", "L1w", "Rn"):
            raise GridError(f"unknown space tag {self.name!r}")
        if self.name == "L1w" and not self.weight > 0:
            raise GridError("weighted L1 needs a positive weight")


C0 = SpaceTag("C0")
L1 = SpaceTag("L1")
RN = SpaceTag("Rn")


def L1_weighted(w: float) -> SpaceTag:
    return SpaceTag("L1w", float(w))


def norm_values(grid: SpatialGrid | None, tag: SpaceTag, values: np.ndarray) -> np.ndarray:
    """Norm along the last axis; batched over leading axes."""
    v = np.asarray(values, dtype=float)
    if v.shape[-1] == 0:
        raise GridError("empty grid")
    if tag.name == "C0":
        return np.max(np.abs(v), axis=-1)
    if tag.name == "Rn":
        return np.sqrt(np.sum(v * v, axis=-1))
    if grid is None:
        raise GridError("integral norms need a grid")
    w = grid.weights
    if tag.name == "L1w":
        w = w * np.exp(-tag.weight * grid.nodes)
    return np.abs(v) @ w


def pairing(grid: SpatialGrid | None, tag: SpaceTag, values: np.ndarray, density: np.ndarray) -> np.ndarray:
    """Duality pairing <x, x*> with x* given as a density (or a vector in R^n)."""
    v = np.asarray(values, dtype=float)
    if tag.name == "Rn":
        return v @ density
    return v @ (grid.weights * density)


@dataclass(frozen=True, eq=False)
class GridFunction:
    grid: SpatialGrid | None
    values: np.ndarray
    space: SpaceTag = C0

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 1 or vals.size == 0:
            raise GridError("grid function values must be a non-empty 1-d array")
        if self.space.name != "Rn":
            if self.grid is None:
                raise GridError("function spaces other than R^n need a grid")
            if vals.size != self.grid.n_points:
                raise GridError(f"expected {self.grid.n_points} values, got {vals.size}")
        if self.space.name == "C0":
            if self.grid.kind != GridKind.UNIT_INTERVAL:
                raise GridError("C0 lives on the unit interval")
            if vals[0] != 0.0:
                raise GridError("C0 functions must vanish at xi = 0")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_callable(cls, grid: SpatialGrid, fn, space: SpaceTag = C0) -> "GridFunction":
        vals = grid.sample(fn)
        if space.name == "C0":
            vals[0] = 0.0
        return cls(grid, vals, space)

    @classmethod
    def zeros(cls, grid: SpatialGrid, space: SpaceTag = C0) -> "GridFunction":
        return cls(grid, np.zeros(grid.n_points), space)

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.grid, values, self.space)

    def __add__(self, other: "GridFunction") -> "GridFunction":
        _check_same(self, other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        _check_same(self, other)
        return self.with_values(self.values - other.values)

    def __mul__(self, c: float) -> "GridFunction":
        return self.with_values(c * self.values)

    __rmul__ = __mul__


def _check_same(a: GridFunction, b: GridFunction):
    if a.space != b.space:
        raise GridError("space tags differ")
    if a.grid is not None and not a.grid.same_as(b.grid):
        raise GridError("grids differ")


def norm_E(x: GridFunction) -> float:
    return float(norm_values(x.grid, x.space, x.values))


def history_nodes(m_history: int) -> np.ndarray:
    return np.linspace(-1.0, 0.0, m_history + 1)


@dataclass(frozen=True, eq=False)
class SegmentFunction:
    """A history element of L^p(-1, 0; E) sampled at ``m_history + 1`` uniform nodes.

    ``values[j]`` is the state at theta_j = -1 + j / m_history.
    """

    grid: SpatialGrid | None
    values: np.ndarray
    space: SpaceTag = C0
    p: float = 2.0

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 2 or vals.shape[0] < 2:
            raise GridError("segment values must be (m_history + 1, n_points) with m_history >= 1")
        if self.grid is not None and vals.shape[1] != self.grid.n_points:
            raise GridError("segment rows do not match the grid")
        if self.p < 1:
            raise GridError("p must be >= 1")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def m_history(self) -> int:
        return self.values.shape[0] - 1

    @property
    def dtheta(self) -> float:
        return 1.0 / self.m_history

    @property
    def thetas(self) -> np.ndarray:
        return history_nodes(self.m_history)

    def at(self, j: int) -> GridFunction:
        return GridFunction(self.grid, self.values[j], self.space)

    @classmethod
    def from_callable(cls, grid: SpatialGrid, m_history: int, fn, space: SpaceTag = C0, p: float = 2.0):
        """Sample ``fn(theta, xi)`` on the history and spatial grids."""
        th = history_nodes(m_history)[:, None]
        vals = np.array(np.broadcast_to(fn(th, grid.nodes[None, :]), (m_history + 1, grid.n_points)), dtype=float)
        if space.name == "C0":
            vals[:, 0] = 0.0
        return cls(grid, vals, space, p)

    @classmethod
    def zeros(cls, grid: SpatialGrid, m_history: int, space: SpaceTag = C0, p: float = 2.0):
        n = grid.n_points if grid is not None else 1
        return cls(grid, np.zeros((m_history + 1, n)), space, p)


def segment_norm_values(grid, tag: SpaceTag, seg_values: np.ndarray, p: float) -> np.ndarray:
    """L^p(-1,0;E) norm of histories shaped (..., m + 1, n)."""
    m = seg_values.shape[-2] - 1
    row = norm_values(grid, tag, seg_values)
    w = trapezoid_weights(m + 1, 1.0 / m)
    if np.isinf(p):
        return np.max(row, axis=-1)
    return (row ** p @ w) ** (1.0 / p)


def norm_segment(seg: SegmentFunction, p: float | None = None) -> float:
    return float(segment_norm_values(seg.grid, seg.space, seg.values, seg.p if p is None else p))


@dataclass(frozen=True, eq=False)
class LiftedState:
    """The pair [X(t), X_t] in E x L^p(-1, 0; E)."""

    head: GridFunction
    tail: SegmentFunction

    def __post_init__(self):
        if self.head.space != self.tail.space:
            raise GridError("head and tail carry different norms")
        if self.head.grid is not None and not self.head.grid.same_as(self.tail.grid):
            raise GridError("head and tail live on different grids")


def lifted_norm_values(grid, tag, head: np.ndarray, tail: np.ndarray, p: float) -> np.ndarray:
    return norm_values(grid, tag, head) + segment_norm_values(grid, tag, tail, p)


def norm_Ep(y: LiftedState, p: float) -> float:
    """Sum-convention product norm: |head|_E + |tail|_{L^p(-1,0;E)}."""
    if p < 1:
        raise GridError("p must be >= 1")
    return float(lifted_norm_values(y.head.grid, y.head.space, y.head.values, y.tail.values, p))


@dataclass(eq=False)
class Trajectory:
    """Time-indexed states on t_i = i * dt, i = 0..n_steps, plus the initial history.

    ``states`` is (n_steps + 1, n_points); ``history`` holds f_0 with the same
    step as ``dt`` so segments never need time interpolation.  Optional
    ``tails`` (n_steps + 1, m + 1, n_points) store the lifted second component.
    """

    grid: SpatialGrid | None
    space: SpaceTag
    dt: float
    states: np.ndarray
    history: SegmentFunction
    tails: np.ndarray | None = None
    seed: int | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.dt > 0:
            raise GridError("dt must be positive")
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim != 2:
            raise GridError("states must be (n_steps + 1, n_points)")
        if abs(self.history.dtheta - self.dt) > 1e-12 * max(1.0, self.dt):
            raise GridError("history step must equal dt")

    @property
    def n_steps(self) -> int:
        return self.states.shape[0] - 1

    @property
    def t_grid(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    @property
    def horizon(self) -> float:
        return self.dt * self.n_steps

    def index_of(self, t: float) -> int:
        i = int(round(t / self.dt))
        if abs(i * self.dt - t) > 1e-9 * max(1.0, abs(t)) or i < 0 or i > self.n_steps:
            raise GridError(f"t={t} is not a node of the trajectory grid")
        return i

    def state(self, t: float) -> GridFunction:
        return GridFunction(self.grid, self.states[self.index_of(t)], self.space)

    def lifted(self, t: float) -> LiftedState:
        i = self.index_of(t)
        tail = self.tails[i] if self.tails is not None else extended_history(self)[i:i + self.history.m_history + 1]
        return LiftedState(
            GridFunction(self.grid, self.states[i], self.space),
            SegmentFunction(self.grid, tail, self.space, self.history.p),
        )


def extended_history(traj: Trajectory) -> np.ndarray:
    """f_0 on [-1, 0) followed by the trajectory on [0, T]."""
    return np.concatenate([traj.history.values[:-1], traj.states], axis=0)


def segment_extract(traj: Trajectory, t: float) -> SegmentFunction:
    """X_t(theta) = X(t + theta); times before 0 read the initial history.

    The node theta = 0 at t = 0 carries X(0) = x_0, so the result equals f_0
    exactly when f_0(0) = x_0.
    """
    i = traj.index_of(t)
    m = traj.history.m_history
    return SegmentFunction(traj.grid, extended_history(traj)[i:i + m + 1], traj.space, traj.history.p)


def bielecki_norm(
    ensemble: Sequence[Trajectory] | np.ndarray,
    beta: float,
    q: float = 2.0,
    dt: float | None = None,
    grid: SpatialGrid | None = None,
    space: SpaceTag | None = None,
) -> float:
    """sup_s e^{-beta s} (E |Y(s)|^q)^{1/q} over the time nodes of an ensemble.

    Accepts a list of trajectories or a raw array (n_paths, n_steps + 1, n).
    """
    if beta < 0 or q < 1:
        raise GridError("need beta >= 0 and q >= 1")
    if isinstance(ensemble, np.ndarray):
        states = ensemble
        if dt is None or space is None:
            raise GridError("raw arrays need dt and space")
    else:
        if len(ensemble) == 0:
            raise GridError("empty ensemble")
        first = ensemble[0]
        if any(tr.states.shape != first.states.shape or tr.dt != first.dt for tr in ensemble):
            raise GridError("trajectories must share the time grid")
        states = np.stack([tr.states for tr in ensemble])
        dt, grid, space = first.dt, first.grid, first.space
    if states.shape[0] == 0:
        raise GridError("empty ensemble")
    norms = norm_values(grid, space, states)
    moment = np.mean(norms ** q, axis=0) ** (1.0 / q)
    s = dt * np.arange(states.shape[1])
    return float(np.max(np.exp(-beta * s) * moment))
