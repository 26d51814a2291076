"""Concrete C_0-semigroups acting on grid values.

Every backend exposes ``apply(t, values)`` acting along the last axis of a
(batched) array, ``norm_bound(t)`` for the operator norm and a discrete
generator for the strong-solution residual.  Shifts that land on grid nodes
are exact index moves; other shifts use linear interpolation, which keeps
S(t)S(s) - S(t+s) at O(h^2) for smooth data.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .spaces import (
    C0,
    L1,
    RN,
    GridFunction,
    GridKind,
    LiftedState,
    SegmentFunction,
    SpaceTag,
    SpatialGrid,
    trapezoid_weights,
)

ALIGN_TOL = 1e-9


class ContractionError(ValueError):
    """The renewal map is not a contraction (w <= sup |b_mu|)."""


class ConvergenceError(RuntimeError):
    """A fixed-point iteration failed to converge."""


def _as_batch(values: np.ndarray, n: int) -> tuple[np.ndarray, tuple]:
    v = np.asarray(values, dtype=float)
    if v.shape[-1] != n:
        raise ValueError(f"last axis must have length {n}, got {v.shape[-1]}")
    return v.reshape(-1, n), v.shape


def _lerp_table(points: np.ndarray, h: float, n: int):
    """Left index and fraction for linear interpolation on nodes k*h, k < n."""
    pos = points / h
    k = np.floor(pos + ALIGN_TOL).astype(int)
    frac = pos - k
    frac[np.abs(frac) < ALIGN_TOL] = 0.0
    k = np.clip(k, 0, n - 1)
    k1 = np.minimum(k + 1, n - 1)
    return k, k1, frac


def _lerp(batch: np.ndarray, k, k1, frac) -> np.ndarray:
    out = batch[:, k]
    nz = frac != 0.0
    if np.any(nz):
        out[:, nz] = (1.0 - frac[nz]) * batch[:, k[nz]] + frac[nz] * batch[:, k1[nz]]
    return out


class Semigroup:
    grid: SpatialGrid | None
    space: SpaceTag

    @property
    def n(self) -> int:
        return self.grid.n_points

    def apply(self, t: float, values: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def norm_bound(self, t) -> np.ndarray:
        return np.exp(self.growth_bound * np.asarray(t, dtype=float))

    growth_bound: float = 0.0


# ---------------------------------------------------------------- transport
@dataclass(frozen=True, eq=False)
class TransportSemigroup(Semigroup):
    """(S(t)x)(xi) = e^{-mu t} x(xi - t) for xi >= t, else 0, on C_0([0,1]).

    Generated by Bx = -x' - mu x with D(B) = {x in C^1 : x(0) = x'(0) = 0};
    nilpotent, S(t) = 0 for t >= 1.
    """

    grid: SpatialGrid
    mu_decay: float = 0.0
    space: SpaceTag = field(default=C0, init=False)

    def __post_init__(self):
        if self.grid.kind != GridKind.UNIT_INTERVAL:
            raise ValueError("transport acts on the unit interval")
        if self.mu_decay < 0:
            raise ValueError("decay rate must be >= 0")

    @property
    def growth_bound(self) -> float:
        return -self.mu_decay

    def norm_bound(self, t):
        return np.exp(-self.mu_decay * np.asarray(t, dtype=float))

    def apply(self, t: float, values: np.ndarray) -> np.ndarray:
        if t < 0:
            raise ValueError("negative time")
        batch, shape = _as_batch(values, self.n)
        if t == 0:
            return batch.reshape(shape).copy()
        out = np.zeros_like(batch)
        if t >= 1.0:
            return out.reshape(shape)
        h = self.grid.step
        shift = t / h
        k = int(round(shift))
        decay = np.exp(-self.mu_decay * t)
        if abs(shift - k) < ALIGN_TOL:
            if k < self.n:
                out[:, k:] = decay * batch[:, : self.n - k]
        else:
            src = self.grid.nodes - t
            live = src >= 0.0
            i0, i1, frac = _lerp_table(src[live], h, self.n)
            out[:, live] = decay * _lerp(batch, i0, i1, frac)
        out[:, 0] = 0.0
        return out.reshape(shape)

    def generator_matrix(self) -> np.ndarray:
        """First-order upwind matrix for -d/dxi - mu; row 0 pins x(0) = 0."""
        n, h = self.n, self.grid.step
        A = np.zeros((n, n))
        i = np.arange(1, n)
        A[i, i] = -1.0 / h - self.mu_decay
        A[i, i - 1] = 1.0 / h
        return A

    def adjoint_density(self, profile: np.ndarray, derivative: np.ndarray) -> np.ndarray:
        # profiles are compactly supported in (0, 1), so no boundary terms
        return derivative - self.mu_decay * profile


# ---------------------------------------------------------------- finite-dim
class FiniteDimSemigroup(Semigroup):
    """exp(tM) on R^n (scipy's Pade scaling-and-squaring)."""

    grid = None
    space = RN

    def __init__(self, matrix):
        M = np.atleast_2d(np.asarray(matrix, dtype=float))
        if M.shape[0] != M.shape[1]:
            raise ValueError("generator matrix must be square")
        M.setflags(write=False)
        self.matrix = M
        self._cache: dict[float, np.ndarray] = {}
        self._lock = threading.Lock()

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def growth_bound(self) -> float:
        return float(np.max(np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.T))))

    def expm(self, t: float) -> np.ndarray:
        with self._lock:
            E = self._cache.get(t)
            if E is None:
                E = scipy.linalg.expm(t * self.matrix)
                if len(self._cache) < 256:
                    self._cache[t] = E
        return E

    def apply(self, t: float, values: np.ndarray) -> np.ndarray:
        if t < 0:
            raise ValueError("negative time")
        v = np.asarray(values, dtype=float)
        if t == 0:
            return v.copy()
        return v @ self.expm(t).T

    def generator_matrix(self) -> np.ndarray:
        return np.array(self.matrix)

    def adjoint_density(self, profile: np.ndarray, derivative=None) -> np.ndarray:
        return self.matrix.T @ profile


def identity_semigroup(n: int = 1) -> FiniteDimSemigroup:
    return FiniteDimSemigroup(np.zeros((n, n)))


# ---------------------------------------------------------------- McKendrick
class McKendrickSemigroup(Semigroup):
    """Age-structured semigroup on L^1(0, inf), truncated to the grid's length.

        S(t)g(a) = exp(-int_{a-t}^a mu) g~(a - t),

    where g~ equals g on a >= 0 and the (mu, b)-extension g_2 (the renewal
    solution) on negative arguments.  mu is extended by zero below age 0.
    """

    space = L1

    def __init__(self, grid: SpatialGrid, mu, b, w: float, tol: float = 1e-13, max_iter: int = 500):
        if grid.kind != GridKind.HALF_LINE:
            raise ValueError("McKendrick acts on the half-line")
        self.grid = grid
        self.mu = _frozen(mu, grid.n_points)
        self.b = _frozen(b, grid.n_points)
        h = grid.step
        cum = np.concatenate([[0.0], np.cumsum(0.5 * h * (self.mu[1:] + self.mu[:-1]))])
        cum.setflags(write=False)
        self.cum_mu = cum
        bmu = np.exp(-cum) * self.b
        bmu.setflags(write=False)
        self.b_mu = bmu
        self.b_mu_sup = float(np.max(np.abs(bmu)))
        self.w = float(w)
        if not self.w > self.b_mu_sup:
            raise ContractionError(
                f"w={self.w:g} <= sup|b_mu|={self.b_mu_sup:g}: "
                "the renewal map is not a contraction in the weighted norm"
            )
        self.tol = tol
        self.max_iter = max_iter
        self._mats: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self._lock = threading.Lock()
        self.last_diagnostics: dict = {}

    @property
    def growth_bound(self) -> float:
        return float(np.max(np.abs(self.b)) - np.min(self.mu))

    def _renewal_matrices(self, K: int) -> tuple[np.ndarray, np.ndarray]:
        """Trapezoid discretizations of T_{mu,b} (K+1, n) and b_mu * . (K+1, K+1)."""
        with self._lock:
            mats = self._mats.get(K)
        if mats is not None:
            return mats
        n, h = self.n, self.grid.step
        T = np.zeros((K + 1, n))
        C = np.zeros((K + 1, K + 1))
        for k in range(K + 1):
            j = np.arange(0, n - k)
            wts = trapezoid_weights(n - k, h)
            T[k, j] = wts * np.exp(-(self.cum_mu[j + k] - self.cum_mu[j])) * self.b[j + k]
            if k > 0:
                jj = np.arange(k + 1)
                C[k, k - jj] = trapezoid_weights(k + 1, h) * self.b_mu[jj]
        T.setflags(write=False)
        C.setflags(write=False)
        with self._lock:
            self._mats.setdefault(K, (T, C))
            return self._mats[K]

    def weighted_norm(self, v: np.ndarray) -> np.ndarray:
        K = v.shape[-1] - 1
        s = self.grid.step * np.arange(K + 1)
        return np.abs(v) @ (trapezoid_weights(K + 1, self.grid.step) * np.exp(-self.w * s)) if K > 0 else np.abs(v[..., 0])

    def extension(self, g: np.ndarray, horizon: float, return_info: bool = False):
        """The renewal solution g_2 on nodes 0, h, ..., K h >= horizon.

        Picard iteration g_2 <- b_mu * g_2 + T_{mu,b} g in the e^{-w s}
        weighted L^1 norm, stopped when successive iterates differ by < tol.
        """
        h = self.grid.step
        K = int(np.ceil(horizon / h - ALIGN_TOL))
        if K > self.n - 1:
            raise ValueError("extension horizon exceeds the truncation length")
        K = max(K, 0)
        batch, shape = _as_batch(g, self.n)
        T, C = self._renewal_matrices(K)
        forcing = batch @ T.T
        v = forcing.copy()
        prev_dist = None
        ratios = []
        for it in range(1, self.max_iter + 1):
            nxt = v @ C.T + forcing
            dist = float(np.max(self.weighted_norm(nxt - v)))
            v = nxt
            if prev_dist is not None and prev_dist > 0:
                ratios.append(dist / prev_dist)
            prev_dist = dist
            if dist < self.tol:
                break
        else:
            raise ConvergenceError(f"renewal iteration did not reach tol={self.tol:g} in {self.max_iter} steps")
        out = v.reshape(shape[:-1] + (K + 1,))
        if return_info:
            resid = float(np.max(self.weighted_norm(v - v @ C.T - forcing)))
            info = {"iterations": it, "ratios": ratios, "residual": resid,
                    "contraction_bound": self.b_mu_sup / self.w}
            return out, info
        return out

    def apply(self, t: float, values: np.ndarray) -> np.ndarray:
        if t < 0:
            raise ValueError("negative time")
        batch, shape = _as_batch(values, self.n)
        if t == 0:
            return batch.reshape(shape).copy()
        h, a = self.grid.step, self.grid.nodes
        ext = self.extension(batch, t)
        out = np.empty_like(batch)
        src = a - t
        old = src >= -ALIGN_TOL * h
        if np.any(old):
            i0, i1, frac = _lerp_table(np.maximum(src[old], 0.0), h, self.n)
            cum_src = np.where(frac == 0, self.cum_mu[i0], (1 - frac) * self.cum_mu[i0] + frac * self.cum_mu[i1])
            out[:, old] = np.exp(-(self.cum_mu[old] - cum_src)) * _lerp(batch, i0, i1, frac)
        young = ~old
        if np.any(young):
            j0, j1, frac = _lerp_table(-src[young], h, ext.shape[-1])
            out[:, young] = np.exp(-self.cum_mu[young]) * _lerp(ext, j0, j1, frac)
        return out.reshape(shape)

    def generator_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """Upwind -d/da - mu on rows >= 1 and the boundary functional K g = g(0) - int b g."""
        n, h = self.n, self.grid.step
        A = np.zeros((n, n))
        i = np.arange(1, n)
        A[i, i] = -1.0 / h - self.mu[i]
        A[i, i - 1] = 1.0 / h
        krow = -self.grid.weights * self.b
        krow[0] += 1.0
        return A, krow

    def adjoint_density(self, profile: np.ndarray, derivative: np.ndarray) -> np.ndarray:
        return derivative - self.mu * profile + profile[0] * self.b

    def truncation_escape(self, g: np.ndarray, horizon: float, dt: float | None = None) -> float:
        """Mass leaving through a = L over [0, horizon].

        For horizon < L no newborn reaches a = L, so the exit flux at time
        tau is g(L - tau) exp(-int_{L - tau}^L mu), integrated on a grid
        resolving the (possibly very fast) decay of the survival factor.
        ``dt`` is accepted for call compatibility and ignored.
        """
        L = self.grid.length
        if horizon >= L:
            raise ValueError("escape formula needs horizon < truncation length")
        tau = np.linspace(0.0, horizon, 64 * max(1, int(np.ceil(horizon / self.grid.step))) + 1)
        a = L - tau
        nodes = self.grid.nodes
        flux = np.interp(a, nodes, np.asarray(g, dtype=float)) * np.exp(-(self.cum_mu[-1] - np.interp(a, nodes, self.cum_mu)))
        return float(np.abs(flux) @ trapezoid_weights(tau.size, tau[1] - tau[0]))


def _frozen(values, n: int) -> np.ndarray:
    v = np.array(np.broadcast_to(np.asarray(values, dtype=float), (n,)))
    v.setflags(write=False)
    return v


# ---------------------------------------------------------------- delay blocks
def left_translation_apply(t: float, seg: np.ndarray) -> np.ndarray:
    """(T_l(t) f)(theta) = f(theta + t) where theta + t <= 0, zero elsewhere.

    ``seg`` is (..., m + 1, n) on the uniform theta grid of [-1, 0].
    """
    if t < 0:
        raise ValueError("negative time")
    f = np.asarray(seg, dtype=float)
    if t == 0:
        return f.copy()
    m = f.shape[-2] - 1
    dth = 1.0 / m
    out = np.zeros_like(f)
    if t >= 1.0 - ALIGN_TOL * dth:
        return out  # the whole window has been shifted out
    shift = t / dth
    k = int(round(shift))
    if abs(shift - k) < ALIGN_TOL:
        if k <= m:
            out[..., : m + 1 - k, :] = f[..., k:, :]
        return out
    th = np.linspace(-1.0, 0.0, m + 1)
    src = th + t
    live = src <= 0.0
    pos = (src[live] + 1.0) / dth
    i0 = np.floor(pos).astype(int)
    frac = pos - i0
    i1 = np.minimum(i0 + 1, m)
    out[..., live, :] = (1 - frac)[:, None] * f[..., i0, :] + frac[:, None] * f[..., i1, :]
    return out


def s_curl_apply(sg: Semigroup, s: float, x: np.ndarray, m_history: int) -> np.ndarray:
    """(S_s x)(theta) = S(theta + s) x for theta > -min(s, 1), else 0.

    For s < 1 the single node theta = -s is assigned to the translation
    block (left_translation_apply keeps theta + t <= 0), so the two blocks
    never both write to one node.  For s >= 1 the translation block is zero
    and this block covers the closed window, theta = -1 included.
    """
    if s < 0:
        raise ValueError("negative time")
    xv = np.asarray(x, dtype=float)
    out = np.zeros(xv.shape[:-1] + (m_history + 1, xv.shape[-1]))
    th = np.linspace(-1.0, 0.0, m_history + 1)
    for j, theta in enumerate(th):
        if theta > -s + ALIGN_TOL / m_history or (j == 0 and s >= 1.0 - ALIGN_TOL / m_history):
            out[..., j, :] = sg.apply(theta + s, xv)
    return out


@dataclass(frozen=True, eq=False)
class DelaySemigroup:
    """T(t) = [[S(t), 0], [S_t, T_l(t)]] on E x L^p(-1, 0; E)."""

    inner: Semigroup
    m_history: int
    p: float = 2.0

    def apply(self, t: float, head: np.ndarray, tail: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if t < 0:
            raise ValueError("negative time")
        tail = np.asarray(tail, dtype=float)
        if tail.shape[-2] != self.m_history + 1:
            raise ValueError("tail does not match the history grid")
        if t == 0:
            return np.array(head, dtype=float), tail.copy()
        new_head = self.inner.apply(t, head)
        new_tail = s_curl_apply(self.inner, t, head, self.m_history) + left_translation_apply(t, tail)
        return new_head, new_tail

    def step(self, head: np.ndarray, tail: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """T(dtheta): one history cell; used by the lifted solver."""
        new_head = self.inner.apply(1.0 / self.m_history, head)
        new_tail = np.empty_like(tail)
        new_tail[..., :-1, :] = tail[..., 1:, :]
        new_tail[..., -1, :] = new_head
        return new_head, new_tail


def transport_apply(sg: TransportSemigroup, t: float, x):
    return GridFunction(sg.grid, sg.apply(t, x.values), C0)


def mckendrick_apply(sg: McKendrickSemigroup, t: float, g):
    return GridFunction(sg.grid, sg.apply(t, g.values), g.space)


def mckendrick_extension(sg: McKendrickSemigroup, g, horizon: float):
    return sg.extension(g.values if hasattr(g, "values") else g, horizon)


def finite_dim_apply(sg: FiniteDimSemigroup, t: float, v) -> np.ndarray:
    return sg.apply(t, v)


def delay_semigroup_apply(dsg: DelaySemigroup, t: float, y):
    head, tail = dsg.apply(t, y.head.values, y.tail.values)
    return LiftedState(GridFunction(y.head.grid, head, y.head.space),
                       SegmentFunction(y.tail.grid, tail, y.tail.space, y.tail.p))
