"""Discretized delay problems and the delay drift

    phi(x, h)(xi) = int_{-1}^0 varphi(theta, xi) h(theta, xi) dtheta + f1(x(xi))
                    + int_{-1}^0 k(theta, xi) f2(h(theta, xi)) dtheta  (+ C x on R^n).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable

import numpy as np

from .semigroups import Semigroup
from .spaces import SegmentFunction, SpaceTag, SpatialGrid, trapezoid_weights


def zero_map(y):
    return np.zeros_like(y)


@dataclass(frozen=True, eq=False)
class LipschitzMap:
    """Scalar map applied pointwise, with its declared Lipschitz constant."""

    fn: Callable[[np.ndarray], np.ndarray] = zero_map
    lipschitz: float = 0.0
    label: str = "0"

    def __call__(self, y):
        return self.fn(y)

    @property
    def is_zero(self) -> bool:
        return self.fn is zero_map


@dataclass(frozen=True, eq=False)
class DelayProblem:
    """One resolution of dX = (BX + phi(X, X_t)) dt + psi dW, X(0) = x0, X_0 = f0.

    Array shapes: x0 (n,), f0 (m + 1, n) with m = 1/dt, varphi and k
    (m + 1, n), psi (d, n), linear_drift (n, n) or None.
    """

    backend: str
    semigroup: Semigroup
    dt: float
    horizon: float
    x0: np.ndarray
    f0: np.ndarray
    psi: np.ndarray
    varphi: np.ndarray | None = None
    kernel_k: np.ndarray | None = None
    f1: LipschitzMap = field(default_factory=LipschitzMap)
    f2: LipschitzMap = field(default_factory=LipschitzMap)
    linear_drift: np.ndarray | None = None
    p: float = 2.0
    q: float = 2.0
    sigma_support: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        m = self.m_history
        if abs(m * self.dt - 1.0) > 1e-9:
            raise ValueError("1/dt must be an integer so the history grid matches the time grid")
        n_steps = self.horizon / self.dt
        if abs(n_steps - round(n_steps)) > 1e-9 or n_steps < 1:
            raise ValueError("horizon must be a positive multiple of dt")
        n = self.n
        for name in ("x0",):
            if np.shape(getattr(self, name)) != (n,):
                raise ValueError(f"{name} must have shape ({n},)")
        if np.shape(self.f0) != (m + 1, n):
            raise ValueError(f"f0 must have shape ({m + 1}, {n})")
        for name in ("varphi", "kernel_k"):
            v = getattr(self, name)
            if v is not None and np.shape(v) != (m + 1, n):
                raise ValueError(f"{name} must have shape ({m + 1}, {n})")
        if np.atleast_2d(self.psi).shape[-1] != n:
            raise ValueError("psi columns must match the state dimension")
        if self.p < 1 or self.q < 1:
            raise ValueError("p and q must be >= 1")

    @property
    def m_history(self) -> int:
        return int(round(1.0 / self.dt))

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def n(self) -> int:
        return self.semigroup.n

    @property
    def grid(self) -> SpatialGrid | None:
        return self.semigroup.grid

    @property
    def space(self) -> SpaceTag:
        return self.semigroup.space

    @property
    def noise_dim(self) -> int:
        return np.atleast_2d(self.psi).shape[0]

    @property
    def theta_weights(self) -> np.ndarray:
        return trapezoid_weights(self.m_history + 1, self.dt)

    @property
    def has_drift(self) -> bool:
        return not (
            self.varphi is None
            and (self.kernel_k is None or self.f2.is_zero)
            and self.f1.is_zero
            and self.linear_drift is None
        )

    @cached_property
    def weighted_kernels(self) -> tuple[np.ndarray | None, np.ndarray | None]:
        """varphi and k premultiplied by the theta quadrature weights."""
        wt = self.theta_weights[:, None]
        vp = None if self.varphi is None else wt * self.varphi
        kk = None if self.kernel_k is None or self.f2.is_zero else wt * self.kernel_k
        return vp, kk

    def history(self) -> SegmentFunction:
        return SegmentFunction(self.grid, self.f0, self.space, self.p)

    def with_(self, **kw) -> "DelayProblem":
        return replace(self, **kw)


def drift_phi(problem: DelayProblem, x: np.ndarray, seg: np.ndarray) -> np.ndarray:
    """phi(x, seg) batched: x (..., n), seg (..., m + 1, n) -> (..., n)."""
    x = np.asarray(x, dtype=float)
    seg = np.asarray(seg, dtype=float)
    if seg.shape[-2] != problem.m_history + 1 or seg.shape[-1] != problem.n:
        raise ValueError("segment does not match the problem's history grid")
    vp, kk = problem.weighted_kernels
    out = np.asarray(problem.f1(x), dtype=float) + 0.0 * x
    if vp is not None:
        out = out + np.einsum("jn,...jn->...n", vp, seg)
    if kk is not None:
        out = out + np.einsum("jn,...jn->...n", kk, problem.f2(seg))
    if problem.linear_drift is not None:
        out = out + x @ problem.linear_drift.T
    return out


def extended_states(problem: DelayProblem, states: np.ndarray) -> np.ndarray:
    """f0 on [-1, 0) stacked in front of the states: (..., m + N + 1, n)."""
    s = np.asarray(states, dtype=float)
    hist = np.broadcast_to(problem.f0[:-1], s.shape[:-2] + problem.f0[:-1].shape)
    return np.concatenate([hist, s], axis=-2)


def drift_on_trajectory(problem: DelayProblem, states: np.ndarray) -> np.ndarray:
    """phi(X(t_i), X_{t_i}) for every node i; states (..., N' + 1, n) with N' <= N."""
    s = np.asarray(states, dtype=float)
    m = problem.m_history
    H = extended_states(problem, s)
    n_t = s.shape[-2]
    out = np.asarray(problem.f1(s), dtype=float) + 0.0 * s
    w = problem.theta_weights
    if problem.varphi is not None:
        for j in range(m + 1):
            out = out + (w[j] * problem.varphi[j]) * H[..., j:j + n_t, :]
    if problem.kernel_k is not None and not problem.f2.is_zero:
        for j in range(m + 1):
            out = out + (w[j] * problem.kernel_k[j]) * problem.f2(H[..., j:j + n_t, :])
    if problem.linear_drift is not None:
        out = out + s @ problem.linear_drift.T
    return out


def mixed_norm(kernel: np.ndarray | None, p: float, dtheta: float) -> float:
    """max over xi of |kernel(., xi)|_{L^{p'}(-1, 0)}, 1/p + 1/p' = 1."""
    if kernel is None:
        return 0.0
    a = np.abs(np.asarray(kernel, dtype=float))
    if p == 1:
        return float(np.max(a))
    pp = p / (p - 1.0)
    w = trapezoid_weights(a.shape[0], dtheta)[:, None]
    return float(np.max(np.sum(w * a ** pp, axis=0) ** (1.0 / pp)))


def lipschitz_constant(problem: DelayProblem) -> float:
    """2^{1/p} (L_f1 v (L_f2 |k| + |varphi|)), with |C| added to L_f1 on R^n."""
    head = problem.f1.lipschitz
    if problem.linear_drift is not None:
        head += float(np.linalg.norm(problem.linear_drift, 2))
    lk = problem.f2.lipschitz * mixed_norm(problem.kernel_k, problem.p, problem.dt) if problem.kernel_k is not None else 0.0
    tail = lk + mixed_norm(problem.varphi, problem.p, problem.dt)
    if head == 0 and tail == 0:
        return 0.0
    return 2.0 ** (1.0 / problem.p) * max(head, tail)


def lift_embedding_constant(beta: float, p: float) -> float:
    """Bound of |[Z(u), Z_u]|_{E_p} by e^{beta u} |Z|_beta when Z vanishes before 0."""
    if beta == 0:
        return 2.0
    if np.isinf(p):
        return 2.0
    return 1.0 + ((1.0 - np.exp(-p * beta)) / (p * beta)) ** (1.0 / p)


def contraction_constant(problem: DelayProblem, beta: float) -> float:
    """C_{beta,a} = int_0^T a(u) e^{-beta u} du with a(u) = L |S(u)|."""
    L = lipschitz_constant(problem)
    u = np.linspace(0.0, problem.horizon, 2049)
    a = L * problem.semigroup.norm_bound(u)
    return float(np.sum(trapezoid_weights(u.size, u[1] - u[0]) * a * np.exp(-beta * u)))


def default_beta(problem: DelayProblem, target: float = 0.5) -> float:
    """Smallest beta (by bisection) with lift-constant * C_{beta,a} <= target."""
    L = lipschitz_constant(problem)
    if L == 0:
        return 1.0

    def certificate(b):
        return lift_embedding_constant(b, problem.p) * contraction_constant(problem, b)

    lo, hi = 0.0, max(1.0, 2.0 * L + abs(problem.semigroup.growth_bound))
    while certificate(hi) > target:
        hi *= 2.0
        if hi > 1e8:
            raise ValueError("no admissible Bielecki weight")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if certificate(mid) > target:
            lo = mid
        else:
            hi = mid
    return hi
