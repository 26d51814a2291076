"""Mild solutions of the delay equation on the grid t_i = i dt.

The discrete variation-of-constants map is

    K(Z)(t_i) = S(t_i) x0 + sum_{j<i} S(t_i - t_j) phi(Z(t_j), Z_{t_j}) dt
                          + sum_{j<i} S(t_i - t_j) psi dW_j,

with left-point rules for both integrals.  ``picard_solve`` iterates K;
``march_solve`` computes the same fixed point in one forward sweep (the map is
lower-triangular in time) and is what the ensemble runners use.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .noise import NoisePath, duhamel_sum, noise_forcing, sample_ensemble
from .problem import (
    DelayProblem,
    contraction_constant,
    default_beta,
    drift_on_trajectory,
    drift_phi,
    extended_states,
    lift_embedding_constant,
)
from .semigroups import DelaySemigroup
from .spaces import Trajectory, lifted_norm_values, norm_values

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class NonContractionError(SolverError):
    pass


@dataclass
class PicardConfig:
    beta: float | None = None
    tol: float = 1e-10
    max_iter: int = 200
    ensemble_size: int = 1

    def resolved_beta(self, problem: DelayProblem) -> float:
        return default_beta(problem) if self.beta is None else float(self.beta)


@dataclass
class SolveResult:
    states: np.ndarray  # (B, N + 1, n)
    iterations: int
    distances: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    beta: float = 0.0
    contraction_bound: float = 0.0
    tails: np.ndarray | None = None  # (B, N + 1, m + 1, n) for lifted solves

    def trajectory(self, problem: DelayProblem, k: int = 0, seed: int | None = None) -> Trajectory:
        return Trajectory(
            problem.grid, problem.space, problem.dt, self.states[k], problem.history(),
            tails=None if self.tails is None else self.tails[k], seed=seed,
            diagnostics={"iterations": self.iterations, "ratios": list(self.ratios),
                         "beta": self.beta, "contraction_bound": self.contraction_bound},
        )


def _batched_increments(problem: DelayProblem, noise) -> np.ndarray:
    inc = noise.increments if isinstance(noise, NoisePath) else np.asarray(noise, dtype=float)
    if inc.ndim == 2:
        inc = inc[None]
    if inc.shape[-2] != problem.n_steps:
        raise SolverError(f"noise has {inc.shape[-2]} steps, problem needs {problem.n_steps}")
    if inc.shape[-1] != problem.noise_dim:
        raise SolverError("noise dimension does not match psi")
    return inc


def free_evolution(problem: DelayProblem) -> np.ndarray:
    """S(t_i) x0 for every node, by repeated S(dt)."""
    out = np.empty((problem.n_steps + 1, problem.n))
    out[0] = problem.x0
    for i in range(problem.n_steps):
        out[i + 1] = problem.semigroup.apply(problem.dt, out[i])
    return out


def _weighted_sup(problem: DelayProblem, diff: np.ndarray, beta: float) -> np.ndarray:
    t = problem.dt * np.arange(diff.shape[-2])
    return np.max(np.exp(-beta * t) * norm_values(problem.grid, problem.space, diff), axis=-1)


def picard_solve(problem: DelayProblem, noise, cfg: PicardConfig | None = None) -> SolveResult:
    """Iterate Z_{k+1} = K(Z_k) from the free evolution until the per-path sup
    distance between iterates drops below ``cfg.tol``.

    The stochastic convolution does not depend on Z and is computed once.
    """
    cfg = cfg or PicardConfig()
    inc = _batched_increments(problem, noise)
    sg, dt = problem.semigroup, problem.dt
    beta = cfg.resolved_beta(problem)
    bound = lift_embedding_constant(beta, problem.p) * contraction_constant(problem, beta)
    free = free_evolution(problem)
    base = free[None] + duhamel_sum(sg, dt, noise_forcing(problem.psi, inc))
    if not problem.has_drift:
        return SolveResult(base, 1, [0.0], [], beta, bound)
    Z = np.broadcast_to(free, base.shape).copy()
    distances, ratios = [], []
    prev_w = None
    streak = 0
    for it in range(1, cfg.max_iter + 1):
        Znew = base + duhamel_sum(sg, dt, dt * drift_on_trajectory(problem, Z))
        diff = Znew - Z
        dist = float(np.max(norm_values(problem.grid, problem.space, diff)))
        wdist = float(np.max(_weighted_sup(problem, diff, beta)))
        Z = Znew
        distances.append(dist)
        if prev_w is not None and prev_w > 0:
            r = wdist / prev_w
            ratios.append(r)
            streak = streak + 1 if r >= 1.0 else 0
            if streak >= 3:
                raise NonContractionError(
                    f"Picard map is not contracting (weighted ratio >= 1 for 3 iterations, beta={beta:g})"
                )
        prev_w = wdist
        if dist < cfg.tol:
            return SolveResult(Z, it, distances, ratios, beta, bound)
    raise SolverError(f"Picard iteration did not reach tol={cfg.tol:g} in {cfg.max_iter} iterations")


def march_solve(problem: DelayProblem, noise, keep=None) -> np.ndarray:
    """Forward sweep X_{i+1} = S(dt)(X_i + dt phi(X_i, X_{t_i}) + psi dW_i).

    Returns (B, N + 1, n), or (B, len(keep), n) when ``keep`` lists the time
    indices to store.  The delay window is held in a ring buffer of 2 (m + 1)
    states, so memory does not grow with the horizon.
    """
    inc = _batched_increments(problem, noise)
    B = inc.shape[0]
    m, N, n = problem.m_history, problem.n_steps, problem.n
    idx = np.arange(N + 1) if keep is None else np.asarray(keep, dtype=int)
    slot = np.full(N + 1, -1)
    slot[idx] = np.arange(idx.size)
    out = np.empty((B, idx.size, n))
    dW = inc @ np.atleast_2d(problem.psi)
    drift = problem.has_drift
    x = np.broadcast_to(problem.x0, (B, n)).copy()
    if drift:
        # doubled ring buffer: the last m + 1 states are always the contiguous
        # slice ring[:, pos - m : pos + 1]
        w = m + 1
        ring = np.empty((B, 2 * w, n))
        ring[:, :m] = problem.f0[:-1]
        ring[:, m] = x
        ring[:, w:w + m] = problem.f0[:-1]
        ring[:, w + m] = x
        pos = w + m
    if slot[0] >= 0:
        out[:, slot[0]] = x
    for i in range(N):
        v = x + dW[:, i]
        if drift:
            v = v + problem.dt * drift_phi(problem, x, ring[:, pos - m:pos + 1])
        x = problem.semigroup.apply(problem.dt, v)
        if drift:
            pos = pos + 1 if pos + 1 < 2 * w else w
            ring[:, pos] = x
            ring[:, pos - w] = x
        if slot[i + 1] >= 0:
            out[:, slot[i + 1]] = x
    return out


def mild_evaluate(problem: DelayProblem, states: np.ndarray, noise, i: int, rule: str = "left",
                  drift_sign: float = 1.0) -> np.ndarray:
    """Right-hand side of the variation-of-constants formula at t_i, from a given trajectory.

    Every term applies S(t_i - t_j) directly (no recursion).  ``rule`` picks
    the quadrature for the drift integral: ``left`` (the solver's rule) or
    ``trapezoid`` (the verifier's reference).
    """
    inc = _batched_increments(problem, noise)
    X = np.asarray(states, dtype=float)
    if X.ndim == 2:
        X = X[None]
    if not 0 <= i <= problem.n_steps:
        raise SolverError("time index off the grid")
    sg, dt = problem.semigroup, problem.dt
    out = np.broadcast_to(sg.apply(i * dt, problem.x0), X.shape[:1] + (problem.n,)).copy()
    if i == 0:
        return out
    dW = inc[:, :i] @ np.atleast_2d(problem.psi)
    if problem.has_drift:
        phi = drift_sign * drift_on_trajectory(problem, X[:, : i + 1])
        if rule == "left":
            w = np.full(i + 1, dt)
            w[-1] = 0.0
        elif rule == "trapezoid":
            w = np.full(i + 1, dt)
            w[0] = w[-1] = 0.5 * dt
        else:
            raise ValueError(f"unknown rule {rule!r}")
    for j in range(i + 1):
        lag = (i - j) * dt
        v = dW[:, j] if j < i else np.zeros_like(out)
        if problem.has_drift and w[j] != 0.0:
            v = v + w[j] * phi[:, j]
        out += sg.apply(lag, v)
    return out


def markov_lift_solve(problem: DelayProblem, noise, cfg: PicardConfig | None = None) -> SolveResult:
    """Picard iteration for dY = (AY + F(Y)) dt + G dW on E x L^p(-1, 0; E).

    F = [phi, 0]', G = [psi, 0]', Y(0) = [x0, f0]' and the delay semigroup
    propagates both components; drift is evaluated on the lifted tail.
    """
    cfg = cfg or PicardConfig()
    inc = _batched_increments(problem, noise)
    B, m, N, n = inc.shape[0], problem.m_history, problem.n_steps, problem.n
    dsg = DelaySemigroup(problem.semigroup, m, problem.p)
    dt = problem.dt
    beta = cfg.resolved_beta(problem)

    def propagate(head0, tail0, forcing):
        heads = np.empty((B, N + 1, n))
        tails = np.empty((B, N + 1, m + 1, n))
        h, tl = head0, tail0
        heads[:, 0], tails[:, 0] = h, tl
        for i in range(N):
            h, tl = dsg.step(h + forcing[:, i], tl)
            heads[:, i + 1], tails[:, i + 1] = h, tl
        return heads, tails

    dW = inc @ np.atleast_2d(problem.psi)
    h0 = np.broadcast_to(problem.x0, (B, n)).copy()
    t0 = np.broadcast_to(problem.f0, (B, m + 1, n)).copy()
    heads, tails = propagate(h0, t0, dW)
    if not problem.has_drift:
        return SolveResult(heads, 1, [0.0], [], beta, 0.0, tails)
    distances, ratios = [], []
    for it in range(1, cfg.max_iter + 1):
        phi = drift_phi(problem, heads[:, :N], tails[:, :N])
        nh, nt = propagate(h0, t0, dW + dt * phi)
        dist = float(np.max(lifted_norm_values(problem.grid, problem.space, nh - heads, nt - tails, problem.p)))
        if distances and distances[-1] > 0:
            ratios.append(dist / distances[-1])
        distances.append(dist)
        heads, tails = nh, nt
        if dist < cfg.tol:
            return SolveResult(heads, it, distances, ratios, beta, 0.0, tails)
    raise SolverError(f"lifted Picard iteration did not reach tol={cfg.tol:g}")


def segment_states(problem: DelayProblem, states: np.ndarray, i: int) -> np.ndarray:
    """X_{t_i} read from a trajectory (with f0 before time 0): (..., m + 1, n)."""
    H = extended_states(problem, states)
    return H[..., i:i + problem.m_history + 1, :]


# ---------------------------------------------------------------- ensembles
def run_ensemble(
    problem: DelayProblem,
    n_paths: int,
    seed: int,
    threads: int = 1,
    chunk: int = 32,
    first_member: int = 0,
    reduce=None,
    keep=None,
):
    """Solve ``n_paths`` members with per-member noise streams.

    Work is split into fixed chunks of ``chunk`` members, independent of
    ``threads``; chunk results are concatenated in member order, so the
    output is bitwise identical for any thread count.  ``reduce`` maps a
    chunk's states (b, N + 1, n) to a smaller array before concatenation;
    ``keep`` restricts the stored time indices as in ``march_solve``.
    """
    starts = list(range(0, n_paths, chunk))

    def work(start):
        b = min(chunk, n_paths - start)
        inc = sample_ensemble(b, problem.n_steps, problem.dt, problem.noise_dim, seed, first_member + start)
        states = march_solve(problem, inc, keep)
        return reduce(states) if reduce is not None else states

    if threads <= 1:
        parts = [work(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(work, starts))
    return np.concatenate(parts, axis=0)
