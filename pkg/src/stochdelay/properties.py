"""Property checks on semigroups and solution ensembles.

Semigroup-law defects under grid refinement, moment and initial-data
Lipschitz constants, path moduli of continuity, and the weighted gamma-sup
under grid doubling.
"""
from __future__ import annotations

import numpy as np

from .gamma import mckendrick_gamma_bound, weighted_gamma_sup
from .noise import STREAM_AUX, bridge_hierarchy, coarsen, sample_ensemble, stream
from .problem import DelayProblem, lipschitz_constant
from .solver import march_solve, run_ensemble
from .spaces import norm_values, trapezoid_weights


# ---------------------------------------------------------------- semigroup law
def transport_test_functions(seed: int, count: int = 20, modes: int = 4):
    """Random elements of D(B): xi^2 sum_k c_k sin(k pi xi)."""
    g = stream(seed, 1, STREAM_AUX)
    coefs = g.standard_normal((count, modes)) / np.arange(1, modes + 1)

    def make(c):
        return lambda xi: xi ** 2 * sum(ck * np.sin((k + 1) * np.pi * xi) for k, ck in enumerate(c))

    return [make(c) for c in coefs]


def mckendrick_test_functions(sg_b, seed: int, count: int = 20, modes: int = 3, length: float = 10.0):
    """Random smooth profiles satisfying the birth condition x(0) = int b x.

    x = u + c e^{-a} with u = sum_k c_k a^k e^{-a} and c fixed by the
    condition, evaluated with a dense quadrature of ``sg_b`` (a callable b).
    """
    g = stream(seed, 2, STREAM_AUX)
    coefs = g.standard_normal((count, modes))
    a = np.linspace(0.0, length, 200001)
    w = trapezoid_weights(a.size, a[1] - a[0])
    b = sg_b(a)
    out = []
    for c in coefs:
        u = lambda s, c=c: sum(ck * s ** (k + 1) for k, ck in enumerate(c)) * np.exp(-s)
        # u(0) = 0, so c (1 - int b e^{-a}) = int b u
        amp = float(w @ (b * u(a))) / (1.0 - float(w @ (b * np.exp(-a))))
        out.append(lambda s, u=u, amp=amp: u(s) + amp * np.exp(-s))
    return out


def semigroup_law_defect(sg, functions, times, space_norm=None) -> np.ndarray:
    """|S(t+s)x - S(t)S(s)x| for each (function, (t, s)) pair."""
    nodes = sg.grid.nodes
    out = []
    for fn, (t, s) in zip(functions, times):
        x = fn(nodes)
        if sg.space.name == "C0":
            x[0] = 0.0
        d = sg.apply(t + s, x) - sg.apply(t, sg.apply(s, x))
        out.append(float(norm_values(sg.grid, sg.space, d)))
    return np.array(out)


def random_times(seed: int, count: int = 20, t_max: float = 0.5) -> list[tuple[float, float]]:
    g = stream(seed, 3, STREAM_AUX)
    return [tuple(map(float, g.uniform(0.0, t_max, 2))) for _ in range(count)]


# ---------------------------------------------------------------- ensembles
def lifted_norms(problem: DelayProblem, states: np.ndarray) -> np.ndarray:
    """|[X(t_i), X_{t_i}]|_{E_p} for every member and node: (B, N + 1)."""
    m, p = problem.m_history, problem.p
    hist = norm_values(problem.grid, problem.space, problem.f0[:-1])
    node = norm_values(problem.grid, problem.space, states)
    ext = np.concatenate([np.broadcast_to(hist, node.shape[:-1] + hist.shape), node], axis=-1)
    w = trapezoid_weights(m + 1, problem.dt)
    # windowed sum of w_j |X(t_i + theta_j)|^p
    powered = ext ** p
    seg = np.zeros_like(node)
    for j in range(m + 1):
        seg = seg + w[j] * powered[..., j:j + node.shape[-1]]
    return node + seg ** (1.0 / p)


def initial_norm(problem: DelayProblem) -> float:
    hist = norm_values(problem.grid, problem.space, problem.f0)
    seg = (trapezoid_weights(problem.m_history + 1, problem.dt) @ hist ** problem.p) ** (1.0 / problem.p)
    return float(norm_values(problem.grid, problem.space, problem.x0) + seg)


def with_initial(problem: DelayProblem, x0: np.ndarray) -> DelayProblem:
    """Same problem started from x0 with the constant history f0(theta) = x0."""
    return problem.with_(x0=x0, f0=np.broadcast_to(x0, problem.f0.shape).copy())


def moment_constant(problem: DelayProblem, scales, n_paths: int, seed: int, threads: int = 1) -> dict:
    """Fit L in sup_s E|Y(s; y)|^q <= L (1 + |y|^q) over initial data scale * x0."""
    q = problem.q
    ratios = []
    for c in scales:
        pr = with_initial(problem, c * problem.x0)
        norms = run_ensemble(pr, n_paths, seed, threads=threads, reduce=lambda s: lifted_norms(pr, s))
        lhs = float(np.max(np.mean(norms ** q, axis=0)))
        ratios.append(lhs / (1.0 + initial_norm(pr) ** q))
    return {"scales": list(scales), "ratios": ratios, "L": float(max(ratios))}


def random_initial_pairs(problem: DelayProblem, seed: int, count: int = 10) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pairs of smooth random initial states (vanishing at 0 on C_0)."""
    g = stream(seed, 4, STREAM_AUX)
    if problem.grid is None:
        return [(g.standard_normal(problem.n), g.standard_normal(problem.n)) for _ in range(count)]
    u = problem.grid.nodes / problem.grid.length
    out = []
    for _ in range(count):
        pair = []
        for _ in range(2):
            c = g.standard_normal(3)
            v = sum(ck * np.sin((k + 1) * np.pi * u) for k, ck in enumerate(c)) * u
            pair.append(v)
        out.append(tuple(pair))
    return out


def lipschitz_theory(problem: DelayProblem) -> float:
    """e^{2 q L T}: Gronwall bound for |Y(s;x) - Y(s;y)|^q / |x - y|^q with
    constant histories and |S(t)| <= 1."""
    return float(np.exp(2.0 * problem.q * lipschitz_constant(problem) * problem.horizon))


def lipschitz_pairs(problem: DelayProblem, pairs, n_paths: int, seed: int) -> dict:
    """sup_s E|Y(s;x) - Y(s;y)|^q / |x - y|^q for each pair on shared noise."""
    q = problem.q
    inc = sample_ensemble(n_paths, problem.n_steps, problem.dt, problem.noise_dim, seed)
    ratios = []
    for x, y in pairs:
        px, py = with_initial(problem, x), with_initial(problem, y)
        diff = march_solve(px, inc) - march_solve(py, inc)
        dprob = px.with_(f0=px.f0 - py.f0)
        num = float(np.max(np.mean(lifted_norms(dprob, diff) ** q, axis=0)))
        den = initial_norm(dprob) ** q
        ratios.append(num / den)
    return {"ratios": ratios, "L": float(max(ratios)), "theory": lipschitz_theory(problem)}


def path_modulus(make_problem, dts: list[float], n_paths: int, seed: int, q: float = 4.0) -> dict:
    """(E max_i |X(t_{i+1}) - X(t_i)|^q)^{1/q} per level on bridge-refined noise."""
    from .noise import sample_path

    coarse = make_problem(dts[0])
    finest = [bridge_hierarchy(sample_path(coarse.n_steps, dts[0], coarse.noise_dim, seed, k), len(dts))[-1]
              for k in range(n_paths)]
    fine_inc = np.stack([p.increments for p in finest])
    out = []
    for lev, dt in enumerate(dts):
        pr = make_problem(dt)
        inc = coarsen(fine_inc, 2 ** (len(dts) - 1 - lev))
        X = march_solve(pr, inc)
        mod = np.max(norm_values(pr.grid, pr.space, np.diff(X, axis=1)), axis=1)
        out.append(float(np.mean(mod ** q) ** (1.0 / q)))
    slope = float(np.polyfit(np.log(dts), np.log(out), 1)[0])
    return {"dt": list(dts), "modulus": out, "exponent": slope}


def weighted_gamma_refinement(make_sg, psi_fn, alpha: float, t: float, depth: int = 6, n_mc: int = 1000,
                              seed: int = 0, s_grid=None) -> dict:
    """weighted_gamma_sup on a grid and on its doubling; ``make_sg(level)`` builds the semigroup."""
    vals = []
    for level in (0, 1):
        sg = make_sg(level)
        psi = psi_fn(sg.grid.nodes)[None, :]
        vals.append(weighted_gamma_sup(sg, psi, alpha, t, depth=depth, n_mc=n_mc, seed=seed, s_grid=s_grid))
    change = abs(vals[1]["sup"] - vals[0]["sup"]) / vals[0]["sup"] if vals[0]["sup"] > 0 else 0.0
    return {"coarse": vals[0], "fine": vals[1], "relative_change": float(change)}


__all__ = [
    "initial_norm", "lifted_norms", "lipschitz_pairs", "lipschitz_theory", "mckendrick_gamma_bound",
    "mckendrick_test_functions", "moment_constant", "path_modulus", "random_initial_pairs", "random_times",
    "semigroup_law_defect", "transport_test_functions", "weighted_gamma_refinement", "with_initial",
]
