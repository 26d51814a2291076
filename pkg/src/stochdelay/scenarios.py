"""Named scenarios: parameter dataclasses and their DelayProblem builders.

Functions of space or delay time are given as numpy expressions in the
variables ``xi`` (unit interval), ``a`` (age), ``theta`` (delay time) and
``y`` (the argument of f1, f2).  Expressions are evaluated in a namespace
restricted to numpy ufuncs and constants.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .problem import DelayProblem, LipschitzMap, zero_map
from .semigroups import FiniteDimSemigroup, McKendrickSemigroup, TransportSemigroup
from .spaces import SpatialGrid, trapezoid_weights


class ExpressionError(ValueError):
    pass


_NAMESPACE = {
    name: getattr(np, name)
    for name in (
        "sin", "cos", "tan", "exp", "log", "sqrt", "abs", "tanh", "sinh", "cosh", "arctan",
        "where", "minimum", "maximum", "clip", "heaviside", "ones_like", "zeros_like", "sign",
    )
}
_NAMESPACE.update(pi=np.pi, e=np.e)


@lru_cache(maxsize=256)
def _compile(expr: str):
    try:
        return compile(expr, "<expr>", "eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse expression {expr!r}: {exc.msg}") from None


def evaluate(expr, **variables) -> np.ndarray:
    """Evaluate a numpy expression (or pass a number through) on the given arrays."""
    if expr is None:
        return None
    shape = np.broadcast_shapes(*(np.shape(v) for v in variables.values())) if variables else ()
    if isinstance(expr, (int, float)):
        return np.full(shape, float(expr))
    code = _compile(str(expr))
    for name in code.co_names:
        if name not in _NAMESPACE and name not in variables:
            raise ExpressionError(f"expression {expr!r} uses unknown name {name!r}")
    ns = dict(_NAMESPACE)
    ns.update(variables)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        value = np.asarray(eval(code, {"__builtins__": {}}, ns), dtype=float)
    if value.shape == shape:
        return value
    return np.broadcast_to(value, shape).copy()


def scalar_map(spec: dict | None) -> LipschitzMap:
    """{expr, lipschitz} -> LipschitzMap; None or a zero expression gives the zero map."""
    if not spec or spec.get("expr") in (None, 0, "0"):
        return LipschitzMap()
    expr = spec["expr"]
    return LipschitzMap(lambda y, _e=expr: evaluate(_e, y=np.asarray(y, dtype=float)),
                        float(spec.get("lipschitz", np.nan)), str(expr))


def audit_lipschitz(fmap: LipschitzMap, lo: float = -10.0, hi: float = 10.0, n: int = 20001) -> float:
    """Largest difference quotient of a scalar map on a dense grid of [lo, hi]."""
    if fmap.is_zero:
        return 0.0
    y = np.linspace(lo, hi, n)
    v = fmap(y)
    return float(np.max(np.abs(np.diff(v)) / np.diff(y)))


# ---------------------------------------------------------------- transport
@dataclass
class TransportParams:
    """Transport on C_0([0,1]) with delay drift; dxi defaults to dt."""

    mu: float = 0.5
    n_points: int | None = None
    x0: str = "sin(pi*xi)**2 * xi"
    history: str = "0*xi"
    psi: str = "0.5*sin(pi*xi)**2"
    varphi: str | None = "0.5*cos(pi*theta)*(1 + xi)"
    k: str | None = "0.3*exp(theta)"
    f1: dict | None = field(default_factory=lambda: {"expr": "0.5*sin(y)", "lipschitz": 0.5})
    f2: dict | None = field(default_factory=lambda: {"expr": "0.5*tanh(y)", "lipschitz": 0.5})


@dataclass
class McKendrickParams:
    """Age-structured population on [0, truncation_length] with additive noise sigma.

    n_cells defaults to truncation_length / dt so every time step shifts
    ages by a whole cell (no interpolation diffusion).
    """

    mu: str = "0.1 + 0.01*exp(a)"
    b: str = "1.2*a**2*exp(-a)"
    w: float = 1.0
    truncation_length: float = 10.0
    n_cells: int | None = None
    support: float = 1.0
    sigma: str = "sin(pi*a)**2"
    x0: str = "exp(-a)"
    history: str | None = None
    varphi: str | None = None
    k: str | None = None
    f1: dict | None = None
    f2: dict | None = None
    escape_tol: float = 1e-3


@dataclass
class FiniteDimParams:
    """dX = (M X + C X + delay terms) dt + psi dW on R^n."""

    matrix: list = field(default_factory=lambda: [[-1.0]])
    psi: list = field(default_factory=lambda: [[1.0]])
    x0: list = field(default_factory=lambda: [1.0])
    history: list | None = None
    linear_drift: list | None = None
    varphi: str | None = None
    k: str | None = None
    f1: dict | None = None
    f2: dict | None = None


def _history_kernels(params, m: int, nodes: np.ndarray, var: str):
    theta = np.linspace(-1.0, 0.0, m + 1)[:, None]
    kw = {"theta": theta, var: nodes[None, :]}
    return evaluate(params.varphi, **kw), evaluate(params.k, **kw)


def build_transport(params: TransportParams, dt: float, horizon: float, p: float = 2.0,
                    q: float = 2.0) -> DelayProblem:
    m = int(round(1.0 / dt))
    n_points = params.n_points or m + 1
    grid = SpatialGrid.unit_interval(n_points)
    xi = grid.nodes
    x0 = evaluate(params.x0, xi=xi)
    if x0[0] != 0.0:
        raise ExpressionError("x0 must vanish at xi = 0 (state space C_0)")
    theta = np.linspace(-1.0, 0.0, m + 1)[:, None]
    f0 = evaluate(params.history, theta=theta, xi=xi[None, :])
    f0[:, 0] = 0.0
    psi = evaluate(params.psi, xi=xi)[None, :]
    psi[:, 0] = 0.0
    varphi, k = _history_kernels(params, m, xi, "xi")
    f1, f2 = scalar_map(params.f1), scalar_map(params.f2)
    for name, fm in (("f1", f1), ("f2", f2)):
        if not fm.is_zero and fm(np.zeros(1))[0] != 0.0:
            raise ExpressionError(f"{name}(0) must be 0 so the drift maps C_0 into C_0")
    return DelayProblem("transport", TransportSemigroup(grid, params.mu), dt, horizon, x0, f0, psi,
                        varphi, k, f1, f2, None, p, q, meta={"params": params})


def mckendrick_cells(params: McKendrickParams, dt: float) -> int:
    return params.n_cells or int(round(params.truncation_length / dt))


def build_mckendrick(params: McKendrickParams, dt: float, horizon: float, p: float = 2.0,
                     q: float = 2.0) -> DelayProblem:
    grid = SpatialGrid.half_line(mckendrick_cells(params, dt), params.truncation_length)
    a = grid.nodes
    sg = McKendrickSemigroup(grid, evaluate(params.mu, a=a), evaluate(params.b, a=a), params.w)
    m = int(round(1.0 / dt))
    x0 = evaluate(params.x0, a=a)
    if params.history is None:
        f0 = np.broadcast_to(x0, (m + 1, grid.n_points)).copy()
    else:
        f0 = evaluate(params.history, theta=np.linspace(-1.0, 0.0, m + 1)[:, None], a=a[None, :])
    sigma = np.where(a <= params.support + 1e-12, evaluate(params.sigma, a=a), 0.0)
    varphi, k = _history_kernels(params, m, a, "a")
    return DelayProblem("mckendrick", sg, dt, horizon, x0, f0, sigma[None, :], varphi, k,
                        scalar_map(params.f1), scalar_map(params.f2), None, p, q,
                        sigma_support=params.support, meta={"params": params})


class TruncationError(ValueError):
    pass


def check_truncation(problem: DelayProblem, tol: float) -> float:
    """Fraction of the constant-1 profile's mass that leaves through a = L over the horizon."""
    sg = problem.semigroup
    ones = np.ones(sg.n)
    frac = sg.truncation_escape(ones, problem.horizon, problem.dt) / float(sg.grid.weights @ ones)
    if frac > tol:
        raise TruncationError(
            f"half-line truncation at L={sg.grid.length:g} loses {frac:.3g} of the constant profile's "
            f"mass over the horizon (tolerance {tol:g}); increase truncation_length"
        )
    return frac


def build_finite_dim(params: FiniteDimParams, dt: float, horizon: float, p: float = 2.0,
                     q: float = 2.0) -> DelayProblem:
    M = np.atleast_2d(np.asarray(params.matrix, dtype=float))
    n = M.shape[0]
    x0 = np.asarray(params.x0, dtype=float).reshape(n)
    m = int(round(1.0 / dt))
    hist = x0 if params.history is None else np.asarray(params.history, dtype=float).reshape(n)
    f0 = np.broadcast_to(hist, (m + 1, n)).copy()
    theta = np.linspace(-1.0, 0.0, m + 1)[:, None]
    varphi = None if params.varphi is None else np.broadcast_to(evaluate(params.varphi, theta=theta), (m + 1, n)).copy()
    k = None if params.k is None else np.broadcast_to(evaluate(params.k, theta=theta), (m + 1, n)).copy()
    C = None if params.linear_drift is None else np.atleast_2d(np.asarray(params.linear_drift, dtype=float))
    psi = np.atleast_2d(np.asarray(params.psi, dtype=float))
    return DelayProblem("finite_dim", FiniteDimSemigroup(M), dt, horizon, x0, f0, psi, varphi, k,
                        scalar_map(params.f1), scalar_map(params.f2), C, p, q, meta={"params": params})


BUILDERS = {
    "transport": (TransportParams, build_transport),
    "mckendrick": (McKendrickParams, build_mckendrick),
    "finite_dim": (FiniteDimParams, build_finite_dim),
}


def build_problem(scenario: str, params, dt: float, horizon: float, p: float = 2.0, q: float = 2.0) -> DelayProblem:
    try:
        _, builder = BUILDERS[scenario]
    except KeyError:
        raise ExpressionError(f"unknown scenario {scenario!r}; valid: {', '.join(sorted(BUILDERS))}") from None
    return builder(params, dt, horizon, p, q)


def sigma_l2_norms(problem: DelayProblem, t: float) -> tuple[float, float]:
    """|sigma|_{L^2(0,d)} and |sigma_2|_{L^2(0,t)}, sigma_2 the renewal extension of sigma."""
    sg = problem.semigroup
    sigma = np.atleast_2d(problem.psi)[0]
    h = sg.grid.step
    sig_l2 = float(np.sqrt(sg.grid.weights @ sigma ** 2))
    ext = sg.extension(sigma, t)
    k = int(round(t / h))
    sig2_l2 = float(np.sqrt(trapezoid_weights(k + 1, h) @ ext[: k + 1] ** 2))
    return sig_l2, sig2_l2


__all__ = [
    "BUILDERS", "ExpressionError", "TruncationError", "check_truncation", "FiniteDimParams", "McKendrickParams", "TransportParams",
    "audit_lipschitz", "build_problem", "evaluate", "scalar_map", "sigma_l2_norms", "zero_map",
]
