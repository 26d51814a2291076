import numpy as np
import pytest

from stochdelay.config import default_config
from stochdelay.harness import flipped_drift, noise_only
from stochdelay.noise import bridge_hierarchy, sample_path
from stochdelay.problem import LipschitzMap
from stochdelay.scenarios import FiniteDimParams, build_problem
from stochdelay.solver import PicardConfig, free_evolution, picard_solve
from stochdelay.verify import (
    VerificationError, covariance_oracle_check, covariance_quadrature, equivalence_report, functional_suite,
    mild_residual, strong_residuals, weak_residuals,
)

OU = FiniteDimParams(matrix=[[-1.0]], psi=[[0.7]], x0=[1.0], linear_drift=[[0.5]])


def _zero(dt=1 / 16):
    return build_problem("finite_dim", FiniteDimParams(matrix=[[-1, 0.2], [0, -0.5]], psi=[[0.0, 0.0]],
                                                        x0=[0.0, 0.0]), dt, 1.0)


def test_zero_problem_has_zero_residuals():
    pr = _zero()
    path = sample_path(pr.n_steps, pr.dt, 1, 0)
    X = np.zeros((pr.n_steps + 1, 2))
    fns = functional_suite(pr, 0)
    assert np.all(weak_residuals(pr, X, path, fns) == 0.0)
    assert mild_residual(pr, X, path, pr.n_steps) == 0.0
    assert np.all(strong_residuals(pr, X, path) == 0.0)


def test_zero_problem_report_is_all_zero_and_passes():
    rep = equivalence_report(_zero, [1 / 16, 1 / 32, 1 / 64], seed=0, n_paths=2)
    assert all(s[c] == 0.0 for s in rep.summary for c in ("weak", "mild", "strong"))
    assert rep.passed


def test_free_evolution_has_zero_mild_residual():
    pr = default_config("transport", dt=2 ** -5).problem()
    pr = noise_only(pr).with_(psi=0 * pr.psi)
    X = free_evolution(pr)
    path = sample_path(pr.n_steps, pr.dt, 1, 0)
    assert mild_residual(pr, X, path, pr.n_steps) < 1e-12


def test_perturbation_shows_up_in_the_mild_residual():
    pr = default_config("transport", dt=2 ** -5).problem()
    path = sample_path(pr.n_steps, pr.dt, 1, 0)
    X = picard_solve(pr, path, PicardConfig(tol=1e-12)).states[0].copy()
    delta = 0.05
    i = pr.n_steps // 2
    X[i, 10] += delta
    assert mild_residual(pr, X, path, i) >= delta * (1 - 4 * pr.dt)


def test_finite_dim_oracle_residuals_shrink_at_first_order():
    make = lambda dt: build_problem("finite_dim", OU, dt, 1.0)
    rep = equivalence_report(make, [1 / 16, 1 / 32, 1 / 64], seed=1, n_paths=4)
    assert rep.passed
    for col in ("weak", "strong", "mild"):
        assert min(rep.orders[col]) > 0.8


def test_weak_residual_of_exact_linear_solution_shrinks():
    path0 = sample_path(16, 1 / 16, 1, 3)
    errs = []
    for p in bridge_hierarchy(path0, 4):
        pr = build_problem("finite_dim", OU, p.dt, 1.0)
        t = p.dt * np.arange(p.n_steps + 1)
        w = np.exp(-0.5 * (t[:, None] - t[None, :-1])) * (t[None, :-1] < t[:, None] - 1e-12)
        X = (np.exp(-0.5 * t) + 0.7 * (w @ p.increments[:, 0]))[:, None]
        errs.append(np.max(np.abs(weak_residuals(pr, X, p, functional_suite(pr, 0)))))
    assert all(b < a for a, b in zip(errs[:-1], errs[1:]))


def test_fault_injection_fails_on_transport():
    cfg = default_config("transport")
    rep = equivalence_report(cfg.problem, [2 ** -5, 2 ** -6, 2 ** -7], seed=0, n_paths=2,
                             solve_problem=lambda dt: flipped_drift(cfg.problem(dt)))
    assert not rep.passed
    assert not all(rep.verdict["monotone"].values())


def test_report_rejects_non_halving_levels():
    with pytest.raises(VerificationError):
        equivalence_report(_zero, [1 / 16, 1 / 64])


def test_covariance_of_zero_noise_is_zero():
    pr = build_problem("finite_dim", FiniteDimParams(psi=[[0.0]]), 1 / 16, 1.0)
    res = covariance_oracle_check(pr, 1.0, 50, probes=[0])
    assert res["variance"] == [0.0] and res["oracle"] == [0.0] and res["pass"]


def test_finite_dim_covariance_diagonal():
    pr = build_problem("finite_dim", FiniteDimParams(matrix=(-np.eye(3)).tolist(), psi=[[1.0, 0.0, 0.0]],
                                                     x0=[0.0, 0.0, 0.0]), 2 ** -7, 1.0)
    q = covariance_quadrature(pr, 1.0, [0, 1, 2])
    assert q == pytest.approx([(1 - np.exp(-2)) / 2, 0.0, 0.0], abs=1e-10)
    res = covariance_oracle_check(pr, 1.0, 10000, seed=0, probes=[0, 1, 2])
    assert res["pass"]


def test_transport_covariance_quadrature_formula():
    pr = noise_only(default_config("transport", dt=2 ** -6).problem())
    mu = pr.meta["params"].mu
    xi = pr.grid.nodes[40]
    s = np.linspace(0, min(1.0, xi), 200001)
    f = np.exp(-2 * mu * s) * (0.5 * np.sin(np.pi * (xi - s)) ** 2) ** 2
    ref = float(np.sum((f[1:] + f[:-1]) / 2) * (s[1] - s[0]))
    assert covariance_quadrature(pr, 1.0, [40])[0] == pytest.approx(ref, rel=1e-8)


def test_covariance_requires_zero_drift():
    pr = default_config("transport", dt=2 ** -5).problem()
    with pytest.raises(VerificationError):
        covariance_oracle_check(pr, 1.0, 10)


def test_flipped_drift_changes_sign():
    pr = build_problem("finite_dim", OU, 1 / 16, 1.0).with_(f1=LipschitzMap(np.sin, 1.0, "sin"))
    from stochdelay.problem import drift_phi
    x = np.array([0.3])
    seg = np.zeros((17, 1))
    assert drift_phi(flipped_drift(pr), x, seg) == pytest.approx(-drift_phi(pr, x, seg))


def test_divergence_pair_rule():
    from stochdelay.verify import residual_verdict

    def table(weak):
        return [{"level": i, "weak": w, "mild": 1e-15, "strong": w / 10} for i, w in enumerate(weak)]

    _, ok = residual_verdict(table([4e-2, 2e-2, 1e-2]), 1e-10)
    assert ok["pass"] and not ok["divergence_levels"]
    _, bad = residual_verdict(table([4e-2, 3.9e-2, 3.8e-2]), 1e-10)
    assert not bad["pass"] and bad["divergence_levels"] == [0, 1, 2]
