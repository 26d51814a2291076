import numpy as np
import pytest

from stochdelay.config import default_config
from stochdelay.noise import bridge_hierarchy, sample_ensemble, sample_path
from stochdelay.problem import LipschitzMap
from stochdelay.scenarios import FiniteDimParams, build_problem
from stochdelay.semigroups import left_translation_apply, s_curl_apply
from stochdelay.solver import (
    NonContractionError, PicardConfig, SolverError, free_evolution, march_solve, markov_lift_solve, mild_evaluate,
    picard_solve, run_ensemble,
)


@pytest.fixture(scope="module")
def transport():
    return default_config("transport", dt=2 ** -5, horizon=1.5).problem()


def test_no_forcing_gives_free_evolution(transport):
    pr = transport.with_(varphi=None, kernel_k=None, f1=LipschitzMap(), f2=LipschitzMap(), psi=0 * transport.psi)
    res = picard_solve(pr, sample_path(pr.n_steps, pr.dt, 1, 0))
    assert res.iterations == 1
    assert np.array_equal(res.states[0], free_evolution(pr))
    assert np.all(res.states[0, -1] == 0.0)  # nilpotent after t = 1


def test_zero_drift_needs_no_iteration(transport):
    pr = transport.with_(varphi=None, kernel_k=None, f1=LipschitzMap(), f2=LipschitzMap())
    assert picard_solve(pr, sample_path(pr.n_steps, pr.dt, 1, 0)).iterations == 1


def test_picard_and_march_reach_the_same_fixed_point(transport):
    inc = sample_ensemble(3, transport.n_steps, transport.dt, 1, seed=1)
    p = picard_solve(transport, inc, PicardConfig(tol=1e-12)).states
    m = march_solve(transport, inc)
    assert np.max(np.abs(p - m)) < 1e-10


def test_march_keep_selects_nodes(transport):
    inc = sample_ensemble(2, transport.n_steps, transport.dt, 1, seed=1)
    full = march_solve(transport, inc)
    some = march_solve(transport, inc, keep=[0, 7, transport.n_steps])
    assert np.array_equal(some, full[:, [0, 7, transport.n_steps]])


def test_scalar_ou_with_drift_oracle():
    # error / dt was measured at 0.376, 0.377, 0.396 on three bridge levels
    a, c, s, x0 = -1.0, 0.5, 0.7, 1.0
    lam = a + c
    for path in bridge_hierarchy(sample_path(64, 1 / 64, 1, 0), 3):
        pr = build_problem("finite_dim", FiniteDimParams(matrix=[[a]], psi=[[s]], x0=[x0], linear_drift=[[c]]),
                           path.dt, 1.0)
        X = picard_solve(pr, path).states[0, :, 0]
        t = path.dt * np.arange(path.n_steps + 1)
        w = np.exp(lam * (t[:, None] - t[None, :-1])) * (t[None, :-1] < t[:, None] - 1e-12)
        exact = np.exp(lam * t) * x0 + s * (w @ path.increments[:, 0])
        assert np.max(np.abs(X - exact)) <= 0.6 * path.dt


def test_solution_is_a_fixed_point_of_the_mild_map(transport):
    path = sample_path(transport.n_steps, transport.dt, 1, 2)
    X = picard_solve(transport, path, PicardConfig(tol=1e-12)).states[0]
    assert np.allclose(mild_evaluate(transport, X, path, 0), transport.x0)
    for i in (5, 20, transport.n_steps):
        assert np.max(np.abs(mild_evaluate(transport, X, path, i) - X[i])) < 1e-9


def test_non_contraction_is_detected():
    pr = build_problem("finite_dim", FiniteDimParams(linear_drift=[[40.0]]), 1 / 32, 1.0)
    with pytest.raises(NonContractionError):
        picard_solve(pr, sample_path(32, 1 / 32, 1, 0), PicardConfig(beta=0.0))


def test_iteration_budget_is_enforced(transport):
    with pytest.raises(SolverError):
        picard_solve(transport, sample_path(transport.n_steps, transport.dt, 1, 0), PicardConfig(max_iter=2))


def test_lift_initial_state_and_free_blocks(transport):
    pr = transport.with_(varphi=None, kernel_k=None, f1=LipschitzMap(), f2=LipschitzMap(), psi=0 * transport.psi)
    res = markov_lift_solve(pr, sample_path(pr.n_steps, pr.dt, 1, 0))
    assert np.array_equal(res.states[0, 0], pr.x0)
    assert np.array_equal(res.tails[0, 0], pr.f0)
    sg, m = pr.semigroup, pr.m_history
    for i in (3, 16, 40):
        t = i * pr.dt
        assert np.allclose(res.states[0, i], sg.apply(t, pr.x0), atol=1e-12)
        expected = s_curl_apply(sg, t, pr.x0, m) + left_translation_apply(t, pr.f0)
        assert np.allclose(res.tails[0, i], expected, atol=1e-12)


def test_lift_head_approaches_direct_solution():
    make = lambda dt: default_config("transport", dt=dt).problem()
    path = sample_path(32, 1 / 32, 1, 0)
    gaps = []
    for lev, p in enumerate(bridge_hierarchy(path, 3)):
        pr = make(p.dt)
        gaps.append(np.max(np.abs(markov_lift_solve(pr, p).states[0] - picard_solve(pr, p).states[0])))
    assert gaps[0] > gaps[1] > gaps[2]


def test_ensemble_is_independent_of_threads_and_chunking(transport):
    a = run_ensemble(transport, 70, seed=4, threads=1, chunk=32, keep=[transport.n_steps])
    b = run_ensemble(transport, 70, seed=4, threads=3, chunk=32, keep=[transport.n_steps])
    assert np.array_equal(a, b)
    inc = sample_ensemble(70, transport.n_steps, transport.dt, 1, seed=4)
    assert np.array_equal(a, march_solve(transport, inc, keep=[transport.n_steps]))


def test_noise_shape_is_checked(transport):
    with pytest.raises(SolverError):
        picard_solve(transport, sample_path(transport.n_steps - 1, transport.dt, 1, 0))
