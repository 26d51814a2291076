import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochdelay.config import default_config
from stochdelay.problem import LipschitzMap, drift_on_trajectory, drift_phi, lipschitz_constant
from stochdelay.scenarios import FiniteDimParams, build_problem
from stochdelay.spaces import lifted_norm_values


def _fd(**kw):
    return build_problem("finite_dim", FiniteDimParams(x0=[0.5, -1.0], matrix=[[-1, 0], [0, -1]],
                                                        psi=[[1, 0]], **kw), 0.125, 1.0)


def test_zero_drift():
    pr = _fd()
    x = np.array([1.0, 2.0])
    seg = np.ones((9, 2))
    assert np.all(drift_phi(pr, x, seg) == 0.0)


def test_identity_head_drift():
    pr = _fd().with_(f1=LipschitzMap(lambda y: y, 1.0, "y"))
    x = np.array([1.5, -2.0])
    assert np.allclose(drift_phi(pr, x, np.zeros((9, 2))), x)


def test_unit_kernel_on_constant_segment():
    pr = _fd(varphi="1 + 0*theta")
    seg = np.full((9, 2), 0.7)
    assert np.allclose(drift_phi(pr, np.zeros(2), seg), 0.7)


def test_lipschitz_constant_examples():
    assert lipschitz_constant(_fd()) == 0.0
    pr = _fd().with_(f1=LipschitzMap(np.sin, 1.0, "sin"), p=1.0)
    assert lipschitz_constant(pr) == pytest.approx(2.0)


def test_drift_on_trajectory_matches_pointwise_drift():
    pr = default_config("transport", dt=2 ** -4).problem()
    rng = np.random.default_rng(0)
    states = rng.standard_normal((pr.n_steps + 1, pr.n))
    states[:, 0] = 0.0
    states[0] = pr.x0
    full = drift_on_trajectory(pr, states)
    ext = np.concatenate([pr.f0[:-1], states])
    m = pr.m_history
    for i in (0, 5, pr.n_steps):
        assert np.allclose(full[i], drift_phi(pr, states[i], ext[i:i + m + 1]), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32))
def test_transport_drift_respects_its_lipschitz_constant(seed):
    pr = default_config("transport", dt=2 ** -4).problem()
    L = lipschitz_constant(pr)
    rng = np.random.default_rng(seed)
    shape_x, shape_s = (pr.n,), (pr.m_history + 1, pr.n)
    x, y = rng.standard_normal(shape_x) * 3, rng.standard_normal(shape_x) * 3
    fx, fy = rng.standard_normal(shape_s) * 3, rng.standard_normal(shape_s) * 3
    lhs = np.max(np.abs(drift_phi(pr, x, fx) - drift_phi(pr, y, fy)))
    rhs = L * lifted_norm_values(pr.grid, pr.space, x - y, fx - fy, pr.p)
    assert lhs <= rhs * (1 + 1e-9)
