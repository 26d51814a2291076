import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochdelay.noise import (
    bridge_hierarchy, coarsen, sample_ensemble, sample_increments, sample_path, stochastic_convolution,
    stochastic_convolution_path,
)
from stochdelay.semigroups import FiniteDimSemigroup, TransportSemigroup
from stochdelay.spaces import SpatialGrid


def test_same_seed_same_increments():
    a = sample_increments(64, 1 / 64, 2, seed=11, member=3)
    b = sample_increments(64, 1 / 64, 2, seed=11, member=3)
    c = sample_increments(64, 1 / 64, 2, seed=11, member=4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_ensemble_members_do_not_depend_on_batching():
    full = sample_ensemble(10, 32, 1 / 32, 1, seed=5)
    tail = sample_ensemble(4, 32, 1 / 32, 1, seed=5, first_member=6)
    assert np.array_equal(full[6:], tail)


def test_increment_means_and_brownian_variance():
    dt, n = 1 / 64, 10 ** 4
    inc = sample_ensemble(n, 64, dt, 1, seed=0)[..., 0]
    assert np.all(np.abs(inc.mean(axis=0)) <= 4 * np.sqrt(dt / n))
    W = inc.sum(axis=1)
    # var of the sample variance of N(0, 1) draws is 2 / n
    assert W.var(ddof=1) == pytest.approx(1.0, abs=5 * np.sqrt(2 / n))


def test_bridge_refinement_preserves_coarse_increments():
    path = sample_path(16, 1 / 16, 2, seed=1)
    levels = bridge_hierarchy(path, 4)
    for k, lev in enumerate(levels):
        assert lev.n_steps == 16 * 2 ** k
        assert np.allclose(coarsen(lev.increments, 2 ** k), path.increments, atol=1e-14)


def test_bridge_midpoints_have_bridge_variance():
    dt = 1 / 16
    mids = []
    for member in range(4000):
        fine = bridge_hierarchy(sample_path(16, dt, 1, seed=2, member=member), 2)[1].increments[:, 0]
        mids.append(fine[0::2] - fine[1::2])
    # fine_a - fine_b = 2 z with var(z) = dt / 4, so the difference has variance dt
    assert np.var(np.concatenate(mids)) == pytest.approx(dt, rel=0.05)


def test_zero_psi_gives_zero_convolution():
    sg = TransportSemigroup(SpatialGrid.unit_interval(33), 0.5)
    path = sample_path(32, 1 / 32, 1, seed=0)
    assert np.all(stochastic_convolution(sg, np.zeros((1, 33)), path, 1.0) == 0.0)


def test_identity_semigroup_gives_psi_times_w():
    sg = FiniteDimSemigroup(np.zeros((2, 2)))
    psi = np.array([[0.5, -1.0]])
    path = sample_path(64, 1 / 64, 1, seed=3)
    out = stochastic_convolution(sg, psi, path, 0.5)
    assert np.allclose(out, psi[0] * path.W()[32, 0], atol=1e-13)


def test_transport_convolution_matches_rederived_explicit_form():
    # X(t, xi) = sum over s_j in ((t - xi) v 0, t) of e^{-mu (t - s_j)} psi(xi - (t - s_j)) dW_j
    n, dt, mu = 65, 1 / 64, 0.5
    sg = TransportSemigroup(SpatialGrid.unit_interval(n), mu)
    xi = sg.grid.nodes
    psi_fn = lambda u: np.where(u >= 0, 0.5 * np.sin(np.pi * u) ** 2, 0.0)
    psi = psi_fn(xi)[None]
    inc = sample_increments(96, dt, 1, seed=4)
    conv = stochastic_convolution_path(sg, psi, inc, dt)
    for i in (10, 64, 96):
        t = i * dt
        s = dt * np.arange(i)
        live = (s[:, None] > t - xi[None, :] - 1e-12)
        expl = (live * np.exp(-mu * (t - s))[:, None] * psi_fn(xi[None, :] - (t - s)[:, None]) * inc[:i]).sum(axis=0)
        assert np.allclose(conv[i], expl, atol=1e-13)


def test_ito_sum_has_uncorrelated_window_increments():
    sg = FiniteDimSemigroup(np.zeros((1, 1)))
    n_mc = 4000
    inc = sample_ensemble(n_mc, 64, 1 / 64, 1, seed=9)
    Z = stochastic_convolution_path(sg, np.ones((1, 1)), inc, 1 / 64)[..., 0]
    a = Z[:, 32] - Z[:, 0]
    b = Z[:, 64] - Z[:, 32]
    assert abs(np.corrcoef(a, b)[0, 1]) < 4 / np.sqrt(n_mc)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 40), st.integers(0, 1000), st.integers(1, 3))
def test_coarsening_sums_increments(seed, member, d):
    inc = sample_increments(32, 1 / 32, d, seed, member)
    assert np.allclose(coarsen(inc, 4).sum(axis=0), inc.sum(axis=0))
