import numpy as np
from scipy.stats import ks_2samp

from stochdelay.config import default_config
from stochdelay.properties import (
    initial_norm, lifted_norms, lipschitz_pairs, moment_constant, random_initial_pairs, with_initial,
)
from stochdelay.solver import run_ensemble


def _problem():
    return default_config("transport", dt=2 ** -4).problem()


def test_law_does_not_depend_on_the_driver():
    pr = _problem()
    j = pr.n // 2
    a, b = (run_ensemble(pr, 1500, seed, keep=[pr.n_steps])[:, 0, j] for seed in (11, 12))
    assert ks_2samp(a, b).pvalue > 1e-3


def test_lifted_norm_at_time_zero_is_the_initial_norm():
    pr = with_initial(_problem(), _problem().x0)
    states = np.broadcast_to(pr.x0, (1, pr.n_steps + 1, pr.n))
    assert lifted_norms(pr, states)[0, 0] == np.float64(initial_norm(pr))


def test_moment_constant_is_finite_and_positive():
    res = moment_constant(_problem(), [0.0, 1.0], 200, seed=0)
    assert np.isfinite(res["L"]) and res["L"] > 0


def test_lipschitz_ratios_are_below_the_gronwall_bound():
    pr = _problem()
    pairs = random_initial_pairs(pr, 0, 2)
    res = lipschitz_pairs(pr, pairs, 50, seed=0)
    assert all(0 < r <= res["theory"] for r in res["ratios"])
