import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from langevin_sysid.exceptions import ChainFailure, ConfigurationError
from langevin_sysid.samplers import (METHODS, ChainConfig, FunctionTarget, cyclical_step_size,
                                     mala_accept_prob, mala_step, resgld_step, run_chain,
                                     sgld_step, swap_rate, window_variance)

# Acceptance of the Langevin proposal y ~ N((1 - eta) x, 2 eta) under N(0, 1),
# integrated numerically with scipy dblquad over x, y in [-12, 12] x [-15, 15].
MALA_ACCEPT_ETA_HALF = 0.9208


def std_normal():
    return FunctionTarget(lambda x: 0.5 * float(x @ x), lambda x: x)


def test_sgld_zero_temperature_contracts():
    rng = np.random.default_rng(0)
    x = np.array([1.0, -2.0])
    for _ in range(5):
        y = sgld_step(x, 0.1, 0.0, x, rng)
        assert np.allclose(y, 0.9 * x, rtol=0, atol=1e-15)
        x = y


def test_sgld_errors():
    rng = np.random.default_rng(0)
    with pytest.raises(ChainFailure) as info:
        sgld_step(np.zeros(1), 0.1, 1.0, np.array([np.nan]), rng, iteration=17)
    assert info.value.iteration == 17
    with pytest.raises(ValueError):
        sgld_step(np.zeros(1), 0.0, 1.0, np.zeros(1), rng)


def _sgld_run(dim, steps, seed):
    rng = np.random.default_rng(seed)
    x = np.zeros(dim)
    total = np.zeros(dim)
    total_sq = np.zeros(dim)
    for _ in range(steps):
        x = sgld_step(x, 1e-3, 1.0, x, rng)
        total += x
        total_sq += x * x
    mean = total / steps
    return mean, total_sq / steps - mean ** 2


def test_sgld_standard_normal_single_chain():
    mean, var = _sgld_run(1, 200_000, seed=0)
    assert abs(mean[0]) < 0.05
    assert abs(var[0] - 1) < 0.1


def test_sgld_standard_normal_ensemble():
    # 200 independent copies make the moment check insensitive to the seed
    mean, var = _sgld_run(200, 200_000, seed=1)
    assert abs(mean.mean()) < 0.05
    assert abs(var.mean() - 1) < 0.1


def test_sgld_is_deterministic_under_seed():
    a = sgld_step(np.ones(3), 0.01, 1.0, np.ones(3), np.random.default_rng(5))
    b = sgld_step(np.ones(3), 0.01, 1.0, np.ones(3), np.random.default_rng(5))
    assert np.array_equal(a, b)


def test_mala_identity_proposal_accepts():
    t = std_normal()
    x = np.array([0.3, -1.2])
    assert mala_accept_prob(x, x.copy(), 0.2, t.energy_fn, t.grad_fn) == 1.0


def _mala_chain(target, x0, eta, steps, seed, metric=None):
    rng = np.random.default_rng(seed)
    x = np.asarray(x0, float)
    out = np.empty((steps, x.size))
    acc = 0
    for k in range(steps):
        x, ok = mala_step(x, eta, target.grad_fn, target.energy_fn, rng, metric=metric)
        acc += ok
        out[k] = x
    return out, acc / steps


def test_mala_standard_normal_matches_quadrature():
    draws, rate = _mala_chain(std_normal(), [0.0], 0.5, 100_000, seed=0)
    assert abs(rate - MALA_ACCEPT_ETA_HALF) < 0.01
    assert abs(draws.var() - 1) < 0.05


@pytest.mark.xfail(reason="under x - eta*g + sqrt(2 eta) z the eta=0.5 acceptance is 0.92; "
                   "see the decisions ledger", strict=False)
def test_mala_standard_normal_rate_in_stated_range():
    _, rate = _mala_chain(std_normal(), [0.0], 0.5, 100_000, seed=0)
    assert 0.4 <= rate <= 0.8


def test_mala_correlated_gaussian():
    cov = np.array([[1.0, 0.8], [0.8, 1.0]])
    prec = np.linalg.inv(cov)
    target = FunctionTarget(lambda x: 0.5 * float(x @ prec @ x), lambda x: prec @ x)
    draws, _ = _mala_chain(target, [0.0, 0.0], 0.1, 200_000, seed=1)
    emp = np.cov(draws.T)
    assert np.linalg.norm(emp - cov) / np.linalg.norm(cov) < 0.1


def test_cyclical_schedule_points():
    K, M, eta0 = 1000, 4, 0.3
    period = K // M
    assert cyclical_step_size(1, eta0, M, K) == eta0
    end = cyclical_step_size(period, eta0, M, K)
    assert end == pytest.approx(eta0 / 2 * (math.cos(math.pi * (period - 1) / period) + 1))
    assert end < 1e-4 * eta0
    assert cyclical_step_size(period + 1, eta0, M, K) == eta0
    with pytest.raises(ValueError):
        cyclical_step_size(1, eta0, 5, 4)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 40), st.integers(40, 5000), st.floats(1e-6, 10.0))
def test_cyclical_schedule_range(M, K, eta0):
    ks = range(1, K + 1, max(1, K // 97))
    vals = [cyclical_step_size(k, eta0, M, K) for k in ks]
    assert all(0 < v <= eta0 for v in vals)
    for c in range(M):
        assert cyclical_step_size(c * (K // M) + 1, eta0, M, K) == eta0


def test_swap_rate_hand_values():
    assert swap_rate(3.0, 3.0, 1.0, 10.0, 0.0) == 1.0
    assert swap_rate(10.0, 0.0, 1.0, 10.0, 0.0) == pytest.approx(math.exp(9.0))
    assert min(1.0, swap_rate(10.0, 0.0, 1.0, 10.0)) == 1.0
    corrected = swap_rate(3.0, 3.0, 1.0, 10.0, sigma2=50.0, C=1.0)
    assert corrected == pytest.approx(math.exp(-(0.9 ** 2) * 50.0))
    assert corrected < 1.0
    with pytest.raises(ChainFailure):
        swap_rate(np.nan, 0.0, 1.0, 10.0)


def test_window_variance():
    assert window_variance([2.0] * 50, 10) == 0.0
    assert window_variance([1.0], 10) == 0.0
    h = list(np.random.default_rng(0).normal(size=300))
    assert window_variance(h, 100) == pytest.approx(np.var(h[-100:], ddof=1))
    assert window_variance(h, 100) >= 0


def test_resgld_swap_exchanges_moved_states():
    t = std_normal()
    eg = lambda x: (t.energy_fn(x), t.grad_fn(x))  # noqa: E731
    x1, x2 = np.array([2.0]), np.array([0.0])
    for seed in range(50):
        step = resgld_step(x1, x2, 0.01, (1.0, 10.0), (t.grad_fn(x1), t.grad_fn(x2)), eg,
                           0.0, 1.0, np.random.default_rng(seed))
        rng = np.random.default_rng(seed)
        m1 = sgld_step(x1, 0.01, 1.0, t.grad_fn(x1), rng)
        m2 = sgld_step(x2, 0.01, 10.0, t.grad_fn(x2), rng)
        pair = {float(m1[0]), float(m2[0])}
        assert {float(step.state1[0]), float(step.state2[0])} == pair
        if step.swapped:
            assert float(step.state1[0]) == float(m2[0])
            return
    pytest.fail("no swap in 50 attempts")


def test_run_chain_draw_count_and_determinism():
    cfg = ChainConfig(method="sgld", step_size=0.1, iterations=1000, burn_in_fraction=0.5)
    a = run_chain(cfg, std_normal(), np.zeros(1))
    b = run_chain(cfg, std_normal(), np.zeros(1))
    assert len(a) == 500
    assert np.array_equal(a.draws, b.draws)
    thinned = run_chain(ChainConfig(method="sgld", step_size=0.1, iterations=1000, thin=4),
                        std_normal(), np.zeros(1))
    assert len(thinned) == 125


def test_run_chain_needs_post_burn_in_draws():
    with pytest.raises(ConfigurationError):
        ChainConfig(burn_in_fraction=1.0)
    with pytest.raises(ConfigurationError):
        ChainConfig(method="hmc")
    with pytest.raises(ConfigurationError):
        ChainConfig(temperatures=(10.0, 1.0))
    with pytest.raises(ConfigurationError):
        ChainConfig(method="cyclical", iterations=3, cycles=4)


def test_run_chain_failure_is_reported():
    bad = FunctionTarget(lambda x: 0.5 * float(x @ x),
                         lambda x: x if abs(x[0]) < 5 else np.array([np.nan]))
    with pytest.raises(ChainFailure):
        run_chain(ChainConfig(method="sgld", step_size=5.0, iterations=200), bad,
                  np.array([1.0]))


class ConjugateRegression:
    """Gaussian likelihood with known noise and a Gaussian prior."""

    def __init__(self, X, y, noise_var, prior_var):
        self.X, self.y, self.s2, self.p2 = X, y, noise_var, prior_var
        self.n_rows = len(y)

    def energy_grad(self, b, batch=None):
        if batch is None:
            X, y, scale = self.X, self.y, 1.0
        else:
            X, y, scale = self.X[batch], self.y[batch], self.n_rows / len(batch)
        r = y - X @ b
        e = scale * 0.5 * float(r @ r) / self.s2 + 0.5 * float(b @ b) / self.p2
        return e, -scale * X.T @ r / self.s2 + b / self.p2


@pytest.fixture(scope="module")
def conjugate():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(500, 3))
    y = X @ np.array([1.0, -2.0, 0.5]) + 0.5 * rng.normal(size=500)
    prec = X.T @ X / 0.25 + np.eye(3) / 10.0
    cov = np.linalg.inv(prec)
    mean = cov @ X.T @ y / 0.25
    return ConjugateRegression(X, y, 0.25, 10.0), mean, cov


# Unadjusted chains run at a tenth of the calibrated step and mix slower; the
# cyclical tail freezes each cycle, so it needs many short cycles.
CONJUGATE_RUNS = {
    "sgld": dict(iterations=100_000),
    "mala": dict(iterations=8000),
    "cyclical": dict(iterations=100_000, cycles=100),
    "resgld": dict(iterations=8000),
}


@pytest.mark.parametrize("method", METHODS)
def test_conjugate_posterior_recovery(conjugate, method):
    target, mean, cov = conjugate
    res = run_chain(ChainConfig(method=method, seed=2, **CONJUGATE_RUNS[method]), target,
                    np.zeros(3), metric=cov)
    assert np.all(np.abs(res.draws.mean(axis=0) / mean - 1) < 0.03)
    assert np.all(np.abs(res.draws.var(axis=0, ddof=1) / np.diag(cov) - 1) < 0.10)


class Mixture:
    """Equal-weight Gaussian mixture with unit-variance modes at -3 and 3."""

    n_rows = None

    def energy_grad(self, x, batch=None):
        a, b = -0.5 * (x[0] - 3) ** 2, -0.5 * (x[0] + 3) ** 2
        m = max(a, b)
        ea, eb = math.exp(a - m), math.exp(b - m)
        return -(m + math.log(ea + eb)), np.array([(ea * (x[0] - 3) + eb * (x[0] + 3))
                                                   / (ea + eb)])


def test_resgld_visits_both_mixture_modes():
    target = Mixture()
    single = 0
    for seed in range(10):
        sg = run_chain(ChainConfig(method="sgld", step_size=0.01, iterations=10_000, seed=seed),
                       target, np.array([-3.0]))
        frac = (sg.draws[:, 0] > 0).mean()
        single += frac < 0.2 or frac > 0.8
        re = run_chain(ChainConfig(method="resgld", step_size=0.01, iterations=10_000,
                                   seed=seed), target, np.array([-3.0]))
        occ = (re.draws[:, 0] > 0).mean()
        assert 0.2 <= occ <= 0.8
    assert single >= 5
