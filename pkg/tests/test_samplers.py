import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from noisyio import InvalidInit, InvalidInput, SamplerStuck
from noisyio.samplers import (AdaptState, HmcConfig, adapt_step_size, effective_sample_size, hmc_sample, leapfrog,
                              map_estimate, negate, run_chains)


def gaussian(mu, sigma):
    mu, sigma = np.asarray(mu, float), np.asarray(sigma, float)

    def lp(q):
        r = (q - mu) / sigma
        return float(-0.5 * r @ r), -r / sigma

    return lp


def double_well(q):
    x = q[0]
    return float(-((x * x - 1) ** 2)), np.array([-4 * x * (x * x - 1)])


# -- configuration ---------------------------------------------------------

def test_defaults():
    cfg = HmcConfig()
    assert (cfg.n_leapfrog, cfg.n_samples, cfg.accept_band) == (50, 1000, (0.5, 0.7))


@pytest.mark.parametrize("kw", [dict(n_leapfrog=0), dict(n_samples=0), dict(accept_band=(0.7, 0.5)),
                                dict(accept_band=(0.0, 0.5)), dict(step_size=0.0), dict(mass=[1.0, -1.0])])
def test_invalid_config(kw):
    with pytest.raises(InvalidInput):
        HmcConfig(**kw)


# -- sampling --------------------------------------------------------------

def test_one_dimensional_gaussian_moments():
    r = hmc_sample(gaussian([2.0], [0.5]), np.zeros(1), HmcConfig(seed=0))
    assert r.samples.shape == (1000, 1)
    assert abs(r.samples.mean() - 2.0) <= 0.05
    assert abs(r.samples.std() - 0.5) <= 0.05


def test_vanishing_step_accepts_everything_and_stays_put():
    init = np.array([0.3, -0.2, 1.0])
    cfg = HmcConfig(step_size=1e-12, adapt=False, step_jitter=0.0, n_burnin=10, n_samples=50, seed=1)
    r = hmc_sample(gaussian(np.zeros(3), np.ones(3)), init, cfg)
    assert r.accepted.all()
    assert np.max(np.linalg.norm(r.samples - init, axis=1)) < 1e-6


def test_no_burn_in_rows_are_kept():
    cfg = HmcConfig(n_burnin=30, n_samples=20, n_leapfrog=5)
    r = hmc_sample(gaussian([0.0], [1.0]), np.zeros(1), cfg)
    assert len(r) == 20 and r.burnin_accept_prob.shape == (30,)


def test_invalid_init():
    with pytest.raises(InvalidInit):
        hmc_sample(lambda q: (np.nan, np.zeros(1)), np.zeros(1), HmcConfig(n_samples=2, n_burnin=2))


def test_stuck_sampler():
    init = np.array([0.5])

    def lp(q):
        if np.array_equal(q, init):
            return 0.0, np.zeros(1)
        return -np.inf, np.full(1, np.nan)

    with pytest.raises(SamplerStuck):
        hmc_sample(lp, init, HmcConfig(n_burnin=20, n_samples=5, n_leapfrog=3))


def test_divergent_proposals_are_rejected_without_nan():
    # a huge step on a stiff Gaussian gives enormous energy errors
    cfg = HmcConfig(step_size=50.0, adapt=False, n_burnin=0, n_samples=30, n_leapfrog=5)
    r = hmc_sample(gaussian([0.0], [0.01]), np.array([0.001]), cfg)
    assert r.n_divergent > 0
    assert np.all(np.isfinite(r.samples))


def test_seed_determinism():
    cfg = HmcConfig(n_burnin=50, n_samples=50, n_leapfrog=10, seed=7)
    a = hmc_sample(double_well, np.array([1.0]), cfg)
    b = hmc_sample(double_well, np.array([1.0]), cfg)
    assert np.array_equal(a.samples, b.samples)
    assert a.step_size == b.step_size


def test_chains_use_offset_seeds():
    cfg = HmcConfig(n_burnin=20, n_samples=20, n_leapfrog=5, seed=3)
    chains = run_chains(gaussian([0.0], [1.0]), np.zeros(1), cfg, 2)
    solo = hmc_sample(gaussian([0.0], [1.0]), np.zeros(1), HmcConfig(n_burnin=20, n_samples=20, n_leapfrog=5, seed=4))
    assert np.array_equal(chains[1].samples, solo.samples)
    assert not np.array_equal(chains[0].samples, chains[1].samples)


def test_frozen_chain_matches_double_well_density():
    warm = hmc_sample(double_well, np.array([1.0]),
                      HmcConfig(n_leapfrog=10, n_samples=10, n_burnin=1000, step_size=0.1, seed=0))
    cfg = HmcConfig(n_leapfrog=10, n_samples=50_000, n_burnin=0, step_size=warm.step_size, adapt=False, seed=1)
    draws = hmc_sample(double_well, np.array([1.0]), cfg).samples[:, 0]
    edges = np.linspace(-2.2, 2.2, 45)
    dens = lambda x: np.exp(-((x * x - 1) ** 2))
    Z = quad(dens, -np.inf, np.inf)[0]
    p = np.array([quad(dens, a, b)[0] for a, b in zip(edges[:-1], edges[1:])]) / Z
    h = np.histogram(draws, edges)[0] / draws.size
    tv = 0.5 * np.abs(h - p).sum() + 0.5 * (1 - p.sum()) + 0.5 * np.mean((draws < edges[0]) | (draws > edges[-1]))
    assert tv < 0.05


def test_samples_export(tmp_path):
    from noisyio.nets import ParamLayout

    layout = ParamLayout((("a", (2,)), ("b", ())))
    r = hmc_sample(gaussian(np.zeros(3), np.ones(3)), np.zeros(3),
                   HmcConfig(n_burnin=5, n_samples=4, n_leapfrog=3), layout)
    r.export(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "a[0],a[1],b" and len(lines) == 5
    stats = json.loads((tmp_path / "s.json").read_text())
    assert stats["n_samples"] == 4 and stats["step_size"] == r.step_size
    assert r.block("a").shape == (4, 2)


# -- adaptation ------------------------------------------------------------

def test_rejections_shrink_the_step():
    s = AdaptState(np.log(0.1))
    prev = s.step_size
    for _ in range(50):
        cur = adapt_step_size(s, 0)
        assert cur < prev
        prev = cur


def test_acceptances_grow_the_step():
    s = AdaptState(np.log(0.1))
    prev = s.step_size
    for _ in range(50):
        cur = adapt_step_size(s, 1)
        assert cur > prev
        prev = cur


@settings(max_examples=50, deadline=None)
@given(a=st.floats(0, 1), t=st.integers(0, 5000))
def test_adaptation_moves_with_sign_of_acceptance_error(a, t):
    s = AdaptState(0.0, t=t)
    adapt_step_size(s, a)
    assert np.sign(s.log_step) == np.sign(a - 0.6)


# -- leapfrog --------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 1000), step=st.floats(0.01, 0.3), n=st.integers(1, 60))
def test_leapfrog_is_reversible(seed, step, n):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((4, 4))
    P = A @ A.T / 4 + np.eye(4)

    def potential(q):
        return 0.5 * q @ P @ q + 0.1 * np.sum(q**4), P @ q + 0.4 * q**3

    q0, p0 = rng.standard_normal(4), rng.standard_normal(4)
    _, g0 = potential(q0)
    q1, p1, _, g1 = leapfrog(q0, p0, g0, potential, step, n)
    if not np.all(np.isfinite(q1)):
        return
    q2, p2, _, _ = leapfrog(q1, -p1, g1, potential, step, n)
    np.testing.assert_allclose(q2, q0, atol=1e-8)
    np.testing.assert_allclose(-p2, p0, atol=1e-8)


def test_leapfrog_preserves_volume():
    P = np.array([[2.0, 0.3], [0.3, 1.0]])

    def potential(q):
        return 0.5 * q @ P @ q, P @ q

    def flow(z):
        q, p = z[:2], z[2:]
        q1, p1, _, _ = leapfrog(q, p, potential(q)[1], potential, 0.1, 7)
        return np.concatenate([q1, p1])

    z0 = np.array([0.3, -0.5, 1.0, 0.2])
    h = 1e-6
    J = np.column_stack([(flow(z0 + h * e) - flow(z0 - h * e)) / (2 * h) for e in np.eye(4)])
    assert np.linalg.det(J) == pytest.approx(1.0, abs=1e-8)


# -- MAP -------------------------------------------------------------------

def test_map_finds_gaussian_mode():
    mu = np.array([1.5, -0.5, 3.0])
    L = np.array([[1.0, 0, 0], [0.5, 0.8, 0], [-0.2, 0.3, 0.5]])
    prec = np.linalg.inv(L @ L.T)

    def lp(q):
        r = q - mu
        return float(-0.5 * r @ prec @ r), -prec @ r

    res = map_estimate(negate(lp), np.zeros(3), lr=1e-2, iterations=5000)
    np.testing.assert_allclose(res.params, mu, atol=1e-3)
    tail = res.history[-500:]
    windows = tail.reshape(10, 50).mean(axis=1)
    assert np.all(np.diff(windows) <= 1e-12)


def test_map_reports_divergence():
    from noisyio import TrainingDiverged

    with pytest.raises(TrainingDiverged):
        map_estimate(lambda q: (np.nan, np.zeros(1)), np.zeros(1), iterations=3)


def test_map_on_poisson_posterior_reduces_residual():
    from noisyio.bayes import NoiseModel, PointData, PoissonPosterior
    from noisyio.nets import NetworkSpec
    from noisyio.physics import poisson_truth

    x = np.linspace(0, 1, 51)
    _, f = poisson_truth(x)
    post = PoissonPosterior(NetworkSpec.mlp([1, 50, 50, 1]), PointData(x, f, NoiseModel(0.05)), mode="ignore")
    q0 = post.initial(0)
    res = map_estimate(post.neg(), q0, lr=3e-3, iterations=3000)

    def resid(q):
        return float(np.sum((post.fields(q, x)[1] - f) ** 2))

    assert resid(res.params) * 100 <= resid(q0)


def test_effective_sample_size_of_iid_draws():
    x = np.random.default_rng(0).standard_normal((4000, 2))
    ess = effective_sample_size(x)
    assert np.all((ess > 2000) & (ess <= 4000 * 1.5))
