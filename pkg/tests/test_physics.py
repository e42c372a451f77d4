import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from noisyio import CholeskyFailure, InvalidInput, ShapeError, SolverDiverged
from noisyio.physics import (GrfSpec, OperatorCorpus, build_operator_corpus, grf_cholesky, grf_sample,
                             hetero_coefficient, make_noisy, manufactured_constant, manufactured_hetero,
                             poisson_truth, poisson_truth_derivs, rd_final_tail, rd_solve_constant, rd_solve_hetero,
                             rd_step_residual, se_kernel, sensor_grid, write_measurements)


# -- Poisson truth ---------------------------------------------------------

def test_truth_at_landmarks():
    u, f = poisson_truth(np.array([0.0, 0.25]))
    assert u[0] == 1.0 and f[0] == pytest.approx(-1.284352528130723, rel=1e-14)
    assert abs(u[1]) < 1e-15
    # cos(pi/2)^3 vanishes so only kappa * 6 a^2 cos sin^2 remains, and that is ~0 too
    assert abs(f[1]) < 1e-12


def test_truth_derivatives_match_finite_differences():
    x = np.linspace(0.03, 0.97, 25)
    d = poisson_truth_derivs(x)
    h = 1e-5
    for k in range(3):
        fd = (poisson_truth_derivs(x + h)[k] - poisson_truth_derivs(x - h)[k]) / (2 * h)
        np.testing.assert_allclose(d[k + 1], fd, rtol=1e-6, atol=1e-6 * np.max(np.abs(fd)))


def test_truth_solves_the_equation():
    x = np.linspace(0, 1, 101)
    u, u1, u2, u3 = poisson_truth_derivs(x)
    _, f = poisson_truth(x, kappa=0.02, lam=0.5)
    np.testing.assert_allclose(0.02 * u2 - 0.5 * u**3, f, atol=1e-12)
    assert u[0] == u[-1] == pytest.approx(1.0)


# -- random fields ---------------------------------------------------------

def test_kernel_has_unit_diagonal():
    g = sensor_grid()
    assert np.array_equal(np.diag(se_kernel(g, g, 0.2)), np.ones(100))


def test_grf_empirical_covariance():
    spec = GrfSpec(0.2, np.linspace(0, 1, 20))
    draws = grf_sample(spec, 0, n=10_000)
    C = np.cov(draws, rowvar=False)
    assert np.max(np.abs(C - se_kernel(spec.grid, spec.grid, 0.2))) < 0.05


def test_grf_long_correlation_is_nearly_constant():
    spec = GrfSpec(1e6, np.linspace(0, 1, 30), jitter=1e-8)
    v = grf_sample(spec, 3)
    assert np.ptp(v) < 1e-3 * max(1.0, abs(v.mean()))


def test_grf_cholesky_failure():
    with pytest.raises(CholeskyFailure):
        grf_cholesky(GrfSpec(1.0, np.linspace(0, 1, 200), jitter=0.0))


def test_grf_rejects_bad_specs():
    with pytest.raises(InvalidInput):
        GrfSpec(0.0)
    with pytest.raises(InvalidInput):
        GrfSpec(0.2, np.array([0.0, np.nan]))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_kernel_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    g = rng.uniform(0, 1, 12)
    p = rng.permutation(12)
    K = se_kernel(g, g, 0.3)
    assert np.array_equal(se_kernel(g[p], g[p], 0.3), K[np.ix_(p, p)])


def test_grf_seeding():
    spec = GrfSpec()
    assert np.array_equal(grf_sample(spec, 5), grf_sample(spec, 5))
    assert not np.array_equal(grf_sample(spec, 5), grf_sample(spec, 6))


# -- solvers ---------------------------------------------------------------

def test_zero_source_gives_zero_solution():
    g = sensor_grid()
    assert np.array_equal(rd_solve_constant(np.zeros(100), g), np.zeros(100))
    assert np.array_equal(rd_solve_hetero(np.zeros(100), np.zeros(100), g), np.zeros((100, 101)))


def _manufactured_errors(kind):
    errs = []
    for n, dt in ((26, 4e-3), (51, 2e-3), (101, 1e-3)):
        g = np.linspace(0, 1, n)
        if kind == "constant":
            exact, src = manufactured_constant(g)
            got = rd_solve_constant(src, g, dt=dt)
        else:
            k, exact, src = manufactured_hetero(g)
            got = rd_solve_hetero(k, src, g, dt=dt, n_out=2)[:, -1]
        errs.append(np.linalg.norm(got - exact(1.0)) / np.linalg.norm(exact(1.0)))
    return np.array(errs)


@pytest.mark.parametrize("kind", ["constant", "hetero"])
def test_manufactured_solution_accuracy_and_order(kind):
    errs = _manufactured_errors(kind)
    assert errs[-1] < 1e-3
    order = np.log2(errs[:-1] / errs[1:])
    assert np.all(order >= 1.8), order


def test_hetero_with_zero_field_matches_constant_solver():
    g = sensor_grid()
    f = grf_sample(GrfSpec(), 1)
    a = rd_solve_hetero(np.zeros(100), f, g)[:, -1]
    b = rd_solve_constant(f, g, D=0.01)
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_batched_constant_solve_equals_single_solves():
    f = grf_sample(GrfSpec(), 2, n=3)
    batch = rd_solve_constant(f)
    for i in range(3):
        np.testing.assert_allclose(batch[i], rd_solve_constant(f[i]), rtol=1e-12, atol=1e-15)


def test_pure_diffusion_contracts():
    # with no reaction the discrete diffusion operator only dissipates
    g = sensor_grid()
    u_prev = None
    for T in (0.1, 0.2, 0.4):
        def src(t, T=T):
            return np.sin(np.pi * g) * (t < 0.05)
        u = rd_solve_constant(src, g, kappa=0.0, T=T)
        if u_prev is not None:
            assert np.max(np.abs(u)) < np.max(np.abs(u_prev))
        u_prev = u


def test_hetero_coefficient():
    assert np.array_equal(hetero_coefficient([-2.0, 0.0, 1.0]), [0.03, 0.01, 0.02])


def test_solver_divergence():
    with pytest.raises(SolverDiverged):
        rd_solve_constant(np.full(100, 1e4), kappa=10.0)


@pytest.mark.parametrize("kw", [dict(T=0.0), dict(T=0.0015)])
def test_solver_time_grid(kw):
    with pytest.raises(InvalidInput):
        rd_solve_constant(np.zeros(100), **kw)


def test_solver_shapes():
    with pytest.raises(ShapeError):
        rd_solve_constant(np.zeros(50))
    with pytest.raises(ShapeError):
        rd_solve_hetero(np.zeros(50), np.zeros(100))


# -- noisy data ------------------------------------------------------------

def test_zero_noise_is_bit_exact():
    x, y = np.linspace(0, 1, 50), np.sin(np.linspace(0, 1, 50))
    d = make_noisy(x, y, 0.0, 0.0, 1)
    assert np.array_equal(d.x_noisy, x) and np.array_equal(d.y_noisy, y)
    assert not np.any(d.noise_in) and not np.any(d.noise_out)


def test_noise_scale():
    x = np.zeros(100_000)
    d = make_noisy(x, x, 0.3, 0.05, 2)
    assert d.noise_in.std() == pytest.approx(0.3, rel=0.02)
    assert d.noise_out.std() == pytest.approx(0.05, rel=0.02)
    assert np.array_equal(d.noise_out, d.y_noisy - d.y_clean)


def test_noise_seeding():
    x = np.linspace(0, 1, 30)
    a, b = make_noisy(x, x, 0.1, 0.1, 9), make_noisy(x, x, 0.1, 0.1, 9)
    assert np.array_equal(a.x_noisy, b.x_noisy) and np.array_equal(a.y_noisy, b.y_noisy)
    assert len(a) == 30


def test_noise_validation():
    with pytest.raises(InvalidInput):
        make_noisy([0.0], [0.0], -0.1, 0.0, 0)
    with pytest.raises(ShapeError):
        make_noisy([0.0, 1.0], [0.0], 0.1, 0.1, 0)


def test_measurement_csv(tmp_path):
    p = write_measurements(tmp_path / "m.csv", [("f", 0.5, 1.0, 1.25), ("u", (0.1, 0.2), 2.0, 2.0)])
    assert p.read_text().splitlines() == ["channel,coordinate,clean,noisy", "f,0.5,1.0,1.25", "u,0.1;0.2,2.0,2.0"]


# -- corpora ---------------------------------------------------------------

def test_empty_training_split():
    c = build_operator_corpus("rd_constant", 0, 3, seed=1)
    assert c.train.targets.shape == (0, 100) and c.test.targets.shape == (3, 100)


def test_corpus_is_reproducible(tmp_path):
    a = build_operator_corpus("rd_constant", 4, 2, seed=5)
    b = build_operator_corpus("rd_constant", 4, 2, seed=5)
    assert np.array_equal(a.train.inputs[0], b.train.inputs[0]) and np.array_equal(a.test.targets, b.test.targets)
    a.save(tmp_path)
    c = OperatorCorpus.load(tmp_path, "rd_constant")
    assert np.array_equal(c.train.targets, a.train.targets) and np.array_equal(c.test_seeds, a.test_seeds)


def test_corpus_solutions_satisfy_the_scheme():
    c = build_operator_corpus("rd_constant", 3, 0, seed=2)
    f = c.train.inputs[0]
    a = np.full(100, 0.01)
    tail = rd_final_tail(a, f)
    assert np.array_equal(tail[:, -1, :], c.train.targets[:, 1:-1])
    assert np.max(np.abs(rd_step_residual(a, f, sensor_grid(), tail))) < 1e-6


def test_hetero_corpus_layout():
    c = build_operator_corpus("rd_hetero", 1, 1, seed=0)
    assert len(c.train.inputs) == 2 and c.train.points.shape == (100 * 101, 2)
    field = rd_solve_hetero(c.test.inputs[0][0], c.test.inputs[1][0])
    assert np.array_equal(c.test.targets[0], field.ravel())


def test_unknown_corpus():
    with pytest.raises(InvalidInput):
        build_operator_corpus("heat", 1, 1, 0)
