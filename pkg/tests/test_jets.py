import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from noisyio import InvalidInput, NumericOverflow, TapeError
from noisyio.jets import Tape, jet_apply, jet_lift_input, reverse_grad
from noisyio.nets import NetworkSpec, init_params, mlp_forward, mlp_jet_forward

finite = st.floats(-3.0, 3.0, allow_nan=False)


def comps(j):
    return [float(c) for c in j.as_tuple()]


# -- lifting ---------------------------------------------------------------

@pytest.mark.parametrize("x", [0.3, 0.0, -1.0])
def test_lift_is_derivative_seed(x):
    assert comps(jet_lift_input(x)) == [x, 1.0, 0.0, 0.0]


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_lift_rejects_non_finite(bad):
    with pytest.raises(InvalidInput):
        jet_lift_input(bad)


def test_constant_node_has_zero_derivatives():
    t = Tape()
    c = t.variable(4.0)
    assert comps(c) == [4.0, 0.0, 0.0, 0.0]


# -- elementwise rules -----------------------------------------------------

def test_tanh_at_zero():
    # tanh' (0) = 1, tanh'' (0) = 0, tanh''' (0) = -2
    assert comps(jet_apply("tanh", jet_lift_input(0.0))) == [0.0, 1.0, 0.0, -2.0]


def test_leibniz_product():
    t = Tape()
    a = t.lift(np.array(2.0))
    b = t.add(t.lift(np.array(2.0)), 1.0)
    # (x)(x + 1) at x = 2: value 6, derivatives 2x + 1 = 5, 2, 0
    assert comps(jet_apply("mul", a, b)) == [6.0, 5.0, 2.0, 0.0]


def test_add_constant_shifts_value_only():
    x = jet_lift_input(0.7)
    one = x.tape.variable(1.0)
    out = jet_apply("add", one, x)
    assert comps(out) == [1.7, 1.0, 0.0, 0.0]


def test_relu_subgradient_at_kink_without_derivatives():
    t = Tape()
    out = jet_apply("relu", t.variable(0.0))
    assert comps(out) == [0.0, 0.0, 0.0, 0.0]


def test_relu_rejects_derivative_jet_at_kink():
    with pytest.raises(InvalidInput):
        jet_apply("relu", jet_lift_input(0.0))


def test_relu_passes_derivatives_away_from_kink():
    assert comps(jet_apply("relu", jet_lift_input(0.5))) == [0.5, 1.0, 0.0, 0.0]
    assert comps(jet_apply("relu", jet_lift_input(-0.5))) == [0.0, 0.0, 0.0, 0.0]


def test_overflow_is_reported():
    x = jet_lift_input(1.0)
    with pytest.raises(NumericOverflow):
        jet_apply("scale", x, np.inf)


def test_operands_on_different_tapes_rejected():
    with pytest.raises(TapeError):
        jet_apply("mul", jet_lift_input(1.0), jet_lift_input(2.0))


# -- network jets ----------------------------------------------------------

def test_identity_network_jet():
    spec = NetworkSpec.mlp([1, 1])
    params = spec.layout().flatten({"net.W0": np.ones((1, 1)), "net.b0": np.zeros(1)})
    assert comps(mlp_jet_forward(spec, params, 0.7)) == [0.7, 1.0, 0.0, 0.0]


def test_single_tanh_neuron_jet():
    spec = NetworkSpec.mlp([1, 1, 1])
    params = spec.layout().flatten({"net.W0": np.ones((1, 1)), "net.b0": np.zeros(1),
                                    "net.W1": np.ones((1, 1)), "net.b1": np.zeros(1)})
    assert comps(mlp_jet_forward(spec, params, 0.0)) == [0.0, 1.0, 0.0, -2.0]


def test_jet_layout_mismatch():
    from noisyio import ShapeError

    with pytest.raises(ShapeError):
        mlp_jet_forward(NetworkSpec.mlp([1, 3, 1]), np.zeros(4), 0.1)


def test_value_component_equals_plain_forward_exactly():
    spec = NetworkSpec.mlp([1, 50, 50, 1])
    p = init_params(spec, 3)
    for x in np.linspace(-1, 1, 7):
        assert float(mlp_jet_forward(spec, p, x).v) == float(mlp_forward(spec, p, np.array([x]))[0])


# -- reverse sweep ---------------------------------------------------------

def test_gradient_of_half_squared_norm_is_identity():
    theta = np.array([0.3, -1.2, 2.5])
    t = Tape()
    v = t.variable(theta)
    obj = t.scale(t.sum(t.square(v)), 0.5)
    (g,) = reverse_grad(obj, [v])
    assert np.array_equal(g, theta)


def test_gradient_of_second_derivative_wrt_weights():
    spec = NetworkSpec.mlp([1, 20, 20, 1])
    p = init_params(spec, 1)
    x = 0.37
    out = mlp_jet_forward(spec, p, x)
    layout = spec.layout()
    grads = reverse_grad(out.comp(2), [out.tape.leaves[n] for n in layout.names])
    g = np.concatenate([a.ravel() for a in grads])
    rng = np.random.default_rng(5)
    h = 1e-5
    for k in rng.choice(layout.size, 10, replace=False):
        e = np.zeros(layout.size)
        e[k] = h
        fd = (float(mlp_jet_forward(spec, p.values + e, x).d2) - float(mlp_jet_forward(spec, p.values - e, x).d2)) / (2 * h)
        assert g[k] == pytest.approx(fd, rel=1e-4, abs=1e-9)


def test_residual_gradient_wrt_input_is_read_from_the_jet():
    spec = NetworkSpec.mlp([1, 30, 30, 1])
    p = init_params(spec, 2)
    kappa, lam = 0.01, 0.1
    for x in (-0.6, 0.1, 0.45):
        out = mlp_jet_forward(spec, p, x)
        t = out.tape
        r = t.add(t.scale(out.comp(2), kappa), t.scale(t.power(out.comp(0), 3), -lam))
        (gx,) = reverse_grad(r, [t.leaves["x"]])
        u, u1, _, u3 = (float(c) for c in out.as_tuple())
        assert float(gx) == pytest.approx(kappa * u3 - 3 * lam * u * u * u1, rel=1e-10)


def test_objective_from_other_tape_rejected():
    t = Tape()
    with pytest.raises(TapeError):
        t.gradient(jet_lift_input(1.0), [])


# -- properties ------------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(x=finite, a=finite, b=finite)
def test_jet_linearity(x, a, b):
    t = Tape()
    s = t.lift(np.array(x))
    f = t.tanh(s)
    g = t.mul(s, s)
    combo = t.add(t.scale(f, a), t.scale(g, b))
    for k in range(4):
        assert float(combo.d(k)) == pytest.approx(a * float(f.d(k)) + b * float(g.d(k)), rel=1e-12, abs=1e-12)


def test_chain_rule_closure_tanh_affine():
    rng = np.random.default_rng(0)
    x = rng.uniform(-2, 2, 1000)
    w, c = 1.7, -0.4
    t = Tape()
    j = t.tanh(t.add(t.scale(t.lift(x), w), c))
    th = np.tanh(w * x + c)
    sech2 = 1 - th**2
    want = [th, w * sech2, -2 * w**2 * th * sech2, w**3 * (-2 * sech2**2 + 4 * th**2 * sech2)]
    for k in range(4):
        np.testing.assert_allclose(j.d(k), want[k], rtol=1e-10, atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), x=st.floats(-1, 1))
def test_reverse_matches_directional_finite_difference(seed, x):
    spec = NetworkSpec.mlp([1, 8, 8, 1])
    p = init_params(spec, seed).values
    names = spec.layout().names

    def objective(q):
        out = mlp_jet_forward(spec, q, x)
        t = out.tape
        return t.add(t.square(out.comp(2)), t.scale(out.comp(1), 0.3)), t

    obj, t = objective(p)
    g = np.concatenate([a.ravel() for a in reverse_grad(obj, [t.leaves[n] for n in names])])
    d = np.random.default_rng(seed).standard_normal(p.size)
    h = 1e-6
    fd = (float(objective(p + h * d)[0].v) - float(objective(p - h * d)[0].v)) / (2 * h)
    assert g @ d == pytest.approx(fd, rel=1e-4, abs=1e-8)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), x=st.floats(-1, 1))
def test_jets_are_deterministic(seed, x):
    spec = NetworkSpec.mlp([1, 10, 1])
    p = init_params(spec, seed)
    a = mlp_jet_forward(spec, p, x).as_tuple()
    b = mlp_jet_forward(spec, p, x).as_tuple()
    assert all(np.array_equal(u, v) for u, v in zip(a, b))


def test_tape_is_topological():
    spec = NetworkSpec.mlp([1, 4, 1])
    out = mlp_jet_forward(spec, init_params(spec, 0), 0.2)
    t = out.tape
    for i, parents in enumerate(t._parents):
        assert all(p.index < i for p in parents)
