import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from noisyio import InvalidInput, NumericOverflow, ShapeError
from noisyio.nets import (AdamState, NetworkSpec, OperatorDataset, OperatorModel, ParamVector, adam_step,
                          deeponet_forward, dropout_predict, init_params, load_checkpoint, mio_deeponet_forward,
                          mlp_forward, save_checkpoint, train_operator)
from noisyio.physics import GrfSpec, grf_sample, sensor_grid


def _set(spec, **parts):
    layout = spec.layout()
    full = {n: np.zeros(s) for n, s in layout.entries}
    full.update({k.replace("__", "."): np.asarray(v, dtype=float).reshape(layout.shape_of(k.replace("__", ".")))
                 for k, v in parts.items()})
    return ParamVector(layout.flatten(full), layout)


# -- specs and layouts -----------------------------------------------------

def test_deeponet_widths_must_meet_at_p():
    with pytest.raises(ShapeError):
        NetworkSpec("deeponet", {"branch": (5, 4), "trunk": (1, 3)}, {"branch": "tanh", "trunk": "tanh"}, p=4)


def test_layout_slices_cover_the_vector():
    spec = NetworkSpec.mio_deeponet(100, 2, [16], 8)
    layout = spec.layout()
    covered = np.zeros(layout.size, dtype=int)
    for sl, _ in layout.slices().values():
        covered[sl] += 1
    assert np.all(covered == 1)
    assert layout.names[-1] == "bias"


@settings(max_examples=30, deadline=None)
@given(widths=st.lists(st.integers(1, 6), min_size=2, max_size=4), seed=st.integers(0, 1000))
def test_flatten_unflatten_round_trip(widths, seed):
    spec = NetworkSpec.mlp(widths)
    p = init_params(spec, seed)
    assert np.array_equal(spec.layout().flatten(p.parts()), p.values)


def test_init_is_seeded_and_bounded():
    spec = NetworkSpec.mlp([1, 50, 50, 1])
    a, b = init_params(spec, 4), init_params(spec, 4)
    assert np.array_equal(a.values, b.values)
    w1 = a.parts()["net.W1"]
    assert np.all(np.abs(w1) <= 1 / np.sqrt(50))


# -- forward passes --------------------------------------------------------

def test_zero_weights_give_bias():
    spec = NetworkSpec.mlp([2, 3, 1])
    p = _set(spec, net__b1=[1.25])
    out = mlp_forward(spec, p, np.array([[0.3, -2.0], [5.0, 1.0]]))
    assert np.array_equal(out, [[1.25], [1.25]])


def test_identity_network():
    spec = NetworkSpec.mlp([1, 1])
    p = _set(spec, net__W0=[[1.0]])
    x = np.linspace(-2, 2, 9).reshape(-1, 1)
    assert np.array_equal(mlp_forward(spec, p, x), x)


def test_mlp_shape_error():
    spec = NetworkSpec.mlp([2, 3, 1])
    with pytest.raises(ShapeError):
        mlp_forward(spec, init_params(spec, 0), np.zeros((4, 3)))


def _tiny_deeponet(branch, trunk, bias=0.0, n=3):
    spec = NetworkSpec.deeponet(n, 1, [], 1)
    p = _set(spec, branch__b0=[branch], trunk__b0=[trunk], bias=bias)
    return OperatorModel(spec, p, np.linspace(0, 1, n))


def test_deeponet_inner_product():
    assert deeponet_forward(_tiny_deeponet(2.0, 3.0), np.ones(3), 0.4) == 6.0


def test_deeponet_zero_branch_gives_bias():
    assert deeponet_forward(_tiny_deeponet(0.0, 3.0, bias=-0.7), np.ones(3), 0.9) == -0.7


def test_deeponet_shape_error():
    with pytest.raises(ShapeError):
        deeponet_forward(_tiny_deeponet(1.0, 1.0), np.ones(4), 0.1)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-5, 5), seed=st.integers(0, 100))
def test_deeponet_linear_in_trunk_features(a, seed):
    spec = NetworkSpec.deeponet(10, 1, [6], 4, "tanh")
    p = init_params(spec, seed)
    parts = p.parts()
    parts["bias"] = np.array(0.3)
    scaled = dict(parts)
    # scaling the last trunk layer scales the trunk features
    scaled["trunk.W1"] = a * parts["trunk.W1"]
    scaled["trunk.b1"] = a * parts["trunk.b1"]
    layout = spec.layout()
    m1 = OperatorModel(spec, ParamVector(layout.flatten(parts), layout), np.linspace(0, 1, 10))
    m2 = OperatorModel(spec, ParamVector(layout.flatten(scaled), layout), np.linspace(0, 1, 10))
    v = np.sin(np.arange(10.0))
    y1 = deeponet_forward(m1, v, 0.3) - 0.3
    y2 = deeponet_forward(m2, v, 0.3) - 0.3
    assert y2 == pytest.approx(a * y1, rel=1e-9, abs=1e-12)


def test_deeponet_scaling_branch_output():
    base = deeponet_forward(_tiny_deeponet(1.5, 2.0, bias=0.25), np.ones(3), 0.0) - 0.25
    scaled = deeponet_forward(_tiny_deeponet(4.5, 2.0, bias=0.25), np.ones(3), 0.0) - 0.25
    assert scaled == pytest.approx(3 * base)


def _tiny_mio(b1, b2, t, bias=0.0):
    spec = NetworkSpec.mio_deeponet(3, 2, [], 1)
    p = _set(spec, branch1__b0=[b1], branch2__b0=[b2], trunk__b0=[t], bias=bias)
    return OperatorModel(spec, p, np.linspace(0, 1, 3))


def test_mio_triple_product():
    assert mio_deeponet_forward(_tiny_mio(2.0, 3.0, 4.0), np.ones(3), np.ones(3), (0.5, 0.5)) == 24.0


@pytest.mark.parametrize("b1,b2", [(0.0, 3.0), (2.0, 0.0)])
def test_mio_zero_branch_gives_bias(b1, b2):
    assert mio_deeponet_forward(_tiny_mio(b1, b2, 4.0, 1.5), np.ones(3), np.ones(3), (0.1, 0.9)) == 1.5


def test_mio_symmetric_when_branches_share_weights():
    spec = NetworkSpec.mio_deeponet(8, 2, [5], 3, "tanh")
    parts = init_params(spec, 0).parts()
    for k in list(parts):
        if k.startswith("branch2."):
            parts[k] = parts[k.replace("branch2", "branch1")]
    layout = spec.layout()
    m = OperatorModel(spec, ParamVector(layout.flatten(parts), layout), np.linspace(0, 1, 8))
    k, f = np.cos(np.arange(8.0)), np.sin(np.arange(8.0))
    assert mio_deeponet_forward(m, k, f, (0.2, 0.7)) == pytest.approx(mio_deeponet_forward(m, f, k, (0.2, 0.7)),
                                                                         rel=1e-14)


# -- Adam ------------------------------------------------------------------

def test_adam_single_step_on_quadratic():
    theta = np.array([1.0])
    new, state = adam_step(theta, theta, AdamState.zeros(1), 1e-3)
    assert abs(new[0] - 1.0) <= 1e-3 * (1 + 1e-6)
    assert new[0] == pytest.approx(0.999, abs=1e-9)


def test_adam_zero_gradient():
    theta = np.array([0.5, -2.0])
    state = AdamState(np.array([0.1, 0.2]), np.array([0.01, 0.04]), 3)
    new, s2 = adam_step(theta, np.zeros(2), state, 1e-2)
    assert np.array_equal(s2.m, 0.9 * state.m)
    assert np.array_equal(s2.v, 0.999 * state.v)
    # with stale moments the step keeps going; with fresh state it must not move
    fresh, _ = adam_step(theta, np.zeros(2), AdamState.zeros(2), 1e-2)
    assert np.array_equal(fresh, theta)


def test_adam_converges_on_convex_quadratic():
    a = np.array([1.0, 10.0, 0.1])
    theta = np.array([1.0, -1.0, 2.0])
    state = AdamState.zeros(3)
    for _ in range(10_000):
        theta, state = adam_step(theta, a * theta, state, 1e-3)
    assert np.all(np.abs(theta) < 1e-3)


def test_adam_rejects_non_finite_gradient():
    with pytest.raises(NumericOverflow):
        adam_step(np.zeros(2), np.array([np.nan, 0.0]), AdamState.zeros(2), 1e-3)


@settings(max_examples=50, deadline=None)
@given(g=st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=5), steps=st.integers(1, 20))
def test_adam_step_is_bounded(g, steps):
    g = np.array(g)
    theta = np.zeros_like(g)
    state = AdamState.zeros(g.size)
    lr = 1e-2
    for _ in range(steps):
        new, state = adam_step(theta, g, state, lr)
        assert np.all(np.abs(new - theta) <= lr / (1 - 0.9) + 1e-12)
        theta = new


# -- operator training -----------------------------------------------------

def _corpus(n=32, n_grid=20, seed=0):
    g = sensor_grid(n_grid)
    V = grf_sample(GrfSpec(0.2, g), seed, n=n)
    return g, V


def test_zero_targets_are_learned():
    g, V = _corpus()
    pts = np.linspace(0, 1, 10)
    ds = OperatorDataset(g, (V,), pts, np.zeros((len(V), 10)))
    spec = NetworkSpec.deeponet(20, 1, [16], 8, "tanh")
    m = train_operator(spec, ds, ds, iterations=5000, batch=16, lr=1e-3, seed=0)
    assert m.metadata["test_mse"] < 1e-6


def test_training_is_deterministic():
    g, V = _corpus()
    pts = np.linspace(0, 1, 10)
    ds = OperatorDataset(g, (V,), pts, V[:, ::2])
    spec = NetworkSpec.deeponet(20, 1, [8], 4, "tanh")
    a = train_operator(spec, ds, iterations=50, batch=8, seed=3)
    b = train_operator(spec, ds, iterations=50, batch=8, seed=3)
    assert np.array_equal(a.params.values, b.params.values)


def test_training_loss_non_increasing_on_linear_target():
    g, V = _corpus(64)
    pts = np.linspace(0, 1, 10)
    ds = OperatorDataset(g, (V,), pts, 0.5 * V[:, ::2])
    spec = NetworkSpec.deeponet(20, 1, [16], 8, "tanh")
    m = train_operator(spec, ds, iterations=600, batch=64, lr=1e-3, seed=0, log_every=1)
    loss = np.array(m.metadata["loss_history"])[100:, 1]
    assert np.all(np.diff(loss) <= 0)


def test_empty_training_set_rejected():
    g = sensor_grid(20)
    ds = OperatorDataset(g, (np.zeros((0, 20)),), np.linspace(0, 1, 5), np.zeros((0, 5)))
    with pytest.raises(InvalidInput):
        train_operator(NetworkSpec.deeponet(20, 1, [4], 2), ds)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergent_training_reported():
    from noisyio import TrainingDiverged

    g, V = _corpus(8)
    ds = OperatorDataset(g, (V,), np.linspace(0, 1, 5), np.full((8, 5), 1e300))
    with pytest.raises(TrainingDiverged):
        train_operator(NetworkSpec.deeponet(20, 1, [4], 2), ds, iterations=5)


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    spec = NetworkSpec.mio_deeponet(100, 2, [7], 5, "relu")
    rng = np.random.default_rng(0)
    layout = spec.layout()
    model = OperatorModel(spec, ParamVector(rng.standard_normal(layout.size) * 1e-3, layout), sensor_grid(),
                          {"test_rel_l2": 0.031})
    back = load_checkpoint(save_checkpoint(model, tmp_path / "m.json"))
    assert back.spec == spec
    assert np.array_equal(back.params.values, model.params.values)
    assert np.array_equal(back.grid, model.grid)
    assert back.metadata == model.metadata


# -- dropout ---------------------------------------------------------------

def test_dropout_rate_zero_matches_forward():
    spec = NetworkSpec.mlp([1, 20, 1])
    p = init_params(spec, 0)
    x = np.linspace(-1, 1, 5).reshape(-1, 1)
    out = dropout_predict(spec, p, x, 0.0, 7, seed=1)
    assert all(np.array_equal(o, mlp_forward(spec, p, x)) for o in out)


def test_dropout_is_unbiased_for_one_hidden_layer():
    spec = NetworkSpec.mlp([1, 20, 1])
    p = init_params(spec, 0)
    x = np.array([[0.4]])
    draws = dropout_predict(spec, p, x, 0.5, 100_000, seed=2, chunk=10_000)[:, 0, 0]
    se = draws.std() / np.sqrt(draws.size)
    assert abs(draws.mean() - mlp_forward(spec, p, x)[0, 0]) < 3 * se


def test_dropout_same_seed_same_samples():
    spec = NetworkSpec.mlp([1, 20, 20, 1])
    p = init_params(spec, 0)
    x = np.linspace(0, 1, 4).reshape(-1, 1)
    assert np.array_equal(dropout_predict(spec, p, x, 0.3, 50, 9), dropout_predict(spec, p, x, 0.3, 50, 9))


@pytest.mark.parametrize("rate", [1.0, 1.5, -0.1])
def test_dropout_rate_validated(rate):
    spec = NetworkSpec.mlp([1, 2, 1])
    with pytest.raises(InvalidInput):
        dropout_predict(spec, init_params(spec, 0), np.zeros((1, 1)), rate, 2, 0)
