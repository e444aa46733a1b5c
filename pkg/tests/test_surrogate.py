import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedne.errors import DataError, ShapeError
from fedne.nn import (DenseLayer, Mlp, ParamVector, backward, flatten, flatten_grads, forward,
                      init_mlp, unflatten)
from fedne.surrogate import (GridSpec, SurrogateBank, SurrogateModel, SurrogateTrainSet,
                             build_targets, expected_targets, grid_step, load_surrogate, mse,
                             new_surrogate, r_squared, sample_grid, save_surrogate,
                             _standardize, _unstandardize, surrogate_penalty, train_surrogate)

from oracles import central_diff, clamped_repulsion, rel_err


def test_grid_degenerate_box():
    g = sample_grid(np.zeros((1, 2)), GridSpec(margin_fraction=0.0))
    assert g.tolist() == [[0.0, 0.0]]


def test_grid_unit_box():
    g = sample_grid(np.array([[0.0, 0.0], [1.0, 1.0]]), GridSpec(0.5, 0.0))
    assert g.shape == (9, 2)
    assert sorted(set(g[:, 0].tolist())) == [0.0, 0.5, 1.0]


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6), step=st.floats(0.05, 2), margin=st.floats(0, 0.5),
       cap=st.integers(4, 3000))
def test_grid_inside_box_with_regular_spacing(seed, step, margin, cap):
    z = np.random.default_rng(seed).normal(size=(30, 2)) * 3
    spec = GridSpec(step, margin, cap)
    g = sample_grid(z, spec)
    lo, hi = z.min(0), z.max(0)
    pad = margin * (hi - lo)
    assert np.all(g >= lo - pad - 1e-9) and np.all(g <= hi + pad + 1e-9)
    assert len(g) <= cap
    eff = grid_step(z, spec)
    assert eff >= step
    for axis in (0, 1):
        vals = np.unique(g[:, axis])
        if vals.size > 1:
            assert np.allclose(np.diff(vals), eff, atol=1e-9)


def test_targets_single_point():
    t = build_targets(np.array([[1.0, 0.0]]), np.zeros((1, 2)), 1, np.random.default_rng(0))
    assert t.targets[0] == pytest.approx(math.log(2), rel=1e-15)
    c = build_targets(np.zeros((1, 2)), np.zeros((1, 2)), 1, np.random.default_rng(0))
    assert c.targets[0] == pytest.approx(-math.log(1e-4), rel=1e-12)


def test_targets_sum_over_draws():
    t = build_targets(np.array([[1.0, 0.0]]), np.zeros((1, 2)), 5, np.random.default_rng(0))
    assert t.targets[0] == pytest.approx(5 * math.log(2), rel=1e-14)


def test_targets_monotone_in_distance():
    q = np.column_stack([np.linspace(0, 20, 50), np.zeros(50)])
    t = build_targets(q, np.zeros((1, 2)), 3, np.random.default_rng(0)).targets
    assert np.all(np.diff(t) <= 0)


def test_targets_random_draws_oracle():
    r = np.random.default_rng(8)
    z, q = r.normal(size=(7, 2)), r.normal(size=(4, 2))
    t = build_targets(q, z, 3, np.random.default_rng(99)).targets
    draws = np.random.default_rng(99).integers(0, 7, size=(4, 3))
    for i in range(4):
        want = sum(clamped_repulsion(float(np.sum((q[i] - z[j]) ** 2))) for j in draws[i])
        assert t[i] == pytest.approx(want, rel=1e-13)


def test_expected_targets_are_mean_of_sampled():
    r = np.random.default_rng(0)
    z, q = r.normal(size=(5, 2)), r.normal(size=(3, 2))
    exp = expected_targets(q, z, 5).targets
    for i in range(3):
        want = 5 * np.mean([clamped_repulsion(float(np.sum((q[i] - zj) ** 2))) for zj in z])
        assert exp[i] == pytest.approx(want, rel=1e-13)


def test_targets_errors():
    with pytest.raises(DataError):
        build_targets(np.zeros((1, 2)), np.zeros((0, 2)), 1, np.random.default_rng(0))
    with pytest.raises(DataError):
        SurrogateTrainSet(np.zeros((1, 2)), np.array([-1.0]))


def test_surrogate_interface_is_two_dimensional():
    with pytest.raises(ShapeError):
        SurrogateModel(init_mlp([3, 4, 1]), 0, 0, 10)
    with pytest.raises(DataError):
        SurrogateModel(init_mlp([2, 4, 1]), 0, 0, 0)


def test_zero_epochs_returns_prev():
    s = new_surrogate(0, 10)
    ts = SurrogateTrainSet(np.zeros((3, 2)), np.ones(3))
    assert train_surrogate(s, ts, epochs=0) is s


def test_constant_target_fit():
    r = np.random.default_rng(0)
    ts = SurrogateTrainSet(r.uniform(-3, 3, (400, 2)), np.full(400, 2.5))
    s = train_surrogate(new_surrogate(0, 10, seed=1), ts, epochs=100)
    pred = s(ts.queries)
    assert np.all(np.abs(pred - 2.5) <= 0.05 * 2.5)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_training_reduces_mse(seed):
    r = np.random.default_rng(seed)
    z = r.normal(size=(40, 2))
    q = sample_grid(z, GridSpec(0.5))
    ts = build_targets(q, z, 5, r)
    s0 = new_surrogate(0, 40, seed=seed)
    s1 = train_surrogate(s0, ts)
    assert mse(s1, ts) <= mse(s0, ts)


def test_warm_start_preserves_identity():
    s = new_surrogate(3, 17, seed=2)
    ts = SurrogateTrainSet(np.random.default_rng(0).normal(size=(20, 2)), np.ones(20))
    out = train_surrogate(s, ts, epochs=2, round_built=5)
    assert (out.owner, out.owner_size, out.round_built) == (3, 17, 5)
    assert s.round_built == -1


def test_standardization_is_exact():
    net = new_surrogate(0, 1, seed=4).net
    shift, scale = np.array([1.5, -2.0]), np.array([3.0, 0.5])
    back = _unstandardize(_standardize(net, shift, scale, 0.7, 2.0), shift, scale, 0.7, 2.0)
    assert np.allclose(flatten(back).flat, flatten(net).flat, rtol=1e-13, atol=1e-14)
    x = np.random.default_rng(1).normal(size=(5, 2))
    std = _standardize(net, shift, scale, 0.7, 2.0)
    assert np.allclose(0.7 + 2.0 * forward(std, (x - shift) / scale), forward(net, x))


def test_penalty_empty_and_zero():
    v, g = surrogate_penalty([], [], np.ones((4, 2)))
    assert v == 0 and not g.any()
    zero = SurrogateModel(Mlp([DenseLayer(np.zeros((3, 2)), np.zeros(3), "relu"),
                               DenseLayer(np.zeros((1, 3)), np.zeros(1))]), 0, 0, 5)
    v, g = surrogate_penalty([zero], [0.4], np.ones((4, 2)))
    assert v == 0 and not g.any()
    with pytest.raises(ShapeError):
        surrogate_penalty([zero], [], np.ones((1, 2)))


def _random_surrogates(r, count):
    out = []
    for i in range(count):
        net = init_mlp([2, 6, 1], seed=int(r.integers(1 << 30)))
        net = Mlp([DenseLayer(l.weights, r.normal(size=l.out_dim), l.activation)
                   for l in net.layers])
        out.append(SurrogateModel(net, i, 0, 10 + i))
    return out


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6), count=st.integers(1, 4))
def test_penalty_gradient_and_bank(seed, count):
    r = np.random.default_rng(seed)
    models = _random_surrogates(r, count)
    weights = r.uniform(0, 1, count).tolist()
    z = r.normal(size=(6, 2))
    v, g = surrogate_penalty(models, weights, z)
    fd = central_diff(lambda zz: surrogate_penalty(models, weights, zz)[0], z)
    assert rel_err(g, fd) < 1e-4
    vb, gb = SurrogateBank(models, weights)(z)
    assert vb == pytest.approx(v, rel=1e-12, abs=1e-14)
    assert np.allclose(gb, g, rtol=1e-11, atol=1e-14)


def test_end_to_end_encoder_gradient():
    r = np.random.default_rng(5)
    enc = init_mlp([4, 5, 2], seed=3)
    enc = Mlp([DenseLayer(l.weights, r.normal(size=l.out_dim) * 0.3, l.activation)
               for l in enc.layers])
    models = _random_surrogates(r, 2)
    weights = [0.3, 0.6]
    x = r.normal(size=(7, 4))
    layout = flatten(enc).layout

    def total(flat):
        return surrogate_penalty(models, weights, forward(unflatten(ParamVector(flat, layout)), x))[0]
    _, gz = surrogate_penalty(models, weights, forward(enc, x))
    grads, _ = backward(enc, x, gz)
    assert rel_err(flatten_grads(grads), central_diff(total, flatten(enc).flat)) < 1e-4


def test_surrogate_checkpoint(tmp_path):
    s = new_surrogate(4, 33, seed=1)
    s.round_built = 7
    save_surrogate(s, tmp_path / "s.fne")
    back = load_surrogate(tmp_path / "s.fne")
    assert back.meta == {"owner": 4, "round": 7, "owner_size": 33}
    assert np.array_equal(flatten(back.net).flat, flatten(s.net).flat)


def test_r_squared():
    net = new_surrogate(0, 1, seed=0).net
    hidden, out = net.layers
    lifted = SurrogateModel(Mlp([hidden, DenseLayer(out.weights, out.biases + 100.0)]), 0, 0, 1)
    q = np.random.default_rng(0).normal(size=(10, 2))
    exact = SurrogateTrainSet(q, lifted(q))
    assert r_squared(lifted, exact) == 1.0
    mean_only = SurrogateTrainSet(q, np.full(10, float(lifted(q).mean())) + np.linspace(0, 1, 10))
    assert r_squared(lifted, mean_only) < 1.0
