import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedne.errors import DataError, ShapeError
from fedne.nn import (AdamState, DenseLayer, Mlp, ParamVector, adam_step, backward, flatten,
                      flatten_grads, forward, from_bytes, from_text, init_mlp,
                      load_checkpoint, save_checkpoint, to_bytes, to_text, unflatten)

from oracles import adam_by_hand, central_diff, matrix_chain, rel_err


def identity_layer(n, act="identity"):
    return DenseLayer(np.eye(n), np.zeros(n), act)


def test_identity_forward():
    m = Mlp([identity_layer(2)])
    assert np.array_equal(forward(m, [1.0, 2.0]), [[1.0, 2.0]])


def test_relu_forward():
    m = Mlp([identity_layer(2, "relu"), identity_layer(2)])
    assert np.array_equal(forward(m, [-1.0, 2.0]), [[0.0, 2.0]])


def test_forward_matches_matrix_chain(rng):
    m = init_mlp([5, 7, 6, 3], seed=1)
    m.layers[0].biases[:] = rng.normal(size=7)
    x = rng.normal(size=(4, 5))
    spec = [(l.weights, l.biases, l.activation) for l in m.layers]
    expected = np.array([matrix_chain(spec, row) for row in x])
    assert np.allclose(forward(m, x), expected, rtol=0, atol=1e-12)


def test_forward_dimension_mismatch():
    with pytest.raises(ShapeError):
        forward(init_mlp([3, 2]), np.zeros((2, 4)))


def test_final_layer_must_be_identity():
    with pytest.raises(ShapeError):
        Mlp([identity_layer(2, "relu")])


def test_nonfinite_parameters_rejected():
    with pytest.raises(DataError):
        DenseLayer(np.array([[np.nan]]), np.zeros(1))


def test_linear_backward_is_outer_product():
    w = np.array([[1.0, -2.0, 0.5], [0.3, 0.0, 4.0]])
    m = Mlp([DenseLayer(w, np.zeros(2))])
    x = np.array([[1.5, -1.0, 2.0]])
    grads, dx = backward(m, x, np.ones((1, 2)))
    assert np.array_equal(grads[0][0], np.outer(np.ones(2), x[0]))
    assert np.array_equal(grads[0][1], np.ones(2))
    assert np.allclose(dx, np.ones(2) @ w)


def test_zero_output_grads_give_zero_gradients(rng):
    m = init_mlp([4, 8, 2], seed=3)
    grads, dx = backward(m, rng.normal(size=(5, 4)), np.zeros((5, 2)))
    assert all(not dw.any() and not db.any() for dw, db in grads)
    assert not dx.any()


def _loss_of_flat(model, x, c):
    layout = model.layout
    return lambda flat: float(np.sum(c * forward(unflatten(ParamVector(flat, layout)), x)))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), batch=st.integers(1, 6),
       depth=st.integers(1, 3))
def test_backward_matches_finite_differences(seed, batch, depth):
    r = np.random.default_rng(seed)
    dims = [int(d) for d in r.integers(2, 6, size=depth + 1)]
    m = init_mlp(dims, seed=seed)
    # random biases keep pre-activations away from the ReLU kink
    m = Mlp([DenseLayer(l.weights, r.normal(size=l.out_dim), l.activation) for l in m.layers])
    x = r.normal(size=(batch, dims[0]))
    c = r.normal(size=(batch, dims[-1]))
    grads, dx = backward(m, x, c)
    fd = central_diff(_loss_of_flat(m, x, c), flatten(m).flat)
    assert rel_err(flatten_grads(grads), fd) < 1e-4
    fd_x = central_diff(lambda xx: float(np.sum(c * forward(m, xx))), x)
    assert rel_err(dx, fd_x) < 1e-4


def test_adam_first_step_scalar():
    m = Mlp([DenseLayer(np.zeros((1, 1)), np.zeros(1))])
    state = AdamState.for_model(m, lr=1e-3)
    grads = [(np.ones((1, 1)), np.zeros(1))]
    new, st1 = adam_step(m, grads, state)
    expected = adam_by_hand(0.0, 1.0, 1e-3)
    assert new.layers[0].weights[0, 0] == pytest.approx(expected, rel=1e-12)
    assert new.layers[0].weights[0, 0] == pytest.approx(-0.001, rel=1e-4)
    assert st1.step_count == 1


def test_adam_zero_gradient(rng):
    m = init_mlp([3, 4, 2], seed=0)
    state = AdamState.for_model(m)
    state.first_moment[:] = rng.normal(size=state.first_moment.size)
    state.second_moment[:] = np.abs(rng.normal(size=state.first_moment.size))
    zero = np.zeros(m.n_params)
    # the first moment still carries momentum, so compare against a zero-moment state
    calm = AdamState.for_model(m)
    new, st1 = adam_step(m, zero, calm)
    assert np.array_equal(flatten(new).flat, flatten(m).flat)
    _, st2 = adam_step(m, zero, state)
    assert np.all(np.abs(st2.first_moment) < np.abs(state.first_moment) + 1e-300)
    assert np.all(st2.second_moment <= state.second_moment)


def test_adam_deterministic(rng):
    m = init_mlp([3, 4, 2], seed=0)
    g = rng.normal(size=m.n_params)
    a = adam_step(m, g, AdamState.for_model(m))
    b = adam_step(m, g.copy(), AdamState.for_model(m))
    assert np.array_equal(flatten(a[0]).flat, flatten(b[0]).flat)
    assert np.array_equal(a[1].second_moment, b[1].second_moment)


def test_adam_rejects_bad_state():
    z = np.zeros(2)
    with pytest.raises(ValueError):
        AdamState(z, z, lr=0.0)
    with pytest.raises(ValueError):
        AdamState(z, z, beta1=1.0)


def test_init_reproducible_and_shapes():
    a, b = init_mlp([784, 256, 256, 256, 2], seed=7), init_mlp([784, 256, 256, 256, 2], seed=7)
    assert np.array_equal(flatten(a).flat, flatten(b).flat)
    assert [l.weights.shape for l in a.layers] == [(256, 784), (256, 256), (256, 256), (2, 256)]
    assert len(init_mlp([50, 128, 128, 2]).layers) == 3
    assert all(not l.biases.any() for l in a.layers)
    bound = np.sqrt(6 / 784)
    assert np.abs(a.layers[0].weights).max() <= bound


def test_init_empty_dims():
    with pytest.raises(ShapeError):
        init_mlp([])


def test_flatten_layout():
    m = Mlp([DenseLayer(np.array([[1.0, 2.0]]), np.array([3.0]))])
    assert np.array_equal(flatten(m).flat, [1.0, 2.0, 3.0])


def test_unflatten_mismatch():
    pv = flatten(init_mlp([3, 2]))
    with pytest.raises(ShapeError):
        unflatten(ParamVector(pv.flat[:-1], pv.layout))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), dims=st.lists(st.integers(1, 6), min_size=2, max_size=4))
def test_flatten_roundtrip(seed, dims):
    m = init_mlp(dims, seed=seed)
    back = unflatten(flatten(m))
    assert back.layout == m.layout
    assert np.array_equal(flatten(back).flat, flatten(m).flat)


@settings(max_examples=25, deadline=None)
@given(alpha=st.floats(-50, 50, allow_nan=False), seed=st.integers(0, 1000))
def test_linear_positive_homogeneity(alpha, seed):
    r = np.random.default_rng(seed)
    m = Mlp([DenseLayer(r.normal(size=(3, 4)), np.zeros(3)),
             DenseLayer(r.normal(size=(2, 3)), np.zeros(2))])
    x = r.normal(size=(2, 4))
    assert np.allclose(forward(m, alpha * x), alpha * forward(m, x), rtol=1e-12, atol=1e-9)


def test_checkpoint_roundtrip(tmp_path):
    m = init_mlp([5, 4, 2], seed=2)
    save_checkpoint(m, tmp_path / "m.fne", {"round": 3})
    back, meta = load_checkpoint(tmp_path / "m.fne")
    assert meta == {"round": 3}
    assert np.array_equal(flatten(back).flat, flatten(m).flat)
    assert (tmp_path / "m.fne").read_bytes()[:4] == b"FNE1"


def test_checkpoint_binary_layout():
    m = Mlp([DenseLayer(np.array([[1.0, 2.0]]), np.array([3.0]))])
    blob = to_bytes(m)
    assert struct.unpack_from("<I", blob, 4)[0] == 1
    assert struct.unpack_from("<III", blob, 8) == (1, 2, 0)
    assert blob[-24:] == np.array([1.0, 2.0, 3.0], dtype="<f8").tobytes()


def test_checkpoint_corrupt():
    blob = to_bytes(init_mlp([2, 2]))
    with pytest.raises(ShapeError):
        from_bytes(blob[:-3])
    with pytest.raises((ShapeError, DataError)):
        from_bytes(b"XXXX" + blob[4:])


def test_text_roundtrip():
    m = init_mlp([3, 3, 2], seed=9)
    back, meta = from_text(to_text(m, {"a": 1}))
    assert meta == {"a": 1}
    assert np.array_equal(flatten(back).flat, flatten(m).flat)


def test_training_schedule_deterministic():
    def train():
        r = np.random.default_rng(0)
        m = init_mlp([3, 5, 2], seed=4)
        s = AdamState.for_model(m)
        for _ in range(10):
            x = r.normal(size=(4, 3))
            grads, _ = backward(m, x, forward(m, x))
            m, s = adam_step(m, grads, s)
        return flatten(m).flat
    assert np.array_equal(train(), train())
