from __future__ import annotations

import json
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from skelift import diffcore as dc
from skelift.diffcore import ParamStore, Tensor
from skelift.errors import EvaluationError, ShapeError, ValidationError


def naive_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def naive_conv(x, kernel, dilation):
    k, c_in, c_out = kernel.shape
    T = x.shape[0]
    t_out = T - (k - 1) * dilation
    out = np.zeros((t_out, c_out))
    for t in range(t_out):
        for i in range(k):
            for ci in range(c_in):
                for co in range(c_out):
                    out[t, co] += x[t + i * dilation, ci] * kernel[i, ci, co]
    return out


# matmul


def test_matmul_identity():
    x = np.random.default_rng(0).normal(size=(4, 4))
    np.testing.assert_array_equal(dc.matmul(Tensor(np.eye(4)), Tensor(x)).data, x)


def test_matmul_small_example():
    out = dc.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))
    np.testing.assert_allclose(dc.matmul(Tensor(a), Tensor(b)).data, naive_matmul(a, b), rtol=0, atol=1e-12)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        dc.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))


def test_matmul_associativity():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        a, b, c = (rng.normal(size=s) for s in ((4, 5), (5, 6), (6, 3)))
        left = dc.matmul(dc.matmul(Tensor(a), Tensor(b)), Tensor(c)).data
        right = dc.matmul(Tensor(a), dc.matmul(Tensor(b), Tensor(c))).data
        np.testing.assert_allclose(left, right, rtol=0, atol=1e-9)


# concat


def test_concat_examples():
    np.testing.assert_array_equal(dc.concat_features(Tensor([[1.0]]), Tensor([[2.0]])).data, [[1.0, 2.0]])
    x = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(dc.concat_features(Tensor(x), Tensor(np.zeros((3, 0)))).data, x)


def test_concat_row_mismatch():
    with pytest.raises(ShapeError):
        dc.concat_features(Tensor(np.zeros((2, 1))), Tensor(np.zeros((3, 1))))


def test_concat_gradient_routes_columns():
    rng = np.random.default_rng(2)
    params = ParamStore(a=rng.normal(size=(3, 2)), b=rng.normal(size=(3, 4)))
    w = rng.normal(size=(3, 6))
    _, grads = dc.value_and_grad(lambda p: dc.sum_squares(dc.concat_features(p["a"], p["b"]) * 1.0 + Tensor(w)), params)
    full = 2 * (np.concatenate([params["a"], params["b"]], axis=1) + w)
    np.testing.assert_allclose(grads["a"], full[:, :2], atol=1e-12)
    np.testing.assert_allclose(grads["b"], full[:, 2:], atol=1e-12)
    report = dc.grad_check(lambda p: dc.sum_squares(dc.concat_features(p["a"], p["b"]) + Tensor(w)), params)
    assert report.max_rel_error < 1e-6


# activation


def test_activation_values():
    x = Tensor([-1.0, 2.0])
    np.testing.assert_array_equal(dc.activation(x, "relu").data, [0.0, 2.0])
    assert dc.activation(Tensor([0.0]), "sigmoid").data[0] == 0.5
    np.testing.assert_allclose(dc.activation(Tensor([-2.0]), "leaky_relu", 0.1).data, [-0.2], atol=1e-15)


def test_activation_gradient_at_zero():
    for kind, expected in (("relu", 0.0), ("leaky_relu", 0.1)):
        x = Tensor([0.0], requires_grad=True)
        dc.activation(x, kind, 0.1).backward(np.ones(1))
        assert x.grad[0] == expected


def test_sigmoid_stable_for_large_inputs():
    out = dc.activation(Tensor([-1000.0, 1000.0]), "sigmoid").data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [0.0, 1.0], atol=1e-300)


def test_unknown_activation():
    with pytest.raises(ValidationError):
        dc.activation(Tensor([1.0]), "tanh")


# temporal convolution


def test_conv_k1_is_per_frame_linear_map():
    rng = np.random.default_rng(3)
    x, k = rng.normal(size=(6, 4)), rng.normal(size=(1, 4, 2))
    out = dc.temporal_conv(Tensor(x), Tensor(k), 1).data
    assert out.shape == (6, 2)
    np.testing.assert_allclose(out, x @ k[0], atol=1e-12)


def test_conv_constant_input_gives_constant_output():
    rng = np.random.default_rng(4)
    x = np.tile(rng.normal(size=(1, 3)), (10, 1))
    out = dc.temporal_conv(Tensor(x), Tensor(rng.normal(size=(3, 3, 5))), 2).data
    np.testing.assert_allclose(out, np.tile(out[:1], (len(out), 1)), atol=1e-12)


def test_conv_matches_sliding_window_oracle():
    rng = np.random.default_rng(5)
    x, k = rng.normal(size=(11, 3)), rng.normal(size=(3, 3, 4))
    out = dc.temporal_conv(Tensor(x), Tensor(k), 2).data
    assert out.shape == (7, 4)
    np.testing.assert_allclose(out, naive_conv(x, k, 2), rtol=0, atol=1e-12)


def test_conv_window_too_short():
    with pytest.raises(ShapeError, match="at least 5"):
        dc.temporal_conv(Tensor(np.zeros((4, 1))), Tensor(np.zeros((3, 1, 1))), 2)


# softmax


def test_softmax_uniform_and_shift():
    np.testing.assert_allclose(dc.softmax(Tensor(np.full(7, 3.3))).data, np.full(7, 1 / 7), atol=1e-15)
    x = np.random.default_rng(6).normal(size=9)
    np.testing.assert_allclose(dc.softmax(Tensor(x + 123.0)).data, dc.softmax(Tensor(x)).data, rtol=0, atol=1e-12)


def test_softmax_no_overflow():
    out = dc.softmax(Tensor([1000.0, 0.0])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-300)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-1e6, 1e6)))
def test_softmax_is_probability_vector(x):
    p = dc.softmax(Tensor(x)).data
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) < 1e-12


# gradients


def test_grad_check_square():
    params = ParamStore(theta=np.array(3.0))
    loss, grads = dc.value_and_grad(lambda p: dc.sum_squares(p["theta"]), params)
    assert loss == 9.0 and grads["theta"] == 6.0
    assert dc.grad_check(lambda p: dc.sum_squares(p["theta"]), params).max_rel_error < 1e-9


def test_grad_check_linear_exact():
    w = np.random.default_rng(7).normal(size=(1, 5))
    params = ParamStore(x=np.random.default_rng(8).normal(size=(5, 1)))
    report = dc.grad_check(lambda p: dc.reshape(dc.matmul(Tensor(w), p["x"]), ()), params)
    assert report.max_rel_error < 1e-10


def test_grad_check_rejects_bad_epsilon_and_nonfinite():
    params = ParamStore(x=np.ones(2))
    with pytest.raises(ValidationError):
        dc.grad_check(lambda p: dc.sum_squares(p["x"]), params, epsilon=0.1)
    with pytest.raises(EvaluationError):
        dc.grad_check(lambda p: dc.scale(dc.sum_squares(p["x"]), np.inf), params)


def _primitive_objectives(rng):
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    x = rng.normal(size=(7, 3))
    k = rng.normal(size=(3, 3, 2))
    target = rng.normal(size=(3, 2))
    return {
        "matmul": (ParamStore(a=a, b=b), lambda p: dc.sum_squares(dc.matmul(p["a"], p["b"]) - target)),
        "conv": (ParamStore(x=x, k=k), lambda p: dc.sum_squares(dc.temporal_conv(p["x"], p["k"], 2))),
        "softmax": (ParamStore(a=a), lambda p: dc.sum_squares(dc.softmax(p["a"]) - a)),
        "sigmoid": (ParamStore(a=a), lambda p: dc.sum_squares(dc.activation(p["a"], "sigmoid"))),
        "leaky": (ParamStore(a=a), lambda p: dc.sum_squares(dc.activation(p["a"], "leaky_relu", 0.1))),
        "reshape_take": (ParamStore(x=x), lambda p: dc.sum_squares(dc.take_time(dc.reshape(p["x"], (7, 3)), 2))),
        "add_scale": (ParamStore(a=a, bias=rng.normal(size=4)), lambda p: dc.sum_squares(dc.scale(p["a"] + p["bias"], 1.5))),
    }


def test_primitive_gradients_over_seeds():
    for seed in range(100):
        for name, (params, f) in _primitive_objectives(np.random.default_rng(seed)).items():
            report = dc.grad_check(f, params)
            assert report.max_rel_error < 1e-6, (name, seed, report)


def test_backward_is_bit_reproducible():
    params, f = _primitive_objectives(np.random.default_rng(0))["conv"]
    _, g1 = dc.value_and_grad(f, params)
    _, g2 = dc.value_and_grad(f, params)
    for k in g1:
        assert g1[k].tobytes() == g2[k].tobytes()


def test_param_store_order_is_insertion_order():
    store = ParamStore()
    for name in ("z", "a", "m"):
        store[name] = np.zeros(1)
    assert list(store) == ["z", "a", "m"]
    assert store.num_parameters() == 3


# checkpoints


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(9)
    params = ParamStore(w=rng.normal(size=(3, 4)) * 1e-7, b=rng.normal(size=4) * 1e9, tiny=np.array([5e-324, -0.0, 1 / 3]))
    path = tmp_path / "m.json"
    dc.save_checkpoint(path, "gcn", params, {"widths": [3]}, {"epoch": 1})
    ck = dc.load_checkpoint(path, "gcn")
    assert ck.model == "gcn" and ck.hyper == {"widths": [3]} and ck.optimizer == {"epoch": 1}
    for k in params:
        assert ck.params[k].shape == params[k].shape
        assert ck.params[k].tobytes() == params[k].tobytes()
    doc = json.loads(path.read_text())
    assert doc["format_version"] == 1 and set(doc["params"]["w"]) == {"shape", "data"}


def test_checkpoint_rejects_wrong_model_and_version(tmp_path):
    path = tmp_path / "m.json"
    dc.save_checkpoint(path, "gcn", ParamStore(w=np.zeros(1)))
    with pytest.raises(ValidationError):
        dc.load_checkpoint(path, "tcn_root")
    doc = json.loads(path.read_text()) | {"format_version": 7}
    path.write_text(json.dumps(doc))
    with pytest.raises(ValidationError):
        dc.load_checkpoint(path)


def test_atomic_write_leaves_no_temp_files(tmp_path):
    dc.atomic_write_text(tmp_path / "sub" / "f.txt", "hello")
    assert (tmp_path / "sub" / "f.txt").read_text() == "hello"
    assert os.listdir(tmp_path / "sub") == ["f.txt"]
