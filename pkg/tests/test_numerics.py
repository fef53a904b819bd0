import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracle
from caslstm.numerics import (ShapeError, as_tensor, dtype_for, glorot_bound, make_rng, matvec,
                              relu, sigmoid, sigmoid_prime, softmax, tanh_act, tanh_prime,
                              uniform_init)


def test_matvec_examples():
    np.testing.assert_array_equal(matvec(np.eye(2), np.array([3.0, -1.0])), [3, -1])
    np.testing.assert_array_equal(matvec(np.zeros((2, 2)), np.array([5.0, 7.0])), [0, 0])
    np.testing.assert_array_equal(matvec(np.array([[1.0, 2], [3, 4]]), np.ones(2)), [3, 7])


def test_matvec_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2,\)"):
        matvec(np.zeros((2, 3)), np.zeros(2))


def test_matvec_distributes():
    rng = make_rng(0)
    for _ in range(20):
        W, x, y = rng.normal(size=(5, 4)), rng.normal(size=4), rng.normal(size=4)
        np.testing.assert_allclose(matvec(W, x + y), matvec(W, x) + matvec(W, y), atol=1e-10)


def test_sigmoid_examples():
    assert sigmoid(0.0) == 0.5
    assert sigmoid(math.log(3)) == pytest.approx(0.75, abs=1e-15)
    assert sigmoid(-math.log(3)) == pytest.approx(0.25, abs=1e-15)


def test_tanh_examples():
    assert tanh_act(0.0) == 0.0
    x = np.linspace(-3, 3, 13)
    np.testing.assert_array_equal(tanh_act(-x), -tanh_act(x))
    assert abs(tanh_act(20.0) - 1.0) < 1e-12


def _derivative_errors(f, df):
    x = make_rng(7).uniform(-4, 4, size=100)
    eps = 1e-6
    numeric = (f(x + eps) - f(x - eps)) / (2 * eps)
    return np.abs(df(x) - numeric), numeric, eps


@pytest.mark.parametrize("f, df", [
    (sigmoid, sigmoid_prime),
    pytest.param(tanh_act, tanh_prime, marks=pytest.mark.xfail(
        strict=True, reason="near |x|=4 tanh' is ~1.5e-3 while the central difference carries "
                            "~ulp(1)/(2 eps) = 1e-10 of rounding noise, so 1e-8 relative is out "
                            "of reach in 64-bit")),
])
def test_activation_derivatives_match_central_differences(f, df):
    err, numeric, _ = _derivative_errors(f, df)
    assert (err / np.abs(numeric)).max() < 1e-8


@pytest.mark.parametrize("f, df", [(sigmoid, sigmoid_prime), (tanh_act, tanh_prime)])
def test_activation_derivatives_within_roundoff(f, df):
    err, numeric, eps = _derivative_errors(f, df)
    assert np.all(err <= 1e-8 * np.abs(numeric) + oracle.fd_roundoff([1.0], eps))


def test_relu():
    np.testing.assert_array_equal(relu(np.array([-1.0, 0.0, 2.0])), [0, 0, 2])


def test_softmax_examples():
    np.testing.assert_allclose(softmax(np.full(3, 2.5)), [1 / 3] * 3, atol=1e-15)
    np.testing.assert_array_equal(softmax(np.array([4.2])), [1.0])
    x = np.array([0.3, -1.2, 2.0])
    np.testing.assert_allclose(softmax(x + 100.0), softmax(x), atol=1e-15)


def test_softmax_empty_is_error():
    with pytest.raises(ValueError):
        softmax(np.array([]))


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 50)))
def test_softmax_sums_to_one(x):
    p = softmax(x)
    assert np.all(p > 0)
    assert abs(p.sum() - 1) < 1e-12


def test_sigmoid_stays_inside_unit_interval_for_moderate_inputs():
    x = np.linspace(-30, 30, 1001)
    s = sigmoid(x)
    assert np.all((s > 0) & (s < 1))


def test_uniform_init_range_and_determinism():
    a = uniform_init(make_rng(1), (2, 2), 0.1)
    assert np.all(np.abs(a) <= 0.1)
    np.testing.assert_array_equal(a, uniform_init(make_rng(1), (2, 2), 0.1))
    assert not np.array_equal(a, uniform_init(make_rng(2), (2, 2), 0.1))


@pytest.mark.parametrize("bound", [0.0, -0.5])
def test_uniform_init_rejects_nonpositive_bound(bound):
    with pytest.raises(ValueError):
        uniform_init(make_rng(0), (2,), bound)


def test_precision_selection():
    assert dtype_for(32) == np.float32 and dtype_for(64) == np.float64
    assert as_tensor([1, 2], 32).dtype == np.float32
    assert uniform_init(make_rng(0), (3,), 1.0, precision=32).dtype == np.float32
    with pytest.raises(ValueError):
        dtype_for(16)


def test_glorot_bound():
    assert glorot_bound(300, 300) == pytest.approx(math.sqrt(6 / 600))


def test_rng_stream_is_pinned():
    # PCG64 draws for seed 1; a change here breaks cross-run reproducibility
    draws = make_rng(1).integers(0, 1000, size=5)
    np.testing.assert_array_equal(draws, make_rng(1).integers(0, 1000, size=5))
    assert make_rng(1).random() == np.random.Generator(np.random.PCG64(1)).random()
