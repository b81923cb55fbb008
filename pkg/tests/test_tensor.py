import numpy as np
import pytest

import demoire as dm
from demoire.errors import ShapeError
from demoire.gradcheck import finite_diff_check, kink_free_uniform
from demoire.tensor import Add, EwMul, Tensor


def test_zero_fill():
    t = dm.full((1, 1, 2, 2), 0.0)
    assert t.data.tolist() == [[[[0.0, 0.0], [0.0, 0.0]]]]


def test_constant_fill():
    t = dm.full((1, 2, 1, 1), 3.5)
    assert t.data.reshape(-1).tolist() == [3.5, 3.5]


def test_seeded_uniform_is_deterministic():
    a = dm.uniform((1, 1, 2, 2), -1, 1, seed=7)
    b = dm.uniform((1, 1, 2, 2), -1, 1, seed=7)
    assert np.array_equal(a.data, b.data)
    c = dm.uniform((1, 1, 2, 2), -1, 1, seed=8)
    assert not np.array_equal(a.data, c.data)


@pytest.mark.parametrize("shape", [(0, 1, 2, 2), (1, 1, 0, 2), (1, 2, 3)])
def test_invalid_shapes_rejected(shape):
    with pytest.raises(ShapeError):
        dm.zeros(shape)


def test_grad_shape_must_match():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((1, 1, 2, 2)), grad=np.zeros((1, 1, 2, 3)))


def test_add_values():
    a = dm.from_array(np.array([1.0, 2.0]).reshape(1, 2, 1, 1))
    b = dm.from_array(np.array([3.0, 4.0]).reshape(1, 2, 1, 1))
    assert dm.add(a, b).data.reshape(-1).tolist() == [4.0, 6.0]


def test_mul_scalar_zero():
    a = dm.from_array(np.array([1.0, 2.0]).reshape(1, 2, 1, 1))
    assert dm.mul_scalar(a, 0.0).data.reshape(-1).tolist() == [0.0, 0.0]


def test_add_shape_mismatch():
    with pytest.raises(ShapeError):
        dm.add(dm.zeros((1, 1, 2, 2)), dm.zeros((1, 1, 2, 3)))


def test_add_and_mul_commute_bitwise():
    a = dm.uniform((2, 3, 4, 4), -1, 1, seed=1)
    b = dm.uniform((2, 3, 4, 4), -1, 1, seed=2)
    assert np.array_equal(dm.add(a, b).data, dm.add(b, a).data)
    assert np.array_equal(dm.elementwise_mul(a, b).data,
                          dm.elementwise_mul(b, a).data)


def test_elementwise_mul_gradient_vs_finite_differences():
    a = kink_free_uniform((2, 2, 3, 3), seed=10)
    b = kink_free_uniform((2, 2, 3, 3), seed=11)
    report = finite_diff_check(EwMul(), [a, b], step=1e-4, tol=1e-5)
    assert report.passed, report


def test_add_gradient_vs_finite_differences():
    a = kink_free_uniform((1, 2, 3, 3), seed=12)
    b = kink_free_uniform((1, 2, 3, 3), seed=13)
    report = finite_diff_check(Add(), [a, b], tol=1e-5)
    assert report.passed, report


def test_forward_purity():
    a = dm.uniform((1, 2, 3, 3), -1, 1, seed=3)
    b = dm.uniform((1, 2, 3, 3), -1, 1, seed=4)
    first = dm.elementwise_mul(a, b).data
    second = dm.elementwise_mul(a, b).data
    assert np.array_equal(first, second)
