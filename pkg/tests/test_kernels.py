import math

import numpy as np
import pytest

from kmeflow.kernels import RBF, Quadratic, kernel_from_name

from conftest import central_difference_gradient


def test_rbf_zero_distance():
    assert RBF(1.0)([0.0], [0.0]) == 1.0


def test_rbf_unit_distance_squared():
    assert RBF(1.0)([0.0], [math.sqrt(2.0)]) == pytest.approx(math.exp(-1.0), rel=1e-12)


def test_quadratic_at_ones():
    assert Quadratic()([1.0], [1.0]) == 4.0


def test_rbf_gradient_vanishes_at_coincidence():
    np.testing.assert_array_equal(RBF(1.0).grad_x([3.0], [3.0]), [0.0])


def test_quadratic_gradient_example():
    np.testing.assert_allclose(Quadratic().grad_x([0.0], [1.0]), [2.0])


def test_rbf_gradient_matches_finite_difference_example():
    k = RBF(2.0)
    x, y = np.array([1.0]), np.array([0.0])
    fd = central_difference_gradient(lambda z: k(z, y), x, 1e-5)
    np.testing.assert_allclose(k.grad_x(x, y), fd, rtol=1e-6)


@pytest.mark.parametrize("make", [lambda r: RBF(0.3 + 3.0 * r.random()), lambda r: Quadratic()])
def test_gradient_consistency_random(make, rng):
    for _ in range(100):
        k = make(rng)
        d = rng.integers(1, 6)
        x = rng.normal(size=d) * 2.0
        y = rng.normal(size=d) * 2.0
        step = 1e-5 * (1.0 + np.linalg.norm(x))
        fd = central_difference_gradient(lambda z: k(z, y), x, step)
        scale = np.maximum(np.abs(fd), 1e-8)
        assert np.max(np.abs(k.grad_x(x, y) - fd) / scale) < 1e-5


@pytest.mark.parametrize("kernel", [RBF(0.7), RBF(2.5), Quadratic()])
def test_symmetry(kernel, rng):
    for _ in range(100):
        d = rng.integers(1, 5)
        x, y = rng.normal(size=d), rng.normal(size=d)
        assert kernel(x, y) == kernel(y, x)


@pytest.mark.parametrize("kernel", [RBF(1.3), Quadratic()])
def test_gram_positive_semidefinite(kernel, rng):
    for _ in range(20):
        n = int(rng.integers(2, 31))
        d = int(rng.integers(1, 6))
        pts = rng.normal(size=(n, d)) * 3.0
        gram = kernel.matrix(pts, pts)
        np.testing.assert_allclose(gram, gram.T, atol=1e-13)
        assert np.linalg.eigvalsh(gram).min() >= -1e-8 * n


def test_dimension_mismatch_raises():
    with pytest.raises(ValueError):
        RBF(1.0)([0.0, 1.0], [0.0])
    with pytest.raises(ValueError):
        Quadratic().grad_x([0.0], [0.0, 1.0])


def test_bandwidth_must_be_positive():
    with pytest.raises(ValueError):
        RBF(0.0)
    with pytest.raises(ValueError):
        RBF(-1.0)


def test_kernel_from_name():
    k = kernel_from_name("rbf", 2.0)
    assert isinstance(k, RBF) and k.bandwidth == 2.0
    assert isinstance(kernel_from_name("quadratic"), Quadratic)
    with pytest.raises(ValueError):
        kernel_from_name("rbf")
    with pytest.raises(ValueError):
        kernel_from_name("matern")


def test_matrix_agrees_with_pointwise(rng):
    for kernel in (RBF(1.1), Quadratic()):
        X = rng.normal(size=(7, 3))
        Y = rng.normal(size=(5, 3))
        mat = kernel.matrix(X, Y)
        for i in range(7):
            for j in range(5):
                assert mat[i, j] == pytest.approx(kernel(X[i], Y[j]), rel=1e-12, abs=1e-14)
