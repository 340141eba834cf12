import itertools
import math

import numpy as np
import pytest

from kmeflow.errors import DegenerateEnsembleError
from kmeflow.kernels import RBF, Quadratic
from kmeflow.metrics import (
    mmd2,
    mmd2_quadratic_closed_form,
    moments,
    rmse_spacetime,
    w2_1d,
)


def test_mmd2_identical_sets_is_zero():
    xs = np.array([[0.0], [1.0], [2.5]])
    assert mmd2(RBF(1.0), xs, xs) == 0.0


def test_mmd2_two_points_rbf():
    val = mmd2(RBF(1.0), [[0.0]], [[1.0]])
    assert val == pytest.approx(2.0 - 2.0 * math.exp(-0.5), rel=1e-12)


def test_mmd2_symmetry(rng):
    xs = rng.normal(size=(8, 2))
    ys = rng.normal(size=(5, 2))
    for k in (RBF(0.9), Quadratic()):
        assert mmd2(k, xs, ys) == mmd2(k, ys, xs)


def test_quadratic_mmd_matches_moment_identity(rng):
    # links the kernel path with the moment path (exact algebraic identity)
    for _ in range(30):
        n, m = rng.integers(2, 51, size=2)
        d = int(rng.integers(1, 6))
        xs = rng.normal(size=(n, d)) * rng.uniform(0.5, 2.0)
        ys = rng.normal(size=(m, d)) + rng.normal(size=d)
        a = mmd2(Quadratic(), xs, ys)
        b = mmd2_quadratic_closed_form(xs, ys)
        assert a == pytest.approx(b, rel=1e-10, abs=1e-12)


def test_mmd2_never_negative(rng):
    xs = rng.normal(size=(40, 3))
    ys = xs + 1e-9 * rng.normal(size=xs.shape)
    assert mmd2(RBF(1.0), xs, ys) >= 0.0


def test_w2_identical():
    assert w2_1d([1.0, 2.0], [2.0, 1.0]) == 0.0


def test_w2_single_points():
    assert w2_1d([0.0], [3.0]) == 3.0


def test_w2_hand_example():
    assert w2_1d([0.0, 1.0], [2.0, 5.0]) == pytest.approx(math.sqrt(10.0), rel=1e-14)


def test_w2_matches_brute_force_assignment(rng):
    for _ in range(20):
        n = int(rng.integers(1, 7))
        xs = rng.normal(size=n) * 2.0
        ys = rng.normal(size=n) * 2.0
        best = min(
            math.sqrt(np.mean((xs - ys[list(perm)]) ** 2))
            for perm in itertools.permutations(range(n))
        )
        assert w2_1d(xs, ys) == pytest.approx(best, abs=1e-12)


def test_w2_triangle_inequality(rng):
    for _ in range(25):
        a, b, c = rng.normal(size=(3, 9))
        assert w2_1d(a, c) <= w2_1d(a, b) + w2_1d(b, c) + 1e-12


def test_w2_rejects_unequal_lengths():
    with pytest.raises(ValueError):
        w2_1d([0.0, 1.0], [0.0])


def test_rmse_zero_on_equal():
    a = np.arange(12.0).reshape(4, 3)
    assert rmse_spacetime(a, a) == 0.0


def test_rmse_constant_offset():
    a = np.zeros((5, 3))
    assert rmse_spacetime(a + 1.0, a) == pytest.approx(1.0, rel=1e-14)


def test_rmse_hand_example():
    # x errors (3, 0) over two cycles, y and z exact
    est = np.array([[3.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    obs = np.zeros((2, 3))
    want = (1.0 / 3.0) * math.sqrt((9.0 + 0.0) / 2.0)
    assert rmse_spacetime(est, obs) == pytest.approx(want, rel=1e-14)
    assert want == pytest.approx(0.7071, abs=1e-4)


def test_rmse_shape_mismatch():
    with pytest.raises(ValueError):
        rmse_spacetime(np.zeros((3, 3)), np.zeros((4, 3)))


def test_moments_repeated_point():
    s = moments(np.array([[2.0, -1.0]] * 3))
    np.testing.assert_array_equal(s.cov_unbiased, np.zeros((2, 2)))
    np.testing.assert_array_equal(s.cov_biased, np.zeros((2, 2)))


def test_moments_two_points():
    s = moments(np.array([[-1.0], [1.0]]))
    assert s.mean[0] == 0.0
    assert s.cov_unbiased[0, 0] == 2.0
    assert s.cov_biased[0, 0] == 1.0


def test_moments_biased_unbiased_relation(rng):
    xs = rng.normal(size=(17, 4))
    s = moments(xs)
    np.testing.assert_array_equal(s.cov_biased, s.cov_unbiased * (16 / 17))


def test_moments_needs_two_samples():
    with pytest.raises(DegenerateEnsembleError):
        moments(np.array([[1.0, 2.0]]))
