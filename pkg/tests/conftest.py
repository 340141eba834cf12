import os

# single-threaded BLAS: the suite mixes small BLAS calls with plain numpy,
# and OpenBLAS worker spin-wait starves the latter on small machines
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np
import pytest

try:  # effective even if numpy was already imported by a plugin
    from threadpoolctl import threadpool_limits

    threadpool_limits(1)
except ImportError:
    pass


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def central_difference_gradient(f, x, step):
    """Independent finite-difference oracle for gradient checks."""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        grad[i] = (f(x + e) - f(x - e)) / (2.0 * step)
    return grad
