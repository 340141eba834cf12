"""Positive definite kernels with pointwise evaluation and analytic gradients.

Two kernels are supported:

* ``RBF(bandwidth)``:     k(x, y) = exp(-||x - y||^2 / (2 sigma^2))
* ``Quadratic()``:        k(x, y) = (x . y + 1)^2

The rest of the package touches kernels only through ``__call__`` (pointwise
evaluation), ``grad_x`` (gradient in the first argument) and the vectorised
helpers ``matrix`` / ``grad_x_table``.  A new kernel only has to provide the
same surface.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist


def _as_points(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"expected two vectors of equal dimension, got {x.shape} and {y.shape}")
    return x, y


class Kernel:
    """Common surface for positive definite kernels."""

    name = "kernel"

    def __call__(self, x, y) -> float:
        raise NotImplementedError

    def grad_x(self, x, y) -> np.ndarray:
        """Gradient of k(x, y) with respect to the first argument."""
        raise NotImplementedError

    def matrix(self, X, Y) -> np.ndarray:
        """Kernel matrix [k(X_i, Y_j)] for row-stacked point sets."""
        raise NotImplementedError

    def grad_x_table(self, X) -> np.ndarray:
        """Table D with D[l, i, :] = grad_x k(., .) evaluated at (X_l, X_i).

        This is the gradient in the *second* slot of k(X_i, .) at X_l, using
        the symmetry k(x, y) = k(y, x).  Shape (N, N, d).  Reference path for
        the Gram assembly; the flow engine has faster kernel-specific routes.
        """
        X = np.asarray(X, dtype=float)
        n = X.shape[0]
        out = np.empty((n, n, X.shape[1]))
        for l in range(n):
            for i in range(n):
                out[l, i] = self.grad_x(X[l], X[i])
        return out

    def describe(self) -> dict:
        return {"kernel": self.name}


class RBF(Kernel):
    """Gaussian kernel exp(-||x - y||^2 / (2 sigma^2)) with bandwidth sigma."""

    name = "rbf"

    def __init__(self, bandwidth: float):
        bandwidth = float(bandwidth)
        if not bandwidth > 0:
            raise ValueError(f"RBF bandwidth must be positive, got {bandwidth}")
        self.bandwidth = bandwidth

    def __call__(self, x, y) -> float:
        x, y = _as_points(x, y)
        # Direct subtraction: the expanded |x|^2+|y|^2-2x.y form cancels
        # catastrophically for the nearby particles a flow produces.
        diff = x - y
        return float(np.exp(-(diff @ diff) / (2.0 * self.bandwidth**2)))

    def grad_x(self, x, y) -> np.ndarray:
        x, y = _as_points(x, y)
        diff = x - y
        k = np.exp(-(diff @ diff) / (2.0 * self.bandwidth**2))
        return -(diff / self.bandwidth**2) * k

    def matrix(self, X, Y) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        sq = cdist(X, Y, "sqeuclidean")
        return np.exp(sq * (-1.0 / (2.0 * self.bandwidth**2)))

    def describe(self) -> dict:
        return {"kernel": self.name, "bandwidth": self.bandwidth}

    def __repr__(self):
        return f"RBF(bandwidth={self.bandwidth})"


class Quadratic(Kernel):
    """Quadratic kernel (x . y + 1)^2; embeds first and second moments only."""

    name = "quadratic"

    def __call__(self, x, y) -> float:
        x, y = _as_points(x, y)
        return float((x @ y + 1.0) ** 2)

    def grad_x(self, x, y) -> np.ndarray:
        x, y = _as_points(x, y)
        return 2.0 * (x @ y + 1.0) * y

    def matrix(self, X, Y) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        return (X @ Y.T + 1.0) ** 2

    def __repr__(self):
        return "Quadratic()"


def kernel_from_name(name: str, bandwidth: float | None = None) -> Kernel:
    """Build a kernel from its config-file spelling."""
    key = name.strip().lower()
    if key == "rbf":
        if bandwidth is None:
            raise ValueError("kernel 'rbf' requires a bandwidth")
        return RBF(bandwidth)
    if key == "quadratic":
        return Quadratic()
    raise ValueError(f"unknown kernel {name!r}; expected 'rbf' or 'quadratic'")
