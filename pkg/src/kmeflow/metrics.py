"""Evaluation metrics: squared MMD, exact 1-d Wasserstein-2, moment summaries,
and the spacetime-averaged RMSE used by the Lorenz-63 benchmark."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateEnsembleError
from .kernels import Kernel


@dataclass(frozen=True)
class MomentSummary:
    mean: np.ndarray
    cov_unbiased: np.ndarray  # divisor N-1
    cov_biased: np.ndarray  # divisor N


def moments(xs) -> MomentSummary:
    """Mean and (biased/unbiased) covariance of a row-stacked sample."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    n = xs.shape[0]
    if n < 2:
        raise DegenerateEnsembleError(f"covariance needs N >= 2 samples, got {n}")
    mean = xs.mean(axis=0)
    centred = xs - mean
    cov_u = centred.T @ centred / (n - 1)
    cov_b = cov_u * ((n - 1) / n)
    return MomentSummary(mean=mean, cov_unbiased=cov_u, cov_biased=cov_b)


def mmd2(kernel: Kernel, xs, ys) -> float:
    """Biased (V-statistic) squared maximum mean discrepancy.

    (1/N^2) sum k(x_i, x_j) - (2/NM) sum k(x_i, y_j) + (1/M^2) sum k(y_i, y_j),
    clipped at zero: the plug-in estimator is non-negative in exact arithmetic.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    if xs.shape[1] != ys.shape[1]:
        raise ValueError(f"dimension mismatch: {xs.shape[1]} vs {ys.shape[1]}")
    # canonical argument order makes the float summation sequence, and hence
    # the result, exactly symmetric in (xs, ys)
    if (ys.shape[0], ys.tobytes()) < (xs.shape[0], xs.tobytes()):
        xs, ys = ys, xs
    val = (
        kernel.matrix(xs, xs).mean()
        - 2.0 * kernel.matrix(xs, ys).mean()
        + kernel.matrix(ys, ys).mean()
    )
    return max(float(val), 0.0)


def mmd2_quadratic_closed_form(xs, ys) -> float:
    """Quadratic-kernel MMD^2 from first and second moments.

    Equals 2 ||mu_x - mu_y||^2 + ||S_x - S_y||_F^2 with S the biased second
    moment matrix; exact algebraic identity with the V-statistic, used as a
    cross-check between the kernel path and the moment path.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    mx, my = xs.mean(axis=0), ys.mean(axis=0)
    sx = xs.T @ xs / xs.shape[0]
    sy = ys.T @ ys / ys.shape[0]
    return float(2.0 * np.sum((mx - my) ** 2) + np.sum((sx - sy) ** 2))


def w2_1d(xs, ys) -> float:
    """Exact Wasserstein-2 distance between equal-size 1-d empirical measures.

    Sorted coupling is the optimal assignment in one dimension:
    sqrt((1/N) sum_i (sort(xs)_i - sort(ys)_i)^2).
    """
    xs = np.asarray(xs, dtype=float).ravel()
    ys = np.asarray(ys, dtype=float).ravel()
    if xs.size != ys.size:
        raise ValueError(f"w2_1d needs equal sample counts, got {xs.size} and {ys.size}")
    if xs.size == 0:
        raise ValueError("w2_1d needs at least one sample")
    diff = np.sort(xs) - np.sort(ys)
    return float(np.sqrt(np.mean(diff**2)))


def rmse_spacetime(estimates, observations) -> float:
    """Per-coordinate RMSE over cycles, averaged across the three coordinates."""
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    obs = np.atleast_2d(np.asarray(observations, dtype=float))
    if est.shape != obs.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {obs.shape}")
    per_coord = np.sqrt(np.mean((est - obs) ** 2, axis=0))
    return float(np.mean(per_coord))
