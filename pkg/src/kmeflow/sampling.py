"""Reproducible random and quasi-random number generation.

Gaussian prior ensembles are drawn from an (unscrambled) Sobol sequence pushed
through the normal inverse CDF; everything stochastic inside the experiment
loops (forecast noise, EnKF perturbations, reference draws) uses seeded PCG64
streams derived from a single root seed, so runs are reproducible from
``(seed, stream)`` alone.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

#: recorded in run metadata so output files identify the point set exactly
SOBOL_DIRECTION_NUMBERS = "scipy.stats.qmc.Sobol (Joe-Kuo 21201-dim direction numbers)"

MAX_SOBOL_DIM = 64


@dataclass(frozen=True)
class SeededRng:
    """A (seed, stream) pair naming one reproducible PCG64 stream."""

    seed: int
    stream: tuple[int, ...] = ()

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.stream)
        return np.random.Generator(np.random.PCG64(ss))

    def substream(self, *key: int) -> "SeededRng":
        return SeededRng(self.seed, self.stream + tuple(key))


def seeded_generator(seed: int, *stream: int) -> np.random.Generator:
    return SeededRng(int(seed), tuple(stream)).generator()


def sobol_points(d: int, n: int, skip_first: bool = True, offset: int = 0) -> np.ndarray:
    """First ``n`` Sobol points in (0,1)^d, after ``offset`` skipped points.

    The index-0 point of the raw sequence is all zeros and maps to -inf under
    the normal inverse CDF, so it is skipped by default; the first emitted
    point is then the all-0.5 point.  ``offset`` (in units of points) lets
    replicates consume disjoint blocks of the same sequence.
    """
    if not 1 <= d <= MAX_SOBOL_DIM:
        raise ValueError(f"Sobol dimension must be in [1, {MAX_SOBOL_DIM}], got {d}")
    if n < 1:
        raise ValueError(f"need n >= 1 Sobol points, got {n}")
    if offset < 0:
        raise ValueError("offset must be non-negative")
    start = (1 if skip_first else 0) + offset
    with warnings.catch_warnings():
        # drawing a non power-of-two count is deliberate here
        warnings.simplefilter("ignore", UserWarning)
        sampler = qmc.Sobol(d=d, scramble=False)
        if start:
            sampler.fast_forward(start)
        pts = sampler.random(n)
    if skip_first and not np.all((pts > 0.0) & (pts < 1.0)):
        raise RuntimeError("Sobol block contains boundary points; cannot map to normals")
    return pts


def normal_inverse_cdf(p):
    """Standard normal inverse CDF, accurate to ~1e-15 on (0, 1)."""
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0.0) | (p >= 1.0)):
        raise ValueError("normal_inverse_cdf requires p strictly inside (0, 1)")
    out = ndtri(p)
    return float(out) if out.ndim == 0 else out


def sobol_gaussian(d: int, n: int, mean, cov_chol, offset: int = 0) -> np.ndarray:
    """n Gaussian samples from a Sobol block: row i = mean + L Phi^{-1}(u_i).

    ``cov_chol`` is any matrix L with L L^T equal to the target covariance.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    L = np.atleast_2d(np.asarray(cov_chol, dtype=float))
    if mean.shape != (d,) or L.shape != (d, d):
        raise ValueError(f"mean/cov_chol shaped {mean.shape}/{L.shape}, expected ({d},)/({d},{d})")
    u = sobol_points(d, n, skip_first=True, offset=offset)
    z = ndtri(u)
    return mean + z @ L.T


def normal_draws(rng, n: int, d: int) -> np.ndarray:
    """n x d iid standard normals from a SeededRng or numpy Generator."""
    gen = rng.generator() if isinstance(rng, SeededRng) else rng
    return gen.standard_normal((n, d))
