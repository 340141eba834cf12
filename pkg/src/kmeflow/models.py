"""Inference problems: priors, negative log-likelihoods, reference targets,
and 1-d quadrature for normalising constants.

Every likelihood used by the shipped experiments is available as a named
preset (see ``problem_preset``); arbitrary user likelihoods enter as plain
callables mapping an (N, d) array of points to N values.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.special import log_ndtr, logsumexp, ndtr

from .baselines import GaussianObservationModel
from .errors import ConfigError, NumericsError
from .sampling import normal_draws, sobol_gaussian

_LOG_2PI = math.log(2.0 * math.pi)

#: prior integration window, in prior standard deviations
_WINDOW_SIGMAS = 10.0


# ---------------------------------------------------------------------------
# priors


@dataclass(frozen=True)
class GaussianPrior:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=float)))
        object.__setattr__(self, "cov", np.atleast_2d(np.asarray(self.cov, dtype=float)))
        if self.cov.shape != (self.dim, self.dim):
            raise ValueError(f"cov shaped {self.cov.shape}, expected ({self.dim},{self.dim})")
        if np.min(np.linalg.eigvalsh(self.cov)) <= 0:
            raise ValueError("prior covariance must be positive definite")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def chol(self) -> np.ndarray:
        return np.linalg.cholesky(self.cov)

    def logpdf(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        diff = x - self.mean
        sol = np.linalg.solve(self.cov, diff.T).T
        _, logdet = np.linalg.slogdet(self.cov)
        vals = -0.5 * (np.sum(diff * sol, axis=1) + logdet + self.dim * _LOG_2PI)
        return vals if vals.size > 1 else float(vals[0])

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def sobol_samples(self, n: int, offset: int = 0) -> np.ndarray:
        return sobol_gaussian(self.dim, n, self.mean, self.chol(), offset=offset)

    def window(self) -> tuple[float, float]:
        if self.dim != 1:
            raise ValueError("integration window is defined for 1-d priors only")
        mu, sd = float(self.mean[0]), math.sqrt(float(self.cov[0, 0]))
        return mu - _WINDOW_SIGMAS * sd, mu + _WINDOW_SIGMAS * sd


@dataclass(frozen=True)
class MixturePrior:
    weights: np.ndarray
    means: np.ndarray  # (m, d)
    covs: np.ndarray  # (m, d, d)

    def __post_init__(self):
        object.__setattr__(self, "weights", np.atleast_1d(np.asarray(self.weights, dtype=float)))
        object.__setattr__(self, "means", np.atleast_2d(np.asarray(self.means, dtype=float)))
        covs = np.asarray(self.covs, dtype=float)
        if covs.ndim == 1:  # list of 1-d variances
            covs = covs.reshape(-1, 1, 1)
        if covs.shape != (self.means.shape[0], self.means.shape[1], self.means.shape[1]):
            raise ValueError(f"covs shaped {covs.shape}, expected (m, d, d)")
        object.__setattr__(self, "covs", covs)
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be positive and sum to 1")
        for c in self.covs:
            if np.min(np.linalg.eigvalsh(np.atleast_2d(c))) <= 0:
                raise ValueError("mixture covariances must be positive definite")

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    def _components(self):
        return [
            GaussianPrior(self.means[i], np.atleast_2d(self.covs[i]))
            for i in range(self.n_components)
        ]

    def logpdf(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        parts = np.stack(
            [np.atleast_1d(c.logpdf(x)) + math.log(w) for c, w in zip(self._components(), self.weights)]
        )
        vals = logsumexp(parts, axis=0)
        return vals if vals.size > 1 else float(vals[0])

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def sobol_samples(self, n: int, offset: int = 0) -> np.ndarray:
        """Stratified mixture draw: one Sobol stream, split across components.

        Component counts are proportional to the weights (largest remainder),
        and component c consumes its own contiguous block of the stream.
        """
        counts = _proportional_counts(self.weights, n)
        out = np.empty((n, self.dim))
        row = 0
        block = offset
        for comp, cnt in zip(self._components(), counts):
            if cnt:
                out[row : row + cnt] = comp.sobol_samples(cnt, offset=block)
            row += cnt
            block += cnt
        return out

    def window(self) -> tuple[float, float]:
        if self.dim != 1:
            raise ValueError("integration window is defined for 1-d priors only")
        sds = np.sqrt(self.covs.reshape(self.n_components, -1)[:, 0])
        lo = np.min(self.means[:, 0] - _WINDOW_SIGMAS * sds)
        hi = np.max(self.means[:, 0] + _WINDOW_SIGMAS * sds)
        return float(lo), float(hi)


Prior = GaussianPrior | MixturePrior


def _proportional_counts(weights, n: int) -> list[int]:
    raw = np.asarray(weights, dtype=float) * n
    counts = np.floor(raw).astype(int)
    rem = n - counts.sum()
    order = np.argsort(-(raw - counts))
    for i in range(rem):
        counts[order[i]] += 1
    return counts.tolist()


# ---------------------------------------------------------------------------
# reference targets (1-d, used for evaluation and plots)


@dataclass(frozen=True)
class AnalyticGaussian:
    mean: float
    var: float

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(-((x - self.mean) ** 2) / (2 * self.var)) / math.sqrt(2 * math.pi * self.var)

    def sample(self, n: int, rng) -> np.ndarray:
        return self.mean + math.sqrt(self.var) * normal_draws(rng, n, 1)[:, 0]


@dataclass(frozen=True)
class AnalyticMixture:
    weights: tuple
    means: tuple
    variances: tuple

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        total = np.zeros_like(x, dtype=float)
        for w, m, v in zip(self.weights, self.means, self.variances):
            total += w * np.exp(-((x - m) ** 2) / (2 * v)) / math.sqrt(2 * math.pi * v)
        return total

    def sample(self, n: int, rng) -> np.ndarray:
        # stratified component counts: binomial count noise would otherwise
        # dominate Wasserstein comparisons across well-separated modes
        gen = rng.generator() if hasattr(rng, "generator") else rng
        counts = _proportional_counts(self.weights, n)
        comps = np.repeat(np.arange(len(self.weights)), counts)
        z = gen.standard_normal(n)
        means = np.asarray(self.means)[comps]
        sds = np.sqrt(np.asarray(self.variances))[comps]
        return means + sds * z


@dataclass(frozen=True)
class SkewNormal1D:
    shape: float

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return 2.0 * np.exp(-0.5 * x**2) / math.sqrt(2 * math.pi) * ndtr(self.shape * x)

    def mean(self) -> float:
        delta = self.shape / math.sqrt(1.0 + self.shape**2)
        return delta * math.sqrt(2.0 / math.pi)

    def sample(self, n: int, rng) -> np.ndarray:
        return sample_skew_normal_1d(self.shape, n, rng)


@dataclass(frozen=True)
class NumericTarget1D:
    """Tabulated normalised density on a uniform grid, sampled by inverse CDF."""

    grid: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "grid", np.asarray(self.grid, dtype=float))
        object.__setattr__(self, "density", np.asarray(self.density, dtype=float))
        if np.any(self.density < 0):
            raise ValueError("density must be non-negative")
        mass = np.trapezoid(self.density, self.grid)
        if abs(mass - 1.0) > 1e-6:
            raise ValueError(f"density integrates to {mass}, expected 1 within 1e-6")

    def pdf(self, x):
        return np.interp(np.asarray(x, dtype=float), self.grid, self.density)

    def sample(self, n: int, rng) -> np.ndarray:
        gen = rng.generator() if hasattr(rng, "generator") else rng
        mids = 0.5 * (self.density[1:] + self.density[:-1]) * np.diff(self.grid)
        cdf = np.concatenate([[0.0], np.cumsum(mids)])
        cdf /= cdf[-1]
        return np.interp(gen.uniform(size=n), cdf, self.grid)


# ---------------------------------------------------------------------------
# likelihood builders


def skew_nll(gamma, x):
    """-log(2 Phi(gamma . x)), stable far into the lower tail."""
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    x = np.asarray(x, dtype=float)
    if x.ndim == 1 and x.shape == gamma.shape:
        return float(-(math.log(2.0) + log_ndtr(float(gamma @ x))))
    proj = np.atleast_2d(x) @ gamma
    return -(math.log(2.0) + log_ndtr(proj))


def sample_skew_normal_1d(shape: float, n: int, rng) -> np.ndarray:
    """Standard skew-normal draws via the two-normal construction."""
    if n < 1:
        raise ValueError("need n >= 1 samples")
    delta = shape / math.sqrt(1.0 + shape**2)
    z = normal_draws(rng, n, 2)
    return delta * np.abs(z[:, 0]) + math.sqrt(1.0 - delta**2) * z[:, 1]


def gaussian_nll(mean, cov, x):
    """Negative log density of N(mean, cov) at x (including the constant)."""
    return -prior_logpdf(GaussianPrior(mean, cov), x)


def mixture_nll(weights, means, covs, x):
    """Negative log density of a Gaussian mixture at x (log-sum-exp inside)."""
    return -prior_logpdf(MixturePrior(weights, means, covs), x)


def prior_logpdf(prior: Prior, x):
    return prior.logpdf(x)


# ---------------------------------------------------------------------------
# inference problems


@dataclass
class InferenceProblem:
    """Prior plus negative log-likelihood, with optional Gaussian structure
    (enables the Kalman baselines) and optional reference target."""

    prior: Prior
    nll: "callable"
    gaussian_structure: GaussianObservationModel | None = None
    reference: object | None = None
    name: str = "custom"
    _log_z: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        if self.gaussian_structure is not None:
            rng = np.random.default_rng(20240817)
            pts = rng.normal(size=(8, self.prior.dim))
            got = np.asarray(self.nll(pts), dtype=float)
            want = self.gaussian_structure.nll(pts)
            if np.max(np.abs(got - want)) > 1e-10 * (1.0 + np.max(np.abs(want))):
                raise ValueError(
                    "nll disagrees with the declared Gaussian observation model"
                )

    def log_normalizer(self, t: float = 1.0, tol: float = 1e-10) -> float:
        """log integral of exp(-t h) against the prior (1-d, adaptive quadrature)."""
        if self.prior.dim != 1:
            raise ValueError("normalising constants are computed for 1-d problems only")
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"t must lie in [0, 1], got {t}")
        key = (round(t, 12), tol)
        if key not in self._log_z:
            with self._lock:
                if key not in self._log_z:
                    self._log_z[key] = self._compute_log_z(t, tol)
        return self._log_z[key]

    def _compute_log_z(self, t: float, tol: float) -> float:
        lo, hi = self.prior.window()

        def integrand(x):
            pt = np.array([[x]])
            return math.exp(-t * float(np.asarray(self.nll(pt)).ravel()[0])) * float(
                self.prior.pdf(pt)
            )

        # panel subdivision keeps sharply peaked integrands inside the
        # adaptive rule's subdivision budget
        panels = 20
        edges = np.linspace(lo, hi, panels + 1)
        z = 0.0
        err = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            zi, ei = quad(integrand, a, b, epsabs=tol / panels, limit=200)
            z += zi
            err += ei
        if not np.isfinite(z) or z <= 0 or err > max(tol, 1e-13):
            raise NumericsError(
                f"normalising constant quadrature reached tolerance {err:.3e} "
                f"(requested {tol:.3e})"
            )
        return math.log(z)

    def target_pdf(self, x, tol: float = 1e-10):
        """Posterior density exp(-h) * prior / Z at time t = 1."""
        log_z = self.log_normalizer(1.0, tol)
        x = np.asarray(x, dtype=float)
        pts = x.reshape(-1, 1) if x.ndim <= 1 else x
        vals = np.exp(-np.asarray(self.nll(pts), dtype=float) - log_z) * np.atleast_1d(
            self.prior.pdf(pts)
        )
        return float(vals[0]) if np.ndim(x) == 0 else vals

    def numeric_reference(self, n_grid: int = 4001, tol: float = 1e-10) -> NumericTarget1D:
        lo, hi = self.prior.window()
        grid = np.linspace(lo, hi, n_grid)
        pdf = self.target_pdf(grid, tol=tol)
        pdf = pdf / np.trapezoid(pdf, grid)
        return NumericTarget1D(grid, pdf)


def log_normalizer(problem: InferenceProblem, t: float, tol: float = 1e-10) -> float:
    return problem.log_normalizer(t, tol)


def target_pdf(problem: InferenceProblem, x, tol: float = 1e-10):
    return problem.target_pdf(x, tol)


# ---------------------------------------------------------------------------
# presets (parameter sets of the shipped experiments)


def _half_square_norm_model(d: int) -> GaussianObservationModel:
    """Observation model whose negative log-likelihood is |x|^2 / 2."""
    return GaussianObservationModel(np.eye(d), np.eye(d), np.zeros(d))


def problem_preset(name: str, dim: int = 1) -> InferenceProblem:
    """Named inference problems used by the experiment harness.

    gauss-to-gauss       N(4,1) prior, h = x^2/2, posterior N(2, 1/2)
    mixture-to-mixture   (N(4,1)+N(-4,1))/2 prior, h = x^2/2
    gauss-to-mixture     N(0.5,1) prior, h = (3 - x^2)^2 (bimodal posterior)
    skew-normal          N(0, I_d) prior, h = -log(2 Phi(-2 x_1))
    bandwidth            N(1, I_10) prior, h = |x|^2/2, posterior N(1/2, I/2)
    """
    key = name.strip().lower()
    if key == "gauss-to-gauss":
        prior = GaussianPrior([4.0], [[1.0]])
        model = _half_square_norm_model(1)
        return InferenceProblem(
            prior, model.nll, gaussian_structure=model,
            reference=AnalyticGaussian(2.0, 0.5), name=key,
        )
    if key == "mixture-to-mixture":
        prior = MixturePrior([0.5, 0.5], [[4.0], [-4.0]], [[[1.0]], [[1.0]]])
        model = GaussianObservationModel([[1.0]], [[1.0]], [0.0])
        return InferenceProblem(
            prior, model.nll, gaussian_structure=model,
            reference=AnalyticMixture((0.5, 0.5), (2.0, -2.0), (0.5, 0.5)), name=key,
        )
    if key == "gauss-to-mixture":
        prior = GaussianPrior([0.5], [[1.0]])

        def double_well(x):
            x = np.atleast_2d(np.asarray(x, dtype=float))
            return (3.0 - x[:, 0] ** 2) ** 2

        problem = InferenceProblem(prior, double_well, name=key)
        problem.reference = problem.numeric_reference()
        return problem
    if key == "skew-normal":
        if dim < 1:
            raise ConfigError(f"skew-normal dimension must be >= 1, got {dim}")
        prior = GaussianPrior(np.zeros(dim), np.eye(dim))
        gamma = np.zeros(dim)
        gamma[0] = -2.0
        return InferenceProblem(
            prior,
            lambda x: skew_nll(gamma, x),
            reference=SkewNormal1D(-2.0),
            name=key,
        )
    if key == "bandwidth":
        prior = GaussianPrior(np.ones(10), np.eye(10))
        model = _half_square_norm_model(10)
        return InferenceProblem(
            prior, model.nll, gaussian_structure=model,
            reference=AnalyticGaussian(0.5, 0.5), name=key,
        )
    raise ConfigError(f"unknown problem preset {name!r}")
