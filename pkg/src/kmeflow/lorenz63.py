"""Lorenz-63 truth simulation and the sequential forecast/inference loop.

The twin experiment: integrate the chaotic system deterministically with RK4,
observe the full state at every cycle end under additive Gaussian noise, and
alternate noisy ensemble forecasts with a Bayesian analysis step (EnKF, kernel
flow, or Kalman-adjusted kernel flow).  Tracking quality is the per-coordinate
RMSE of the posterior means against the observations, averaged over x, y, z.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import GaussianObservationModel, enkf_analysis
from .errors import DivergenceError, KmeFlowError, NumericsError, ScenarioFailureError
from .flow import Ensemble, FlowConfig, run_flow
from .kernels import Kernel
from .metrics import rmse_spacetime
from .sampling import SeededRng, sobol_gaussian


@dataclass(frozen=True)
class Lorenz63Params:
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0
    dt_inner: float = 0.001
    dt_obs: float = 0.05
    obs_noise_cov: np.ndarray = None
    forecast_noise_cov: np.ndarray = None
    n_cycles: int = 100
    x0: np.ndarray = None

    def __post_init__(self):
        if self.obs_noise_cov is None:
            object.__setattr__(self, "obs_noise_cov", 0.2 * np.eye(3))
        else:
            object.__setattr__(self, "obs_noise_cov", np.atleast_2d(np.asarray(self.obs_noise_cov, dtype=float)))
        if self.forecast_noise_cov is None:
            object.__setattr__(self, "forecast_noise_cov", (4.0 * self.dt_inner / 5.0) * np.eye(3))
        else:
            object.__setattr__(self, "forecast_noise_cov", np.atleast_2d(np.asarray(self.forecast_noise_cov, dtype=float)))
        if self.x0 is None:
            object.__setattr__(self, "x0", np.array([-0.587, -0.563, 16.870]))
        else:
            object.__setattr__(self, "x0", np.atleast_1d(np.asarray(self.x0, dtype=float)))
        for cov in (self.obs_noise_cov, self.forecast_noise_cov):
            if cov.shape != (3, 3) or np.min(np.linalg.eigvalsh(cov)) < -1e-12:
                raise ValueError("noise covariances must be 3x3 PSD matrices")
        ratio = self.dt_obs / self.dt_inner
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError(
                f"dt_obs/dt_inner must be a positive integer, got {self.dt_obs}/{self.dt_inner}"
            )

    @property
    def steps_per_cycle(self) -> int:
        return round(self.dt_obs / self.dt_inner)


def lorenz_rhs(p: Lorenz63Params, state) -> np.ndarray:
    """Right-hand side of the three coupled ODEs; broadcasts over rows."""
    s = np.asarray(state, dtype=float)
    x, y, z = s[..., 0], s[..., 1], s[..., 2]
    return np.stack(
        [p.sigma * (y - x), x * (p.rho - z) - y, x * y - p.beta * z], axis=-1
    )


def rk4_step(p: Lorenz63Params, state, dt: float) -> np.ndarray:
    """Classical fourth-order Runge-Kutta step; broadcasts over rows."""
    if dt < 0:
        raise ValueError(f"dt must be non-negative, got {dt}")
    s = np.asarray(state, dtype=float)
    k1 = lorenz_rhs(p, s)
    k2 = lorenz_rhs(p, s + 0.5 * dt * k1)
    k3 = lorenz_rhs(p, s + 0.5 * dt * k2)
    k4 = lorenz_rhs(p, s + dt * k3)
    out = s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise DivergenceError("RK4 step produced non-finite state")
    return out


def _noise_factor(cov: np.ndarray) -> np.ndarray:
    """Matrix L with L L^T = cov, tolerating zero or singular diagonal noise."""
    if not np.any(cov):
        return np.zeros_like(cov)
    if np.allclose(cov, np.diag(np.diag(cov))):
        return np.diag(np.sqrt(np.diag(cov)))
    return np.linalg.cholesky(cov)


def generate_truth_and_observations(p: Lorenz63Params, rng):
    """Deterministic RK4 truth from x0 plus noisy full-state observations.

    Returns the dense truth trajectory (n_cycles * steps_per_cycle + 1 states)
    and one observation per cycle, taken at the cycle end times.
    """
    gen = rng.generator() if hasattr(rng, "generator") else rng
    steps = p.steps_per_cycle
    truth = np.empty((p.n_cycles * steps + 1, 3))
    truth[0] = p.x0
    state = p.x0.copy()
    for i in range(p.n_cycles * steps):
        state = rk4_step(p, state, p.dt_inner)
        truth[i + 1] = state
    xi = gen.standard_normal((p.n_cycles, 3)) @ _noise_factor(p.obs_noise_cov).T
    observations = truth[steps::steps] + xi
    return truth, observations


def forecast_ensemble(p: Lorenz63Params, e: Ensemble, rng) -> Ensemble:
    """Propagate every member over one observation window with noisy RK4.

    After each inner step the positions are perturbed by iid draws from the
    forecast noise distribution.
    """
    if e.positions.shape[1] != 3:
        raise ValueError("Lorenz ensembles live in R^3")
    gen = rng.generator() if hasattr(rng, "generator") else rng
    X = e.positions.copy()
    noisy = bool(np.any(p.forecast_noise_cov))
    chol = _noise_factor(p.forecast_noise_cov) if noisy else None
    for _ in range(p.steps_per_cycle):
        X = rk4_step(p, X, p.dt_inner)
        if noisy:
            X += gen.standard_normal(X.shape) @ chol.T
    return Ensemble(X, time=e.time + p.dt_obs)


#: observation noise precision used in the per-cycle likelihoods (R = I/5)
_OBS_PRECISION = 5.0


@dataclass(frozen=True)
class AssimilationScenario:
    """One filtering configuration of the twin experiment."""

    params: Lorenz63Params
    method: str  # "enkf" | "kme" | "kme-kalman" | "none"
    ensemble_size: int
    kernel: Kernel | None = None
    flow: FlowConfig | None = None
    prior_mean: np.ndarray = None
    prior_cov: np.ndarray = None
    n_replicates: int = 1
    seed: int = 0
    max_retries: int = 5
    divergence_norm: float = 1e3

    def __post_init__(self):
        if self.method not in ("enkf", "kme", "kme-kalman", "none"):
            raise ValueError(f"unknown assimilation method {self.method!r}")
        if self.ensemble_size < 2:
            raise ValueError("ensemble_size must be >= 2")
        if self.n_replicates < 1:
            raise ValueError("n_replicates must be >= 1")
        if self.method in ("kme", "kme-kalman") and (self.kernel is None or self.flow is None):
            raise ValueError(f"method {self.method!r} needs a kernel and a flow config")
        if self.prior_mean is None:
            object.__setattr__(self, "prior_mean", self.params.x0.copy())
        else:
            object.__setattr__(self, "prior_mean", np.atleast_1d(np.asarray(self.prior_mean, dtype=float)))
        if self.prior_cov is None:
            object.__setattr__(self, "prior_cov", 0.01 * np.eye(3))
        else:
            object.__setattr__(self, "prior_cov", np.atleast_2d(np.asarray(self.prior_cov, dtype=float)))


@dataclass
class AssimilationResult:
    means: np.ndarray  # n_cycles x 3 posterior means
    observations: np.ndarray  # n_cycles x 3
    rmse: float
    retries: int
    wall_time: float


def _observation_model(beta: np.ndarray) -> GaussianObservationModel:
    return GaussianObservationModel(np.eye(3), np.eye(3) / _OBS_PRECISION, beta)


def _single_attempt(sc: AssimilationScenario, rng: SeededRng, nll_factory) -> AssimilationResult:
    params = sc.params
    gen = rng.generator()
    _, observations = generate_truth_and_observations(params, gen)
    ensemble = Ensemble(
        sobol_gaussian(3, sc.ensemble_size, sc.prior_mean, np.linalg.cholesky(sc.prior_cov))
    )
    means = np.empty((params.n_cycles, 3))
    for j in range(params.n_cycles):
        ensemble = forecast_ensemble(params, ensemble, gen)
        beta = observations[j]
        if sc.method == "enkf":
            ensemble = enkf_analysis(ensemble, _observation_model(beta), gen)
        elif sc.method in ("kme", "kme-kalman"):
            model = _observation_model(beta)
            cfg = sc.flow if sc.method == "kme" else replace(sc.flow, baseline=model)
            nll = model.nll if nll_factory is None else nll_factory(beta)
            ensemble = run_flow(ensemble.positions, sc.kernel, cfg, nll)
            ensemble = Ensemble(ensemble.positions, time=(j + 1) * params.dt_obs)
        norms = np.linalg.norm(ensemble.positions, axis=1)
        if not np.all(np.isfinite(ensemble.positions)) or np.max(norms) > sc.divergence_norm:
            raise DivergenceError(
                f"ensemble left the attractor region at cycle {j} "
                f"(max |X| = {np.max(norms):.3e})",
                step=j,
            )
        means[j] = ensemble.positions.mean(axis=0)
    return AssimilationResult(
        means=means,
        observations=observations,
        rmse=rmse_spacetime(means, observations),
        retries=0,
        wall_time=0.0,
    )


def run_assimilation(
    sc: AssimilationScenario, replicate: int = 0, nll_factory=None
) -> AssimilationResult:
    """Run one replicate of the scenario, retrying on divergence.

    A diverged attempt is discarded and rerun with a fresh derived seed, up to
    ``max_retries`` times; the retry count is reported in the result.
    """
    t0 = _time.perf_counter()
    last_error = None
    for attempt in range(sc.max_retries + 1):
        rng = SeededRng(sc.seed, (replicate, attempt))
        try:
            result = _single_attempt(sc, rng, nll_factory)
            result.retries = attempt
            result.wall_time = _time.perf_counter() - t0
            return result
        except (DivergenceError, NumericsError) as exc:
            last_error = exc
    raise ScenarioFailureError(
        f"replicate {replicate} of method {sc.method!r} (N={sc.ensemble_size}) "
        f"diverged in all {sc.max_retries + 1} attempts; last error: {last_error}",
        retries=sc.max_retries,
    )
