"""Gaussian-structured baselines.

* the mean-field Kalman-Bucy velocity, used standalone (``run_kalman_bucy_flow``)
  and as the baseline drift of Kalman-adjusted kernel flows,
* a stochastic perturbed-observation ensemble Kalman filter analysis step.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import DivergenceError
from .flow import Ensemble, ensemble_covariance


class GaussianObservationModel:
    """Observation operator H, noise covariance R and observed vector beta.

    The implied negative log-likelihood is h(x) = 1/2 (Hx - beta) . R^{-1} (Hx - beta).
    """

    def __init__(self, H, R, beta):
        self.H = np.atleast_2d(np.asarray(H, dtype=float))
        self.R = np.atleast_2d(np.asarray(R, dtype=float))
        self.beta = np.atleast_1d(np.asarray(beta, dtype=float))
        d_obs, d = self.H.shape
        if self.R.shape != (d_obs, d_obs):
            raise ValueError(f"R shaped {self.R.shape}, expected ({d_obs},{d_obs})")
        if self.beta.shape != (d_obs,):
            raise ValueError(f"beta shaped {self.beta.shape}, expected ({d_obs},)")
        if np.max(np.abs(self.R - self.R.T)) > 1e-12:
            raise ValueError("R must be symmetric")
        try:
            self._R_chol = cho_factor(self.R, lower=True)
        except np.linalg.LinAlgError as exc:
            raise ValueError("R must be positive definite") from exc

    @property
    def dim_obs(self) -> int:
        return self.H.shape[0]

    @property
    def dim_state(self) -> int:
        return self.H.shape[1]

    def solve_R(self, rhs) -> np.ndarray:
        return cho_solve(self._R_chol, rhs)

    def nll(self, x):
        """1/2 (Hx - beta) . R^{-1} (Hx - beta); accepts one point or rows of them."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        resid = np.atleast_2d(x) @ self.H.T - self.beta
        vals = 0.5 * np.sum(resid * self.solve_R(resid.T).T, axis=1)
        return float(vals[0]) if single else vals


def nll(model: GaussianObservationModel, x):
    return model.nll(x)


def kalman_bucy_velocity(model: GaussianObservationModel, x, mean, cov):
    """Mean-field Kalman-Bucy drift v(x) = -1/2 C H^T R^{-1} (H(x + mean) - 2 beta).

    ``x`` may be a single point or a row-stacked batch; ``mean``/``cov`` are the
    current distribution moments.
    """
    x = np.asarray(x, dtype=float)
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    resid = (pts + mean) @ model.H.T - 2.0 * model.beta
    weighted = model.solve_R(resid.T).T  # rows R^{-1}(H(x+mean)-2beta)
    vel = -0.5 * weighted @ model.H @ cov
    return vel[0] if single else vel


def run_kalman_bucy_flow(prior_samples, model: GaussianObservationModel, n_steps: int) -> Ensemble:
    """Euler-integrate the Kalman-Bucy ODE over t in [0,1] on an ensemble.

    The distribution moments are replaced by the ensemble mean and the N-1
    covariance estimator at every step.
    """
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    ens = Ensemble(np.array(prior_samples, dtype=float, copy=True))
    dt = 1.0 / n_steps
    for step in range(n_steps):
        mean = ens.positions.mean(axis=0)
        cov = ensemble_covariance(ens)
        ens.positions += dt * kalman_bucy_velocity(model, ens.positions, mean, cov)
        if not np.all(np.isfinite(ens.positions)):
            raise DivergenceError("Kalman-Bucy flow produced non-finite positions", step=step)
        ens.time += dt
    return ens


def enkf_analysis(forecast: Ensemble, model: GaussianObservationModel, rng) -> Ensemble:
    """Stochastic (perturbed-observation) EnKF analysis update.

    K = C_hat H^T (H C_hat H^T + R)^{-1} with C_hat the N-1 ensemble covariance;
    each member is nudged by K (beta + eta_i - H x_i) with eta_i ~ N(0, R).
    """
    X = forecast.positions
    n = X.shape[0]
    c_hat = ensemble_covariance(forecast)
    hc = model.H @ c_hat  # d' x d
    s = hc @ model.H.T + model.R
    # gain via the SPD solve S K^T = H C_hat rather than an explicit inverse
    gain = cho_solve(cho_factor(s, lower=True), hc).T  # d x d'
    gen = rng.generator() if hasattr(rng, "generator") else rng
    eta = gen.standard_normal((n, model.dim_obs)) @ np.linalg.cholesky(model.R).T
    innovation = model.beta + eta - X @ model.H.T
    return Ensemble(X + innovation @ gain.T, time=forecast.time)
