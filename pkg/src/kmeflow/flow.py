"""Interacting particle flow driven by kernel mean embeddings.

One step of the flow on particles X^1..X^N:

1. pick the preconditioner C (default: N-1 ensemble covariance),
2. assemble the Gram operator
       G_ij = (1/N) sum_l grad_2 k(X^i, X^l) . C grad_2 k(X^l, X^j),
   where grad_2 is the kernel gradient in the second slot,
3. build the right-hand side f = h^k + v^{0,k} from the centred likelihood
   values and the baseline drift,
4. solve (1/N) (G + eps I) alpha = f,
5. move every particle by
       X^i <- X^i - (dt/N) C sum_j alpha_j grad_1 k(X^i, X^j) + dt v0(X^i).

Running n_steps such steps with dt = 1/n_steps transports prior samples
(t = 0) to approximate posterior samples (t = 1).

The Gram assembly has closed matrix forms for the two shipped kernels (a
handful of N x N matrix products instead of the O(N^2 d) gradient table);
``assemble_gram`` falls back to the generic table for any other kernel.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable

import numpy as np
from scipy.linalg import LinAlgWarning, cho_factor, cho_solve, solve

from .errors import (
    DegenerateEnsembleError,
    DivergenceError,
    LikelihoodEvaluationError,
    NumericsError,
)
from .kernels import RBF, Kernel, Quadratic

if TYPE_CHECKING:  # avoid a circular import; baselines imports Ensemble
    from .baselines import GaussianObservationModel

#: particle speeds above this abort the flow as diverged
MAX_PARTICLE_SPEED = 1e6

#: relative residual allowed for the regularised solve
SOLVE_RESIDUAL_TOL = 1e-8

#: dimension threshold between the stacked-factor and matrix-product Gram paths
_STACK_PATH_MAX_DIM = 6


@dataclass
class Ensemble:
    """N particles in R^d at one flow time; particle i is row i."""

    positions: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))

    @property
    def n_particles(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def mean(self) -> np.ndarray:
        return self.positions.mean(axis=0)


@dataclass(frozen=True)
class FlowConfig:
    """Step count, Tikhonov regularisation, preconditioner policy and baseline.

    ``preconditioner`` is "covariance" (ensemble covariance, recomputed every
    step), "identity", or a fixed symmetric positive definite matrix.
    ``baseline`` attaches a Kalman-Bucy drift built from a Gaussian
    observation model; ``None`` runs the pure kernel flow.
    """

    n_steps: int
    epsilon: float
    preconditioner: "str | np.ndarray" = "covariance"
    baseline: "GaussianObservationModel | None" = None

    def __post_init__(self):
        if int(self.n_steps) < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if isinstance(self.preconditioner, str):
            if self.preconditioner not in ("covariance", "identity"):
                raise ValueError(
                    f"preconditioner must be 'covariance', 'identity' or a matrix, "
                    f"got {self.preconditioner!r}"
                )
        else:
            mat = np.atleast_2d(np.asarray(self.preconditioner, dtype=float))
            if mat.shape[0] != mat.shape[1]:
                raise ValueError("fixed preconditioner must be square")
            if np.max(np.abs(mat - mat.T)) > 1e-12:
                raise ValueError("fixed preconditioner must be symmetric")
            if np.min(np.linalg.eigvalsh(mat)) <= 0:
                raise ValueError("fixed preconditioner must be positive definite")
            object.__setattr__(self, "preconditioner", mat)


@dataclass
class FlowStep:
    """Per-step diagnostics: weights, speeds and the solve residual."""

    step: int
    alpha: np.ndarray
    drift_norm: float  # max particle speed
    baseline_norm: float  # max baseline drift magnitude
    residual: float  # ||(1/N)(G + eps I) alpha - f||_2

    @property
    def max_alpha(self) -> float:
        return float(np.max(np.abs(self.alpha))) if self.alpha.size else 0.0

    def csv_row(self) -> tuple:
        return (self.step, self.residual, self.drift_norm, self.baseline_norm, self.max_alpha)


CSV_DIAGNOSTIC_COLUMNS = ("step", "residual", "drift_norm", "baseline_norm", "max_alpha")


def ensemble_covariance(e: Ensemble) -> np.ndarray:
    """Ensemble covariance with the N-1 divisor."""
    X = e.positions
    n = X.shape[0]
    if n < 2:
        raise DegenerateEnsembleError(f"covariance needs N >= 2 particles, got {n}")
    centred = X - X.mean(axis=0)
    return centred.T @ centred / (n - 1)


def _psd_factor(C: np.ndarray) -> np.ndarray:
    """Some L with L L^T = C, valid for singular PSD matrices."""
    vals, vecs = np.linalg.eigh(C)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def _check_psd_arg(C, d: int) -> np.ndarray:
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if C.shape != (d, d):
        raise ValueError(f"preconditioner shaped {C.shape}, expected ({d},{d})")
    if np.max(np.abs(C - C.T)) > 1e-10 * (1.0 + np.max(np.abs(C))):
        raise ValueError("preconditioner must be symmetric")
    return C


def _gram_rbf(X: np.ndarray, K: np.ndarray, C: np.ndarray, sigma: float) -> np.ndarray:
    n, d = X.shape
    if d <= _STACK_PATH_MAX_DIM:
        # G = B^T B / N with B[(a,l), i] = K_li (W_ia - W_la) / sigma^2;
        # positive semi-definite by construction.
        W = X @ _psd_factor(C)
        B = np.empty((d * n, n))
        for a in range(d):
            wa = W[:, a]
            B[a * n : (a + 1) * n] = K * (wa[None, :] - wa[:, None])
        B /= sigma**2
        return B.T @ B / n
    # dimension-independent form driven by Y = X C X^T
    Y = X @ C @ X.T
    y = np.diag(Y).copy()
    KK = K @ K
    cross = (K * Y) @ K
    last = (K * y[None, :]) @ K
    return (Y * KK - cross - cross.T + last) / (n * sigma**4)


def _gram_quadratic(P: np.ndarray, X: np.ndarray, C: np.ndarray) -> np.ndarray:
    n = X.shape[0]
    Y = X @ C @ X.T
    return (P @ P) * Y * (4.0 / n)


def _gram_generic(X: np.ndarray, kernel: Kernel, C: np.ndarray) -> np.ndarray:
    n = X.shape[0]
    table = kernel.grad_x_table(X)  # table[l, i] = grad_2 k(X_i, .) at X_l
    M = table @ _psd_factor(C)
    return np.einsum("lia,lja->ij", M, M) / n


def assemble_gram(e: Ensemble, kernel: Kernel, C) -> np.ndarray:
    """Gram operator of the kernel flow; symmetric PSD up to rounding."""
    X = e.positions
    C = _check_psd_arg(C, X.shape[1])
    if isinstance(kernel, RBF):
        G = _gram_rbf(X, kernel.matrix(X, X), C, kernel.bandwidth)
    elif isinstance(kernel, Quadratic):
        G = _gram_quadratic(X @ X.T + 1.0, X, C)
    else:
        G = _gram_generic(X, kernel, C)
    if not np.all(np.isfinite(G)):
        raise DivergenceError("Gram assembly produced non-finite entries")
    return 0.5 * (G + G.T)


def assemble_h_vector(e: Ensemble, kernel: Kernel, h_values) -> np.ndarray:
    """Empirical covariance between kernel features and the likelihood values.

    (h^k)_i = (1/N) sum_j k(X_i, X_j) (h_j - mean(h)).
    """
    h_values = np.asarray(h_values, dtype=float)
    bad = np.flatnonzero(~np.isfinite(h_values))
    if bad.size:
        raise LikelihoodEvaluationError(bad)
    K = kernel.matrix(e.positions, e.positions)
    return K @ (h_values - h_values.mean()) / e.n_particles


def assemble_correction_vector(e: Ensemble, kernel: Kernel, v0_values) -> np.ndarray:
    """Projection of the baseline drift onto the kernel features.

    (v^{0,k})_i = (1/N) sum_j grad_2 k(X_i, .)|_{X_j} . v0(X_j).
    """
    X = e.positions
    v0 = np.atleast_2d(np.asarray(v0_values, dtype=float))
    if v0.shape != X.shape:
        raise ValueError(f"v0 values shaped {v0.shape}, expected {X.shape}")
    if not np.all(np.isfinite(v0)):
        raise ValueError("baseline drift values must be finite")
    n = X.shape[0]
    if isinstance(kernel, RBF):
        K = kernel.matrix(X, X)
        out = np.sum(X * (K @ v0), axis=1) - K @ np.sum(X * v0, axis=1)
        return out / (n * kernel.bandwidth**2)
    if isinstance(kernel, Quadratic):
        P = X @ X.T + 1.0
        return 2.0 / n * np.sum(X * (P @ v0), axis=1)
    table = kernel.grad_x_table(X)
    return np.einsum("jia,ja->i", table, v0) / n


def _regularized(G: np.ndarray, epsilon: float) -> np.ndarray:
    n = G.shape[0]
    A = G * (1.0 / n)
    A.flat[:: n + 1] += epsilon / n
    return A


def _solve_with_residual(G: np.ndarray, f: np.ndarray, epsilon: float):
    n = f.shape[0]
    try:
        factor = cho_factor(_regularized(G, epsilon), lower=True,
                            overwrite_a=True, check_finite=False)
        alpha = cho_solve(factor, f, check_finite=False)
    except np.linalg.LinAlgError:
        # G + eps I is SPD in exact arithmetic; rounding can tip tiny
        # eigenvalues negative when eps is below the noise floor of G.
        warnings.warn(
            "Cholesky of the regularised Gram operator failed; "
            "falling back to a symmetric indefinite solve",
            RuntimeWarning,
            stacklevel=3,
        )
        with warnings.catch_warnings():
            # accuracy is checked via the residual below, not rcond
            warnings.simplefilter("ignore", LinAlgWarning)
            try:
                alpha = solve(_regularized(G, epsilon), f, assume_a="sym")
            except np.linalg.LinAlgError:
                alpha = np.linalg.lstsq(_regularized(G, epsilon), f, rcond=None)[0]
    residual = float(np.linalg.norm(G @ alpha / n + (epsilon / n) * alpha - f))
    bound = SOLVE_RESIDUAL_TOL * (1.0 + float(np.linalg.norm(f)))
    if not np.isfinite(residual) or residual > bound:
        raise NumericsError(
            f"weight solve residual {residual:.3e} exceeds bound {bound:.3e} "
            f"(N={n}, epsilon={epsilon:.3e}, |G|_max={np.max(np.abs(G)):.3e})"
        )
    return alpha, residual


def solve_weights(G: np.ndarray, f, epsilon: float) -> np.ndarray:
    """Solve (1/N)(G + eps I) alpha = f via an SPD factorisation."""
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    G = np.asarray(G, dtype=float)
    f = np.asarray(f, dtype=float)
    alpha, _ = _solve_with_residual(G, f, epsilon)
    return alpha


def evaluate_nll(h: Callable, X: np.ndarray) -> np.ndarray:
    """Evaluate a negative log-likelihood on particle rows, batch if possible."""
    try:
        vals = np.asarray(h(X), dtype=float)
    except Exception:
        vals = None
    if vals is None or vals.shape != (X.shape[0],):
        vals = np.array([float(h(row)) for row in X])
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        raise LikelihoodEvaluationError(bad)
    return vals


def _kme_drift_sum(kernel: Kernel, X: np.ndarray, alpha: np.ndarray, K: np.ndarray, P):
    """sum_j alpha_j grad_1 k(X_i, X_j), row-stacked."""
    if isinstance(kernel, RBF):
        return ((K * alpha[None, :]) @ X - X * (K @ alpha)[:, None]) / kernel.bandwidth**2
    if isinstance(kernel, Quadratic):
        return 2.0 * (P * alpha[None, :]) @ X
    n = X.shape[0]
    out = np.zeros_like(X)
    for i in range(n):
        for j in range(n):
            out[i] += alpha[j] * kernel.grad_x(X[i], X[j])
    return out


def flow_step(
    e: Ensemble,
    kernel: Kernel,
    cfg: FlowConfig,
    h: Callable,
    dt: float,
    step: int = 0,
) -> tuple[Ensemble, FlowStep]:
    """One Euler step of the kernel flow; returns the new ensemble and diagnostics."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    X = e.positions
    n, d = X.shape

    if isinstance(cfg.preconditioner, str):
        C = ensemble_covariance(e) if cfg.preconditioner == "covariance" else np.eye(d)
    else:
        C = cfg.preconditioner

    P = None
    if isinstance(kernel, Quadratic):
        P = X @ X.T + 1.0
        K = P * P
    else:
        K = kernel.matrix(X, X)

    h_values = evaluate_nll(h, X)
    f = K @ (h_values - h_values.mean()) / n

    baseline_norm = 0.0
    v0 = None
    if cfg.baseline is not None:
        from .baselines import kalman_bucy_velocity

        mean = X.mean(axis=0)
        cov = C if isinstance(cfg.preconditioner, str) and cfg.preconditioner == "covariance" \
            else ensemble_covariance(e)
        v0 = kalman_bucy_velocity(cfg.baseline, X, mean, cov)
        baseline_norm = float(np.max(np.linalg.norm(v0, axis=1)))
        f = f + assemble_correction_vector(e, kernel, v0)

    if isinstance(kernel, RBF):
        G = _gram_rbf(X, K, C, kernel.bandwidth)
    elif isinstance(kernel, Quadratic):
        G = _gram_quadratic(P, X, C)
    else:
        G = _gram_generic(X, kernel, C)
    if not np.all(np.isfinite(G)):
        raise DivergenceError("Gram assembly produced non-finite entries", step=step)
    G = 0.5 * (G + G.T)

    alpha, residual = _solve_with_residual(G, f, cfg.epsilon)

    velocity = -(_kme_drift_sum(kernel, X, alpha, K, P) @ C) / n
    if v0 is not None:
        velocity = velocity + v0

    speeds = np.linalg.norm(velocity, axis=1)
    drift_norm = float(np.max(speeds)) if n else 0.0
    new_positions = X + dt * velocity
    if drift_norm > MAX_PARTICLE_SPEED or not np.all(np.isfinite(new_positions)):
        raise DivergenceError(
            f"flow diverged at step {step} (max speed {drift_norm:.3e}, "
            f"max |alpha| {np.max(np.abs(alpha)):.3e})",
            step=step,
            max_alpha=float(np.max(np.abs(alpha))),
        )
    record = FlowStep(
        step=step,
        alpha=alpha,
        drift_norm=drift_norm,
        baseline_norm=baseline_norm,
        residual=residual,
    )
    return Ensemble(new_positions, time=e.time + dt), record


def run_flow(
    prior_samples,
    kernel: Kernel,
    cfg: FlowConfig,
    h: Callable,
    on_step: "Callable[[FlowStep], None] | None" = None,
) -> Ensemble:
    """Transport prior samples to t = 1 with n_steps Euler steps of size 1/n_steps."""
    X = np.array(prior_samples, dtype=float, copy=True)
    X = np.atleast_2d(X)
    if X.shape[0] < 2:
        raise DegenerateEnsembleError(f"the flow needs N >= 2 particles, got {X.shape[0]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("prior samples must be finite")
    if np.all(X == X[0]):
        warnings.warn(
            "all particles coincide: the kernel flow is a no-op at this fixed point",
            RuntimeWarning,
            stacklevel=2,
        )
    ens = Ensemble(X, time=0.0)
    dt = 1.0 / cfg.n_steps
    for n in range(cfg.n_steps):
        ens, record = flow_step(ens, kernel, cfg, h, dt, step=n)
        if on_step is not None:
            on_step(record)
    return ens
