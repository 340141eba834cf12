import math
import warnings

import numpy as np
import pytest

from kmeflow.baselines import GaussianObservationModel, kalman_bucy_velocity
from kmeflow.errors import DegenerateEnsembleError, DivergenceError, LikelihoodEvaluationError
from kmeflow.flow import (
    Ensemble,
    FlowConfig,
    assemble_correction_vector,
    assemble_gram,
    assemble_h_vector,
    ensemble_covariance,
    flow_step,
    run_flow,
    solve_weights,
)
from kmeflow.kernels import RBF, Kernel, Quadratic
from kmeflow.models import problem_preset


def half_square(x):
    x = np.atleast_2d(x)
    return 0.5 * np.sum(x**2, axis=1)


# ---------------------------------------------------------------------------
# ensemble covariance


def test_covariance_two_points():
    np.testing.assert_array_equal(
        ensemble_covariance(Ensemble([[-1.0], [1.0]])), [[2.0]]
    )


def test_covariance_identical_points():
    np.testing.assert_array_equal(
        ensemble_covariance(Ensemble([[3.0, 1.0]] * 4)), np.zeros((2, 2))
    )


def test_covariance_hand_example():
    cov = ensemble_covariance(Ensemble([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    np.testing.assert_allclose(cov, [[1 / 3, -1 / 6], [-1 / 6, 1 / 3]], rtol=1e-15)


def test_covariance_needs_two_particles():
    with pytest.raises(DegenerateEnsembleError):
        ensemble_covariance(Ensemble([[1.0]]))


# ---------------------------------------------------------------------------
# Gram operator


def test_gram_single_rbf_particle_is_zero():
    e = Ensemble([[2.0]])
    np.testing.assert_array_equal(assemble_gram(e, RBF(0.8), [[1.0]]), [[0.0]])


def test_gram_single_quadratic_particle():
    e = Ensemble([[1.0]])
    np.testing.assert_allclose(assemble_gram(e, Quadratic(), [[1.0]]), [[16.0]])


@pytest.mark.parametrize("kernel", [RBF(1.2), Quadratic()])
@pytest.mark.parametrize("precond", ["covariance", "identity", "random"])
def test_gram_symmetric_and_psd(kernel, precond, rng):
    for _ in range(8):
        n, d = int(rng.integers(2, 25)), int(rng.integers(1, 5))
        e = Ensemble(rng.normal(size=(n, d)) * 2.0)
        if precond == "covariance":
            C = ensemble_covariance(e)
        elif precond == "identity":
            C = np.eye(d)
        else:
            a = rng.normal(size=(d, d))
            C = a @ a.T + 0.1 * np.eye(d)
        G = assemble_gram(e, kernel, C)
        assert np.max(np.abs(G - G.T)) == 0.0
        assert np.linalg.eigvalsh(G).min() >= -1e-8 * n


class CubicKernel(Kernel):
    """Exercises the generic table path: k(x, y) = (x.y + 1)^3."""

    name = "cubic"

    def __call__(self, x, y):
        return float((np.dot(x, y) + 1.0) ** 3)

    def grad_x(self, x, y):
        return 3.0 * (np.dot(x, y) + 1.0) ** 2 * np.asarray(y, dtype=float)

    def matrix(self, X, Y):
        return (np.atleast_2d(X) @ np.atleast_2d(Y).T + 1.0) ** 3


def brute_force_gram(e, kernel, C):
    X, n = e.positions, e.n_particles
    G = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            G[i, j] = sum(
                kernel.grad_x(X[l], X[i]) @ C @ kernel.grad_x(X[l], X[j])
                for l in range(n)
            ) / n
    return G


@pytest.mark.parametrize("d", [1, 3, 8])  # spans both fast RBF branches
def test_gram_fast_paths_match_definition(d, rng):
    X = rng.normal(size=(9, d)) + 0.5
    a = rng.normal(size=(d, d))
    C = a @ a.T + 0.2 * np.eye(d)
    e = Ensemble(X)
    for kernel in (RBF(1.4), Quadratic(), CubicKernel()):
        G = assemble_gram(e, kernel, C)
        want = brute_force_gram(e, kernel, C)
        np.testing.assert_allclose(G, 0.5 * (want + want.T), rtol=1e-9, atol=1e-11)


def test_gram_rejects_bad_preconditioner():
    e = Ensemble([[0.0], [1.0]])
    with pytest.raises(ValueError):
        assemble_gram(e, RBF(1.0), np.eye(2))  # wrong shape


# ---------------------------------------------------------------------------
# right-hand side vectors


def test_h_vector_constant_likelihood_is_zero():
    e = Ensemble([[0.0], [1.5], [-2.0]])
    out = assemble_h_vector(e, RBF(1.0), [7.0, 7.0, 7.0])
    np.testing.assert_array_equal(out, np.zeros(3))


def test_h_vector_hand_example():
    e = Ensemble([[0.0], [1.0]])
    out = assemble_h_vector(e, RBF(1.0), [0.0, 1.0])
    want = (math.exp(-0.5) - 1.0) / 4.0
    np.testing.assert_allclose(out, [want, -want], rtol=1e-14)


def test_h_vector_shift_invariance(rng):
    e = Ensemble(rng.normal(size=(6, 2)))
    h = rng.normal(size=6)
    a = assemble_h_vector(e, Quadratic(), h)
    b = assemble_h_vector(e, Quadratic(), h + 3.7)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_h_vector_flags_nonfinite_values():
    e = Ensemble([[0.0], [1.0]])
    with pytest.raises(LikelihoodEvaluationError) as err:
        assemble_h_vector(e, RBF(1.0), [0.0, np.nan])
    assert err.value.indices == [1]


def test_correction_vector_zero_baseline():
    e = Ensemble([[0.0], [1.0]])
    np.testing.assert_array_equal(
        assemble_correction_vector(e, RBF(1.0), np.zeros((2, 1))), np.zeros(2)
    )


def test_correction_vector_single_quadratic():
    e = Ensemble([[1.0]])
    np.testing.assert_allclose(
        assemble_correction_vector(e, Quadratic(), [[1.0]]), [4.0]
    )


def test_correction_vector_coincident_rbf_particles(rng):
    e = Ensemble([[2.0, -1.0]] * 5)
    v0 = rng.normal(size=(5, 2))
    np.testing.assert_allclose(
        assemble_correction_vector(e, RBF(0.7), v0), np.zeros(5), atol=1e-15
    )


def test_correction_vector_matches_brute_force(rng):
    X = rng.normal(size=(7, 3))
    v0 = rng.normal(size=(7, 3))
    e = Ensemble(X)
    for kernel in (RBF(1.1), Quadratic(), CubicKernel()):
        want = np.array([
            sum(kernel.grad_x(X[j], X[i]) @ v0[j] for j in range(7)) / 7
            for i in range(7)
        ])
        np.testing.assert_allclose(
            assemble_correction_vector(e, kernel, v0), want, rtol=1e-10, atol=1e-12
        )


# ---------------------------------------------------------------------------
# weight solve


def test_solve_zero_gram():
    np.testing.assert_allclose(
        solve_weights(np.zeros((2, 2)), [1.0, 1.0], 0.5), [4.0, 4.0], rtol=1e-12
    )


def test_solve_diagonal_example():
    alpha = solve_weights(np.array([[2.0, 0.0], [0.0, 0.0]]), [1.0, 1.0], 1.0)
    np.testing.assert_allclose(alpha, [2 / 3, 2.0], rtol=1e-12)


def test_solve_zero_rhs():
    np.testing.assert_array_equal(
        solve_weights(np.eye(3), np.zeros(3), 1e-6), np.zeros(3)
    )


def test_solve_residual_bound(rng):
    for _ in range(10):
        n = int(rng.integers(2, 40))
        b = rng.normal(size=(n, n))
        G = b @ b.T
        f = rng.normal(size=n)
        eps = 10.0 ** rng.uniform(-10, -2)
        alpha = solve_weights(G, f, eps)
        resid = np.linalg.norm((G + eps * np.eye(n)) @ alpha / n - f)
        assert resid <= 1e-8 * (1.0 + np.linalg.norm(f))


def test_solve_requires_positive_epsilon():
    with pytest.raises(ValueError):
        solve_weights(np.eye(2), [1.0, 1.0], 0.0)


# ---------------------------------------------------------------------------
# flow steps


def test_constant_likelihood_is_exact_noop():
    prior = np.linspace(-2, 2, 9).reshape(-1, 1)
    cfg = FlowConfig(n_steps=4, epsilon=1e-9)
    out = run_flow(prior, RBF(1.0), cfg, lambda x: np.full(np.atleast_2d(x).shape[0], 3.3))
    np.testing.assert_array_equal(out.positions, prior)
    assert out.time == pytest.approx(1.0)


def test_zero_likelihood_identity():
    prior = np.random.default_rng(0).normal(size=(12, 2))
    cfg = FlowConfig(n_steps=3, epsilon=1e-8)
    out = run_flow(prior, Quadratic(), cfg, lambda x: np.zeros(np.atleast_2d(x).shape[0]))
    np.testing.assert_array_equal(out.positions, prior)


def test_permutation_equivariance(rng):
    # exact in exact arithmetic; accumulated rounding is amplified through the
    # regularised solve, hence the modest tolerance
    prior = rng.normal(size=(20, 2)) + 1.0
    perm = rng.permutation(20)
    cfg = FlowConfig(n_steps=5, epsilon=1e-6)
    out = run_flow(prior, RBF(1.5), cfg, half_square)
    out_perm = run_flow(prior[perm], RBF(1.5), cfg, half_square)
    np.testing.assert_allclose(out_perm.positions, out.positions[perm], rtol=1e-6, atol=1e-9)


def test_flow_step_diagnostics_and_residuals():
    prob = problem_preset("gauss-to-gauss")
    prior = prob.prior.sobol_samples(64)
    records = []
    run_flow(prior, RBF(5.0), FlowConfig(n_steps=10, epsilon=1e-9), prob.nll,
             on_step=records.append)
    assert [r.step for r in records] == list(range(10))
    assert all(np.isfinite(r.residual) and r.residual < 1e-6 for r in records)
    assert all(r.drift_norm >= 0 and r.baseline_norm == 0.0 for r in records)
    assert all(r.max_alpha >= 0 for r in records)


def test_drift_monotone_in_epsilon():
    # regularisation damps the velocity: the root-mean-square particle speed
    # is non-increasing in epsilon (provably, for the ensemble-L2 drift)
    prob = problem_preset("gauss-to-gauss")
    prior = prob.prior.sobol_samples(100)
    dt = 0.02
    norms = []
    for eps in (1e-10, 1e-8, 1e-6, 1e-4, 1e-2):
        stepped, _ = flow_step(
            Ensemble(prior.copy()), RBF(5.0), FlowConfig(n_steps=1, epsilon=eps),
            prob.nll, dt=dt,
        )
        speeds = np.linalg.norm(stepped.positions - prior, axis=1) / dt
        norms.append(float(np.sqrt(np.mean(speeds**2))))
    assert all(a >= b - 1e-12 for a, b in zip(norms, norms[1:]))


def test_gaussian_one_step_mean_shift_matches_kalman_bucy():
    # quadratic kernel, one Euler step: oracle is the Kalman-Bucy velocity on
    # the same ensemble
    prob = problem_preset("gauss-to-gauss")
    model = prob.gaussian_structure
    prior = prob.prior.sobol_samples(2000)
    ens = Ensemble(prior.copy())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        stepped, _ = flow_step(
            ens, Quadratic(), FlowConfig(n_steps=50, epsilon=1e-10), prob.nll, dt=1 / 50
        )
    cov = ensemble_covariance(Ensemble(prior))
    v_kb = kalman_bucy_velocity(model, prior, prior.mean(axis=0), cov)
    shift_kme = stepped.positions.mean() - prior.mean()
    shift_kb = (prior + (1 / 50) * v_kb).mean() - prior.mean()
    assert shift_kme == pytest.approx(shift_kb, rel=0.10)


def test_divergence_error_carries_step_and_alpha():
    prior = np.linspace(-1, 1, 16).reshape(-1, 1) * 1e3
    cfg = FlowConfig(n_steps=2, epsilon=1e-14)

    def explosive(x):
        x = np.atleast_2d(x)
        return 1e10 * x[:, 0] ** 2

    with pytest.raises(DivergenceError) as err:
        run_flow(prior, Quadratic(), cfg, explosive)
    assert err.value.step is not None
    assert err.value.max_alpha is not None


def test_degenerate_ensemble_warns_and_is_noop():
    prior = np.ones((5, 1)) * 2.0
    with pytest.warns(RuntimeWarning, match="coincide"):
        out = run_flow(prior, RBF(1.0), FlowConfig(n_steps=2, epsilon=1e-6), half_square)
    np.testing.assert_array_equal(out.positions, prior)


def test_flow_needs_two_particles():
    with pytest.raises(DegenerateEnsembleError):
        run_flow([[1.0]], RBF(1.0), FlowConfig(n_steps=1, epsilon=1e-6), half_square)


def test_baseline_changes_rhs_and_velocity():
    model = GaussianObservationModel([[1.0]], [[1.0]], [0.0])
    prob = problem_preset("gauss-to-gauss")
    prior = prob.prior.sobol_samples(500)
    cfg = FlowConfig(n_steps=50, epsilon=1e-9, baseline=model)
    records = []
    out = run_flow(prior, RBF(5.0), cfg, prob.nll, on_step=records.append)
    assert all(r.baseline_norm > 0 for r in records)
    # Kalman-adjusted flow still lands near the analytic posterior
    assert out.positions.mean() == pytest.approx(2.0, abs=0.2)
    assert out.positions.var(ddof=1) == pytest.approx(0.5, abs=0.15)


def test_kalman_baseline_rhs_nearly_cancels_on_gaussian_ensemble():
    # with the Kalman-Bucy drift as baseline, the likelihood term and the
    # correction term offset each other on a Gaussian ensemble
    prob = problem_preset("gauss-to-gauss")
    model = prob.gaussian_structure
    X = prob.prior.sobol_samples(500)
    e = Ensemble(X)
    cov = ensemble_covariance(e)
    v0 = kalman_bucy_velocity(model, X, X.mean(axis=0), cov)
    for kernel in (RBF(5.0), Quadratic()):
        hk = assemble_h_vector(e, kernel, model.nll(X))
        v0k = assemble_correction_vector(e, kernel, v0)
        assert np.linalg.norm(hk + v0k) < 0.02 * np.linalg.norm(hk - v0k)


# ---------------------------------------------------------------------------
# config validation


def test_flow_config_validation():
    with pytest.raises(ValueError):
        FlowConfig(n_steps=0, epsilon=1e-9)
    with pytest.raises(ValueError):
        FlowConfig(n_steps=1, epsilon=0.0)
    with pytest.raises(ValueError):
        FlowConfig(n_steps=1, epsilon=1e-9, preconditioner="diag")
    with pytest.raises(ValueError):
        FlowConfig(n_steps=1, epsilon=1e-9, preconditioner=np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        FlowConfig(n_steps=1, epsilon=1e-9, preconditioner=np.array([[0.0]]))
    fixed = FlowConfig(n_steps=1, epsilon=1e-9, preconditioner=np.eye(2))
    np.testing.assert_array_equal(fixed.preconditioner, np.eye(2))


def test_fixed_preconditioner_flow_runs():
    prob = problem_preset("gauss-to-gauss")
    prior = prob.prior.sobol_samples(30)
    cfg = FlowConfig(n_steps=5, epsilon=1e-9, preconditioner=np.array([[0.5]]))
    out = run_flow(prior, RBF(5.0), cfg, prob.nll)
    assert np.all(np.isfinite(out.positions))
