"""Experiment harness behind the CLI: the three toy problems, the skew-normal
dimension sweep, the RBF bandwidth sweep, and the Lorenz-63 comparison.

Replicate jobs are independent and scheduled over a process pool; every job
derives its randomness from (root seed, job index), so results do not depend
on the worker count or scheduling order.  Gaussian priors are Sobol blocks and
replicate r consumes block r of the sequence.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from .config import TOY_CASE_DEFAULTS, resolve
from .errors import ConfigError
from .flow import CSV_DIAGNOSTIC_COLUMNS, FlowConfig, run_flow
from .kernels import kernel_from_name
from .lorenz63 import AssimilationScenario, Lorenz63Params, run_assimilation
from .metrics import w2_1d
from .models import problem_preset
from .output import write_table
from .sampling import SeededRng

#: substream labels for the harness-level draws
_REFERENCE_STREAM = 101


def _n_workers(cfg: dict) -> int:
    threads = int(cfg.get("threads") or 0)
    return threads if threads > 0 else (os.cpu_count() or 1)


def _pool_map(worker, payloads, cfg: dict) -> list:
    """Order-preserving map over jobs, inline or via a spawn process pool."""
    workers = min(_n_workers(cfg), len(payloads)) or 1
    if workers == 1 or len(payloads) <= 1:
        return [worker(p) for p in payloads]
    saved = os.environ.get("OPENBLAS_NUM_THREADS")
    os.environ["OPENBLAS_NUM_THREADS"] = "1"  # one BLAS thread per worker
    try:
        with ProcessPoolExecutor(max_workers=workers, mp_context=get_context("spawn")) as pool:
            return list(pool.map(worker, payloads))
    finally:
        if saved is None:
            os.environ.pop("OPENBLAS_NUM_THREADS", None)
        else:
            os.environ["OPENBLAS_NUM_THREADS"] = saved


def _validate_flow_params(cfg: dict, n_particles: int, n_steps: int, epsilon, bandwidth, kernel: str):
    if n_particles < 2:
        raise ConfigError(f"n_particles must be >= 2, got {n_particles}")
    if n_steps < 1:
        raise ConfigError(f"n_steps must be >= 1, got {n_steps}")
    if not epsilon > 0:
        raise ConfigError(f"epsilon must be positive, got {epsilon}")
    if kernel == "rbf" and not (bandwidth and bandwidth > 0):
        raise ConfigError(f"rbf kernel needs a positive bandwidth, got {bandwidth}")
    if kernel not in ("rbf", "quadratic"):
        raise ConfigError(f"unknown kernel {kernel!r}")


# ---------------------------------------------------------------------------
# toy experiments (cases of section "toy examples")


def run_toy(cfg: dict) -> list[Path]:
    case = cfg["case"]
    if case not in TOY_CASE_DEFAULTS:
        raise ConfigError(
            f"unknown toy case {case!r}; expected one of {sorted(TOY_CASE_DEFAULTS)}"
        )
    default_bw, default_eps = TOY_CASE_DEFAULTS[case]
    bandwidth = cfg["bandwidth"] if cfg["bandwidth"] is not None else default_bw
    epsilon = cfg["epsilon"] if cfg["epsilon"] is not None else default_eps
    n = int(cfg["n_particles"])
    n_steps = int(cfg["n_steps"])
    _validate_flow_params(cfg, n, n_steps, epsilon, bandwidth, cfg["kernel"])
    resolved = dict(cfg, bandwidth=bandwidth, epsilon=epsilon)

    problem = problem_preset(case)
    kernel = kernel_from_name(cfg["kernel"], bandwidth)
    x0 = problem.prior.sobol_samples(n)
    diagnostics = []
    out = run_flow(
        x0, kernel, FlowConfig(n_steps=n_steps, epsilon=epsilon), problem.nll,
        on_step=diagnostics.append if cfg.get("trace") else None,
    )
    x1 = out.positions[:, 0]

    ref = problem.reference.sample(n, SeededRng(cfg["seed"], (_REFERENCE_STREAM,)))
    w2 = w2_1d(x1, ref)

    out_dir = Path(cfg["out"])
    lo, hi = problem.prior.window()
    grid = np.linspace(lo, hi, 801)
    pdf = problem.target_pdf(grid)
    files = [
        write_table(out_dir / "samples_t0.csv", ["x"], [(v,) for v in x0[:, 0]], resolved),
        write_table(out_dir / "samples_t1.csv", ["x"], [(v,) for v in x1], resolved),
        write_table(
            out_dir / "target_pdf.csv", ["x", "pdf"], list(zip(grid, pdf)), resolved
        ),
        write_table(
            out_dir / "metrics.csv",
            ["case", "kernel", "bandwidth", "epsilon", "n_particles", "n_steps", "seed",
             "mean_x", "var_x", "w2"],
            [(case, kernel.name, bandwidth, epsilon, n, n_steps, cfg["seed"],
              float(x1.mean()), float(x1.var(ddof=1)), w2)],
            resolved,
        ),
    ]
    if cfg.get("trace"):
        files.append(
            write_table(
                out_dir / "flow_trace.csv",
                list(CSV_DIAGNOSTIC_COLUMNS),
                [record.csv_row() for record in diagnostics],
                resolved,
            )
        )
    if cfg.get("figures", True):
        from .plots import plot_toy

        files.append(plot_toy(out_dir, case, x0[:, 0], x1, grid, pdf, problem))
    return files


# ---------------------------------------------------------------------------
# skew-normal dimension sweep


def default_skew_bandwidth(dim: int) -> float:
    """Scale rule sigma = sqrt(2 d): matches the typical inter-particle
    distance of a standard normal cloud as the dimension grows."""
    return float(np.sqrt(2.0 * dim))


def _skew_job(payload: dict) -> dict:
    problem = problem_preset("skew-normal", dim=payload["dim"])
    kernel = kernel_from_name(payload["kernel"], payload.get("bandwidth"))
    n = payload["n_particles"]
    x0 = problem.prior.sobol_samples(n, offset=payload["replicate"] * n)
    out = run_flow(
        x0, kernel,
        FlowConfig(n_steps=payload["n_steps"], epsilon=payload["epsilon"]),
        problem.nll,
    )
    ref = problem.reference.sample(
        n, SeededRng(payload["seed"], (_REFERENCE_STREAM, payload["job"]))
    )
    return dict(payload, w2=w2_1d(out.positions[:, 0], ref))


def run_skew(cfg: dict) -> list[Path]:
    dims = [int(d) for d in cfg["dims"]]
    sizes = [int(n) for n in cfg["n_particles"]]
    kernels = list(cfg["kernels"])
    reps = int(cfg["n_replicates"])
    if reps < 1:
        raise ConfigError("n_replicates must be >= 1")
    for d in dims:
        if d < 1:
            raise ConfigError(f"dimensions must be >= 1, got {d}")
    payloads = []
    job = 0
    for d in dims:
        for n in sizes:
            for kern in kernels:
                bw = None
                if kern == "rbf":
                    bw = float(cfg["bandwidth"]) if cfg["bandwidth"] else default_skew_bandwidth(d)
                _validate_flow_params(cfg, n, int(cfg["n_steps"]), cfg["epsilon"], bw, kern)
                for r in range(reps):
                    payloads.append(
                        dict(job=job, dim=d, n_particles=n, kernel=kern, bandwidth=bw,
                             replicate=r, n_steps=int(cfg["n_steps"]),
                             epsilon=float(cfg["epsilon"]), seed=cfg["seed"])
                    )
                    job += 1
    results = _pool_map(_skew_job, payloads, cfg)

    rows = []
    for d in dims:
        for n in sizes:
            for kern in kernels:
                vals = np.array(
                    [r["w2"] for r in results
                     if r["dim"] == d and r["n_particles"] == n and r["kernel"] == kern]
                )
                bw = next(
                    r["bandwidth"] for r in results
                    if r["dim"] == d and r["n_particles"] == n and r["kernel"] == kern
                )
                stderr = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
                rows.append((d, n, kern, "" if bw is None else bw, float(vals.mean()), stderr))
    out_dir = Path(cfg["out"])
    files = [
        write_table(
            out_dir / "skew_w2.csv",
            ["d", "N", "kernel", "bandwidth", "w2_mean", "w2_stderr"],
            rows, cfg,
        )
    ]
    if cfg.get("figures", True):
        from .plots import plot_skew

        files.append(plot_skew(out_dir, rows))
    return files


# ---------------------------------------------------------------------------
# bandwidth sweep


def _bandwidth_job(payload: dict) -> dict:
    problem = problem_preset("bandwidth")
    kernel = kernel_from_name("rbf", payload["bandwidth"])
    n = payload["n_particles"]
    x0 = problem.prior.sobol_samples(n, offset=payload["replicate"] * n)
    out = run_flow(
        x0, kernel,
        FlowConfig(n_steps=payload["n_steps"], epsilon=payload["epsilon"]),
        problem.nll,
    )
    ref = problem.reference.sample(
        n, SeededRng(payload["seed"], (_REFERENCE_STREAM, payload["job"]))
    )
    return dict(payload, w2=w2_1d(out.positions[:, 0], ref))


def run_bandwidth(cfg: dict) -> list[Path]:
    sigmas = [float(s) for s in cfg["bandwidths"]]
    unique = sorted(set(sigmas))
    if len(unique) != len(sigmas):
        warnings.warn("duplicate bandwidth values were removed", stacklevel=2)
    for s in unique:
        if not s > 0:
            raise ConfigError(f"bandwidths must be positive, got {s}")
    reps = int(cfg["n_replicates"])
    n = int(cfg["n_particles"])
    _validate_flow_params(cfg, n, int(cfg["n_steps"]), cfg["epsilon"], unique[0], "rbf")
    payloads = [
        dict(job=j * reps + r, bandwidth=s, replicate=r, n_particles=n,
             n_steps=int(cfg["n_steps"]), epsilon=float(cfg["epsilon"]), seed=cfg["seed"])
        for j, s in enumerate(unique)
        for r in range(reps)
    ]
    results = _pool_map(_bandwidth_job, payloads, cfg)
    rows = []
    for s in unique:
        vals = np.array([r["w2"] for r in results if r["bandwidth"] == s])
        stderr = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
        rows.append((s, float(vals.mean()), stderr))
    out_dir = Path(cfg["out"])
    files = [
        write_table(out_dir / "bandwidth_w2.csv", ["bandwidth", "w2_mean", "w2_stderr"], rows, cfg)
    ]
    if cfg.get("figures", True):
        from .plots import plot_bandwidth

        files.append(plot_bandwidth(out_dir, rows))
    return files


# ---------------------------------------------------------------------------
# Lorenz-63 comparison


def _lorenz_scenario(cfg: dict, method: str, n: int) -> AssimilationScenario:
    params = Lorenz63Params(
        dt_inner=float(cfg["dt_inner"]),
        dt_obs=float(cfg["dt_obs"]),
        obs_noise_cov=float(cfg["obs_noise"]) * np.eye(3),
        forecast_noise_cov=None
        if cfg["forecast_noise"] is None
        else float(cfg["forecast_noise"]) * np.eye(3),
        n_cycles=int(cfg["n_cycles"]),
    )
    kernel = None
    flow = None
    if method in ("kme", "kme-kalman"):
        kernel = kernel_from_name(cfg["kernel"], cfg["bandwidth"])
        flow = FlowConfig(n_steps=int(cfg["n_steps"]), epsilon=float(cfg["epsilon"]))
    return AssimilationScenario(
        params=params,
        method=method,
        ensemble_size=n,
        kernel=kernel,
        flow=flow,
        prior_cov=float(cfg["prior_spread"]) * np.eye(3),
        n_replicates=int(cfg["n_replicates"]),
        seed=int(cfg["seed"]),
        max_retries=int(cfg["max_retries"]),
    )


def _lorenz_job(payload: dict) -> dict:
    cfg = payload["cfg"]
    sc = _lorenz_scenario(cfg, payload["method"], payload["n"])
    result = run_assimilation(sc, replicate=payload["replicate"])
    out = dict(
        method=payload["method"], n=payload["n"], replicate=payload["replicate"],
        rmse=result.rmse, retries=result.retries, wall_time=result.wall_time,
    )
    if payload.get("trace"):
        out["means"] = result.means
        out["observations"] = result.observations
    return out


def run_lorenz(cfg: dict) -> list[Path]:
    methods = list(cfg["methods"])
    for m in methods:
        if m not in ("enkf", "kme", "kme-kalman"):
            raise ConfigError(f"unknown method {m!r}; expected enkf, kme or kme-kalman")
    sizes = [int(n) for n in cfg["ensemble_sizes"]]
    reps = int(cfg["n_replicates"])
    if reps < 1 or int(cfg["n_cycles"]) < 1:
        raise ConfigError("n_replicates and n_cycles must be >= 1")
    payloads = [
        dict(cfg=cfg, method=m, n=n, replicate=r,
             trace=bool(cfg.get("trace")) and r == 0)
        for m in methods
        for n in sizes
        for r in range(reps)
    ]
    results = _pool_map(_lorenz_job, payloads, cfg)

    rows = [
        (r["method"], r["n"], r["replicate"], r["rmse"], r["retries"],
         round(r["wall_time"], 3))
        for r in results
    ]
    out_dir = Path(cfg["out"])
    extra = {"enkf-variant": "stochastic perturbed observations"}
    files = [
        write_table(
            out_dir / "lorenz_rmse.csv",
            ["method", "ensemble_size", "replicate", "rmse", "retries", "wall_time_s"],
            rows, cfg, extra=extra,
        )
    ]
    trace_files = []
    for r in results:
        if "means" in r:
            trace_rows = [
                (j + 1, *r["observations"][j], *r["means"][j])
                for j in range(r["observations"].shape[0])
            ]
            trace_files.append(
                write_table(
                    out_dir / f"lorenz_trace_{r['method']}_N{r['n']}.csv",
                    ["cycle", "obs_x", "obs_y", "obs_z", "mean_x", "mean_y", "mean_z"],
                    trace_rows, cfg, extra=extra,
                )
            )
    files.extend(trace_files)
    if cfg.get("figures", True):
        from .plots import plot_lorenz, plot_lorenz_trace

        files.append(plot_lorenz(out_dir, rows))
        files.extend(plot_lorenz_trace(out_dir, t) for t in trace_files if t.suffix == ".csv")
    return files


RUNNERS = {
    "toy": run_toy,
    "skew": run_skew,
    "bandwidth-sweep": run_bandwidth,
    "lorenz63": run_lorenz,
}


def run_experiment(experiment: str, file_config: dict | None, overrides: dict) -> list[Path]:
    cfg = resolve(experiment, file_config, overrides)
    return RUNNERS[experiment](cfg)
