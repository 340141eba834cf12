"""Flat TOML experiment configuration: parsing, validation, serialisation.

A config file holds one experiment with flat keys, e.g. ::

    experiment = "toy"
    case = "gauss-to-gauss"
    seed = 7
    n_particles = 500

CLI flags override file keys; the fully resolved mapping is echoed into the
metadata header of every output file, so any run can be reproduced from its
outputs alone.
"""

from __future__ import annotations

import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

#: known keys per experiment; values are the defaults (None = required/derived)
DEFAULTS: dict[str, dict] = {
    "common": {
        "seed": 0,
        "out": "results",
        "format": "csv",
        "deterministic": False,
        "threads": 0,  # 0 = number of CPUs
        "figures": True,
    },
    "toy": {
        "case": "gauss-to-gauss",
        "n_particles": 500,
        "n_steps": 50,
        "kernel": "rbf",
        "bandwidth": None,  # per-case default
        "epsilon": None,  # per-case default
        "trace": False,
    },
    "skew": {
        "dims": [1, 2, 5, 10, 20, 50],
        "n_particles": [200, 500],
        "kernels": ["rbf", "quadratic"],
        "bandwidth": None,  # None = sqrt(2 d) scale rule
        "n_steps": 50,
        "epsilon": 1e-8,
        "n_replicates": 10,
    },
    "bandwidth-sweep": {
        "bandwidths": [0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 50.0],
        "n_particles": 250,
        "n_steps": 50,
        "epsilon": 1e-5,
        "n_replicates": 10,
    },
    "lorenz63": {
        "methods": ["enkf", "kme", "kme-kalman"],
        "ensemble_sizes": [100, 200, 300, 400, 500],
        "n_replicates": 20,
        "kernel": "rbf",
        "bandwidth": 6.0,
        "epsilon": 5e-11,
        "n_steps": 50,
        "n_cycles": 100,
        "dt_inner": 0.001,
        "dt_obs": 0.05,
        "obs_noise": 0.2,
        "forecast_noise": None,  # None = 4 dt_inner / 5
        "prior_spread": 0.01,
        "max_retries": 5,
        "trace": False,
    },
}

#: per-toy-case (bandwidth, epsilon) defaults
TOY_CASE_DEFAULTS = {
    "gauss-to-gauss": (5.0, 1e-9),
    "mixture-to-mixture": (5.0, 1e-9),
    "gauss-to-mixture": (0.95, 1e-8),
}


def load_config_file(path) -> dict:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}") from exc
    for key, value in data.items():
        if isinstance(value, dict):
            raise ConfigError(f"config keys must be flat; {key!r} holds a table")
    return data


def resolve(experiment: str, file_config: dict | None = None, overrides: dict | None = None) -> dict:
    """Merge defaults, config-file keys and CLI overrides for one experiment."""
    if experiment not in DEFAULTS or experiment == "common":
        raise ConfigError(f"unknown experiment {experiment!r}")
    merged = dict(DEFAULTS["common"])
    merged.update(DEFAULTS[experiment])
    known = set(merged) | {"experiment"}
    for source in (file_config or {}), (overrides or {}):
        for key, value in source.items():
            if key == "experiment":
                if value != experiment:
                    raise ConfigError(
                        f"config file is for experiment {value!r}, not {experiment!r}"
                    )
                continue
            if key not in known:
                raise ConfigError(f"unknown config key {key!r} for experiment {experiment!r}")
            if value is not None:
                merged[key] = value
    merged["experiment"] = experiment
    return merged


def _toml_scalar(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_scalar(v) for v in value) + "]"
    raise ConfigError(f"cannot serialise config value {value!r}")


def serialize(config: dict) -> str:
    """Render a flat config as TOML text (round-trips through ``load``)."""
    lines = []
    for key in sorted(config):
        if config[key] is None:
            continue
        lines.append(f"{key} = {_toml_scalar(config[key])}")
    return "\n".join(lines) + "\n"


def parse_text(text: str) -> dict:
    return tomllib.loads(text)


def write_config(path, config: dict) -> None:
    Path(path).write_text(serialize(config), encoding="utf-8")
