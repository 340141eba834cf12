"""Output files: delimited tables with reproducibility metadata headers.

Every file starts with ``#``-prefixed metadata lines (tool version, seed, the
fully resolved configuration, and a creation timestamp), followed by a fixed
column header and the rows.  Bodies are byte-stable for a fixed seed; only the
``# created`` line varies between identical runs.
"""

from __future__ import annotations

import json
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .config import serialize
from .sampling import SOBOL_DIRECTION_NUMBERS


def _fmt(value) -> str:
    if hasattr(value, "item"):  # numpy scalar
        value = value.item()
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)  # shortest round-trip representation
    return str(value)


def metadata_lines(config: dict, extra: dict | None = None) -> list[str]:
    lines = [
        f"# kmeflow {__version__}",
        f"# created: {datetime.now(timezone.utc).isoformat(timespec='seconds')}",
        f"# sobol: {SOBOL_DIRECTION_NUMBERS}",
    ]
    for key, value in (extra or {}).items():
        lines.append(f"# {key}: {value}")
    for line in serialize(config).strip().splitlines():
        lines.append(f"# {line}")
    return lines


def write_table(path, columns, rows, config: dict, extra: dict | None = None) -> Path:
    """Write one table as CSV (or JSON when config['format'] == 'json')."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fmt = config.get("format", "csv")
    if fmt == "json":
        payload = {
            "metadata": {
                "version": __version__,
                "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
                "sobol": SOBOL_DIRECTION_NUMBERS,
                **(extra or {}),
                "config": {k: v for k, v in config.items() if v is not None},
            },
            "columns": list(columns),
            "rows": [[_json_value(v) for v in row] for row in rows],
        }
        path = path.with_suffix(".json")
        path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        return path
    lines = metadata_lines(config, extra)
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _json_value(v):
    if hasattr(v, "item"):
        return v.item()
    return v


def csv_body(path) -> str:
    """File content without timestamp metadata, for determinism comparisons."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return "\n".join(l for l in lines if not l.startswith("# created:"))


def read_table(path) -> tuple[list[str], list[list[str]]]:
    """Read back a CSV written by write_table (metadata lines skipped)."""
    lines = [l for l in Path(path).read_text(encoding="utf-8").splitlines() if l and not l.startswith("#")]
    columns = lines[0].split(",")
    rows = [line.split(",") for line in lines[1:]]
    return columns, rows
