"""Artifact writers: deterministic CSV and JSON with an audit trailer.

Every CSV carries a header row and a trailing comment block recording the
config hash and seed, so any output file can be traced back to the exact run
that produced it.  Floats are written with shortest round-trip formatting,
making outputs byte-stable across runs and platforms.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
from pathlib import Path

__all__ = [
    "fmt_value",
    "write_csv",
    "write_json",
    "write_jsonl",
    "config_hash",
    "resolve_output_dir",
    "OUTPUT_DIR_ENV",
]

OUTPUT_DIR_ENV = "SCORELOOP_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "scoreloop-output"


def fmt_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if hasattr(value, "item") and not isinstance(value, (str, bytes)):
        return fmt_value(value.item())
    return str(value)


def write_csv(path, header: list[str], rows, metadata: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt_value(v) for v in row])
        if metadata:
            for key in sorted(metadata):
                fh.write(f"# {key} = {fmt_value(metadata[key])}\n")
    return path


def _jsonable(obj):
    if hasattr(obj, "to_json_dict"):
        return obj.to_json_dict()
    if hasattr(obj, "tolist"):
        return obj.tolist()
    if hasattr(obj, "item"):
        return obj.item()
    raise TypeError(f"not JSON serialisable: {type(obj)!r}")


def write_json(path, payload) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")
    return path


def write_jsonl(path, records) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True, default=_jsonable))
            fh.write("\n")
    return path


def config_hash(canonical_text: str) -> str:
    return hashlib.sha256(canonical_text.encode()).hexdigest()[:16]


def resolve_output_dir(configured: str | None, cli_override: str | None = None) -> Path:
    """Output directory precedence: CLI flag, config, environment, default."""
    if cli_override:
        return Path(cli_override)
    if configured:
        return Path(configured)
    env = os.environ.get(OUTPUT_DIR_ENV)
    if env:
        return Path(env)
    return Path(DEFAULT_OUTPUT_DIR)
