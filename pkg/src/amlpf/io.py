"""Deterministic file output.

All files start with a manifest (config hash, seed, package version) so a
run can be reproduced exactly from its outputs.  CSV files carry it as a
single ``# manifest`` comment line before the column header; JSON files
carry it under a ``manifest`` key.  Floats are written with 17 significant
digits, which round-trips IEEE doubles exactly, and all key orders are
fixed, so identical configurations produce byte-identical files.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import __version__


def format_float(x) -> str:
    return f"{float(x):.17g}"


def format_value(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format_float(x)
    return str(x)


def make_manifest(seed: int, config_sha256: str = "", extra: dict | None = None
                  ) -> dict:
    manifest = {"config_sha256": config_sha256, "seed": int(seed),
                "version": __version__}
    if extra:
        manifest.update(extra)
    return manifest


def _sanitize(obj):
    """Recursively convert numpy containers into plain JSON-friendly values."""
    if isinstance(obj, dict):
        return {str(k): _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_sanitize(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def write_json(path, payload: dict, manifest: dict | None = None) -> None:
    body = dict(payload)
    if manifest is not None:
        body["manifest"] = manifest
    text = json.dumps(_sanitize(body), sort_keys=True, indent=2)
    Path(path).write_text(text + "\n")


def write_csv(path, columns: list[str], rows, manifest: dict | None = None
              ) -> None:
    lines = []
    if manifest is not None:
        lines.append("# manifest " + json.dumps(_sanitize(manifest),
                                                sort_keys=True,
                                                separators=(",", ":")))
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(format_value(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    """Read a CSV written by :func:`write_csv`, skipping manifest comments."""
    lines = [ln for ln in Path(path).read_text().splitlines()
             if ln and not ln.startswith("#")]
    if not lines:
        return [], []
    header = lines[0].split(",")
    return header, [ln.split(",") for ln in lines[1:]]
