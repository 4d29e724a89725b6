"""Deterministic report serialization and the worker pool.

Reports must be byte-identical for identical configs regardless of worker
count, so everything funnels through one canonical JSON encoding: sorted
keys, no whitespace, NaN forbidden, numpy types coerced to plain Python.
"""

from __future__ import annotations

import csv
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction

import numpy as np

from . import __version__


def _coerce(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Fraction):
        return f"{obj.numerator}/{obj.denominator}"
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    raise TypeError(f"not JSON-serializable: {type(obj).__name__}")


def canonical_json(obj) -> str:
    return json.dumps(
        obj, sort_keys=True, separators=(",", ":"), allow_nan=False, default=_coerce
    )


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def envelope(kind: str, config: dict, results, *, seed: int, method: str, samples: int = 0) -> dict:
    """Wrap results with enough metadata to reproduce them."""
    return {
        "tool": "decoupling-lab",
        "version": __version__,
        "kind": kind,
        "config": config,
        "config_hash": config_hash(config),
        "seed": seed,
        "method": method,
        "samples": samples,
        "results": results,
    }


def pmap(fn, items, workers: int = 1):
    """Order-preserving map, optionally across processes.

    Results come back in input order either way, so a report built from the
    output is byte-identical whatever ``workers`` is.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def write_csv(path, rows: list[dict], columns: list[str]):
    with open(path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def emit_plot_data(entries) -> dict:
    """Flatten (key, value) entries to a dict; duplicate keys keep the last
    value and print a warning to stderr."""
    out = {}
    for key, value in entries:
        if key in out:
            print(f"warning: duplicate plot key {key!r}, keeping last value", file=sys.stderr)
        out[key] = value
    return out
