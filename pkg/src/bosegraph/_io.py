"""JSON helpers shared by the report types."""
from __future__ import annotations

import json
import math

import numpy as np

SCHEMA_VERSION = 1


def plain(obj):
    """Convert numpy containers and non-finite floats into JSON-safe values.

    Non-finite floats become the strings ``"inf"``, ``"-inf"`` and ``"nan"``;
    complex numbers become ``[re, im]`` pairs.
    """
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [plain(float(obj.real)), plain(float(obj.imag))]
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, (frozenset, set)):
        return sorted(plain(v) for v in obj)
    return obj


def dumps(obj) -> str:
    """Deterministic JSON text (sorted keys, fixed separators, trailing newline)."""
    return json.dumps(plain(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def complex_matrix(M) -> dict:
    M = np.asarray(M)
    return {"re": M.real.tolist(), "im": M.imag.tolist()}
