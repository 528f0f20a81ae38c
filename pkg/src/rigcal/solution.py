"""JSON form of a solved (or ground-truth) pose set."""

from __future__ import annotations

import json
from pathlib import Path

from .connectivity import C, Kind, P, T
from .dataset import SCHEMA_VERSION, UNITS, PatternGeometry, dumps
from .errors import SchemaError
from .geometry import Pose

_SECTIONS = (("camera_poses", Kind.CAMERA), ("pattern_poses", Kind.PATTERN), ("rig_poses", Kind.TIME))
_MAKE = {Kind.CAMERA: C, Kind.PATTERN: P, Kind.TIME: T}


def _rounded(M):
    # -0.0 and 1e-17 noise make otherwise identical files differ
    return [[0.0 if abs(x) < 1e-300 else float(x) for x in row] for row in M]


def solution_to_dict(values: dict, reference=None, patterns=None, extra=None) -> dict:
    doc = {"schema_version": SCHEMA_VERSION, "units": UNITS}
    if reference is not None:
        doc["reference"] = {"pattern": int(reference[0]), "time": int(reference[1])}
    for key, kind in _SECTIONS:
        doc[key] = {
            str(v.index): _rounded(values[v].matrix)
            for v in sorted(values) if v.kind == kind
        }
    if patterns:
        doc["patterns"] = {
            str(pid): {"rows": g.rows, "cols": g.cols, "square_size_mm": g.square_size}
            for pid, g in sorted(patterns.items())
        }
    if extra:
        doc.update(extra)
    return doc


def solution_from_dict(doc: dict):
    """Returns (values, reference or None, patterns dict)."""
    try:
        values = {}
        for key, kind in _SECTIONS:
            for idx, M in doc.get(key, {}).items():
                values[_MAKE[kind](int(idx))] = Pose.from_matrix(M)
        reference = None
        if "reference" in doc:
            reference = (int(doc["reference"]["pattern"]), int(doc["reference"]["time"]))
        patterns = {
            int(k): PatternGeometry(int(k), int(p["rows"]), int(p["cols"]), float(p["square_size_mm"]))
            for k, p in doc.get("patterns", {}).items()
        }
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"malformed solution: {e!r}") from e
    return values, reference, patterns


def save_solution(path, values, reference=None, patterns=None, extra=None) -> None:
    Path(path).write_text(dumps(solution_to_dict(values, reference, patterns, extra)), encoding="utf-8")


def load_solution(path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: not valid JSON ({e})") from e
    return solution_from_dict(doc)
