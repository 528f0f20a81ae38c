"""Dataset schema, JSON I/O, planar pattern pose estimation and FR construction.

A foundational relationship (FR) is one detection of one pattern by one
camera at one time step, together with the measured pattern -> camera pose
``A`` that ties the unknowns through ``C = A P T``.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BehindCamera,
    CalibrationError,
    DegenerateConfiguration,
    PoseEstimationError,
    SchemaError,
    ValidationError,
)
from .geometry import (
    CameraIntrinsics,
    Pose,
    project_camera_points,
    rodrigues,
    skew,
    so3_project,
    undistort_pixels,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
UNITS = {"length": "mm", "image": "px"}
DEFAULT_GATE_PX = 5.0


@dataclass(frozen=True)
class PatternGeometry:
    pattern_id: int
    rows: int
    cols: int
    square_size: float

    @property
    def corner_points(self) -> np.ndarray:
        """Row-major interior corners (rows*cols, 3) on the z = 0 plane."""
        idx = np.arange(self.rows * self.cols)
        return np.column_stack(
            [(idx % self.cols) * self.square_size, (idx // self.cols) * self.square_size, np.zeros(len(idx))]
        )

    @property
    def n_corners(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class Detection:
    camera_id: int
    pattern_id: int
    time_id: int
    corner_ids: np.ndarray  # (n,) int
    pixels: np.ndarray  # (n, 2)

    def __post_init__(self):
        ids = np.asarray(self.corner_ids, dtype=int).reshape(-1)
        px = np.asarray(self.pixels, dtype=float).reshape(-1, 2)
        if len(ids) != len(px):
            raise ValueError("corner ids and pixels differ in length")
        object.__setattr__(self, "corner_ids", ids)
        object.__setattr__(self, "pixels", px)

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.camera_id, self.pattern_id, self.time_id)


@dataclass(frozen=True, eq=False)
class FoundationalRelationship:
    camera_id: int
    pattern_id: int
    time_id: int
    A: Pose
    detection: Detection
    points3d: np.ndarray  # pattern-frame corners matching detection.pixels
    K: CameraIntrinsics
    rmse: float = 0.0

    @property
    def pixels(self) -> np.ndarray:
        return self.detection.pixels

    @property
    def corner_ids(self) -> np.ndarray:
        return self.detection.corner_ids

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.camera_id, self.pattern_id, self.time_id)

    def __repr__(self):
        return f"FR(c={self.camera_id}, p={self.pattern_id}, t={self.time_id}, n={len(self.points3d)})"


@dataclass
class Dataset:
    cameras: dict[int, CameraIntrinsics]
    patterns: dict[int, PatternGeometry]
    detections: list[Detection]
    time_count: int
    meta: dict = field(default_factory=dict)

    def validate(self) -> None:
        problems = []
        seen = set()
        for i, d in enumerate(self.detections):
            where = f"detection {i} (camera {d.camera_id}, pattern {d.pattern_id}, time {d.time_id})"
            if d.camera_id not in self.cameras:
                problems.append(f"{where}: unknown camera {d.camera_id}")
            if d.pattern_id not in self.patterns:
                problems.append(f"{where}: unknown pattern {d.pattern_id}")
            if not 0 <= d.time_id < self.time_count:
                problems.append(f"{where}: time {d.time_id} outside [0, {self.time_count})")
            if d.key in seen:
                problems.append(f"{where}: duplicate (camera, pattern, time) triple {d.key}")
            seen.add(d.key)
            if len(d.corner_ids) < 4:
                problems.append(f"{where}: {len(d.corner_ids)} corners, need at least 4")
            if len(np.unique(d.corner_ids)) != len(d.corner_ids):
                problems.append(f"{where}: repeated corner index")
            geom = self.patterns.get(d.pattern_id)
            if geom is not None and len(d.corner_ids) and (
                d.corner_ids.min() < 0 or d.corner_ids.max() >= geom.n_corners
            ):
                problems.append(f"{where}: corner index outside pattern with {geom.n_corners} corners")
            if not np.all(np.isfinite(d.pixels)):
                problems.append(f"{where}: non-finite pixel coordinates")
        if problems:
            raise ValidationError(problems)


# -- JSON ----------------------------------------------------------------------


def dataset_to_dict(d: Dataset) -> dict:
    cams = {}
    for cid in sorted(d.cameras):
        K = d.cameras[cid]
        cams[str(cid)] = {
            "fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy, "skew": K.skew,
            "dist": list(K.dist), "width": K.width, "height": K.height,
        }
    pats = {
        str(pid): {"rows": g.rows, "cols": g.cols, "square_size_mm": g.square_size}
        for pid, g in sorted(d.patterns.items())
    }
    dets = [
        {
            "camera": det.camera_id,
            "pattern": det.pattern_id,
            "time": det.time_id,
            "corners": [[int(i), float(u), float(v)] for i, (u, v) in zip(det.corner_ids, det.pixels)],
        }
        for det in d.detections
    ]
    out = {"schema_version": SCHEMA_VERSION, "units": UNITS}
    if d.meta:
        out["meta"] = d.meta
    out.update({"cameras": cams, "patterns": pats, "time_count": d.time_count, "detections": dets})
    return out


def dataset_from_dict(doc: dict) -> Dataset:
    if not isinstance(doc, dict):
        raise SchemaError("dataset document must be a JSON object")
    missing = [k for k in ("cameras", "patterns", "time_count", "detections") if k not in doc]
    if missing:
        raise SchemaError(f"missing top-level keys: {', '.join(missing)}")
    units = doc.get("units", UNITS)
    if units != UNITS:
        raise SchemaError(f"unsupported units {units}; expected {UNITS}")
    try:
        cameras = {}
        for key, c in doc["cameras"].items():
            cameras[int(key)] = CameraIntrinsics(
                fx=float(c["fx"]), fy=float(c["fy"]), cx=float(c["cx"]), cy=float(c["cy"]),
                width=int(c["width"]), height=int(c["height"]),
                skew=float(c.get("skew", 0.0)), dist=tuple(c.get("dist", [0.0] * 5)),
            )
        patterns = {
            int(key): PatternGeometry(int(key), int(p["rows"]), int(p["cols"]), float(p["square_size_mm"]))
            for key, p in doc["patterns"].items()
        }
        detections = []
        for det in doc["detections"]:
            corners = np.asarray(det["corners"], dtype=float).reshape(-1, 3)
            if not np.all(corners[:, 0] == np.round(corners[:, 0])):
                raise SchemaError("corner indices must be integers")
            detections.append(
                Detection(int(det["camera"]), int(det["pattern"]), int(det["time"]),
                          corners[:, 0].astype(int), corners[:, 1:])
            )
        time_count = int(doc["time_count"])
    except SchemaError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"malformed dataset: {e!r}") from e
    d = Dataset(cameras, patterns, detections, time_count, dict(doc.get("meta", {})))
    d.validate()
    return d


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=1) + "\n"


def save_dataset(d: Dataset, path) -> None:
    Path(path).write_text(dumps(dataset_to_dict(d)), encoding="utf-8")


def load_dataset(path) -> Dataset:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: not valid JSON ({e})") from e
    return dataset_from_dict(doc)


# -- planar pose ---------------------------------------------------------------


def _normalizing_transform(pts):
    c = pts.mean(axis=0)
    s = np.sqrt(2.0) / max(np.mean(np.linalg.norm(pts - c, axis=1)), 1e-300)
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def homography_dlt(src, dst) -> np.ndarray:
    """Normalized DLT homography mapping src (N, 2) to dst (N, 2)."""
    Ts, Td = _normalizing_transform(src), _normalizing_transform(dst)
    s = np.column_stack([src, np.ones(len(src))]) @ Ts.T
    d = np.column_stack([dst, np.ones(len(dst))]) @ Td.T
    n = len(src)
    M = np.zeros((2 * n, 9))
    M[0::2, 0:3] = s
    M[0::2, 6:9] = -d[:, :1] * s
    M[1::2, 3:6] = s
    M[1::2, 6:9] = -d[:, 1:2] * s
    H = np.linalg.svd(M)[2][-1].reshape(3, 3)
    return np.linalg.inv(Td) @ H @ Ts


def _reprojection(params, pose: Pose, X, uv):
    Xc = pose.apply(X)
    return project_camera_points(params, Xc) - uv


def _polish_pose(K: CameraIntrinsics, pose: Pose, X, uv, max_iters: int = 50) -> Pose:
    """Damped Gauss-Newton on single-view reprojection error.

    The increment (w, tau) acts on the whole transform, Xc' = exp(w) Xc + tau,
    and is re-anchored after every accepted step so the Jacobian is exact.
    """
    params = K.params()
    cost = np.sum(_reprojection(params, pose, X, uv) ** 2)
    lam = 1e-6
    for _ in range(max_iters):
        Xc = pose.apply(X)
        uv_hat, J = project_camera_points(params, Xc, with_jacobian=True)
        r = (uv_hat - uv).ravel()
        dX = np.concatenate([-skew(Xc), np.broadcast_to(np.eye(3), (len(Xc), 3, 3))], axis=2)
        Jf = (J @ dX).reshape(-1, 6)
        H = Jf.T @ Jf
        g = Jf.T @ r
        while True:
            step = -np.linalg.solve(H + lam * np.diag(np.diag(H)), g)
            E = rodrigues(step[:3])
            cand = Pose(E @ pose.R, E @ pose.t + step[3:])
            new_cost = np.sum(_reprojection(params, cand, X, uv) ** 2)
            if new_cost <= cost:
                lam = max(lam / 10.0, 1e-12)
                break
            lam *= 10.0
            if lam > 1e12:
                return pose
        converged = cost - new_cost <= 1e-12 * cost or np.max(np.abs(step)) < 1e-12
        pose, cost = cand, new_cost
        if converged or cost == 0.0:
            break
    return pose


def estimate_pattern_pose(K: CameraIntrinsics, geom: PatternGeometry, det: Detection) -> tuple[Pose, float]:
    """Pattern -> camera pose from one planar detection.

    Undistorts the corners, fits a homography, decomposes it with the sign
    giving positive depths, and polishes the result by reprojection error.
    Returns ``(pose, rmse_px)``.
    """
    X = geom.corner_points[det.corner_ids]
    uv = det.pixels
    if len(X) < 4:
        raise DegenerateConfiguration(f"{len(X)} corners; at least 4 are needed")
    sv = np.linalg.svd(X[:, :2] - X[:, :2].mean(axis=0), compute_uv=False)
    if sv[-1] <= 1e-6 * sv[0]:
        raise DegenerateConfiguration("detected corners are collinear")

    xy = undistort_pixels(K, uv)
    H = homography_dlt(X[:, :2], xy)
    h1, h2, h3 = H[:, 0], H[:, 1], H[:, 2]
    scale = 2.0 / (np.linalg.norm(h1) + np.linalg.norm(h2))

    candidates = []
    for sign in (1.0, -1.0):
        r1, r2, t = sign * scale * h1, sign * scale * h2, sign * scale * h3
        R = so3_project(np.column_stack([r1, r2, np.cross(r1, r2)]))
        pose = Pose(R, t)
        if np.all(pose.apply(X)[:, 2] > 0):
            err = np.sqrt(np.mean(np.sum(_reprojection(K.params(), pose, X, uv) ** 2, axis=1)))
            candidates.append((err, sign, pose))
    if not candidates:
        raise BehindCamera("homography decomposition puts the pattern behind the camera for both signs")
    _, _, pose = min(candidates, key=lambda c: (c[0], -c[1]))

    pose = _polish_pose(K, pose, X, uv)
    if np.any(pose.apply(X)[:, 2] <= 0):
        raise BehindCamera("refined pose puts corners behind the camera")
    rmse = float(np.sqrt(np.mean(np.sum(_reprojection(K.params(), pose, X, uv) ** 2, axis=1))))
    return pose, rmse


def build_frs(d: Dataset, gate_px: float = DEFAULT_GATE_PX, threads: int = 1) -> list[FoundationalRelationship]:
    """One FR per detection, ordered by (time, camera, pattern).

    Detections whose single-view reprojection RMSE exceeds ``gate_px`` are
    dropped with a warning.
    """
    dets = sorted(d.detections, key=lambda det: (det.time_id, det.camera_id, det.pattern_id))

    def one(det):
        try:
            A, rmse = estimate_pattern_pose(d.cameras[det.camera_id], d.patterns[det.pattern_id], det)
        except CalibrationError as e:
            raise PoseEstimationError(det.key, e) from e
        X = d.patterns[det.pattern_id].corner_points[det.corner_ids]
        return FoundationalRelationship(det.camera_id, det.pattern_id, det.time_id, A, det, X,
                                        d.cameras[det.camera_id], rmse)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            frs = list(pool.map(one, dets))
    else:
        frs = [one(det) for det in dets]

    kept = []
    for fr in frs:
        if fr.rmse > gate_px:
            log.warning("dropping camera %d pattern %d time %d: single-view rmse %.3f px exceeds %.3f px gate",
                        fr.camera_id, fr.pattern_id, fr.time_id, fr.rmse, gate_px)
            continue
        kept.append(fr)
    return kept
