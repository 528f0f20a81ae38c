"""Quality metrics for a solved pose set, and virtual cameras for a turntable rig."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .connectivity import Kind, fr_variables
from .errors import DegenerateRays, MultipleCameras, NoTriangulatablePoints
from .geometry import Pose, compose, inverse, project_camera_points, undistort_pixels
from .refine import point_count, total_reprojection_error

GN_MAX_ITERS = 20
GN_STEP_TOL = 1e-12
MIN_BASELINE_MM = 1e-6


def _values(pool):
    return pool if isinstance(pool, dict) else pool.values


def projection_pose(values, fr) -> Pose:
    """Pattern -> camera transform C T^-1 P^-1 implied by the solved poses."""
    c, p, t = fr_variables(fr)
    return compose(compose(values[c], inverse(values[t])), inverse(values[p]))


def algebraic_error(pool, frs) -> float:
    """Mean squared Frobenius norm of C - A P T over all FRs (unitless)."""
    values = _values(pool)
    frs = list(frs)
    total = 0.0
    for fr in frs:
        c, p, t = fr_variables(fr)
        D = values[c].matrix - compose(compose(fr.A, values[p]), values[t]).matrix
        total += float(np.sum(D**2))
    return total / len(frs)


def rrmse(pool, frs) -> float:
    frs = list(frs)
    return float(np.sqrt(total_reprojection_error(pool, frs) / point_count(frs)))


@dataclass(frozen=True)
class TriangulatedPoint:
    pattern_id: int
    corner: int
    estimate: np.ndarray
    truth: np.ndarray
    observations: int

    @property
    def sq_error(self) -> float:
        return float(np.sum((self.estimate - self.truth) ** 2))

    def as_dict(self) -> dict:
        return {
            "pattern": self.pattern_id,
            "corner": self.corner,
            "estimate": self.estimate.tolist(),
            "observations": self.observations,
            "sq_error_mm2": self.sq_error,
        }


def _stack_views(views):
    Ks, poses, uvs = zip(*views)
    params = np.array([K.params() for K in Ks])
    Rs = np.array([M.R for M in poses])
    ts = np.array([M.t for M in poses])
    return Ks, params, Rs, ts, np.array(uvs, dtype=float).reshape(-1, 2)


def linear_triangulation(views, normalized=None) -> np.ndarray:
    """Least-squares DLT on undistorted rays: (x r3 - r1) X = t1 - x t3 per view.

    ``normalized`` optionally supplies the already undistorted (n, 2)
    coordinates of the views' pixels.
    """
    Ks, _, Rs, ts, uvs = _stack_views(views)
    if normalized is None:
        xy = np.array([undistort_pixels(K, uv)[0] for K, uv in zip(Ks, uvs)])
    else:
        xy = np.asarray(normalized, dtype=float).reshape(-1, 2)
    rows = np.concatenate([xy[:, :1] * Rs[:, 2] - Rs[:, 0], xy[:, 1:] * Rs[:, 2] - Rs[:, 1]])
    rhs = np.concatenate([ts[:, 0] - xy[:, 0] * ts[:, 2], ts[:, 1] - xy[:, 1] * ts[:, 2]])
    return np.linalg.lstsq(rows, rhs, rcond=None)[0]


def triangulation_cost(views, X) -> float:
    _, params, Rs, ts, uvs = _stack_views(views)
    xc = np.einsum("nij,j->ni", Rs, X) + ts
    return float(np.sum((project_camera_points(params, xc) - uvs) ** 2))


def triangulate_point(views, normalized=None) -> np.ndarray:
    """Point minimizing summed squared reprojection error over ``views``.

    Each view is ``(K, pose, uv)`` where ``pose`` maps the point's frame into
    the camera. Seeded by linear triangulation, then Gauss-Newton with step
    halving.
    """
    views = list(views)
    if len(views) < 2:
        raise DegenerateRays(f"{len(views)} observation(s); need at least 2")
    _, params, Rs, ts, uvs = _stack_views(views)
    centers = -np.einsum("nji,nj->ni", Rs, ts)
    if np.max(np.linalg.norm(centers - centers[0], axis=1)) < MIN_BASELINE_MM:
        raise DegenerateRays("all viewing rays share one center")

    X = linear_triangulation(views, normalized)

    def residual(X, jac=False):
        xc = np.einsum("nij,j->ni", Rs, X) + ts
        if not jac:
            return (project_camera_points(params, xc) - uvs).ravel()
        pix, J = project_camera_points(params, xc, with_jacobian=True)
        return (pix - uvs).ravel(), (J @ Rs).reshape(-1, 3)

    r, J = residual(X, jac=True)
    cost = r @ r
    for _ in range(GN_MAX_ITERS):
        step = np.linalg.lstsq(J, -r, rcond=None)[0]
        alpha = 1.0
        while alpha > 1e-6:
            r_new = residual(X + alpha * step)
            if r_new @ r_new <= cost:
                break
            alpha /= 2
        else:
            break
        X = X + alpha * step
        if np.linalg.norm(alpha * step) < GN_STEP_TOL * max(1.0, np.linalg.norm(X)):
            break
        r, J = residual(X, jac=True)
        cost = r @ r
    return X


def observations_by_corner(pool, frs) -> dict:
    """(pattern, corner) -> list of (K, pattern->camera pose, uv, truth, undistorted xy)."""
    values = _values(pool)
    groups = defaultdict(list)
    for fr in frs:
        M = projection_pose(values, fr)
        xy = undistort_pixels(fr.K, fr.pixels)
        for corner, X, uv, n in zip(fr.corner_ids, fr.points3d, fr.pixels, xy):
            groups[(fr.pattern_id, int(corner))].append((fr.K, M, uv, X, n))
    return groups


@dataclass
class RaeResult:
    median: float
    points: list
    excluded: int

    def as_dict(self) -> dict:
        return {
            "rae_median": self.median,
            "rae_count": len(self.points),
            "rae_excluded": self.excluded,
            "per_point": [p.as_dict() for p in self.points],
        }


def rae(pool, frs) -> RaeResult:
    """Median squared distance (mm^2) between triangulated and true pattern corners.

    Only corners seen in two or more FRs take part; the rest, and corners
    whose rays are degenerate, are counted in ``excluded``.
    """
    points, excluded = [], 0
    for (pid, corner), obs in sorted(observations_by_corner(pool, frs).items()):
        if len(obs) < 2:
            excluded += 1
            continue
        try:
            Y = triangulate_point([o[:3] for o in obs], [o[4] for o in obs])
        except DegenerateRays:
            excluded += 1
            continue
        points.append(TriangulatedPoint(pid, corner, Y, np.asarray(obs[0][3], dtype=float), len(obs)))
    if not points:
        raise NoTriangulatablePoints("no pattern corner is observed in two or more FRs")
    return RaeResult(float(np.median([p.sq_error for p in points])), points, excluded)


def virtual_cameras(pool) -> list[Pose]:
    """Per-time poses C T_t^-1 of the single camera, ordered by time index."""
    values = _values(pool)
    cams = sorted(v for v in values if v.kind == Kind.CAMERA)
    if len(cams) != 1:
        raise MultipleCameras(f"virtual cameras need exactly one camera, found {len(cams)}")
    C0 = values[cams[0]]
    times = sorted(v for v in values if v.kind == Kind.TIME)
    return [compose(C0, inverse(values[t])) for t in times]


def evaluate(pool, frs) -> dict:
    """The metrics document: ae, rrmse and rae with its per-point table."""
    frs = list(frs)
    out = {"ae": algebraic_error(pool, frs), "rrmse": rrmse(pool, frs)}
    out.update(rae(pool, frs).as_dict())
    return out

