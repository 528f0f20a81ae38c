"""Rigid transforms, SO(3) helpers and the pinhole + radial-tangential camera.

Conventions used throughout the package:

- rotations are stored as 3x3 matrices; axis-angle only appears as an
  optimizer parameterization
- 3D quantities are in millimeters, image quantities in pixels
- ``C`` maps world -> camera, ``T`` world -> rig, ``P`` rig -> pattern and
  ``A`` pattern -> camera, so that ``C = A P T`` for every observation
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateMatrix, NearPiRotation, NonPositiveDepth

ORTHONORMAL_TOL = 1e-9
MIN_DEPTH = 1e-9
NEAR_PI = 1e-6


def skew(v):
    """Cross-product matrix [v]x, broadcasting over leading dimensions."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def rodrigues(rvec) -> np.ndarray:
    """Rotation matrix exp([rvec]x)."""
    r = np.asarray(rvec, dtype=float).reshape(3)
    theta = np.linalg.norm(r)
    K = skew(r)
    if theta < 1e-8:
        # second-order Taylor; error O(theta^3) < 1e-24
        return np.eye(3) + K + 0.5 * K @ K
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * K + b * K @ K


def rotation_log(R) -> np.ndarray:
    """Axis-angle vector of a rotation, angle in [0, pi]."""
    R = np.asarray(R, dtype=float)
    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-6:
        return 0.5 * w * (1.0 + theta**2 / 6.0)
    if np.pi - theta > 1e-4:
        return theta / (2.0 * np.sin(theta)) * w
    # near pi: axis from the symmetric part, sign from the skew part
    S = (R + R.T) / 2.0 - cos_theta * np.eye(3)
    k = int(np.argmax(np.diag(S)))
    axis = S[:, k] / np.sqrt(max(S[k, k], 1e-300))
    axis /= np.linalg.norm(axis)
    if axis @ w < 0:
        axis = -axis
    return theta * axis


def geodesic_distance(R1, R2) -> float:
    """Rotation angle of R1^T R2 in radians."""
    M = np.asarray(R1).T @ np.asarray(R2)
    c = np.clip((np.trace(M) - 1.0) / 2.0, -1.0, 1.0)
    # arccos loses precision near 0; use the skew part there
    s = np.linalg.norm([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]]) / 2.0
    return float(np.arctan2(s, c))


@dataclass(frozen=True, eq=False)
class Pose:
    """A rigid transform x -> R x + t."""

    R: np.ndarray
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.R, dtype=float).reshape(3, 3)
        t = np.array(self.t, dtype=float).reshape(3)
        err = np.linalg.norm(R.T @ R - np.eye(3))
        if not np.isfinite(err) or err > ORTHONORMAL_TOL or np.linalg.det(R) <= 0:
            raise ValueError(f"not a rotation matrix (|R^T R - I|_F = {err:.3g})")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, M) -> "Pose":
        M = np.asarray(M, dtype=float)
        if M.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got shape {M.shape}")
        if not np.array_equal(M[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValueError("bottom row of a homogeneous transform must be (0, 0, 0, 1)")
        return cls(M[:3, :3], M[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def apply(self, X) -> np.ndarray:
        """Transform points of shape (3,) or (N, 3)."""
        return np.asarray(X, dtype=float) @ self.R.T + self.t

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def __repr__(self):
        return f"Pose(rvec={np.round(rotation_log(self.R), 6).tolist()}, t={np.round(self.t, 6).tolist()})"


def compose(a: Pose, b: Pose) -> Pose:
    """Homogeneous product a . b (apply b first)."""
    return Pose(a.R @ b.R, a.R @ b.t + a.t)


def inverse(a: Pose) -> Pose:
    return Pose(a.R.T, -a.R.T @ a.t)


def pose_distance(a: Pose, b: Pose) -> tuple[float, float]:
    """(rotation angle in rad, translation distance in mm) between two poses."""
    return geodesic_distance(a.R, b.R), float(np.linalg.norm(a.t - b.t))


def so3_project(M) -> np.ndarray:
    """Closest rotation to M in Frobenius norm."""
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)) or abs(np.linalg.det(M)) <= 1e-12:
        raise DegenerateMatrix("matrix is singular; cannot project onto SO(3)")
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.linalg.det(U @ Vt)])
    return U @ D @ Vt


@dataclass(frozen=True)
class AxisAngleParam:
    rvec: np.ndarray
    tvec: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.rvec, self.tvec])

    @classmethod
    def from_vector(cls, v) -> "AxisAngleParam":
        v = np.asarray(v, dtype=float)
        return cls(v[:3].copy(), v[3:6].copy())


def axis_angle_encode(p: Pose) -> AxisAngleParam:
    r = rotation_log(p.R)
    if np.pi - np.linalg.norm(r) < NEAR_PI:
        raise NearPiRotation("rotation angle within 1e-6 rad of pi has no canonical axis-angle encoding")
    return AxisAngleParam(r, p.t.copy())


def axis_angle_decode(theta: AxisAngleParam) -> Pose:
    return Pose(rodrigues(theta.rvec), theta.tvec)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics with (k1, k2, p1, p2, k3) distortion."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    skew: float = 0.0
    dist: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "dist", tuple(float(d) for d in self.dist))
        problems = []
        if not (self.fx > 0 and self.fy > 0):
            problems.append("focal lengths must be positive")
        if len(self.dist) != 5:
            problems.append("distortion must have 5 coefficients (k1, k2, p1, p2, k3)")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            problems.append("principal point must lie inside the image")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, self.skew, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def params(self) -> np.ndarray:
        """[fx, fy, cx, cy, skew, k1, k2, p1, p2, k3]."""
        return np.array([self.fx, self.fy, self.cx, self.cy, self.skew, *self.dist])


def project_camera_points(params, Xc, with_jacobian=False):
    """Project camera-frame points to pixels.

    ``params`` is the 10-vector from :meth:`CameraIntrinsics.params`, or an
    (N, 10) array giving per-point intrinsics. ``Xc`` has shape (N, 3).
    Returns pixels (N, 2), and with ``with_jacobian`` also d(pixel)/d(Xc)
    of shape (N, 2, 3). No depth checking happens here.
    """
    Xc = np.atleast_2d(np.asarray(Xc, dtype=float))
    p = np.asarray(params, dtype=float)
    if p.ndim == 1:
        p = p[None, :]
    fx, fy, cx, cy, sk, k1, k2, p1, p2, k3 = (p[:, i] for i in range(10))

    z = Xc[:, 2]
    x = Xc[:, 0] / z
    y = Xc[:, 1] / z
    r2 = x * x + y * y
    radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    uv = np.stack([fx * xd + sk * yd + cx, fy * yd + cy], axis=1)
    if not with_jacobian:
        return uv

    dradial = k1 + r2 * (2.0 * k2 + 3.0 * k3 * r2)  # d radial / d r2
    dxd_dx = radial + 2.0 * x * x * dradial + 2.0 * p1 * y + 6.0 * p2 * x
    dxd_dy = 2.0 * x * y * dradial + 2.0 * p1 * x + 2.0 * p2 * y
    dyd_dx = 2.0 * x * y * dradial + 2.0 * p1 * x + 2.0 * p2 * y
    dyd_dy = radial + 2.0 * y * y * dradial + 6.0 * p1 * y + 2.0 * p2 * x

    n = len(z)
    dn = np.zeros((n, 2, 3))  # d(x, y) / d Xc
    dn[:, 0, 0] = 1.0 / z
    dn[:, 0, 2] = -x / z
    dn[:, 1, 1] = 1.0 / z
    dn[:, 1, 2] = -y / z

    dd = np.empty((n, 2, 2))  # d(u, v) / d(x, y)
    dd[:, 0, 0] = fx * dxd_dx + sk * dyd_dx
    dd[:, 0, 1] = fx * dxd_dy + sk * dyd_dy
    dd[:, 1, 0] = fy * dyd_dx
    dd[:, 1, 1] = fy * dyd_dy
    return uv, dd @ dn


def project_points(K: CameraIntrinsics, pose: Pose, X) -> np.ndarray:
    """Project source-frame points (N, 3) through ``pose`` and ``K``.

    Raises NonPositiveDepth if any point lands at or behind the camera plane.
    """
    Xc = pose.apply(np.atleast_2d(X))
    bad = np.flatnonzero(Xc[:, 2] <= MIN_DEPTH)
    if bad.size:
        raise NonPositiveDepth(f"point {int(bad[0])} has depth {Xc[bad[0], 2]:.6g} mm")
    return project_camera_points(K.params(), Xc)


def project_point(K: CameraIntrinsics, pose: Pose, X) -> np.ndarray:
    return project_points(K, pose, np.asarray(X, dtype=float).reshape(1, 3))[0]


def undistort_pixels(K: CameraIntrinsics, uv, iterations: int = 20) -> np.ndarray:
    """Invert the camera model to ideal normalized coordinates (x/z, y/z)."""
    uv = np.atleast_2d(np.asarray(uv, dtype=float))
    yd = (uv[:, 1] - K.cy) / K.fy
    xd = (uv[:, 0] - K.cx - K.skew * yd) / K.fx
    target = np.stack([xd, yd], axis=1)
    if not any(K.dist):
        return target

    # Newton on the distortion map, starting from the distorted point
    unit = np.array([1.0, 1.0, 0.0, 0.0, 0.0, *K.dist])
    xy = target.copy()
    for _ in range(iterations):
        X3 = np.column_stack([xy, np.ones(len(xy))])
        f, J = project_camera_points(unit, X3, with_jacobian=True)
        r = f - target
        step = np.linalg.solve(J[:, :, :2], r[:, :, None])[:, :, 0]
        xy -= step
        if np.max(np.abs(step)) < 1e-15:
            break
    return xy
