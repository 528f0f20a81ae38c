"""Synthetic camera networks with known extrinsics.

A scene is a set of fixed cameras (world -> camera), a rigid rig of planar
patterns (rig -> pattern) and a rig trajectory (world -> rig per time). Each
camera "detects" a pattern by projecting its corners directly; no images
are rendered. Four layouts cover the common acquisition setups:

* ``WallRing``: cameras high on the walls of a room, rig carried around.
* ``TwoSided``: two facing panels of cameras, two back-to-back patterns.
* ``MulticamHead``: outward-looking cameras on a moving head, patterns
  fixed in the room. Here the head frame plays the role of "world" and the
  room is the "rig", so ``T_t`` is the head pose in the room.
* ``Turntable``: one camera, patterns on cubes spinning about the z axis.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .connectivity import C, P, T, build_interaction_graph, connected_components
from .dataset import Dataset, Detection, PatternGeometry
from .errors import InfeasibleLayout
from .geometry import MIN_DEPTH, CameraIntrinsics, Pose, compose, inverse, project_points, rodrigues

log = logging.getLogger(__name__)

MIN_CORNER_FRACTION = 0.8
MIN_FACING_COS = 0.2
# undistorted radius beyond which a polynomial lens model may fold back into the image
MAX_NORMALIZED_RADIUS = 1.2


class ConnectivityWarning(UserWarning):
    """Emitted when dropout leaves the interaction graph disconnected."""


# -- small pose builders -------------------------------------------------------


def look_at(position, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """World -> camera pose for a camera at ``position`` looking at ``target``.

    Image y points away from ``up``.
    """
    position = np.asarray(position, dtype=float)
    z = np.asarray(target, dtype=float) - position
    z /= np.linalg.norm(z)
    x = np.cross(z, up)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.vstack([x, y, z])
    return Pose(R, -R @ position)


def board_pose(geom: PatternGeometry, center, normal, up=(0.0, 0.0, 1.0)) -> Pose:
    """Rig -> pattern pose placing the board's middle at ``center``.

    ``normal`` is the direction the printed face looks towards, which is the
    pattern's -z axis.
    """
    z = -np.asarray(normal, dtype=float)
    z /= np.linalg.norm(z)
    x = np.cross(up, z)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross((1.0, 0.0, 0.0), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.column_stack([x, y, z])  # pattern -> rig
    mid = np.array([(geom.cols - 1) * geom.square_size / 2, (geom.rows - 1) * geom.square_size / 2, 0.0])
    return inverse(Pose(R, np.asarray(center, dtype=float) - R @ mid))


def rig_pose(position, rotation) -> Pose:
    """World -> rig transform for a rig placed at ``position`` with orientation ``rotation`` (rig -> world)."""
    return inverse(Pose(rotation, np.asarray(position, dtype=float)))


def _rz(deg):
    return rodrigues([0.0, 0.0, np.radians(deg)])


def _random_rotation(rng, max_deg):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return rodrigues(axis * np.radians(rng.uniform(-max_deg, max_deg)))


# -- layouts ---------------------------------------------------------------------


@dataclass(frozen=True)
class WallRing:
    """Cameras spaced around the walls of a room, tilted down at its middle."""

    n_cameras: int = 8
    room_mm: tuple = (8000.0, 6000.0, 3000.0)
    focal_px: float = 1100.0
    image: tuple = (1280, 960)
    aim_spread_mm: float = 1200.0
    aim_height_mm: float = 1000.0

    def cameras(self, rng):
        W, D, H = self.room_mm
        perimeter = 2 * (W + D)
        out = []
        for i in range(self.n_cameras):
            s = (i + 0.5) / self.n_cameras * perimeter + rng.uniform(-0.1, 0.1) * perimeter / self.n_cameras
            s %= perimeter
            if s < W:
                pos = (s - W / 2, -D / 2)
            elif s < W + D:
                pos = (W / 2, s - W - D / 2)
            elif s < 2 * W + D:
                pos = (W / 2 - (s - W - D), D / 2)
            else:
                pos = (-W / 2, D / 2 - (s - 2 * W - D))
            position = np.array([*pos, H - 300.0 + rng.uniform(-100, 100)]) * [0.97, 0.97, 1.0]
            aim = np.array([*rng.uniform(-self.aim_spread_mm, self.aim_spread_mm, 2), self.aim_height_mm])
            out.append((_intrinsics(self.focal_px, self.image, (-0.05, 0.01, 0.0, 0.0, 0.0)), look_at(position, aim)))
        return out


@dataclass(frozen=True)
class TwoSided:
    """Two facing panels of ``per_side`` cameras each, looking at the gap between them."""

    per_side: int = 6
    half_gap_mm: float = 650.0
    focal_px: float = 1000.0
    image: tuple = (1280, 720)

    def cameras(self, rng):
        cols = int(np.ceil(self.per_side / 2))
        out = []
        for side in (-1.0, 1.0):
            for i in range(self.per_side):
                r, c = divmod(i, cols)
                y = (c - (cols - 1) / 2) * 220.0 + rng.uniform(-20, 20)
                z = (r - 0.5) * 260.0 + rng.uniform(-20, 20)
                position = (side * self.half_gap_mm, y, z)
                aim = rng.uniform(-40, 40, 3)
                dist = (0.04, -0.02, 0.0005, -0.0005, 0.0)
                out.append((_intrinsics(self.focal_px, self.image, dist), look_at(position, aim)))
        return out


@dataclass(frozen=True)
class MulticamHead:
    """``n_outward`` cameras around a small head, facing away from each other.

    Camera i looks along yaw ``i * 360 / n_outward`` degrees.
    """

    n_outward: int = 2
    radius_mm: float = 60.0
    focal_px: float = 800.0
    image: tuple = (1280, 960)

    def cameras(self, rng):
        out = []
        for i in range(self.n_outward):
            d = _rz(360.0 * i / self.n_outward) @ [1.0, 0.0, 0.0]
            position = self.radius_mm * d + rng.uniform(-5, 5, 3)
            target = position + d * 1000.0 + rng.uniform(-30, 30, 3)
            out.append((_intrinsics(self.focal_px, self.image, (-0.08, 0.02, 0.0, 0.0, 0.0)), look_at(position, target)))
        return out


@dataclass(frozen=True)
class Turntable:
    """One fixed camera watching an object turned about the world z axis."""

    steps: int = 61
    step_deg: float = 6.0
    distance_mm: float = 520.0
    elevation_deg: float = 50.0
    target_height_mm: float = 90.0
    focal_px: float = 2600.0
    image: tuple = (2000, 1500)

    def cameras(self, rng):
        el = np.radians(self.elevation_deg + rng.uniform(-1, 1))
        position = self.distance_mm * np.array([np.cos(el), 0.0, np.sin(el)]) + [0.0, 0.0, self.target_height_mm]
        K = _intrinsics(self.focal_px, self.image, (0.02, 0.0, 0.0, 0.0, 0.0))
        return [(K, look_at(position, (0.0, 0.0, self.target_height_mm)))]

    def trajectory(self, phase_deg: float = 0.0) -> list[Pose]:
        return [rig_pose((0.0, 0.0, 0.0), _rz(phase_deg + k * self.step_deg)) for k in range(self.steps)]


def _intrinsics(f, image, dist):
    w, h = image
    return CameraIntrinsics(fx=f, fy=f * 1.001, cx=w / 2 + 3.5, cy=h / 2 - 2.5, width=w, height=h, dist=dist)


# -- configuration and scene ---------------------------------------------------


@dataclass
class SceneConfig:
    """Everything needed to generate a scene.

    ``trajectory`` is either a list of world -> rig poses or a callable that
    receives a numpy Generator and returns one.
    """

    layout: WallRing | TwoSided | MulticamHead | Turntable
    patterns: Sequence[PatternGeometry]
    pattern_poses: Sequence[Pose]  # rig -> pattern, one per pattern
    trajectory: Sequence[Pose] | Callable
    noise_sigma: float = 0.0
    dropout: float = 0.0
    seed: int = 0
    name: str = "custom"


@dataclass
class SyntheticScene:
    cameras: dict  # id -> (CameraIntrinsics, world -> camera Pose)
    patterns: dict  # id -> (PatternGeometry, rig -> pattern Pose)
    trajectory: list  # world -> rig per time
    clean: Dataset
    dataset: Dataset
    config: SceneConfig | None = None
    meta: dict = field(default_factory=dict)

    @property
    def truth(self) -> dict:
        """Ground-truth poses keyed by variable id."""
        out = {C(i): pose for i, (_, pose) in self.cameras.items()}
        out.update({P(i): pose for i, (_, pose) in self.patterns.items()})
        out.update({T(i): pose for i, pose in enumerate(self.trajectory)})
        return out

    def truth_in_gauge(self, reference) -> dict:
        """Ground truth re-expressed so that the reference pattern and time are identity.

        With G = T*^-1 P*^-1, cameras become C G, patterns P P*^-1 and
        rig poses P* T G; every projection C T^-1 P^-1 is unchanged.
        """
        p_star, t_star = reference
        Ps = self.patterns[p_star][1]
        G = compose(inverse(self.trajectory[t_star]), inverse(Ps))
        out = {}
        for v, pose in self.truth.items():
            if v.kind == 0:
                out[v] = compose(pose, G)
            elif v.kind == 1:
                out[v] = compose(pose, inverse(Ps))
            else:
                out[v] = compose(compose(Ps, pose), G)
        return out


def visible_corners(K: CameraIntrinsics, M: Pose, geom: PatternGeometry):
    """Indices of corners a camera detects, or None if the pattern is culled.

    ``M`` maps pattern to camera coordinates.
    """
    X = geom.corner_points
    Xc = X @ M.R.T + M.t
    if np.any(Xc[:, 2] <= MIN_DEPTH):
        return None
    mid = X.mean(axis=0)
    center = M.R @ mid + M.t
    normal = M.R @ [0.0, 0.0, -1.0]
    if normal @ (-center) / np.linalg.norm(center) <= MIN_FACING_COS:
        return None
    ideal = Xc[:, :2] / Xc[:, 2:]
    uv = project_points(K, M, X)
    inside = (
        (uv[:, 0] >= 0) & (uv[:, 0] <= K.width - 1) & (uv[:, 1] >= 0) & (uv[:, 1] <= K.height - 1)
        & (np.linalg.norm(ideal, axis=1) < MAX_NORMALIZED_RADIUS)
    )
    if inside.sum() < MIN_CORNER_FRACTION * len(X):
        return None
    return np.flatnonzero(inside)


def _seeds(seed: int):
    layout, trajectory, noise = np.random.SeedSequence(int(seed) % 2**64).spawn(3)
    return layout, trajectory, noise


def generate_scene(cfg: SceneConfig) -> SyntheticScene:
    """Place cameras, move the rig, cull, and emit detections (clean and perturbed)."""
    if len(cfg.patterns) != len(cfg.pattern_poses):
        raise ValueError("one rig pose is needed per pattern")
    s_layout, s_traj, s_noise = _seeds(cfg.seed)
    cameras = dict(enumerate(cfg.layout.cameras(np.random.default_rng(s_layout))))
    traj = cfg.trajectory(np.random.default_rng(s_traj)) if callable(cfg.trajectory) else cfg.trajectory
    traj = list(traj)
    patterns = {g.pattern_id: (g, pose) for g, pose in zip(cfg.patterns, cfg.pattern_poses)}

    detections = []
    for t, Tt in enumerate(traj):
        for c, (K, Cc) in cameras.items():
            for p, (geom, Pp) in patterns.items():
                M = compose(compose(Cc, inverse(Tt)), inverse(Pp))
                ids = visible_corners(K, M, geom)
                if ids is None:
                    continue
                uv = project_points(K, M, geom.corner_points[ids])
                detections.append(Detection(c, p, t, ids, uv))
    if not detections:
        raise InfeasibleLayout("no camera sees any pattern at any time")

    meta = {"generator": cfg.name, "seed": int(cfg.seed)}
    clean = Dataset(
        cameras={c: K for c, (K, _) in cameras.items()},
        patterns={p: g for p, (g, _) in patterns.items()},
        detections=detections,
        time_count=len(traj),
        meta=dict(meta, noise_sigma_px=0.0, dropout=0.0),
    )
    clean.validate()
    scene = SyntheticScene(cameras, patterns, traj, clean, clean, cfg, meta)
    if cfg.noise_sigma > 0 or cfg.dropout > 0:
        scene.dataset = perturb_detections(scene, cfg.noise_sigma, cfg.dropout, s_noise)
    return scene


def perturb_detections(scene: SyntheticScene, sigma: float, dropout: float, seed) -> Dataset:
    """Gaussian pixel noise on every corner coordinate plus whole-detection dropout.

    Warns with :class:`ConnectivityWarning` if the surviving detections no
    longer form a single connected interaction graph.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if not 0 <= dropout < 1:
        raise ValueError("dropout must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    kept = []
    for det in scene.clean.detections:
        # draw for every detection so the noise of survivors does not depend on dropout
        drop = rng.uniform() < dropout
        noise = rng.normal(0.0, 1.0, det.pixels.shape)
        if drop:
            continue
        pixels = det.pixels + sigma * noise if sigma > 0 else det.pixels.copy()
        kept.append(Detection(det.camera_id, det.pattern_id, det.time_id, det.corner_ids.copy(), pixels))

    if not kept:
        warnings.warn("dropout removed every detection", ConnectivityWarning, stacklevel=2)
    else:
        _, n = connected_components(build_interaction_graph(kept))
        if n > 1:
            warnings.warn(f"dropout split the interaction graph into {n} components", ConnectivityWarning,
                          stacklevel=2)
    meta = dict(scene.clean.meta, noise_sigma_px=float(sigma), dropout=float(dropout))
    return Dataset(dict(scene.clean.cameras), dict(scene.clean.patterns), kept, scene.clean.time_count, meta)


# -- presets ---------------------------------------------------------------------


def _box_rig(geom_args, n_faces, half_width, tilt_deg, offset_yaw=0.0, z0=0.0, first_id=0):
    """Patterns on the vertical faces of a prism around the rig z axis, tilted up by ``tilt_deg``."""
    geoms, poses = [], []
    tilt = np.radians(tilt_deg)
    for k in range(n_faces):
        yaw = np.radians(offset_yaw + 360.0 * k / n_faces)
        out = np.array([np.cos(yaw), np.sin(yaw), 0.0])
        normal = np.cos(tilt) * out + np.array([0.0, 0.0, np.sin(tilt)])
        g = PatternGeometry(first_id + k, *geom_args)
        geoms.append(g)
        poses.append(board_pose(g, half_width * out + [0.0, 0.0, z0], normal))
    return geoms, poses


def _room_walk(n, half_extent, height, n_center=0, tilt_deg=10.0):
    """Rig carried around a room; the first ``n_center`` stops are near the middle, in view of most cameras."""
    def make(rng):
        out = []
        for k in range(n):
            ext = (250.0, 250.0) if k < n_center else half_extent
            pos = [rng.uniform(-ext[0], ext[0]), rng.uniform(-ext[1], ext[1]), height + rng.uniform(-250, 250)]
            R = _random_rotation(rng, tilt_deg) @ _rz(rng.uniform(0, 360))
            out.append(rig_pose(pos, R))
        return out
    return make


def _sim(n_cameras, room, focal, times, walk, aim_spread, n_center):
    geoms, poses = _box_rig((6, 8, 50.0), 4, 260.0, 25.0)
    layout = WallRing(n_cameras, room, focal, aim_spread_mm=aim_spread)
    trajectory = _room_walk(times, walk, 1000.0, n_center)
    return dict(layout=layout, patterns=geoms, pattern_poses=poses, trajectory=trajectory)


def _net(times):
    g0, g1 = PatternGeometry(0, 5, 7, 25.0), PatternGeometry(1, 5, 7, 25.0)
    poses = [board_pose(g0, (-5.0, 0.0, 0.0), (-1.0, 0.0, 0.0)), board_pose(g1, (5.0, 0.0, 0.0), (1.0, 0.0, 0.0))]

    def make(rng):
        return [rig_pose(rng.uniform(-60, 60, 3), _random_rotation(rng, 25.0)) for _ in range(times)]
    return dict(layout=TwoSided(6), patterns=[g0, g1], pattern_poses=poses, trajectory=make)


def _room_targets(yaws_deg, distance=900.0):
    geoms, poses = [], []
    for p, yaw in enumerate(yaws_deg):
        d = _rz(yaw) @ [1.0, 0.0, 0.0]
        g = PatternGeometry(p, 7, 9, 35.0)
        geoms.append(g)
        poses.append(board_pose(g, distance * d, -d))
    return geoms, poses


def _head_moves(head_yaws_deg, max_deg=12.0, max_mm=60.0):
    def make(rng):
        return [inverse(rig_pose(rng.uniform(-max_mm, max_mm, 3), _rz(yaw) @ _random_rotation(rng, max_deg)))
                for yaw in head_yaws_deg]
    return make


def _mult(n_cams, pattern_yaws, head_yaws):
    geoms, poses = _room_targets(pattern_yaws)
    return dict(layout=MulticamHead(n_cams, focal_px=600.0), patterns=geoms, pattern_poses=poses,
                trajectory=_head_moves(head_yaws, 30.0, 60.0))


def _rot(steps, cube_mm, square_mm, elevation):
    args = (5, 5, square_mm)
    lower = _box_rig(args, 4, cube_mm / 2, 0.0, 0.0, cube_mm / 2)
    upper = _box_rig(args, 4, cube_mm / 2, 0.0, 45.0, 1.5 * cube_mm + 10.0, first_id=4)
    layout = Turntable(steps, 6.0, elevation_deg=elevation, target_height_mm=cube_mm + 5.0)
    return dict(layout=layout, patterns=lower[0] + upper[0], pattern_poses=lower[1] + upper[1],
                trajectory=layout.trajectory())


_PRESETS = {
    "sim1": lambda: _sim(8, (9000.0, 7000.0, 3000.0), 4000.0, 43, (3500.0, 2700.0), 800.0, 2),
    "sim2": lambda: _sim(16, (6000.0, 5000.0, 3000.0), 2000.0, 37, (2000.0, 1500.0), 1200.0, 1),
    "net1": lambda: _net(10),
    "net2": lambda: _net(20),
    "mult1": lambda: _mult(2, (180.0, 0.0), [0.0] * 10),
    "mult2": lambda: _mult(2, (180.0, 0.0), [0.0] * 5 + [180.0] * 5),
    "mult3": lambda: _mult(4, (0.0, 90.0, 180.0), [90.0 * (k // 6) for k in range(24)]),
    "rot1": lambda: _rot(61, 80.0, 14.0, 50.0),
    "rot2": lambda: _rot(62, 90.0, 16.0, 45.0),
}

PRESET_NAMES = tuple(_PRESETS)

# cameras, patterns, times and FR count each preset aims for
TARGET_SHAPES = {
    "sim1": (8, 4, 43, 87),
    "sim2": (16, 4, 37, 472),
    "net1": (12, 2, 10, 107),
    "net2": (12, 2, 20, 211),
    "mult1": (2, 2, 10, 20),
    "mult2": (2, 2, 10, 20),
    "mult3": (4, 3, 24, 72),
    "rot1": (1, 8, 61, 162),
    "rot2": (1, 8, 62, 163),
}


def preset(name: str, seed: int = 0, sigma: float = 0.0, dropout: float = 0.0) -> SceneConfig:
    try:
        build = _PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}") from None
    return SceneConfig(**build(), noise_sigma=sigma, dropout=dropout, seed=seed, name=name)
