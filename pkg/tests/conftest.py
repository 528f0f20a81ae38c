import numpy as np
import pytest
from hypothesis import strategies as st

from rigcal.connectivity import C, P, T
from rigcal.dataset import Dataset, Detection, PatternGeometry
from rigcal.geometry import CameraIntrinsics, Pose, compose, inverse, project_points, rodrigues
from rigcal.simulator import board_pose, look_at


def random_rotation(rng, max_angle=np.pi * 0.95):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return rodrigues(axis * rng.uniform(0, max_angle))


def random_pose(rng, max_angle=np.pi * 0.95, scale=100.0):
    return Pose(random_rotation(rng, max_angle), rng.normal(scale=scale, size=3))


@st.composite
def poses(draw, max_angle=3.0, scale=500.0):
    axis = np.array(draw(st.tuples(*[st.floats(-1, 1)] * 3)))
    if np.linalg.norm(axis) < 1e-3:
        axis = np.array([0.0, 0.0, 1.0])
    angle = draw(st.floats(0, max_angle))
    t = np.array(draw(st.tuples(*[st.floats(-scale, scale)] * 3)))
    return Pose(rodrigues(axis / np.linalg.norm(axis) * angle), t)


K_SIMPLE = CameraIntrinsics(fx=1000.0, fy=1000.0, cx=500.0, cy=500.0, width=1000, height=1000)
K_DIST = CameraIntrinsics(fx=900.0, fy=905.0, cx=640.0, cy=360.0, width=1280, height=720,
                          dist=(0.05, -0.02, 0.001, -0.0005, 0.003))


def detection_from_truth(K, M, geom, c, p, t, noise=None, rng=None):
    X = geom.corner_points
    uv = project_points(K, M, X)
    if noise:
        uv = uv + rng.normal(scale=noise, size=uv.shape)
    return Detection(c, p, t, np.arange(geom.n_corners), uv)


def toy_scene():
    """Two cameras, two patterns, two times.

    c0 sees p0 at t0 and t1 and p1 at t1; c1 sees p1 at t1.
    Returns (dataset, truth dict).
    """
    g0, g1 = PatternGeometry(0, 4, 5, 30.0), PatternGeometry(1, 4, 5, 30.0)
    # rig: two boards side by side facing -x (towards the cameras)
    P0 = board_pose(g0, (0.0, -80.0, 0.0), (-1.0, 0.0, 0.0))
    P1 = board_pose(g1, (0.0, 80.0, 0.0), (-1.0, 0.0, 0.0))
    C0 = look_at((-900.0, -100.0, 50.0), (0.0, 0.0, 0.0))
    C1 = look_at((-800.0, 300.0, -60.0), (0.0, 60.0, 0.0))
    T0 = inverse(Pose(rodrigues([0.05, -0.1, 0.2]), np.array([10.0, -20.0, 5.0])))
    T1 = inverse(Pose(rodrigues([-0.1, 0.15, -0.1]), np.array([-15.0, 10.0, 20.0])))
    cams, pats, traj = {0: C0, 1: C1}, {0: (g0, P0), 1: (g1, P1)}, [T0, T1]
    seen = [(0, 0, 0), (0, 0, 1), (0, 1, 1), (1, 1, 1)]
    dets = []
    for c, p, t in seen:
        g, Pp = pats[p]
        M = compose(compose(cams[c], inverse(traj[t])), inverse(Pp))
        dets.append(detection_from_truth(K_DIST, M, g, c, p, t))
    d = Dataset({0: K_DIST, 1: K_DIST}, {0: g0, 1: g1}, dets, 2)
    truth = {C(0): C0, C(1): C1, P(0): P0, P(1): P1, T(0): T0, T(1): T1}
    return d, truth


def gauge(truth, reference):
    """Ground truth in the gauge where the reference pattern and time are identity."""
    p_star, t_star = reference
    Ps, Ts = truth[P(p_star)], truth[T(t_star)]
    G = compose(inverse(Ts), inverse(Ps))
    out = {}
    for v, pose in truth.items():
        if v.kind == 0:
            out[v] = compose(pose, G)
        elif v.kind == 1:
            out[v] = compose(pose, inverse(Ps))
        else:
            out[v] = compose(compose(Ps, pose), G)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def shifted_copy(dataset, dc, dp, dt):
    """The dataset with camera, pattern and time ids offset."""
    cams = {c + dc: K for c, K in dataset.cameras.items()}
    pats = {p + dp: PatternGeometry(p + dp, g.rows, g.cols, g.square_size) for p, g in dataset.patterns.items()}
    dets = [Detection(d.camera_id + dc, d.pattern_id + dp, d.time_id + dt, d.corner_ids, d.pixels)
            for d in dataset.detections]
    return Dataset(cams, pats, dets, dataset.time_count + dt)


def two_islands(a, b):
    """Union of two datasets that share no camera, pattern or time; also returns each island alone."""
    b = shifted_copy(b, len(a.cameras), len(a.patterns), a.time_count)
    both = Dataset({**a.cameras, **b.cameras}, {**a.patterns, **b.patterns}, a.detections + b.detections,
                   b.time_count)
    return both, (a, b)
