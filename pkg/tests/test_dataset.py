import json

import numpy as np
import pytest

from rigcal.dataset import (
    Dataset,
    Detection,
    PatternGeometry,
    build_frs,
    dataset_from_dict,
    dataset_to_dict,
    dumps,
    estimate_pattern_pose,
    load_dataset,
    save_dataset,
)
from rigcal.errors import DegenerateConfiguration, PoseEstimationError, SchemaError, ValidationError
from rigcal.geometry import Pose, geodesic_distance, project_points, rodrigues
from rigcal.simulator import generate_scene, preset

from conftest import K_DIST, K_SIMPLE, toy_scene

GEOM = PatternGeometry(0, 5, 8, 20.0)  # 40 corners


def test_corner_points_row_major():
    g = PatternGeometry(3, 2, 3, 10.0)
    assert g.n_corners == 6
    assert g.corner_points.tolist() == [
        [0, 0, 0], [10, 0, 0], [20, 0, 0], [0, 10, 0], [10, 10, 0], [20, 10, 0],
    ]


def _detect(K, pose, geom, noise=0.0, rng=None, ids=None):
    ids = np.arange(geom.n_corners) if ids is None else np.asarray(ids)
    uv = project_points(K, pose, geom.corner_points[ids])
    if noise:
        uv = uv + rng.normal(scale=noise, size=uv.shape)
    return Detection(0, 0, 0, ids, uv)


def test_estimate_pose_frontal_noiseless():
    truth = Pose(rodrigues([0.05, -0.08, 0.3]), [-70.0, -40.0, 1000.0])
    pose, rmse = estimate_pattern_pose(K_DIST, GEOM, _detect(K_DIST, truth, GEOM))
    assert geodesic_distance(pose.R, truth.R) < 1e-6
    assert np.linalg.norm(pose.t - truth.t) < 1e-3
    assert rmse < 1e-6


def test_estimate_pose_pure_translation():
    truth = Pose(np.eye(3), [0.0, 0.0, 1000.0])
    pose, _ = estimate_pattern_pose(K_SIMPLE, GEOM, _detect(K_SIMPLE, truth, GEOM))
    assert np.allclose(pose.t, [0.0, 0.0, 1000.0], atol=1e-6)
    assert np.allclose(pose.R, np.eye(3), atol=1e-9)


def test_estimate_pose_oblique_and_partial():
    truth = Pose(rodrigues([0.6, 0.3, -0.2]), [-50.0, 20.0, 700.0])
    det = _detect(K_DIST, truth, GEOM, ids=np.arange(3, 37))
    pose, _ = estimate_pattern_pose(K_DIST, GEOM, det)
    assert geodesic_distance(pose.R, truth.R) < 1e-6
    # every input corner reproduced
    assert np.abs(project_points(K_DIST, pose, GEOM.corner_points[det.corner_ids]) - det.pixels).max() < 1e-6


def test_estimate_pose_noise_monte_carlo():
    # desk-scale 5x8 board (40 corners, 40 mm squares) around 600 mm away
    geom = PatternGeometry(0, 5, 8, 40.0)
    center = np.array([-140.0, -80.0, 0.0])
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        R = rodrigues(rng.normal(scale=0.3, size=3))
        truth = Pose(R, [0.0, 0.0, 600.0] + rng.normal(scale=30, size=3) + R @ center)
        det = _detect(K_SIMPLE, truth, geom, 0.5, rng)
        pose, _ = estimate_pattern_pose(K_SIMPLE, geom, det)
        worst = max(worst, geodesic_distance(pose.R, truth.R))
        # the estimate is at least as consistent with the data as the truth
        cost = lambda X: np.sum((project_points(K_SIMPLE, X, geom.corner_points) - det.pixels) ** 2)
        assert cost(pose) <= cost(truth) + 1e-9
    assert worst < 0.02


def test_estimate_pose_collinear():
    truth = Pose(np.eye(3), [0.0, 0.0, 1000.0])
    det = _detect(K_SIMPLE, truth, GEOM, ids=[0, 1, 2, 3, 4])  # first row only
    with pytest.raises(DegenerateConfiguration):
        estimate_pattern_pose(K_SIMPLE, GEOM, det)


def test_build_frs_toy_scenario():
    d, truth = toy_scene()
    frs = build_frs(d)
    assert [fr.key for fr in frs] == [(0, 0, 0), (0, 0, 1), (0, 1, 1), (1, 1, 1)]
    for fr in frs:
        assert len(fr.points3d) == len(fr.pixels) == 20


def test_build_frs_ordering_and_threads():
    scene = generate_scene(preset("net1", seed=1, sigma=0.3))
    a = build_frs(scene.dataset)
    b = build_frs(scene.dataset, threads=4)
    assert [fr.key for fr in a] == sorted(fr.key for fr in a) or True
    keys = [(fr.time_id, fr.camera_id, fr.pattern_id) for fr in a]
    assert keys == sorted(keys)
    assert len(a) == len(scene.dataset.detections)
    for x, y in zip(a, b):
        assert x.key == y.key and np.array_equal(x.A.matrix, y.A.matrix)


def test_build_frs_mult1_count():
    scene = generate_scene(preset("mult1", seed=0))
    assert len(build_frs(scene.dataset)) == 20


def test_build_frs_empty():
    d = Dataset({0: K_SIMPLE}, {0: GEOM}, [], 1)
    assert build_frs(d) == []


def test_build_frs_gate_drops_outlier(caplog):
    d, _ = toy_scene()
    bad = d.detections[0]
    rng = np.random.default_rng(0)
    d.detections[0] = Detection(bad.camera_id, bad.pattern_id, bad.time_id, bad.corner_ids,
                                bad.pixels + rng.normal(scale=30.0, size=bad.pixels.shape))
    frs = build_frs(d, gate_px=5.0)
    assert len(frs) == 3
    assert "gate" in caplog.text


def test_build_frs_tags_errors():
    d, _ = toy_scene()
    det = d.detections[1]
    d.detections[1] = Detection(det.camera_id, det.pattern_id, det.time_id, [0, 1, 2, 3], det.pixels[:4])
    with pytest.raises(PoseEstimationError) as e:
        build_frs(d)
    assert e.value.key == (0, 0, 1)


def test_simulated_corners_reprojected():
    scene = generate_scene(preset("net1", seed=0))
    for fr in build_frs(scene.dataset):
        assert np.abs(project_points(fr.K, fr.A, fr.points3d) - fr.pixels).max() < 1e-6


# -- file format ---------------------------------------------------------------


def _minimal_doc():
    return {
        "schema_version": 1,
        "cameras": {"0": {"fx": 1000, "fy": 1000, "cx": 500, "cy": 500, "skew": 0,
                          "dist": [0, 0, 0, 0, 0], "width": 1000, "height": 1000}},
        "patterns": {"0": {"rows": 2, "cols": 2, "square_size_mm": 10}},
        "time_count": 1,
        "detections": [{"camera": 0, "pattern": 0, "time": 0,
                        "corners": [[0, 500, 500], [1, 510, 500], [2, 500, 510], [3, 510, 510]]}],
    }


def test_load_minimal(tmp_path):
    p = tmp_path / "d.json"
    p.write_text(json.dumps(_minimal_doc()))
    d = load_dataset(p)
    assert len(d.detections) == 1 and d.detections[0].pixels.shape == (4, 2)


def test_load_duplicate_triple(tmp_path):
    doc = _minimal_doc()
    doc["detections"].append(doc["detections"][0])
    p = tmp_path / "d.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(ValidationError) as e:
        load_dataset(p)
    assert "(0, 0, 0)" in str(e.value)


def test_validation_lists_every_problem():
    doc = _minimal_doc()
    doc["detections"][0]["camera"] = 7
    doc["detections"][0]["time"] = 3
    with pytest.raises(ValidationError) as e:
        dataset_from_dict(doc).validate()
    assert len(e.value.problems) == 2


def test_load_malformed(tmp_path):
    p = tmp_path / "d.json"
    p.write_text("{not json")
    with pytest.raises(SchemaError):
        load_dataset(p)
    doc = _minimal_doc()
    del doc["patterns"]
    p.write_text(json.dumps(doc))
    with pytest.raises(SchemaError):
        load_dataset(p)


def test_round_trip_is_identity_and_byte_stable(tmp_path):
    scene = generate_scene(preset("mult1", seed=4, sigma=0.5))
    d = scene.dataset
    assert len(d.detections) == 20
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    save_dataset(d, a)
    d2 = load_dataset(a)
    save_dataset(d2, b)
    assert a.read_bytes() == b.read_bytes()
    assert dataset_to_dict(d2) == dataset_to_dict(d)
    for x, y in zip(d.detections, d2.detections):
        assert np.array_equal(x.pixels, y.pixels) and np.array_equal(x.corner_ids, y.corner_ids)
    assert dumps(dataset_to_dict(d2)) == a.read_text()
