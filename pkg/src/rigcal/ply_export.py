"""Pose sets as ASCII PLY: camera pyramids plus pattern corner points."""

from __future__ import annotations

import numpy as np
from plyfile import PlyData, PlyElement

from .connectivity import Kind, T
from .geometry import Pose, compose, inverse
from .metrics import virtual_cameras

CAMERA_RGB = (220, 60, 40)
VIRTUAL_RGB = (40, 90, 220)
PATTERN_RGB = (30, 160, 60)


def pyramid(cam: Pose, size: float, aspect: float = 4 / 3) -> np.ndarray:
    """Apex at the camera center, base ``size`` in front of it; (5, 3) in the outer frame."""
    w, h = size * aspect / 2, size / 2
    local = np.array([[0, 0, 0], [-w, -h, size], [w, -h, size], [w, h, size], [-w, h, size]], dtype=float)
    inv = inverse(cam)
    return local @ inv.R.T + inv.t


_PYRAMID_FACES = [(0, 1, 2), (0, 2, 3), (0, 3, 4), (0, 4, 1), (1, 4, 3, 2)]


def scene_geometry(values: dict, patterns: dict, virtual: bool = False, reference_time: int | None = None,
                   size: float = 50.0):
    """Vertices (n, 3), colors (n, 3) and faces of the exported scene.

    Without ``virtual`` everything is drawn in the world frame, with the rig
    placed at ``reference_time`` (the earliest time when None). With
    ``virtual`` the rig frame is used and the single camera is drawn once
    per time, as C T_t^-1.
    """
    if virtual:
        cams, rgb = virtual_cameras(values), VIRTUAL_RGB
        to_outer = Pose.identity()
    else:
        cams = [values[v] for v in sorted(values) if v.kind == Kind.CAMERA]
        rgb = CAMERA_RGB
        times = sorted(v.index for v in values if v.kind == Kind.TIME)
        t = reference_time if reference_time is not None else (times[0] if times else None)
        to_outer = inverse(values[T(t)]) if t is not None else Pose.identity()  # rig -> world

    verts, colors, faces = [], [], []
    for k, cam in enumerate(cams):
        verts.append(pyramid(cam, size))
        colors += [rgb] * 5
        faces += [tuple(5 * k + i for i in f) for f in _PYRAMID_FACES]
    for v in sorted(values):
        if v.kind != Kind.PATTERN or v.index not in patterns:
            continue
        M = compose(to_outer, inverse(values[v]))  # pattern -> outer frame
        verts.append(M.apply(patterns[v.index].corner_points))
        colors += [PATTERN_RGB] * patterns[v.index].n_corners
    V = np.concatenate(verts) if verts else np.zeros((0, 3))
    return V, np.array(colors, dtype=np.uint8).reshape(-1, 3), faces


def write_ply(path, vertices, colors, faces) -> None:
    vtx = np.empty(len(vertices), dtype=[("x", "f8"), ("y", "f8"), ("z", "f8"),
                                         ("red", "u1"), ("green", "u1"), ("blue", "u1")])
    for i, name in enumerate("xyz"):
        vtx[name] = vertices[:, i]
    for i, name in enumerate(("red", "green", "blue")):
        vtx[name] = colors[:, i]
    fce = np.empty(len(faces), dtype=[("vertex_indices", "O")])
    fce["vertex_indices"] = [np.array(f, dtype=np.int32) for f in faces]
    elements = [PlyElement.describe(vtx, "vertex"),
                PlyElement.describe(fce, "face", val_types={"vertex_indices": "i4"})]
    PlyData(elements, text=True).write(str(path))


def export_ply(path, values, patterns, virtual=False, reference_time=None, size=50.0) -> int:
    """Write the PLY and return its vertex count."""
    V, rgb, faces = scene_geometry(values, patterns, virtual, reference_time, size)
    write_ply(path, V, rgb, faces)
    return len(V)
