import time
from functools import lru_cache

import numpy as np
import pytest

from lane3d.scenegen import generate_scene, with_ranges
from lane3d.geometry import CameraPose, pose_to_transform
from lane3d.scenegen import Lane3D

N_SCENES = 1000


@lru_cache(maxsize=None)
def _scenes(n):
    t0 = time.perf_counter()
    out = [generate_scene(s) for s in range(n)]
    return out, time.perf_counter() - t0


@pytest.fixture(scope="session")
def scenes():
    """Seeds 0..999 with default ranges (generated once per session)."""
    return _scenes(N_SCENES)[0]


@pytest.fixture(scope="session")
def scene_timing():
    return _scenes(N_SCENES)[1]


@pytest.fixture(scope="session")
def few_scenes():
    return _scenes(60)[0]


FLAT = with_ranges(magnitude=(0.0, 0.0), ramp_max_height=(0.0, 0.0))


@pytest.fixture(scope="session")
def flat_scenes():
    return [generate_scene(10_000 + s, FLAT) for s in range(100)]


def straight_lane(x, kind="centerline", y0=0.0, y1=120.0, step=1.0, z=None, visible=None):
    ys = np.arange(y0, y1 + step / 2, step)
    xs = np.full_like(ys, float(x)) if np.isscalar(x) else x(ys)
    zs = np.zeros_like(ys) if z is None else (np.full_like(ys, z) if np.isscalar(z) else z(ys))
    vis = np.ones(len(ys), bool) if visible is None else visible(ys)
    return Lane3D(kind, np.column_stack([xs, ys, zs]), vis)


def to_camera(lanes_road, pose: CameraPose):
    r2c = pose_to_transform(pose).inverse()
    return [Lane3D(l.kind, r2c.apply(l.points), l.visible.copy(), l.source) for l in lanes_road]
