import functools
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from spatialref.synthetic import generate_tabletop_scene  # noqa: E402


@functools.lru_cache(maxsize=None)
def cached_scene(seed: int, tilt: bool = False):
    return generate_tabletop_scene(seed, tilt_world=tilt)


@pytest.fixture(scope="session")
def scene0():
    return cached_scene(0)


@pytest.fixture(scope="session")
def scenes():
    return [cached_scene(s) for s in range(6)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_frame(objects, frame_id="fixture", width=64, height=48):
    """Frame with a camera at (0, 1, 3) looking along -Z: viewer right is +X, forward is -Z."""
    from spatialref.geometry import CameraIntrinsics, RigidTransform
    from spatialref.scene import SceneFrame

    k = CameraIntrinsics(50.0, 50.0, width / 2, height / 2, width, height)
    ext = RigidTransform(np.diag([1.0, -1.0, -1.0]), [0.0, 1.0, 3.0])
    return SceneFrame(frame_id, k, ext, RigidTransform.identity(), None, list(objects))


def make_object(oid, center, half=(0.05, 0.05, 0.05), category="box", yaw=0.0, **kw):
    from spatialref.geometry import Box2D, OrientedBox3
    from spatialref.scene import ObjectInstance

    return ObjectInstance(oid, category, Box2D(0, 0, 10, 10),
                          OrientedBox3.from_yaw(center, half, yaw), **kw)


def plane_frame(objects=(), width=800, height=600, occluder=None):
    """Camera 1 m above the plane y = 0 looking straight down.

    Pixel (u, v) sees gravity point ((u - 400) / 400, 0, (v - 300) / 400) at depth 1.
    ``occluder`` = (u0, v0, u1, v1, depth) overwrites a pixel block of the depth map.
    """
    from spatialref.geometry import CameraIntrinsics, DepthMap, RigidTransform
    from spatialref.scene import SceneFrame

    k = CameraIntrinsics(400.0, 400.0, 400.0, 300.0, width, height)
    rot = np.column_stack([[1.0, 0, 0], [0, 0, 1.0], [0, -1.0, 0]])
    ext = RigidTransform(rot, [0.0, 1.0, 0.0])
    depth = np.ones((height, width))
    if occluder is not None:
        u0, v0, u1, v1, d = occluder
        depth[v0:v1, u0:u1] = d
    return SceneFrame("plane", k, ext, RigidTransform.identity(), None, list(objects),
                      depth=DepthMap(depth))
