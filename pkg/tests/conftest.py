import numpy as np
import pytest

from difflidar.geometry import Scene, TriangleMesh
from difflidar.materials import Material


def wall_mesh(x, half=2.0, z=(-1.0, 2.0), y0=None, material_id=0, name="wall"):
    """Quad in the plane ``X = x`` facing -x, spanning ``y0`` (or +-half) and ``z``."""
    lo, hi = y0 if y0 is not None else (-half, half)
    v = np.array([[x, lo, z[0]], [x, hi, z[0]], [x, hi, z[1]], [x, lo, z[1]]])
    return TriangleMesh(v, [[0, 1, 2], [0, 2, 3]], material_id, name)


def scene_of(meshes, materials):
    return Scene.from_meshes(meshes, materials)


@pytest.fixture
def white_wall_at_1m():
    return scene_of([wall_mesh(1.0)], [Material.lambertian(1.0, "white")])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
