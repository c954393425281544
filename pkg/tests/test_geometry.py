import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from difflidar import scalar as sc
from difflidar.geometry import (
    SECONDARY_EPSILON, Ray, Scene, TriangleMesh, build_kdtree, intersect_scene, intersect_triangle,
    linear_scan, plane_distance,
)
from difflidar.harness.builtins import mirror_room
from difflidar.harness.scenefile import build_scene
from difflidar.cwmeasure import SensorModel, beam_rays

from conftest import wall_mesh


def random_triangles(rng, n, extent=2.0, size=0.2):
    centers = rng.uniform(-extent, extent, (n, 1, 3))
    return centers + rng.normal(0.0, size, (n, 3, 3))


def random_rays(rng, n, extent=2.5):
    o = rng.uniform(-extent, extent, (n, 3))
    d = rng.normal(size=(n, 3))
    return o, d / np.linalg.norm(d, axis=1, keepdims=True)


UNIT_TRI = np.array([[-1.0, -1.0, 0.0], [1.0, -1.0, 0.0], [0.0, 1.0, 0.0]])


class TestRay:
    def test_rejects_non_unit(self):
        with pytest.raises(ValueError):
            Ray([0, 0, 0], [1, 1, 0])

    def test_rejects_bad_interval(self):
        with pytest.raises(ValueError):
            Ray([0, 0, 0], [1, 0, 0], t_min=2.0, t_max=1.0)


class TestMesh:
    def test_degenerate_triangle(self):
        with pytest.raises(ValueError, match="degenerate"):
            TriangleMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])

    def test_index_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 3]])


class TestIntersectTriangle:
    def test_axis_aligned(self):
        hit = intersect_triangle(Ray([0, 0, -1], [0, 0, 1]), UNIT_TRI)
        assert hit.t == pytest.approx(1.0)
        assert np.allclose(hit.normal, [0, 0, -1])
        assert hit.barycentric.sum() == pytest.approx(1.0)

    def test_disjoint(self):
        assert intersect_triangle(Ray([0, 0, -1], [0, 0, 1]), UNIT_TRI + [6.0, 0, 0]) is None

    def test_respects_interval(self):
        assert intersect_triangle(Ray([0, 0, -1], [0, 0, 1], t_max=0.5), UNIT_TRI) is None

    def test_shared_edge_is_watertight(self):
        # two triangles sharing the diagonal of a square: rays along it never slip through
        a = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0]])
        b = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]])
        for s in np.linspace(0.01, 0.99, 97):
            ray = Ray([s, s, 1.0], [0.0, 0.0, -1.0])
            assert intersect_triangle(ray, a) is not None or intersect_triangle(ray, b) is not None

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.05, 0.9), st.floats(0.05, 0.9), st.floats(0.5, 3.0))
    def test_barycentric_oracle(self, u, v, dist):
        tri = np.array([[0.3, -0.2, 1.0], [1.5, 0.1, 1.2], [0.4, 1.3, 0.8]])
        if u + v >= 0.95:
            return
        point = (1 - u - v) * tri[0] + u * tri[1] + v * tri[2]
        n = np.cross(tri[1] - tri[0], tri[2] - tri[0])
        n /= np.linalg.norm(n)
        origin = point - dist * n
        hit = intersect_triangle(Ray(origin, n), tri)
        # independent solve of o + t d = p0 + u e1 + v e2
        a = np.stack([-n, tri[1] - tri[0], tri[2] - tri[0]], axis=1)
        t, uu, vv = np.linalg.solve(a, origin - tri[0])
        assert hit.t == pytest.approx(t, abs=1e-12)
        assert hit.barycentric[1:] == pytest.approx([uu, vv], abs=1e-12)
        assert np.dot(hit.normal, n) <= 0.0


class TestKdTree:
    def test_empty_scene(self):
        with pytest.raises(ValueError, match="empty scene"):
            build_kdtree([])

    def test_single_triangle(self):
        tree = build_kdtree(UNIT_TRI[None])
        assert tree.node_count == 1
        ray = Ray([0.1, 0.1, -2.0], [0, 0, 1])
        assert intersect_scene(ray, tree).t == pytest.approx(intersect_triangle(ray, UNIT_TRI).t)

    def test_nearest_wins(self):
        scene = Scene.from_meshes([wall_mesh(2.0), wall_mesh(1.0)])
        hit = intersect_scene(Ray([0, 0, 0.5], [1, 0, 0]), scene)
        assert hit.t == pytest.approx(1.0)
        assert scene.object_ids[hit.triangle] == 1

    def test_miss(self):
        scene = Scene.from_meshes([wall_mesh(2.0)])
        assert intersect_scene(Ray([0, 0, 0.5], [-1, 0, 0]), scene) is None

    @pytest.mark.parametrize("n", [10, 300, 3000])
    def test_all_triangles_reachable(self, rng, n):
        tree = build_kdtree(random_triangles(rng, n))
        assert np.array_equal(tree.reachable_triangles(), np.arange(n))

    @pytest.mark.parametrize("n", [50, 2000])
    def test_matches_linear_scan(self, rng, n):
        tris = random_triangles(rng, n)
        o, d = random_rays(rng, 500)
        t_tree, i_tree = build_kdtree(tris).intersect(o, d, 0.0, np.inf)
        t_lin, i_lin = linear_scan(tris, o, d, 0.0, np.inf)
        assert np.array_equal(t_tree, t_lin)
        assert np.array_equal(i_tree, i_lin)

    def test_mirror_room_scan_rays(self):
        scene = build_scene(mirror_room())
        o, d = beam_rays(sc.PoseSE2(), SensorModel())
        t_tree, i_tree = scene.nearest(o, d, 0.0, np.inf)
        t_lin, i_lin = linear_scan(scene.triangles, o, d, 0.0, np.inf)
        assert np.array_equal(t_tree, t_lin) and np.array_equal(i_tree, i_lin)
        assert np.all(i_tree >= 0)


class TestSecondaryRays:
    def test_no_self_hit(self, rng):
        tris = random_triangles(rng, 400)
        tree = build_kdtree(tris)
        o, d = random_rays(rng, 400)
        t, idx = tree.intersect(o, d, 0.0, np.inf)
        hit = idx >= 0
        p = o[hit] + t[hit, None] * d[hit]
        d2 = rng.normal(size=p.shape)
        d2 /= np.linalg.norm(d2, axis=1, keepdims=True)
        t2, idx2 = tree.intersect(p, d2, SECONDARY_EPSILON, np.inf)
        again = idx2 == idx[hit]
        assert np.all(t2[again] >= SECONDARY_EPSILON)


class TestPlaneDistance:
    def test_derivative_matches_finite_differences(self):
        tri = np.array([[1.0, -1.0, -1.0], [1.2, 1.0, -1.0], [0.9, 0.0, 1.0]])

        def f(x):
            o = sc.stack([x[0], x[1], 0.0 * x[0]])
            d = sc.normalize(sc.stack([np.cos(x[2]), np.sin(x[2]), 0.0 * x[0]]))
            p0 = tri[0] + sc.stack([x[3], 0.0 * x[0], 0.0 * x[0]])
            return plane_distance(o, d, p0, tri[1], tri[2])

        x = np.array([0.1, 0.05, 0.2, 0.03])
        assert sc.gradient(f, x) == pytest.approx(sc.central_difference(f, x), rel=1e-4, abs=1e-8)
