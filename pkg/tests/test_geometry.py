import numpy as np
import pytest

from oracles import brute_force_hits
from srmkit.bvh import BVH
from srmkit.geometry import Camera, Ray, TriangleMesh, intersect, normalize, project, reflect, vertex_normals
from srmkit.synth import bumpy_sphere, icosphere


def test_reflect_examples():
    assert np.allclose(reflect([0, 0, -1.0], [0, 0, 1.0]), [0, 0, 1])
    assert np.allclose(reflect([1.0, 0, 0], [0, 0, 1.0]), [1, 0, 0])
    d = normalize(np.array([1.0, 0, -1]))
    assert np.allclose(reflect(d, [0, 0, 1.0]), normalize(np.array([1.0, 0, 1])))


def test_reflect_rejects_non_unit():
    with pytest.raises(ValueError):
        reflect([0, 0, -2.0], [0, 0, 1.0])
    with pytest.raises(ValueError):
        reflect([0, 0, -1.0], [0, 0, 1.01])


def test_reflect_involution_and_mirror_law(rng):
    d = normalize(rng.normal(size=(1000, 3)))
    n = normalize(rng.normal(size=(1000, 3)))
    r = reflect(d, n)
    assert np.allclose(reflect(r, n), d, atol=1e-9)
    assert np.allclose(np.linalg.norm(r, axis=1), 1.0, atol=1e-12)
    assert np.allclose(np.sum(r * n, 1), -np.sum(d * n, 1), atol=1e-12)
    tangential = lambda x: x - np.sum(x * n, 1)[:, None] * n
    assert np.allclose(tangential(r), tangential(d), atol=1e-12)


def test_mesh_invariants():
    v, f = icosphere(1)
    with pytest.raises(ValueError):
        TriangleMesh(v, f + len(v))
    with pytest.raises(ValueError):
        TriangleMesh(v, f, albedo=np.full((len(v), 3), 1.5))
    with pytest.raises(ValueError):
        TriangleMesh(v, f, normals=2 * vertex_normals(v, f))
    m = TriangleMesh(v, f)
    assert np.allclose(np.linalg.norm(m.normals, axis=1), 1.0, atol=1e-6)
    assert m.n_materials == 1


def test_vertex_normals_area_weighted():
    # two triangles sharing vertex 0, the larger one dominates
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 3.0], [0, 3.0, 0]])
    f = np.array([[0, 1, 2], [0, 4, 3]])
    n = vertex_normals(v, f)
    expected = normalize(np.array([0, 0, 0.5]) + np.array([4.5, 0, 0]))
    assert np.allclose(n[0], expected)


def test_ray_rejects_non_unit_direction():
    with pytest.raises(ValueError):
        Ray([0, 0, 0], [0, 0, 1 + 1e-6])


def test_intersect_sphere_center(unit_sphere):
    hit = intersect(unit_sphere, Ray([0, 0, 2.0], [0, 0, -1.0]))
    assert hit is not None
    assert hit.t == pytest.approx(1.0, abs=0.02)
    assert hit.barycentric.sum() == pytest.approx(1.0)
    assert intersect(unit_sphere, Ray([0, 0, 2.0], [0, 0, 1.0])) is None
    with pytest.raises(ValueError):
        intersect(unit_sphere, Ray([0, 0, 2.0], [0, 0, -1.0]), t_min=-1.0)


def test_intersect_respects_interval(unit_sphere):
    ray = Ray([0, 0, 2.0], [0, 0, -1.0])
    far = intersect(unit_sphere, ray, t_min=1.5)
    assert far is not None and far.t == pytest.approx(3.0, abs=0.02)
    assert intersect(unit_sphere, ray, t_max=0.5) is None


def test_quad_matches_brute_force(rng):
    v = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0.0]])
    f = np.array([[0, 1, 2], [0, 2, 3]])
    origins = np.column_stack([rng.uniform(-0.5, 1.5, (500, 2)), np.full(500, 1.0)])
    dirs = normalize(np.column_stack([rng.normal(0, 0.3, (500, 2)), -np.ones(500)]))
    hits = BVH(v, f).intersect(origins, dirs)
    t, face, bary = brute_force_hits(v, f, origins, dirs)
    assert np.array_equal(hits.face, face)
    assert np.allclose(hits.t[face >= 0], t[face >= 0], atol=1e-12)
    assert np.allclose(hits.bary[face >= 0], bary[face >= 0], atol=1e-9)


@pytest.mark.parametrize("cull", [False, True])
def test_bvh_matches_brute_force_on_bumpy_sphere(rng, cull):
    v, f = bumpy_sphere(4)
    origins = rng.uniform(-2, 2, (2000, 3))
    dirs = normalize(rng.normal(size=(2000, 3)))
    hits = BVH(v, f).intersect(origins, dirs, cull_backfaces=cull)
    t, face, _ = brute_force_hits(v, f, origins, dirs, cull_backfaces=cull)
    assert np.array_equal(hits.hit, face >= 0)
    both = face >= 0
    assert np.allclose(hits.t[both], t[both], rtol=1e-9, atol=1e-12)
    # ties on shared edges can pick either face; the distance must still agree
    assert np.mean(hits.face[both] == face[both]) > 0.999


def test_bvh_leaf_size_and_coverage():
    v, f = icosphere(3)
    b = BVH(v, f)
    leaves = b.node_count[b.node_count > 0]
    assert leaves.max() <= 4
    assert np.array_equal(np.sort(b.order), np.arange(len(f)))


def test_camera_validation():
    with pytest.raises(ValueError):
        Camera(0, 1, 1, 1, 4, 4)
    with pytest.raises(ValueError):
        Camera(1, 1, 5, 1, 4, 4)
    refl = np.diag([1.0, 1.0, -1.0])
    with pytest.raises(ValueError):
        Camera(1, 1, 1, 1, 4, 4, rotation=refl)


def test_project_examples():
    cam = Camera(100, 100, 32, 24, 64, 48)
    assert project(cam, [0, 0, 1.0]) == pytest.approx((32, 24))
    assert project(cam, [0, 0, -1.0]) is None
    assert project(cam, [10.0, 0, 1.0]) is None


def test_project_unproject_round_trip(rng):
    cam = Camera.look_at((1.0, -3.0, 0.5), (0, 0, 0), width=64, height=48)
    u = rng.uniform(-0.5, 63.5, 200)
    v = rng.uniform(-0.5, 47.5, 200)
    depth = rng.uniform(0.5, 10, 200)
    pts = cam.unproject(u, v, depth)
    uv, valid = cam.project_points(pts)
    assert valid.all()
    assert np.allclose(uv, np.column_stack([u, v]), atol=1e-4)


def test_look_at_points_camera_at_target():
    cam = Camera.look_at((0, -4.0, 1.0), (0, 0, 0), width=65, height=49)
    assert project(cam, [0, 0, 0]) == pytest.approx((32, 24))
