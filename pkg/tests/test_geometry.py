import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from touchloc.geometry import (
    MeshParseError, MeshValidationError, Pose, UncertaintyRegion, angle_between,
    load_mesh, point_triangle_distance, pose_mean, quat_from_rotvec, quat_multiply,
    rotation_distance, sample_pose_uniform, transform_direction, transform_point,
    translation_distance)
from touchloc.fixtures import box_mesh

BOX_OBJ = """\
# unit box
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
f 1 4 3 2
f 5 6 7 8
f 1 2 6 5
f 2 3 7 6
f 3 4 8 7
f 4 1 5 8
"""


def random_pose(rng, scale=100.0):
    q = rng.standard_normal(4)
    return Pose(q / np.linalg.norm(q), rng.uniform(-scale, scale, 3))


def grid_distance(p, a, b, c, n=500):
    """Brute force: nearest of the (n+1)(n+2)/2 barycentric grid points."""
    i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    keep = i + j <= n
    u = i[keep][:, None] / n
    v = j[keep][:, None] / n
    pts = a + u * (b - a) + v * (c - a)
    return np.sqrt(np.min(np.sum((pts - p) ** 2, axis=1)))


# ---------------------------------------------------------------- mesh I/O

def test_load_unit_box_obj(tmp_path):
    path = tmp_path / "box.obj"
    path.write_text(BOX_OBJ)
    mesh = load_mesh(path, "obj")
    assert mesh.n_faces == 12
    assert len(mesh.vertices) == 8
    # outward normals: each points away from the box center
    centers = mesh.triangles.mean(axis=1)
    assert np.all(np.sum((centers - 0.5) * mesh.normals, axis=1) > 0)


def test_zero_area_face_rejected(tmp_path):
    path = tmp_path / "flat.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 2 0 0\nv 0 1 0\nf 1 2 3\nf 1 2 4\n")
    with pytest.raises(MeshValidationError):
        load_mesh(path)


@pytest.mark.parametrize("text", ["v 0 0\nf 1 2 3\n", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n",
                                  "v a b c\n"])
def test_malformed_obj(tmp_path, text):
    path = tmp_path / "bad.obj"
    path.write_text(text)
    with pytest.raises(MeshParseError):
        load_mesh(path)


def test_empty_mesh(tmp_path):
    path = tmp_path / "empty.obj"
    path.write_text("# nothing\n")
    with pytest.raises(MeshValidationError):
        load_mesh(path)


def test_register_face_count_preserved(register, tmp_path):
    assert register.n_faces >= 44
    path = tmp_path / "r.obj"
    register.save(path)
    assert load_mesh(path).n_faces == register.n_faces


def test_round_trip_identical(any_fixture, tmp_path):
    path = tmp_path / "m.obj"
    any_fixture.save(path)
    again = load_mesh(path)
    assert np.array_equal(again.vertices, any_fixture.vertices)
    assert np.array_equal(again.faces, any_fixture.faces)
    assert again.fingerprint == any_fixture.fingerprint


def test_stl_ascii_matches_obj(tmp_path):
    mesh = box_mesh()
    lines = ["solid box"]
    for tri, n in zip(mesh.triangles, mesh.normals):
        # deliberately wrong source normals: they must be ignored
        lines += ["facet normal 0 0 0", " outer loop"]
        lines += [f"  vertex {float(x)!r} {float(y)!r} {float(z)!r}" for x, y, z in tri]
        lines += [" endloop", "endfacet"]
    lines.append("endsolid box")
    path = tmp_path / "box.stl"
    path.write_text("\n".join(lines))
    loaded = load_mesh(path)
    assert loaded.n_faces == 12
    assert len(loaded.vertices) == 8  # shared corners deduplicated
    assert np.allclose(loaded.normals, mesh.normals)


def test_vertex_dedup_in_obj(tmp_path):
    path = tmp_path / "dup.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 0\nv 0 0 1\nf 1 2 3\nf 4 3 2\nf 4 2 5\n")
    mesh = load_mesh(path)
    assert len(mesh.vertices) == 4


def test_mesh_is_immutable(box):
    with pytest.raises(ValueError):
        box.vertices[0, 0] = 5.0
    with pytest.raises(AttributeError):
        box.vertices = np.zeros((8, 3))


def test_normals_orthogonal_to_edges(any_fixture):
    tri = any_fixture.triangles
    n = any_fixture.normals
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    assert np.allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-12)
    assert np.max(np.abs(np.sum(n * e1, axis=1)) / np.linalg.norm(e1, axis=1)) < 1e-6
    assert np.max(np.abs(np.sum(n * e2, axis=1)) / np.linalg.norm(e2, axis=1)) < 1e-6


# ------------------------------------------------------- point-triangle

def test_point_triangle_interior():
    tri = [(0, 0, 0), (2, 0, 0), (0, 2, 0)]
    assert point_triangle_distance((0, 0, 1), *tri) == pytest.approx(1.0, abs=1e-12)


def test_point_triangle_vertex_region():
    tri = [(0, 0, 0), (2, 0, 0), (0, 2, 0)]
    assert point_triangle_distance((3, 0, 0), *tri) == pytest.approx(1.0, abs=1e-12)


def test_point_triangle_degenerate():
    with pytest.raises(MeshValidationError):
        point_triangle_distance((0, 0, 1), (0, 0, 0), (1, 1, 1), (2, 2, 2))


def test_point_triangle_against_grid_oracle():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        a, b, c = rng.uniform(-1, 1, (3, 3))
        if np.linalg.norm(np.cross(b - a, c - a)) < 1e-3:
            continue
        p = rng.uniform(-2, 2, 3)
        exact = point_triangle_distance(p, a, b, c)
        brute = grid_distance(p, a, b, c)
        assert brute >= exact - 1e-12
        worst = max(worst, brute - exact)
    assert worst < 1e-3


def test_point_on_triangle_has_zero_distance():
    rng = np.random.default_rng(3)
    for _ in range(200):
        a, b, c = rng.uniform(-10, 10, (3, 3))
        u, v = rng.dirichlet([1, 1, 1])[:2]
        p = a + u * (b - a) + v * (c - a)
        assert point_triangle_distance(p, a, b, c) < 1e-9
        # and off the plane by h
        n = np.cross(b - a, c - a)
        n /= np.linalg.norm(n)
        assert point_triangle_distance(p + 0.5 * n, a, b, c) == pytest.approx(0.5, abs=1e-9)


# ---------------------------------------------------------------- angles

def test_angle_between_cases():
    assert angle_between((0, 0, 1), (0, 0, 1)) == 0.0
    assert angle_between((0, 0, 1), (0, 0, -1)) == pytest.approx(math.pi, abs=1e-15)
    assert angle_between((1, 0, 0), (0, 1, 0)) == pytest.approx(math.pi / 2, abs=1e-15)


def test_angle_between_nearly_parallel_no_domain_error():
    a = np.array([1.0, 1e-9, 0.0])
    a /= np.linalg.norm(a)
    assert angle_between(a, (1, 0, 0)) == pytest.approx(1e-9, rel=1e-6)
    assert angle_between(-a, (1, 0, 0)) == pytest.approx(math.pi - 1e-9, abs=1e-15)


unit = st.tuples(*[st.floats(-1, 1, allow_nan=False)] * 3).filter(
    lambda v: np.linalg.norm(v) > 0.1).map(lambda v: np.array(v) / np.linalg.norm(v))


@settings(max_examples=300, deadline=None)
@given(unit, unit, unit)
def test_angle_symmetry_and_triangle_inequality(a, b, c):
    ab = angle_between(a, b)
    assert ab == angle_between(b, a)
    assert 0.0 <= ab <= math.pi
    assert angle_between(a, c) <= ab + angle_between(b, c) + 1e-9


# -------------------------------------------------------- transforms

def test_identity_transform():
    p = np.array([1.5, -2.0, 3.0])
    assert np.array_equal(transform_point(Pose(), p), p)


def test_quarter_turn():
    pose = Pose.from_rotvec([0, 0, math.pi / 2])
    assert np.allclose(transform_point(pose, (1, 0, 0)), (0, 1, 0), atol=1e-9)
    assert np.allclose(transform_direction(pose, (1, 0, 0)), (0, 1, 0), atol=1e-9)


def test_composition_matches_sequential_application():
    rng = np.random.default_rng(11)
    for _ in range(100):
        A, B = random_pose(rng), random_pose(rng)
        p = rng.uniform(-50, 50, 3)
        direct = transform_point(B, transform_point(A, p))
        assert np.allclose(transform_point(B.compose(A), p), direct, atol=1e-9)
        n = rng.standard_normal(3)
        n /= np.linalg.norm(n)
        m = transform_direction(B.compose(A), n)
        assert np.allclose(m, transform_direction(B, transform_direction(A, n)), atol=1e-12)
        assert np.linalg.norm(m) == pytest.approx(1.0, abs=1e-12)


def test_transform_preserves_distances():
    rng = np.random.default_rng(5)
    for _ in range(100):
        X = random_pose(rng)
        p, q = rng.uniform(-100, 100, (2, 3))
        d = np.linalg.norm(transform_point(X, p) - transform_point(X, q))
        assert d == pytest.approx(np.linalg.norm(p - q), abs=1e-9)


def test_inverse():
    rng = np.random.default_rng(2)
    X = random_pose(rng)
    p = rng.uniform(-10, 10, 3)
    assert np.allclose(transform_point(X.inverse(), transform_point(X, p)), p, atol=1e-9)


def test_pose_canonical_sign_and_json():
    pose = Pose([-0.5, 0.5, 0.5, 0.5], [1, 2, 3])
    assert pose.q[0] >= 0
    d = json.loads(pose.to_json())
    assert set(d) == {"q", "t"} and d["t"] == [1.0, 2.0, 3.0]
    assert Pose.from_json(pose.to_json()) == pose


# ----------------------------------------------------------- metrics

def test_rotation_distance_identity_and_axis_angle():
    rng = np.random.default_rng(8)
    q = random_pose(rng).q
    assert rotation_distance(q, q) == 0.0
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    assert rotation_distance(Pose(), Pose.from_rotvec(0.3 * axis)) == pytest.approx(0.3, abs=1e-12)


def test_rotation_distance_matches_acos_oracle():
    rng = np.random.default_rng(9)
    for _ in range(100):
        q1, q2 = random_pose(rng).q, random_pose(rng).q
        oracle = 2 * math.acos(min(1.0, abs(float(np.dot(q1, q2)))))
        assert rotation_distance(q1, q2) == pytest.approx(oracle, abs=1e-9)
        assert 0 <= rotation_distance(q1, q2) <= math.pi


def test_rotation_distance_small_relative_rotation():
    rng = np.random.default_rng(10)
    for _ in range(100):
        q = random_pose(rng).q
        delta = rng.standard_normal(3) * rng.uniform(1e-6, 0.1)
        q2 = quat_multiply(q, quat_from_rotvec(delta))
        assert rotation_distance(q, q2) == pytest.approx(np.linalg.norm(delta), abs=1e-9)


def test_translation_distance():
    assert translation_distance((0, 0, 0), (0, 0, 0)) == 0.0
    assert translation_distance((0, 0, 0), (3, 4, 0)) == 5.0
    rng = np.random.default_rng(1)
    for a, b in rng.uniform(-100, 100, (100, 2, 3)):
        assert translation_distance(a, b) == translation_distance(b, a)


# ------------------------------------------------------- sampling & mean

def test_degenerate_region_returns_center():
    center = Pose.from_rotvec([0.1, 0.2, 0.3], [1, 2, 3])
    region = UncertaintyRegion(center, np.zeros(3), np.zeros(3))
    assert sample_pose_uniform(region, np.random.default_rng(0)) == center


def test_uniform_sampling_bounds_and_mean():
    center = Pose(t=[10.0, -5.0, 3.0])
    region = UncertaintyRegion.cube(center, 50.0, 0.5)
    rng = np.random.default_rng(4)
    poses = [sample_pose_uniform(region, rng) for _ in range(10_000)]
    t = np.array([p.t for p in poses])
    assert np.all(np.abs(t.mean(axis=0) - center.t) <= 1.5)
    assert np.all(t.min(axis=0) >= center.t - 50) and np.all(t.max(axis=0) <= center.t + 50)
    # rotations: body-frame xyz Euler angles within +-0.5
    eul = Rotation.from_quat(np.array([p.q for p in poses])[:, [1, 2, 3, 0]]).as_euler("XYZ")
    assert np.all(np.abs(eul) <= 0.5 + 1e-9)


def test_sampling_is_seed_deterministic():
    region = UncertaintyRegion.cube(Pose(), 50.0, 0.5)
    a = [sample_pose_uniform(region, np.random.default_rng(42)) for _ in range(1)]
    r1, r2 = np.random.default_rng(42), np.random.default_rng(42)
    s1 = [sample_pose_uniform(region, r1) for _ in range(20)]
    s2 = [sample_pose_uniform(region, r2) for _ in range(20)]
    assert s1 == s2 and s1[0] == a[0]


def test_region_validation():
    with pytest.raises(ValueError):
        UncertaintyRegion.cube(Pose(), -1.0, 0.1)
    with pytest.raises(ValueError):
        UncertaintyRegion.cube(Pose(), 1.0, 4.0)


def test_pose_mean_trivial():
    p = Pose.from_rotvec([0.2, -0.1, 0.4], [1, 2, 3])
    assert pose_mean([p], [1.0]) == p
    assert pose_mean([p, p], [0.3, 2.0]) == p


def test_pose_mean_errors():
    with pytest.raises(ValueError):
        pose_mean([], [])
    with pytest.raises(ValueError):
        pose_mean([Pose(), Pose()], [0.0, 0.0])


def geodesic_mean(qs, iters=50):
    """Karcher mean by fixed-point iteration in the tangent space."""
    rots = Rotation.from_quat(qs[:, [1, 2, 3, 0]])
    mean = rots[0]
    for _ in range(iters):
        delta = (mean.inv() * rots).as_rotvec().mean(axis=0)
        mean = mean * Rotation.from_rotvec(delta)
    q = mean.as_quat()
    return q[[3, 0, 1, 2]]


def test_pose_mean_cluster_matches_geodesic_mean():
    rng = np.random.default_rng(6)
    base = Pose.from_rotvec([0.7, -0.3, 1.1], [5, 5, 5])
    poses = []
    for _ in range(100):
        d = rng.standard_normal(3)
        d *= rng.uniform(0, 0.05) / np.linalg.norm(d)
        poses.append(Pose(quat_multiply(base.q, quat_from_rotvec(d)), base.t + rng.normal(0, 1, 3)))
    w = rng.uniform(0.5, 1.5, 100)
    mean = pose_mean(poses, w)
    assert rotation_distance(mean, base) < 0.01
    karcher = geodesic_mean(np.array([p.q for p in poses]))
    assert rotation_distance(pose_mean(poses), karcher) < 1e-4
    assert np.allclose(mean.t, (w / w.sum()) @ np.array([p.t for p in poses]))
