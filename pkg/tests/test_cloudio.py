import math

import numpy as np
import pytest

from scanplan import cloudio, synthetic
from scanplan.cloudio import PointCloud, TriangleMesh
from scanplan.errors import DegenerateMeshError, EmptyCloudError, InsufficientPointsError, ParseError


def test_xyz_three_lines(tmp_path):
    f = tmp_path / "tri.xyz"
    f.write_text("0,0,0\n1,0,0\n0,1,0\n")
    cloud = cloudio.load_cloud(f)
    assert len(cloud) == 3
    np.testing.assert_array_equal(cloud.points, [[0, 0, 0], [1, 0, 0], [0, 1, 0]])


def test_xyz_space_separated_and_comments(tmp_path):
    f = tmp_path / "pts.txt"
    f.write_text("# header comment\n1 2 3\n\n4 5 6\n")
    cloud = cloudio.load_cloud(f, "xyz")
    np.testing.assert_array_equal(cloud.points, [[1, 2, 3], [4, 5, 6]])


def test_missing_coordinate_reports_line(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("0,0,0\n1,2\n3,3,3\n")
    with pytest.raises(ParseError) as err:
        cloudio.load_cloud(f)
    assert err.value.line == 2
    assert ":2:" in str(err.value)


def test_non_numeric_value_reports_line(tmp_path):
    f = tmp_path / "bad.xyz"
    f.write_text("0,0,0\n1,0,0\n1,abc,0\n")
    with pytest.raises(ParseError) as err:
        cloudio.load_cloud(f)
    assert err.value.line == 3


def test_empty_file(tmp_path):
    f = tmp_path / "empty.xyz"
    f.write_text("")
    with pytest.raises(EmptyCloudError):
        cloudio.load_cloud(f)


def test_ply_round_trip_bit_identical(tmp_path):
    rng = np.random.default_rng(3)
    pts = rng.normal(scale=123.456, size=(1000, 3))
    first = tmp_path / "a.ply"
    cloudio.save_cloud(PointCloud(pts), first)
    back = cloudio.load_cloud(first)
    assert len(back) == 1000
    np.testing.assert_array_equal(back.points, pts)
    second = tmp_path / "b.ply"
    cloudio.save_cloud(back, second)
    assert first.read_bytes() == second.read_bytes()


def test_ply_with_normals_and_extra_properties(tmp_path):
    f = tmp_path / "n.ply"
    f.write_text(
        "ply\nformat ascii 1.0\ncomment made by hand\n"
        "element vertex 2\nproperty float x\nproperty float y\nproperty float z\n"
        "property float nx\nproperty float ny\nproperty float nz\nproperty uchar red\n"
        "element face 0\nproperty list uchar int vertex_indices\nend_header\n"
        "1 2 3 0 0 1 255\n4 5 6 0 1 0 0\n"
    )
    cloud = cloudio.load_cloud(f)
    np.testing.assert_array_equal(cloud.points, [[1, 2, 3], [4, 5, 6]])


def test_ply_short_vertex_row(tmp_path):
    f = tmp_path / "short.ply"
    f.write_text(
        "ply\nformat ascii 1.0\nelement vertex 2\n"
        "property float x\nproperty float y\nproperty float z\nend_header\n"
        "1 2 3\n4 5\n"
    )
    with pytest.raises(ParseError) as err:
        cloudio.load_cloud(f)
    assert err.value.line == 9


def test_ply_binary_rejected(tmp_path):
    f = tmp_path / "bin.ply"
    f.write_text("ply\nformat binary_little_endian 1.0\nelement vertex 0\nend_header\n")
    with pytest.raises(ParseError):
        cloudio.load_cloud(f)


def test_stl_round_trip(tmp_path):
    mesh = synthetic.open_box_mesh()
    f = tmp_path / "box.stl"
    cloudio.save_stl(mesh, f)
    assert f.stat().st_size == 84 + 50 * len(mesh.triangles)
    back = cloudio.load_stl(f)
    tri_in = mesh.vertices[mesh.triangles].astype(np.float32)
    tri_out = back.vertices[back.triangles].astype(np.float32)
    np.testing.assert_array_equal(tri_in, tri_out)
    assert math.isclose(back.areas().sum(), mesh.areas().sum(), rel_tol=1e-6)


def test_stl_truncated(tmp_path):
    f = tmp_path / "cut.stl"
    cloudio.save_stl(synthetic.open_box_mesh(), f)
    f.write_bytes(f.read_bytes()[:-10])
    with pytest.raises(ParseError):
        cloudio.load_stl(f)


def unit_square():
    return TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float),
                        np.array([[0, 1, 2], [0, 2, 3]]))


def test_sample_unit_square_containment():
    cloud = cloudio.sample_mesh(unit_square(), 10000, seed=11)
    assert len(cloud) == 10000
    p = cloud.points
    assert np.all((p[:, :2] >= 0) & (p[:, :2] <= 1))
    assert np.all(p[:, 2] == 0)


def test_sample_deterministic():
    a = cloudio.sample_mesh(unit_square(), 500, seed=4)
    b = cloudio.sample_mesh(unit_square(), 500, seed=4)
    c = cloudio.sample_mesh(unit_square(), 500, seed=5)
    np.testing.assert_array_equal(a.points, b.points)
    assert not np.array_equal(a.points, c.points)


def test_sample_area_ratio_nine_to_one():
    # big: legs 3 and 6 -> area 9; small: legs 2 and 1 -> area 1
    verts = np.array([[0, 0, 0], [3, 0, 0], [0, 6, 0], [10, 0, 0], [12, 0, 0], [10, 1, 0]], float)
    mesh = TriangleMesh(verts, np.array([[0, 1, 2], [3, 4, 5]]))
    n = 10000
    p_big = 9.0 / 10.0
    sigma = math.sqrt(n * p_big * (1 - p_big))
    assert 5 * sigma == pytest.approx(150.0)
    for seed in range(5):
        cloud = cloudio.sample_mesh(mesh, n, seed=seed)
        n_big = int(np.count_nonzero(cloud.points[:, 0] < 5))
        assert abs(n_big - n * p_big) <= 5 * sigma


def test_sample_uniform_within_triangle():
    # right triangle: x + y <= 1; the x-marginal density is 2(1-x), so mean x = 1/3
    mesh = TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float), np.array([[0, 1, 2]]))
    p = cloudio.sample_mesh(mesh, 40000, seed=2).points
    assert np.all(p[:, 0] + p[:, 1] <= 1 + 1e-12)
    assert abs(p[:, 0].mean() - 1 / 3) < 0.01
    assert abs(p[:, 1].mean() - 1 / 3) < 0.01


def test_sample_zero_area_mesh():
    mesh = TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], float), np.array([[0, 1, 2]]))
    with pytest.raises(DegenerateMeshError):
        cloudio.sample_mesh(mesh, 10)


def test_mesh_index_out_of_range():
    with pytest.raises(ValueError):
        TriangleMesh(np.zeros((3, 3)), np.array([[0, 1, 3]]))


def test_pointcloud_rejects_nonfinite():
    with pytest.raises(ValueError):
        PointCloud(np.array([[0.0, np.nan, 1.0]]))


def test_plane_normals_up():
    cloud = synthetic.grid_plate(40, 40, 1.0)
    fc = cloudio.estimate_normals(cloud, k=20, viewpoint_hint=(0, 0, 1000))
    angle = np.arccos(np.clip(fc.normals @ [0, 0, 1], -1, 1))
    assert angle.max() < 1e-3
    assert not fc.degenerate.any()


def test_plane_normals_follow_hint_below():
    cloud = synthetic.grid_plate(20, 20, 1.0)
    fc = cloudio.estimate_normals(cloud, k=10, viewpoint_hint=(10, 10, -500))
    np.testing.assert_allclose(fc.normals, np.tile([0, 0, -1.0], (len(cloud), 1)), atol=1e-9)


def test_sphere_normals_radial():
    cloud = synthetic.sphere(50.0, 20000, seed=1)
    fc = cloudio.estimate_normals(cloud, viewpoint_hint=np.zeros(3), away_from_hint=True)
    radial = cloud.points / np.linalg.norm(cloud.points, axis=1, keepdims=True)
    angle = np.arccos(np.clip(np.einsum("ij,ij->i", fc.normals, radial), -1, 1))
    assert angle.max() < 0.05


def test_normals_unit_length():
    cloud, _ = synthetic.plane_with_dome(count=3000, seed=2)
    fc = cloudio.estimate_normals(cloud)
    assert np.abs(np.linalg.norm(fc.normals, axis=1) - 1).max() <= 1e-6


def test_default_hint_above_cloud():
    pts = np.array([[0, 0, 0], [10, 0, 0], [0, 10, 0]], float)
    hint = cloudio.default_viewpoint_hint(pts)
    diag = math.sqrt(200)
    np.testing.assert_allclose(hint, [10 / 3, 10 / 3, 10 * diag])


def test_collinear_neighbourhood_flagged():
    line = np.column_stack([np.arange(4.0), np.zeros(4), np.zeros(4)])
    fc = cloudio.estimate_normals(line, k=3)
    assert fc.degenerate.all()
    assert np.allclose(np.linalg.norm(fc.normals, axis=1), 1.0)


def test_too_few_points_for_k():
    with pytest.raises(InsufficientPointsError):
        cloudio.estimate_normals(np.zeros((5, 3)) + np.arange(5)[:, None], k=20)


def test_plane_curvature_zero():
    fc = cloudio.compute_features(synthetic.grid_plate(40, 40, 1.0))
    assert np.abs(fc.gaussian_curvature).max() <= 1e-6
    assert np.abs(fc.mean_curvature).max() <= 1e-6


def test_random_plane_curvature_zero():
    fc = cloudio.compute_features(synthetic.plate(100, 100, 5000, seed=4))
    assert np.abs(fc.gaussian_curvature).max() <= 1e-6
    assert np.abs(fc.mean_curvature).max() <= 1e-6


def test_sphere_curvature_oracle():
    r = 50.0
    cloud = synthetic.sphere(r, 20000, seed=0)
    fc = cloudio.compute_features(cloud, k=20, viewpoint_hint=np.zeros(3), away_from_hint=True)
    K_true, H_true = 1 / r ** 2, 1 / r
    assert np.all(np.abs(fc.gaussian_curvature - K_true) <= 0.1 * K_true)
    assert np.all(np.abs(fc.mean_curvature - H_true) <= 0.1 * H_true)


def test_cylinder_curvature_oracle():
    r = 25.0
    cloud = synthetic.cylinder(r, 100.0, 20000, seed=0)
    axis_pts = np.column_stack([cloud.points[:, 0], np.zeros(len(cloud)), np.zeros(len(cloud))])
    fc = cloudio.compute_features(cloud, k=20, viewpoint_hint=axis_pts, away_from_hint=True)
    assert np.all(np.abs(fc.gaussian_curvature) <= 0.1 / r ** 2)
    assert np.all(np.abs(fc.mean_curvature - 1 / (2 * r)) <= 0.1 / (2 * r))


def test_concave_side_has_negative_mean_curvature():
    # same sphere seen from inside: the surface bends toward its normal
    cloud = synthetic.sphere(50.0, 8000, seed=3)
    fc = cloudio.compute_features(cloud, viewpoint_hint=np.zeros(3))
    assert np.all(fc.mean_curvature < 0)
    assert np.all(fc.gaussian_curvature > 0)


def test_curvature_needs_k6():
    fc = cloudio.estimate_normals(synthetic.grid_plate(5, 5, 1.0), k=5)
    with pytest.raises(ValueError):
        cloudio.estimate_curvatures(fc, k=5)


def test_rank_deficient_fit_flagged():
    # every neighborhood is a single row of points: the quadric fit has no y information
    pts = np.column_stack([np.arange(30.0), np.zeros(30), np.zeros(30)])
    pts = np.vstack([pts, [[0.0, 1.0, 0.0]]])
    normals = np.tile([0.0, 0.0, 1.0], (len(pts), 1))
    fc = cloudio.estimate_curvatures(cloudio.FeatureCloud(pts, normals), k=6)
    far = pts[:, 0] > 10
    assert fc.low_confidence[far].all()
    assert np.all(fc.gaussian_curvature[far] == 0) and np.all(fc.mean_curvature[far] == 0)
