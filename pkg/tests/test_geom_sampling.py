import numpy as np
import pytest
from scipy import stats

from natex.errors import InvalidGeometryError, ParameterError
from natex.geom import TriangleBVH, offset_near_surface, sample_color_points
from natex.geom.mesh import TexturedMesh, TextureColorSource, VertexColorSource

from conftest import make_cube, make_triangle


def _plane_pair():
    """Two coplanar triangles with areas 1 and 3 (total 4)."""
    v = np.array([[0, 0, 0], [2, 0, 0], [0, 1, 0], [0, -3, 0]], dtype=np.float64)
    f = np.array([[0, 1, 2], [0, 3, 1]], dtype=np.int32)
    n = np.tile([0.0, 0.0, 1.0], (4, 1))
    return TexturedMesh(v / 4.0, f, n)  # scaled into [-1,1]^3


def test_constant_texture_gives_constant_red():
    img = np.zeros((8, 8, 4), dtype=np.uint8)
    img[..., 0] = 255
    img[..., 3] = 255
    tri = make_triangle()
    tri.color_source = TextureColorSource(img)
    cloud = sample_color_points(tri, 1000, seed=0)
    np.testing.assert_allclose(cloud.colors, [[1.0, 0.0, 0.0]] * 1000)


def test_area_weighted_counts_chi_square():
    mesh = _plane_pair()
    n = 40000
    cloud = sample_color_points(mesh, n, seed=123)
    counts = np.bincount(cloud.source_face, minlength=2)
    # 3-sigma binomial window around n/4
    p = 1.0 / 4.0
    sigma = np.sqrt(n * p * (1 - p))
    assert abs(counts[0] - n * p) < 3 * sigma
    # chi-square across a 10-face fixture
    cube = make_cube()
    areas = cube.face_areas.copy()
    rng = np.random.default_rng(7)
    scale = rng.uniform(0.5, 2.0, size=len(areas))
    v = cube.vertices.copy() / 2.0
    fixture = TexturedMesh(v, cube.faces, cube.vertex_normals)
    cloud = sample_color_points(fixture, 50000, seed=5)
    counts = np.bincount(cloud.source_face, minlength=len(fixture.faces))
    expected = fixture.face_areas / fixture.face_areas.sum() * 50000
    _, pvalue = stats.chisquare(counts, expected)
    assert pvalue > 0.001


def test_vertex_coincident_sample_color_exact():
    colors = np.array([[0.25, 0.5, 0.75], [1, 0, 0], [0, 1, 0]])
    tri = make_triangle(colors=colors)
    face_idx = np.array([0])
    bary = np.array([[1.0, 0.0, 0.0]])
    out = tri.color_source.colors_at(tri, face_idx, bary, tri.vertices[:1])
    np.testing.assert_array_equal(out[0], colors[0])


def test_sampling_deterministic_per_seed():
    mesh, = [_plane_pair()]
    a = sample_color_points(mesh, 512, seed=9)
    b = sample_color_points(mesh, 512, seed=9)
    np.testing.assert_array_equal(a.positions, b.positions)
    np.testing.assert_array_equal(a.source_face, b.source_face)
    c = sample_color_points(mesh, 512, seed=10)
    assert not np.array_equal(a.positions, c.positions)


def test_zero_area_mesh_rejected():
    v = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], dtype=np.float64)
    f = np.array([[0, 1, 2]], dtype=np.int32)
    mesh = TexturedMesh(v / 2, f, np.tile([0.0, 0.0, 1.0], (3, 1)))
    with pytest.raises(InvalidGeometryError):
        sample_color_points(mesh, 10, seed=0)


def test_bad_count_rejected():
    with pytest.raises(ParameterError):
        sample_color_points(_plane_pair(), 0, seed=0)


def _plane_cloud_and_bvh(n=256):
    mesh = _plane_pair()
    mesh.color_source = VertexColorSource(np.tile([0.2, 0.4, 0.8], (4, 1)))
    cloud = sample_color_points(mesh, n, seed=3)
    return mesh, cloud, TriangleBVH(mesh.vertices, mesh.faces)


def test_offset_frac_zero_all_on_surface():
    _, cloud, bvh = _plane_cloud_and_bvh()
    qs = offset_near_surface(cloud, gamma=0.02, frac=0.0, seed=0, bvh=bvh,
                             trunc_s=0.02)
    assert not qs.is_near_surface.any()
    np.testing.assert_array_equal(qs.target_occupancy, 0.0)
    np.testing.assert_array_equal(qs.positions, cloud.positions)


def test_offset_on_plane_occupancy_analytic():
    # on a flat plane the UDF of a gamma-offset point is exactly |delta|
    _, cloud, bvh = _plane_cloud_and_bvh()
    gamma = 0.05
    qs = offset_near_surface(cloud, gamma=gamma, frac=1.0, seed=1, bvh=bvh,
                             trunc_s=gamma)
    delta = np.abs(qs.positions[:, 2] - cloud.positions[:, 2])
    np.testing.assert_allclose(qs.target_occupancy, np.minimum(delta / gamma, 1.0),
                               atol=1e-9)
    assert qs.is_near_surface.all()
    assert qs.target_occupancy.max() <= 1.0


def test_offset_target_color_is_source_color():
    _, cloud, bvh = _plane_cloud_and_bvh()
    qs = offset_near_surface(cloud, gamma=0.04, frac=0.5, seed=2, bvh=bvh,
                             trunc_s=0.02)
    np.testing.assert_array_equal(qs.target_colors, cloud.colors)


def test_offset_validates_parameters():
    _, cloud, bvh = _plane_cloud_and_bvh(16)
    with pytest.raises(ParameterError):
        offset_near_surface(cloud, gamma=-0.1, frac=0.5, seed=0, bvh=bvh, trunc_s=0.02)
    with pytest.raises(ParameterError):
        offset_near_surface(cloud, gamma=0.1, frac=1.5, seed=0, bvh=bvh, trunc_s=0.02)
