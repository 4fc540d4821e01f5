import numpy as np
import pytest

from natex.errors import (InvalidGeometryError, MeshFormatError, MissingAssetError)
from natex.geom import (NormalizationRecord, load_mesh, normalize_mesh,
                        write_mesh_ply, write_pointcloud_ply, load_pointcloud_ply)
from natex.geom.mesh import compute_vertex_normals, TexturedMesh

from conftest import make_cube, make_triangle, write_textured_cube_obj


def test_cube_obj_loads_with_expected_faces(tmp_path):
    path = write_textured_cube_obj(tmp_path)
    mesh = load_mesh(path)
    assert len(mesh.faces) == 12
    np.testing.assert_allclose(mesh.face_areas, 2.0)
    assert mesh.color_source is not None and mesh.color_source.kind == "texture"


def test_obj_missing_texture_names_path(tmp_path):
    path = write_textured_cube_obj(tmp_path)
    (tmp_path / "tex.png").unlink()
    with pytest.raises(MissingAssetError, match="tex.png"):
        load_mesh(path)


def test_obj_parse_error_reports_line(tmp_path):
    bad = tmp_path / "bad.obj"
    bad.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 zzz\n")
    with pytest.raises(MeshFormatError, match="bad.obj:4"):
        load_mesh(bad)


def test_obj_quad_fan_triangulated(tmp_path):
    obj = tmp_path / "quad.obj"
    obj.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    mesh = load_mesh(obj)
    assert len(mesh.faces) == 2
    np.testing.assert_array_equal(mesh.faces, [[0, 1, 2], [0, 2, 3]])


def test_ply_vertex_colors_roundtrip(tmp_path):
    cube = make_cube()
    colors = np.linspace(0, 1, len(cube.vertices) * 3).reshape(-1, 3)
    write_mesh_ply(tmp_path / "m.ply", cube, vertex_colors=colors)
    mesh = load_mesh(tmp_path / "m.ply")
    assert mesh.color_source is not None and mesh.color_source.kind == "vertex"
    assert mesh.uv is None
    np.testing.assert_allclose(mesh.color_source.colors, colors, atol=1 / 255)


def test_missing_file_raises(tmp_path):
    with pytest.raises(MissingAssetError):
        load_mesh(tmp_path / "absent.obj")


def test_normalize_cube_example():
    mesh, record = normalize_mesh(make_cube(extent=2.0))
    np.testing.assert_allclose(record.center, [1, 1, 1])
    assert record.scale == pytest.approx(1.0)
    np.testing.assert_allclose(mesh.vertices.min(axis=0), [-1, -1, -1])
    np.testing.assert_allclose(mesh.vertices.max(axis=0), [1, 1, 1])


def test_normalize_idempotent_identity_record():
    mesh, _ = normalize_mesh(make_cube(extent=2.0))
    again, record = normalize_mesh(mesh)
    np.testing.assert_allclose(record.center, 0.0, atol=1e-12)
    assert record.scale == pytest.approx(1.0)
    np.testing.assert_allclose(again.vertices, mesh.vertices)


def test_normalize_preserves_aspect():
    v = np.array([[x, y, z] for x in (0, 4) for y in (0, 2) for z in (0, 1)],
                 dtype=np.float64)
    f = make_cube().faces
    mesh = TexturedMesh(v, f, compute_vertex_normals(v, f))
    norm, _ = normalize_mesh(mesh)
    ext = norm.vertices.max(axis=0) - norm.vertices.min(axis=0)
    np.testing.assert_allclose(ext, [2.0, 1.0, 0.5])


def test_normalize_inverse_roundtrip():
    rng = np.random.default_rng(0)
    mesh = make_cube(extent=3.3, origin=(0.4, -2.0, 5.0))
    normalized, record = normalize_mesh(mesh)
    back = record.invert(normalized.vertices)
    assert np.abs(back - mesh.vertices).max() < 1e-6
    # applying the record to the original reproduces the normalized mesh
    np.testing.assert_array_equal(record.apply(mesh.vertices), normalized.vertices)
    rt = NormalizationRecord.from_dict(record.to_dict())
    pts = rng.uniform(-4, 4, (50, 3))
    np.testing.assert_allclose(rt.invert(rt.apply(pts)), pts, atol=1e-6)


def test_all_degenerate_mesh_rejected():
    v = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], dtype=np.float64)
    f = np.array([[0, 1, 2]], dtype=np.int32)
    n = np.tile([0.0, 0.0, 1.0], (3, 1))
    with pytest.raises(InvalidGeometryError):
        normalize_mesh(TexturedMesh(v, f, n))


def test_degenerate_faces_flagged_not_dropped():
    tri = make_triangle()
    v = np.vstack([tri.vertices, [[2, 0, 0], [3, 0, 0], [4, 0, 0]]])
    f = np.array([[0, 1, 2], [3, 4, 5]], dtype=np.int32)
    n = np.tile([0.0, 0.0, 1.0], (6, 1))
    mesh = TexturedMesh(v, f, n)
    assert len(mesh.faces) == 2
    np.testing.assert_array_equal(mesh.degenerate_faces, [False, True])


def test_face_index_out_of_range_rejected():
    v = np.zeros((3, 3))
    with pytest.raises(InvalidGeometryError):
        TexturedMesh(v, np.array([[0, 1, 7]], dtype=np.int32),
                     np.tile([0.0, 0.0, 1.0], (3, 1)))


def test_pointcloud_ply_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    pos = rng.uniform(-1, 1, (64, 3))
    nrm = rng.normal(size=(64, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    col = rng.uniform(0, 1, (64, 3))
    write_pointcloud_ply(tmp_path / "c.ply", pos, nrm, col)
    p2, n2, c2 = load_pointcloud_ply(tmp_path / "c.ply")
    np.testing.assert_allclose(p2, pos, atol=1e-6)
    np.testing.assert_allclose(n2, nrm, atol=1e-6)
    np.testing.assert_allclose(c2, col, atol=1 / 255)
