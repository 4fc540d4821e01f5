import numpy as np
import pytest

from natex.errors import ParameterError
from natex.geom import TriangleBVH, normalize_mesh, truncated_occupancy, udf
from natex.synth import primitive_mesh

from conftest import make_cube


def brute_force_udf(points, mesh):
    """Independent oracle: per-triangle closest point via plane projection
    plus explicit edge/vertex candidates."""
    out = np.empty(len(points))
    tri = mesh.vertices[mesh.faces]
    for i, p in enumerate(points):
        best = np.inf
        for a, b, c in tri:
            candidates = [a, b, c]
            for u, v in ((a, b), (b, c), (c, a)):
                e = v - u
                denom = float(e @ e)
                if denom > 0:
                    t = np.clip((p - u) @ e / denom, 0.0, 1.0)
                    candidates.append(u + t * e)
            n = np.cross(b - a, c - a)
            nn = float(n @ n)
            if nn > 0:
                q = p - n * ((p - a) @ n / nn)
                # inside test via barycentric signs
                area2 = np.sqrt(nn)
                w0 = np.cross(b - q, c - q) @ n / nn
                w1 = np.cross(c - q, a - q) @ n / nn
                w2 = np.cross(a - q, b - q) @ n / nn
                if w0 >= -1e-12 and w1 >= -1e-12 and w2 >= -1e-12:
                    candidates.append(q)
            for cand in candidates:
                best = min(best, float(np.linalg.norm(p - cand)))
        out[i] = best
    return out


def test_truncated_occupancy_piecewise():
    for s in (0.01, 0.02, 0.1):
        assert truncated_occupancy(0.0, s) == 0.0
        assert truncated_occupancy(s, s) == pytest.approx(1.0)
        assert truncated_occupancy(s / 2, s) == pytest.approx(0.5)
        assert truncated_occupancy(2 * s, s) == 1.0


def test_truncated_occupancy_rejects_bad_threshold():
    with pytest.raises(ParameterError):
        truncated_occupancy(0.5, 0.0)
    with pytest.raises(ParameterError):
        truncated_occupancy(0.5, -1.0)


def test_truncated_occupancy_monotone_continuous():
    s = 0.03
    d = np.linspace(0, 3 * s, 400)
    o = truncated_occupancy(d, s)
    assert np.all(np.diff(o) >= -1e-15)
    assert np.all((o >= 0) & (o <= 1))
    eps = 1e-9
    assert abs(truncated_occupancy(s - eps, s) - truncated_occupancy(s + eps, s)) < 1e-6


def test_udf_on_vertex_is_zero():
    mesh, _ = normalize_mesh(make_cube())
    bvh = TriangleBVH(mesh.vertices, mesh.faces)
    d = bvh.udf(mesh.vertices[:8])
    np.testing.assert_allclose(d, 0.0, atol=1e-12)


def test_udf_analytic_above_plane():
    # unit square in the z=0 plane; point 2 above it
    v = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=np.float64)
    f = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int32)
    bvh = TriangleBVH(v, f)
    assert udf(np.array([0.5, 0.5, 2.0]), bvh) == pytest.approx(2.0)
    assert udf(np.array([0.0, 0.0, 2.0]), bvh) == pytest.approx(2.0)


def test_udf_matches_brute_force_on_random_points():
    mesh, _ = normalize_mesh(primitive_mesh("torus", {"major_radius": 0.8,
                                                      "minor_radius": 0.3}))
    bvh = TriangleBVH(mesh.vertices, mesh.faces)
    points = np.random.default_rng(11).uniform(-1.4, 1.4, (100, 3))
    fast = bvh.udf(points)
    slow = brute_force_udf(points, mesh)
    assert np.abs(fast - slow).max() < 1e-6


def test_udf_nonnegative_and_zero_on_surface_samples():
    from natex.geom import sample_color_points
    mesh, _ = normalize_mesh(primitive_mesh("capsule", {"radius": 0.4, "height": 1.0}))
    bvh = TriangleBVH(mesh.vertices, mesh.faces)
    cloud = sample_color_points(mesh, 500, seed=2)
    d = bvh.udf(cloud.positions)
    assert d.min() >= 0.0
    assert d.max() < 1e-6


def test_closest_returns_face_and_point():
    mesh, _ = normalize_mesh(make_cube())
    bvh = TriangleBVH(mesh.vertices, mesh.faces)
    d, face, q = bvh.closest(np.array([[0.0, 0.0, 1.5]]))
    assert d[0] == pytest.approx(0.5)
    np.testing.assert_allclose(q[0], [0.0, 0.0, 1.0], atol=1e-12)
    assert mesh.face_normals()[face[0]] @ np.array([0, 0, 1.0]) == pytest.approx(1.0)
