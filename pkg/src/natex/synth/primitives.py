"""Parametric primitives with analytic normals and bijective UV atlases.

Every shape is assembled from rectangular or polar grid charts. Charts are
packed into a grid atlas with a small gutter; polar charts (cylinder caps,
capsule hemispheres) embed as true discs so every chart is injective in UV,
which keeps texel -> 3D -> texel round trips exact away from chart borders.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ParameterError
from ..geom.mesh import TexturedMesh, compute_vertex_normals

# gutter deliberately not a multiple of common texel sizes so chart borders
# never align with texel centers
CHART_MARGIN = 0.0137


@dataclass
class MeshPiece:
    """One chart: vertices, analytic normals, per-vertex UV local to [0,1]^2."""

    vertices: np.ndarray
    normals: np.ndarray
    uv: np.ndarray
    faces: np.ndarray


def _grid_patch(fn, nu: int, nv: int, fan_u0: bool = False) -> MeshPiece:
    """Tessellate fn(u, v) -> (position, normal, uv) over a (nu x nv) cell grid.

    fan_u0 collapses the u=0 row to a single apex vertex (polar charts).
    """
    u = np.linspace(0.0, 1.0, nu + 1)
    v = np.linspace(0.0, 1.0, nv + 1)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    pos, nrm, uvc = fn(uu, vv)
    pos = pos.reshape(-1, 3)
    nrm = nrm.reshape(-1, 3)
    uvc = uvc.reshape(-1, 2)

    def vid(i, j):
        return i * (nv + 1) + j

    faces = []
    if fan_u0:
        apex_src = vid(0, 0)
        keep = np.arange(nv + 1, (nu + 1) * (nv + 1))
        remap = {}
        new_pos = [pos[apex_src]]
        new_nrm = [nrm[apex_src]]
        new_uv = [np.array([0.5, 0.5])]
        for new_i, src in enumerate(keep, start=1):
            remap[src] = new_i
            new_pos.append(pos[src])
            new_nrm.append(nrm[src])
            new_uv.append(uvc[src])
        for j in range(nv):
            faces.append((0, remap[vid(1, j)], remap[vid(1, j + 1)]))
        for i in range(1, nu):
            for j in range(nv):
                a, b = remap[vid(i, j)], remap[vid(i + 1, j)]
                c, d = remap[vid(i + 1, j + 1)], remap[vid(i, j + 1)]
                faces.append((a, b, c))
                faces.append((a, c, d))
        pos = np.asarray(new_pos)
        nrm = np.asarray(new_nrm)
        uvc = np.asarray(new_uv)
    else:
        for i in range(nu):
            for j in range(nv):
                a, b = vid(i, j), vid(i + 1, j)
                c, d = vid(i + 1, j + 1), vid(i, j + 1)
                faces.append((a, b, c))
                faces.append((a, c, d))

    lengths = np.linalg.norm(nrm, axis=1, keepdims=True)
    nrm = nrm / np.maximum(lengths, 1e-30)
    return MeshPiece(pos, nrm, np.clip(uvc, 0.0, 1.0),
                     np.asarray(faces, dtype=np.int32))


def _disc_uv(rho, theta):
    return np.stack([0.5 + 0.5 * rho * np.cos(theta),
                     0.5 + 0.5 * rho * np.sin(theta)], axis=-1)


def build_sphere(radius: float = 1.0, seg: int = 10) -> list[MeshPiece]:
    """Cube-sphere: six rectangular charts, no poles, analytic normals."""
    axes = [(0, (1, 2), +1), (0, (1, 2), -1), (1, (2, 0), +1),
            (1, (2, 0), -1), (2, (0, 1), +1), (2, (0, 1), -1)]
    pieces = []
    for axis, (ua, va), sign in axes:
        def fn(uu, vv, axis=axis, ua=ua, va=va, sign=sign):
            cube = np.zeros(uu.shape + (3,))
            cube[..., axis] = sign
            cube[..., ua] = uu * 2.0 - 1.0
            cube[..., va] = (vv * 2.0 - 1.0) * sign  # flip keeps winding outward
            n = cube / np.linalg.norm(cube, axis=-1, keepdims=True)
            return n * radius, n, np.stack([uu, vv], axis=-1)
        pieces.append(_grid_patch(fn, seg, seg))
    return pieces


def build_box(sx: float = 1.0, sy: float = 1.0, sz: float = 1.0,
              seg: int = 4) -> list[MeshPiece]:
    half = np.array([sx, sy, sz]) / 2.0
    axes = [(0, (1, 2), +1), (0, (1, 2), -1), (1, (2, 0), +1),
            (1, (2, 0), -1), (2, (0, 1), +1), (2, (0, 1), -1)]
    pieces = []
    for axis, (ua, va), sign in axes:
        def fn(uu, vv, axis=axis, ua=ua, va=va, sign=sign):
            p = np.zeros(uu.shape + (3,))
            p[..., axis] = sign * half[axis]
            p[..., ua] = (uu * 2.0 - 1.0) * half[ua]
            p[..., va] = (vv * 2.0 - 1.0) * sign * half[va]
            n = np.zeros_like(p)
            n[..., axis] = sign
            return p, n, np.stack([uu, vv], axis=-1)
        pieces.append(_grid_patch(fn, seg, seg))
    return pieces


def build_torus(major_radius: float = 1.0, minor_radius: float = 0.4,
                seg_major: int = 24, seg_minor: int = 12) -> list[MeshPiece]:
    def fn(uu, vv):
        theta = uu * 2.0 * np.pi   # major angle
        phi = vv * 2.0 * np.pi     # minor angle
        ring = major_radius + minor_radius * np.cos(phi)
        pos = np.stack([ring * np.cos(theta), ring * np.sin(theta),
                        minor_radius * np.sin(phi)], axis=-1)
        nrm = np.stack([np.cos(phi) * np.cos(theta), np.cos(phi) * np.sin(theta),
                        np.sin(phi)], axis=-1)
        return pos, nrm, np.stack([uu, vv], axis=-1)
    return [_grid_patch(fn, seg_major, seg_minor)]


def _side_chart(radius, z_lo, z_hi, seg_theta, seg_z):
    def fn(uu, vv):
        theta = uu * 2.0 * np.pi
        z = z_lo + vv * (z_hi - z_lo)
        pos = np.stack([radius * np.cos(theta), radius * np.sin(theta), z], axis=-1)
        nrm = np.stack([np.cos(theta), np.sin(theta), np.zeros_like(theta)], axis=-1)
        return pos, nrm, np.stack([uu, vv], axis=-1)
    return _grid_patch(fn, seg_theta, seg_z)


def _cap_disc(radius, z, sign, rings, seg_theta):
    def fn(uu, vv):
        rho = uu
        theta = vv * 2.0 * np.pi
        pos = np.stack([radius * rho * np.cos(theta), radius * rho * np.sin(theta),
                        np.full_like(rho, z)], axis=-1)
        nrm = np.zeros_like(pos)
        nrm[..., 2] = sign
        return pos, nrm, _disc_uv(rho, theta)
    return _grid_patch(fn, rings, seg_theta, fan_u0=True)


def build_cylinder(radius: float = 0.6, height: float = 1.6,
                   seg: int = 24) -> list[MeshPiece]:
    h2 = height / 2.0
    return [_side_chart(radius, -h2, h2, seg, max(2, seg // 4)),
            _cap_disc(radius, h2, +1, max(3, seg // 6), seg),
            _cap_disc(radius, -h2, -1, max(3, seg // 6), seg)]


def _hemisphere_cap(radius, z_center, sign, rings, seg_theta):
    def fn(uu, vv):
        alpha = uu * np.pi / 2.0  # angle from the pole
        theta = vv * 2.0 * np.pi
        r = np.sin(alpha) * radius
        pos = np.stack([r * np.cos(theta), r * np.sin(theta),
                        z_center + sign * radius * np.cos(alpha)], axis=-1)
        nrm = np.stack([np.sin(alpha) * np.cos(theta), np.sin(alpha) * np.sin(theta),
                        sign * np.cos(alpha)], axis=-1)
        return pos, nrm, _disc_uv(uu, theta)
    return _grid_patch(fn, rings, seg_theta, fan_u0=True)


def build_capsule(radius: float = 0.5, height: float = 1.2,
                  seg: int = 24) -> list[MeshPiece]:
    """Cylinder of `height` between two hemispherical caps of `radius`."""
    h2 = height / 2.0
    return [_side_chart(radius, -h2, h2, seg, max(2, seg // 4)),
            _hemisphere_cap(radius, h2, +1, max(4, seg // 4), seg),
            _hemisphere_cap(radius, -h2, -1, max(4, seg // 4), seg)]


_BUILDERS = {
    "sphere": build_sphere,
    "box": build_box,
    "torus": build_torus,
    "cylinder": build_cylinder,
    "capsule": build_capsule,
}


def build_primitive(kind: str, params: dict) -> list[MeshPiece]:
    if kind not in _BUILDERS:
        raise ParameterError(f"unknown shape kind '{kind}'")
    return _BUILDERS[kind](**params)


def assemble(piece_groups: list[list[MeshPiece]],
             offsets: list[np.ndarray] | None = None) -> tuple[TexturedMesh, np.ndarray]:
    """Pack chart pieces of one or more parts into a single mesh + atlas.

    Returns the mesh and per-face part labels (part index of each group).
    """
    flat: list[MeshPiece] = []
    group_of_piece: list[int] = []
    for g, pieces in enumerate(piece_groups):
        for piece in pieces:
            flat.append(piece)
            group_of_piece.append(g)
    n_charts = len(flat)
    cols = int(np.ceil(np.sqrt(n_charts)))
    rows = int(np.ceil(n_charts / cols))

    verts, normals, uvs, faces, labels = [], [], [], [], []
    v_off = 0
    for k, piece in enumerate(flat):
        cx, cy = k % cols, k // cols
        local = CHART_MARGIN + piece.uv * (1.0 - 2.0 * CHART_MARGIN)
        uv_global = np.stack([(cx + local[:, 0]) / cols,
                              (cy + local[:, 1]) / rows], axis=1)
        pos = piece.vertices
        if offsets is not None:
            pos = pos + offsets[group_of_piece[k]]
        verts.append(pos)
        normals.append(piece.normals)
        uvs.append(uv_global)
        faces.append(piece.faces + v_off)
        labels.append(np.full(len(piece.faces), group_of_piece[k], dtype=np.int32))
        v_off += len(piece.vertices)

    vertices = np.concatenate(verts)
    vertex_normals = np.concatenate(normals)
    uv_pv = np.concatenate(uvs)
    face_arr = np.concatenate(faces)
    label_arr = np.concatenate(labels)

    # enforce outward winding against the analytic normals
    tri = vertices[face_arr]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    ref = vertex_normals[face_arr].mean(axis=1)
    flip = np.einsum("fc,fc->f", cross, ref) < 0
    face_arr[flip] = face_arr[flip][:, [0, 2, 1]]

    mesh = TexturedMesh(vertices, face_arr, vertex_normals,
                        uv=uv_pv[face_arr], part_labels=label_arr)
    return mesh, label_arr


def primitive_mesh(kind: str, params: dict) -> TexturedMesh:
    """Convenience: single-part primitive as a finished TexturedMesh."""
    mesh, _ = assemble([build_primitive(kind, params)])
    return mesh
