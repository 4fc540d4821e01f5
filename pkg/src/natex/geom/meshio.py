"""Mesh and point-cloud file I/O.

Supported inputs: OBJ (v/vt/vn/f, MTL map_Kd PNG texture) and PLY
(ascii or binary_little_endian) with optional per-vertex normals, uchar
RGB colors and float u/v texture coordinates. Non-triangle faces are fan
triangulated in file order. All writers emit deterministic bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from ..errors import MeshFormatError, MissingAssetError
from .mesh import (TexturedMesh, TextureColorSource, VertexColorSource,
                   compute_vertex_normals)

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def load_mesh(path) -> TexturedMesh:
    """Load an OBJ or PLY file into a validated TexturedMesh."""
    path = Path(path)
    if not path.exists():
        raise MissingAssetError(f"mesh file not found: {path}")
    suffix = path.suffix.lower()
    if suffix == ".obj":
        return _load_obj(path)
    if suffix == ".ply":
        return _load_ply_mesh(path)
    raise MeshFormatError(f"unsupported mesh format '{suffix}' for {path}")


def _fan_triangulate(indices: list) -> list:
    return [(indices[0], indices[i], indices[i + 1]) for i in range(1, len(indices) - 1)]


def _load_obj(path: Path) -> TexturedMesh:
    positions: list = []
    texcoords: list = []
    normals: list = []
    # face corners: (vi, ti, ni) with -1 for absent
    face_corners: list = []
    mtl_textures: dict = {}
    current_texture: Optional[str] = None
    face_textures: list = []

    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            try:
                if tag == "v":
                    positions.append([float(parts[1]), float(parts[2]), float(parts[3])])
                elif tag == "vt":
                    texcoords.append([float(parts[1]), float(parts[2])])
                elif tag == "vn":
                    normals.append([float(parts[1]), float(parts[2]), float(parts[3])])
                elif tag == "f":
                    corners = []
                    for spec in parts[1:]:
                        fields = spec.split("/")
                        vi = int(fields[0])
                        ti = int(fields[1]) if len(fields) > 1 and fields[1] else 0
                        ni = int(fields[2]) if len(fields) > 2 and fields[2] else 0
                        # OBJ indices are 1-based; negatives count from the end
                        vi = vi - 1 if vi > 0 else len(positions) + vi
                        ti = ti - 1 if ti > 0 else (len(texcoords) + ti if ti else -1)
                        ni = ni - 1 if ni > 0 else (len(normals) + ni if ni else -1)
                        corners.append((vi, ti, ni))
                    if len(corners) < 3:
                        raise MeshFormatError(f"{path}:{lineno}: face with <3 vertices")
                    for tri in _fan_triangulate(corners):
                        face_corners.append(tri)
                        face_textures.append(current_texture)
                elif tag == "mtllib":
                    mtl_path = path.parent / " ".join(parts[1:])
                    if not mtl_path.exists():
                        raise MissingAssetError(f"{path}:{lineno}: MTL file not found: {mtl_path}")
                    mtl_textures.update(_parse_mtl(mtl_path))
                elif tag == "usemtl":
                    current_texture = mtl_textures.get(" ".join(parts[1:]))
            except (ValueError, IndexError) as exc:
                raise MeshFormatError(f"{path}:{lineno}: cannot parse '{line}'") from exc

    if not positions or not face_corners:
        raise MeshFormatError(f"{path}: no geometry found")

    vertices = np.asarray(positions, dtype=np.float64)
    faces = np.asarray([[c[0] for c in tri] for tri in face_corners], dtype=np.int32)
    if faces.min() < 0 or faces.max() >= len(vertices):
        raise MeshFormatError(f"{path}: face vertex index out of range")

    uv = None
    if texcoords and all(c[1] >= 0 for tri in face_corners for c in tri):
        tc = np.asarray(texcoords, dtype=np.float64)
        uv = np.empty((len(faces), 3, 2))
        for i, tri in enumerate(face_corners):
            for k in range(3):
                uv[i, k] = tc[tri[k][1]]
        uv = np.clip(uv, 0.0, 1.0)

    if normals and all(c[2] >= 0 for tri in face_corners for c in tri):
        vn_src = np.asarray(normals, dtype=np.float64)
        acc = np.zeros_like(vertices)
        for tri in face_corners:
            for vi, _, ni in tri:
                acc[vi] += vn_src[ni]
        lengths = np.linalg.norm(acc, axis=1, keepdims=True)
        vertex_normals = np.where(lengths > 1e-20, acc / np.maximum(lengths, 1e-30),
                                  compute_vertex_normals(vertices, faces))
    else:
        vertex_normals = compute_vertex_normals(vertices, faces)

    color_source = None
    tex_names = {t for t in face_textures if t is not None}
    if tex_names:
        if len(tex_names) > 1:
            raise MeshFormatError(f"{path}: multiple textures are not supported")
        tex_path = path.parent / tex_names.pop()
        if not tex_path.exists():
            raise MissingAssetError(f"texture image not found: {tex_path}")
        image = np.asarray(Image.open(tex_path).convert("RGBA"))
        color_source = TextureColorSource(image)

    return TexturedMesh(vertices, faces, vertex_normals, uv=uv, color_source=color_source)


def _parse_mtl(path: Path) -> dict:
    textures: dict = {}
    name = None
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for raw in fh:
            parts = raw.strip().split()
            if not parts:
                continue
            if parts[0] == "newmtl":
                name = " ".join(parts[1:])
            elif parts[0] == "map_Kd" and name is not None:
                textures[name] = " ".join(parts[1:])
    return textures


def parse_ply(path: Path) -> dict:
    """Parse a PLY file into {element_name: {prop: array}} plus face lists."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"ply"):
        raise MeshFormatError(f"{path}: not a PLY file")
    try:
        header_end = data.index(b"end_header\n") + len(b"end_header\n")
    except ValueError:
        raise MeshFormatError(f"{path}: missing end_header")
    header = data[:header_end].decode("ascii", errors="replace")
    body = data[header_end:]

    fmt = None
    elements: list = []  # (name, count, [(prop_name, dtype, list_count_dtype|None)])
    for lineno, line in enumerate(header.splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
            if fmt not in ("ascii", "binary_little_endian"):
                raise MeshFormatError(f"{path}:{lineno}: unsupported PLY format '{fmt}'")
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise MeshFormatError(f"{path}:{lineno}: property before element")
            if parts[1] == "list":
                count_t, item_t, pname = parts[2], parts[3], parts[4]
                elements[-1][2].append((pname, _PLY_TYPES[item_t], _PLY_TYPES[count_t]))
            else:
                elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]], None))

    out: dict = {}
    if fmt == "ascii":
        tokens = body.decode("ascii", errors="replace").split()
        pos = 0
        for name, count, props in elements:
            cols: dict = {p[0]: [] for p in props}
            for _ in range(count):
                for pname, dt, list_dt in props:
                    if list_dt is not None:
                        n = int(tokens[pos]); pos += 1
                        cols[pname].append([int(float(tokens[pos + k])) for k in range(n)])
                        pos += n
                    else:
                        cols[pname].append(float(tokens[pos])); pos += 1
            out[name] = {p: (v if isinstance(v[0], list) else np.asarray(v))
                         for p, v in cols.items()} if count else {p[0]: [] for p in props}
    else:
        offset = 0
        for name, count, props in elements:
            has_list = any(p[2] is not None for p in props)
            if not has_list:
                dtype = np.dtype([(p[0], "<" + p[1]) for p in props])
                arr = np.frombuffer(body, dtype=dtype, count=count, offset=offset)
                offset += dtype.itemsize * count
                out[name] = {p[0]: np.ascontiguousarray(arr[p[0]]) for p in props}
            else:
                cols = {p[0]: [] for p in props}
                for _ in range(count):
                    for pname, dt, list_dt in props:
                        if list_dt is not None:
                            cdt = np.dtype("<" + list_dt)
                            n = int(np.frombuffer(body, cdt, 1, offset)[0])
                            offset += cdt.itemsize
                            idt = np.dtype("<" + dt)
                            vals = np.frombuffer(body, idt, n, offset)
                            offset += idt.itemsize * n
                            cols[pname].append(vals.astype(np.int64).tolist())
                        else:
                            idt = np.dtype("<" + dt)
                            cols[pname].append(float(np.frombuffer(body, idt, 1, offset)[0]))
                            offset += idt.itemsize
                out[name] = {p: (v if (v and isinstance(v[0], list)) else np.asarray(v))
                             for p, v in cols.items()}
    return out


def _load_ply_mesh(path: Path) -> TexturedMesh:
    data = parse_ply(path)
    if "vertex" not in data or "face" not in data:
        raise MeshFormatError(f"{path}: PLY mesh needs vertex and face elements")
    vd = data["vertex"]
    try:
        vertices = np.stack([np.asarray(vd[k], np.float64) for k in ("x", "y", "z")], axis=1)
    except KeyError:
        raise MeshFormatError(f"{path}: vertex element missing x/y/z")

    fd = data["face"]
    key = "vertex_indices" if "vertex_indices" in fd else "vertex_index"
    if key not in fd:
        raise MeshFormatError(f"{path}: face element missing vertex_indices")
    tris: list = []
    for poly in fd[key]:
        if len(poly) < 3:
            raise MeshFormatError(f"{path}: face with <3 vertices")
        tris.extend(_fan_triangulate(list(poly)))
    faces = np.asarray(tris, dtype=np.int32)

    if all(k in vd for k in ("nx", "ny", "nz")):
        vn = np.stack([np.asarray(vd[k], np.float64) for k in ("nx", "ny", "nz")], axis=1)
        lengths = np.linalg.norm(vn, axis=1, keepdims=True)
        vertex_normals = np.where(lengths > 1e-20, vn / np.maximum(lengths, 1e-30),
                                  compute_vertex_normals(vertices, faces))
    else:
        vertex_normals = compute_vertex_normals(vertices, faces)

    uv = None
    for ukey, vkey in (("u", "v"), ("s", "t")):
        if ukey in vd and vkey in vd:
            per_vertex_uv = np.stack([np.asarray(vd[ukey], np.float64),
                                      np.asarray(vd[vkey], np.float64)], axis=1)
            uv = np.clip(per_vertex_uv[faces], 0.0, 1.0)
            break

    color_source = None
    if all(k in vd for k in ("red", "green", "blue")):
        rgb = np.stack([np.asarray(vd[k], np.float64) for k in ("red", "green", "blue")],
                       axis=1)
        if rgb.size and rgb.max() > 1.0 + 1e-9:
            rgb = rgb / 255.0
        color_source = VertexColorSource(rgb)

    return TexturedMesh(vertices, faces, vertex_normals, uv=uv, color_source=color_source)


def write_mesh_ply(path, mesh: TexturedMesh, vertex_colors: Optional[np.ndarray] = None,
                   vertex_uv: Optional[np.ndarray] = None) -> None:
    """Write a binary little-endian PLY mesh with optional color/uv properties."""
    path = Path(path)
    v = mesh.vertices.astype("<f4")
    n = mesh.vertex_normals.astype("<f4")
    props = ["property float x", "property float y", "property float z",
             "property float nx", "property float ny", "property float nz"]
    cols: list = [v, n]
    if vertex_colors is not None:
        rgb = np.clip(np.round(np.asarray(vertex_colors) * 255.0), 0, 255).astype("u1")
        props += ["property uchar red", "property uchar green", "property uchar blue"]
        cols.append(rgb)
    if vertex_uv is not None:
        props += ["property float u", "property float v"]
        cols.append(np.asarray(vertex_uv).astype("<f4"))

    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {len(v)}", *props,
              f"element face {len(mesh.faces)}",
              "property list uchar int vertex_indices", "end_header"]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        for i in range(len(v)):
            for col in cols:
                fh.write(col[i].tobytes())
        counts = np.full((len(mesh.faces), 1), 3, dtype="u1")
        idx = mesh.faces.astype("<i4")
        for i in range(len(idx)):
            fh.write(counts[i].tobytes())
            fh.write(idx[i].tobytes())


def write_pointcloud_ply(path, positions: np.ndarray, normals: np.ndarray,
                         colors: np.ndarray) -> None:
    """Binary little-endian PLY point cloud: position, normal, uchar RGB."""
    path = Path(path)
    p = np.asarray(positions).astype("<f4")
    n = np.asarray(normals).astype("<f4")
    c = np.clip(np.round(np.asarray(colors) * 255.0), 0, 255).astype("u1")
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {len(p)}",
              "property float x", "property float y", "property float z",
              "property float nx", "property float ny", "property float nz",
              "property uchar red", "property uchar green", "property uchar blue",
              "end_header"]
    rec = np.dtype([("p", "<f4", 3), ("n", "<f4", 3), ("c", "u1", 3)])
    buf = np.empty(len(p), dtype=rec)
    buf["p"], buf["n"], buf["c"] = p, n, c
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(buf.tobytes())


def load_pointcloud_ply(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read positions, normals, colors (float [0,1]) from a point-cloud PLY."""
    path = Path(path)
    if not path.exists():
        raise MissingAssetError(f"point cloud not found: {path}")
    vd = parse_ply(path).get("vertex")
    if vd is None:
        raise MeshFormatError(f"{path}: missing vertex element")
    pos = np.stack([np.asarray(vd[k], np.float64) for k in ("x", "y", "z")], axis=1)
    if all(k in vd for k in ("nx", "ny", "nz")):
        nrm = np.stack([np.asarray(vd[k], np.float64) for k in ("nx", "ny", "nz")], axis=1)
    else:
        nrm = np.tile(np.array([0.0, 0.0, 1.0]), (len(pos), 1))
    if all(k in vd for k in ("red", "green", "blue")):
        col = np.stack([np.asarray(vd[k], np.float64) for k in ("red", "green", "blue")],
                       axis=1) / 255.0
    else:
        col = np.zeros_like(pos)
    return pos, nrm, col


def write_obj(path, mesh: TexturedMesh, texture_image: Optional[np.ndarray] = None) -> None:
    """Write an OBJ (+MTL+PNG when a texture image is given). Deterministic text."""
    path = Path(path)
    lines = []
    if texture_image is not None:
        mtl_name = path.stem + ".mtl"
        tex_name = path.stem + ".png"
        lines.append(f"mtllib {mtl_name}")
        Image.fromarray(texture_image).save(path.parent / tex_name)
        with open(path.parent / mtl_name, "w", encoding="ascii") as fh:
            fh.write(f"newmtl material0\nKd 1.0 1.0 1.0\nmap_Kd {tex_name}\n")
    for v in mesh.vertices:
        lines.append("v %.8f %.8f %.8f" % (v[0], v[1], v[2]))
    for n in mesh.vertex_normals:
        lines.append("vn %.8f %.8f %.8f" % (n[0], n[1], n[2]))
    has_uv = mesh.uv is not None
    if has_uv:
        for corner_uv in mesh.uv.reshape(-1, 2):
            lines.append("vt %.8f %.8f" % (corner_uv[0], corner_uv[1]))
    if texture_image is not None:
        lines.append("usemtl material0")
    for i, f in enumerate(mesh.faces):
        if has_uv:
            spec = " ".join(f"{f[k] + 1}/{3 * i + k + 1}/{f[k] + 1}" for k in range(3))
        else:
            spec = " ".join(f"{f[k] + 1}//{f[k] + 1}" for k in range(3))
        lines.append("f " + spec)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
