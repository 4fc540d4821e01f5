import json
from pathlib import Path

import numpy as np
import pytest

from natex.geom.mesh import TexturedMesh, VertexColorSource, compute_vertex_normals


def make_cube(extent=2.0, origin=(0.0, 0.0, 0.0)):
    """Axis-aligned cube as 12 triangles with outward normals."""
    o = np.asarray(origin, dtype=np.float64)
    v = np.array([[x, y, z] for x in (0, extent) for y in (0, extent)
                  for z in (0, extent)], dtype=np.float64) + o
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1),
             (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    faces = []
    for q in quads:
        faces.append((q[0], q[1], q[2]))
        faces.append((q[0], q[2], q[3]))
    f = np.asarray(faces, dtype=np.int32)
    return TexturedMesh(v, f, compute_vertex_normals(v, f))


def make_triangle(colors=None):
    """Unit right triangle in the z=0 plane, optional per-vertex colors."""
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=np.float64)
    f = np.array([[0, 1, 2]], dtype=np.int32)
    n = np.tile([0.0, 0.0, 1.0], (3, 1))
    uv = np.array([[[0, 0], [1, 0], [0, 1]]], dtype=np.float64)
    source = None if colors is None else VertexColorSource(np.asarray(colors))
    return TexturedMesh(v, f, n, uv=uv, color_source=source)


def write_textured_cube_obj(dirpath: Path, texture_rgb=(255, 0, 0),
                            texture_name="tex.png"):
    """OBJ + MTL + solid-color PNG fixture; returns the OBJ path."""
    from PIL import Image
    dirpath.mkdir(parents=True, exist_ok=True)
    img = np.zeros((16, 16, 4), dtype=np.uint8)
    img[..., :3] = texture_rgb
    img[..., 3] = 255
    Image.fromarray(img).save(dirpath / texture_name)
    (dirpath / "cube.mtl").write_text(
        f"newmtl m0\nKd 1.0 1.0 1.0\nmap_Kd {texture_name}\n")
    cube = make_cube()
    lines = ["mtllib cube.mtl"]
    for v in cube.vertices:
        lines.append("v %.6f %.6f %.6f" % tuple(v))
    lines.append("vt 0.5 0.5")
    lines.append("usemtl m0")
    for f in cube.faces:
        lines.append("f " + " ".join(f"{i + 1}/1" for i in f))
    path = dirpath / "cube.obj"
    path.write_text("\n".join(lines) + "\n")
    return path


def tiny_config_doc(root: Path, **overrides) -> dict:
    """Smallest config that exercises the full pipeline quickly."""
    doc = {
        "schema_version": 1,
        "seeds": {"master": 5},
        "dataset": {"root": str(root / "ds"), "count": 3, "n_points": 2048,
                    "l_train": 24, "render_size": 48,
                    "shape_weights": {"sphere": 1.0},
                    "texture_weights": {"axis_gradient": 1.0},
                    "material_mode": "constant", "param_jitter": 0.0},
        "vae": {"width": 48, "heads": 4, "geo_blocks": 1, "color_blocks": 1,
                "decoder_blocks": 1, "context_points": 192, "query_points": 96,
                "steps": 4, "batch_size": 2, "warmup_steps": 2, "eval_every": 0,
                "checkpoint_every": 0},
        "dit": {"depth": 1, "width": 48, "heads": 4, "d_img": 48, "image_res": 48,
                "steps": 2, "batch_size": 2, "warmup_steps": 1, "encode_pool": 1,
                "checkpoint_every": 0},
        "inference": {"steps": 2, "l_infer": 24, "bake_resolution": 32,
                      "n_points": 1024, "dilate_iterations": 2},
        "eval": {"latent_sizes": [16, 24], "n_eval_points": 256},
    }
    for section, vals in overrides.items():
        doc.setdefault(section, {}).update(vals)
    return doc


@pytest.fixture
def tiny_config(tmp_path):
    from natex.pipeline.config import PipelineConfig
    doc = tiny_config_doc(tmp_path)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return PipelineConfig.load(path), path
