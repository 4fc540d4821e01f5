"""Deterministic geometry kernel: mesh I/O, sampling, distance fields,
UV correspondence, and the point-splat renderer."""

from .distance import TriangleBVH, truncated_occupancy, udf
from .mesh import (ColorSource, MaterialColorSource, NormalizationRecord,
                   PaletteColorSource, TextureColorSource, TexturedMesh,
                   VertexColorSource, compute_vertex_normals, joint_normalize,
                   normalize_mesh)
from .meshio import (load_mesh, load_pointcloud_ply, write_mesh_ply, write_obj,
                     write_pointcloud_ply)
from .render import (OrthoCamera, shade_points, six_orthogonal_views, splat_render)
from .sampling import ColorPointCloud, QuerySet, offset_near_surface, sample_color_points
from .uvatlas import dilate_texture, uv_atlas_queries

__all__ = [
    "ColorPointCloud", "ColorSource", "MaterialColorSource", "NormalizationRecord",
    "OrthoCamera", "PaletteColorSource", "QuerySet", "TextureColorSource",
    "TexturedMesh", "TriangleBVH", "VertexColorSource", "compute_vertex_normals",
    "dilate_texture", "joint_normalize", "load_mesh", "load_pointcloud_ply",
    "normalize_mesh", "offset_near_surface", "sample_color_points", "shade_points",
    "six_orthogonal_views", "splat_render", "truncated_occupancy", "udf",
    "uv_atlas_queries", "write_mesh_ply", "write_obj", "write_pointcloud_ply",
]
