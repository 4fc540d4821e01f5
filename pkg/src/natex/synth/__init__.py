"""Procedural generator of textured, labeled, material-annotated assets."""

from .dataset import (AssetSpec, DatasetManifest, make_asset, make_dataset,
                      render_condition_pair, sample_asset_spec)
from .primitives import assemble, build_primitive, primitive_mesh
from .programs import (PART_PALETTE, AxisGradient, Checker, ConstantMaterial,
                       MaterialProgram, NoiseBlobs, PerPartPalette,
                       ProceduralColorSource, Stripes, TextureProgram,
                       decode_material_from_color, encode_material_as_color,
                       labels_to_palette, material_from_dict, palette_to_labels,
                       program_from_dict)

__all__ = [
    "AssetSpec", "AxisGradient", "Checker", "ConstantMaterial", "DatasetManifest",
    "MaterialProgram", "NoiseBlobs", "PART_PALETTE", "PerPartPalette",
    "ProceduralColorSource", "Stripes", "TextureProgram", "assemble",
    "build_primitive", "decode_material_from_color", "encode_material_as_color",
    "labels_to_palette", "make_asset", "make_dataset", "material_from_dict",
    "palette_to_labels", "primitive_mesh", "program_from_dict",
    "render_condition_pair", "sample_asset_spec",
]
