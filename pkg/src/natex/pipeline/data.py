"""Dataset access for training and evaluation, with per-asset caching."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import DataError
from ..geom.distance import TriangleBVH
from ..geom.meshio import load_mesh, load_pointcloud_ply
from ..synth.dataset import DatasetManifest


class AssetStore:
    """Lazy, cached access to dataset files keyed by asset id."""

    def __init__(self, root, manifest: DatasetManifest):
        self.root = Path(root)
        self.manifest = manifest
        self.records = {a["id"]: a for a in manifest.assets}
        self._clouds: dict = {}
        self._materials: dict = {}
        self._bvhs: dict = {}
        self._patches: dict = {}
        self._labels: dict = {}

    def record(self, asset_id: str) -> dict:
        if asset_id not in self.records:
            raise DataError(f"asset '{asset_id}' not in manifest")
        return self.records[asset_id]

    def cloud(self, asset_id: str):
        """(positions, normals, colors) as float32 arrays."""
        if asset_id not in self._clouds:
            rec = self.record(asset_id)
            pos, nrm, col = load_pointcloud_ply(self.root / rec["files"]["cloud"])
            self._clouds[asset_id] = (pos.astype(np.float32), nrm.astype(np.float32),
                                      col.astype(np.float32))
        return self._clouds[asset_id]

    def material_colors(self, asset_id: str):
        rec = self.record(asset_id)
        if "material" not in rec["files"]:
            return None
        if asset_id not in self._materials:
            _, _, col = load_pointcloud_ply(self.root / rec["files"]["material"])
            self._materials[asset_id] = col.astype(np.float32)
        return self._materials[asset_id]

    def bvh(self, asset_id: str) -> TriangleBVH:
        if asset_id not in self._bvhs:
            rec = self.record(asset_id)
            mesh = load_mesh(self.root / rec["files"]["mesh"])
            self._bvhs[asset_id] = TriangleBVH(mesh.vertices, mesh.faces)
        return self._bvhs[asset_id]

    def condition_image(self, asset_id: str, which: str = "condA") -> np.ndarray:
        rec = self.record(asset_id)
        return np.asarray(Image.open(self.root / rec["files"][which]).convert("RGBA"))

    def condition_patches(self, asset_id: str, image_res: int, patch_size: int):
        """Raw patch pixels + grids for both illuminations (pure of the model)."""
        key = (asset_id, image_res, patch_size)
        if key not in self._patches:
            from ..dit.model import prepare_condition_patches
            pa, ga = prepare_condition_patches(self.condition_image(asset_id, "condA"),
                                               image_res, patch_size)
            pb, gb = prepare_condition_patches(self.condition_image(asset_id, "condB"),
                                               image_res, patch_size)
            self._patches[key] = (pa, ga, pb, gb)
        return self._patches[key]

    def face_labels(self, asset_id: str) -> np.ndarray:
        if asset_id not in self._labels:
            rec = self.record(asset_id)
            raw = (self.root / rec["files"]["labels"]).read_bytes()
            self._labels[asset_id] = np.frombuffer(raw, dtype=np.uint8).copy()
        return self._labels[asset_id]


def open_dataset(root) -> tuple[DatasetManifest, AssetStore]:
    root = Path(root)
    manifest = DatasetManifest.load(root / "manifest.json")
    return manifest, AssetStore(root, manifest)


def lr_at(step: int, total_steps: int, base: float, final: float,
          warmup: int, decay_at: float) -> float:
    """Linear warmup, constant plateau, then the decayed constant tail."""
    if warmup > 0 and step < warmup:
        return base * (step + 1) / warmup
    if step >= decay_at * total_steps:
        return final
    return base
