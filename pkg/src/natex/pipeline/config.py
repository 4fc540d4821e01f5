"""Pipeline configuration: one JSON document, schema-versioned, strict.

Unknown sections or keys are rejected so configs cannot silently drift.
The config hash (over the fully-defaulted document) stamps datasets,
checkpoints and reports; mismatches fail loudly at load time.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..errors import ConfigError

SCHEMA_VERSION = 1

_DEFAULT_SHAPE_WEIGHTS = {"sphere": 1.0, "box": 1.0, "torus": 1.0,
                          "cylinder": 1.0, "capsule": 1.0, "multi_part_union": 1.0}
_DEFAULT_TEXTURE_WEIGHTS = {"checker": 1.0, "stripes": 1.0, "axis_gradient": 1.0,
                            "noise_blobs": 1.0}


def _from_dict(cls, data: dict, where: str):
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in '{where}': {', '.join(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"invalid '{where}' section: {exc}") from exc


@dataclass
class DatasetSection:
    root: str = "data/dataset"
    count: int = 32
    n_points: int = 65536
    l_train: int = 256
    render_size: int = 128
    light_mode: str = "lambert"
    shape_weights: dict = field(default_factory=lambda: dict(_DEFAULT_SHAPE_WEIGHTS))
    texture_weights: dict = field(default_factory=lambda: dict(_DEFAULT_TEXTURE_WEIGHTS))
    material_mode: str = "none"
    param_jitter: float = 1.0

    def validate(self):
        if not self.root:
            raise ConfigError("dataset.root must be a non-empty path")
        if self.count < 1:
            raise ConfigError("dataset.count must be >= 1")
        if self.light_mode not in ("lambert", "none"):
            raise ConfigError(f"dataset.light_mode '{self.light_mode}' unknown")
        if self.material_mode not in ("none", "constant", "field"):
            raise ConfigError(f"dataset.material_mode '{self.material_mode}' unknown")
        if self.l_train < 1 or self.l_train > self.n_points:
            raise ConfigError("dataset.l_train must be in [1, n_points]")


@dataclass
class VAESection:
    width: int = 256
    heads: int = 4
    geo_blocks: int = 2
    color_blocks: int = 4
    decoder_blocks: int = 4
    d_geo: int = 8
    d_color: int = 8
    freq_octaves: int = 8
    lambda_kl: float = 1e-3
    lambda_color: float = 1.0
    lambda_udf: float = 0.25
    udf_trunc: float = 0.02
    gamma_offset: float = 0.02
    near_frac: float = 0.5
    context_points: int = 1024
    query_points: int = 512
    lr: float = 1e-4
    lr_final: float = 1e-5
    warmup_steps: int = 500
    decay_at: float = 0.8
    steps: int = 2000
    batch_size: int = 4
    eval_every: int = 500
    checkpoint_every: int = 500
    include_material_clouds: bool = True

    def validate(self):
        if self.width % self.heads:
            raise ConfigError("vae.width must be divisible by vae.heads")
        if self.udf_trunc <= 0 or self.gamma_offset <= 0:
            raise ConfigError("vae.udf_trunc and vae.gamma_offset must be positive")
        if not 0.0 <= self.near_frac <= 1.0:
            raise ConfigError("vae.near_frac must be in [0,1]")
        if not 0.0 < self.decay_at <= 1.0:
            raise ConfigError("vae.decay_at must be in (0,1]")


@dataclass
class DiTSection:
    depth: int = 8
    width: int = 240
    heads: int = 4
    d_img: int = 256
    patch_size: int = 8
    image_res: int = 128
    cfg_drop_prob: float = 0.1
    gamma_illum: float = 5.0
    plateau_window: int = 200
    plateau_threshold: float = 0.02
    lr: float = 1e-4
    lr_final: float = 1e-5
    warmup_steps: int = 500
    decay_at: float = 0.8
    steps: int = 3000
    batch_size: int = 16
    encode_pool: int = 4
    checkpoint_every: int = 1000

    def validate(self):
        if self.width % self.heads:
            raise ConfigError("dit.width must be divisible by dit.heads")
        if (self.width // self.heads) % 6:
            raise ConfigError("dit head dim must be divisible by 6 for rope3d")
        if not 0.0 <= self.cfg_drop_prob <= 1.0:
            raise ConfigError("dit.cfg_drop_prob must be in [0,1]")
        if self.encode_pool < 1:
            raise ConfigError("dit.encode_pool must be >= 1")


@dataclass
class InferenceSection:
    steps: int = 5
    guidance: float = 2.0
    l_infer: int = 256
    bake_resolution: int = 256
    output_mode: str = "uv"
    n_points: int = 16384
    splat_radius: int = 2
    dilate_iterations: int = 4

    def validate(self):
        if self.steps < 1:
            raise ConfigError("inference.steps must be >= 1")
        if self.output_mode not in ("uv", "vertex"):
            raise ConfigError("inference.output_mode must be 'uv' or 'vertex'")
        if self.bake_resolution < 8:
            raise ConfigError("inference.bake_resolution must be >= 8")


@dataclass
class EvalSection:
    latent_sizes: list = field(default_factory=lambda: [256, 512])
    n_eval_points: int = 8192
    render_views_size: int = 128

    def validate(self):
        if not self.latent_sizes:
            raise ConfigError("eval.latent_sizes must be non-empty")


@dataclass
class SeedsSection:
    master: int = 0

    def validate(self):
        pass


_SECTIONS = {"dataset": DatasetSection, "vae": VAESection, "dit": DiTSection,
             "inference": InferenceSection, "eval": EvalSection, "seeds": SeedsSection}


@dataclass
class PipelineConfig:
    dataset: DatasetSection
    vae: VAESection
    dit: DiTSection
    inference: InferenceSection
    eval: EvalSection
    seeds: SeedsSection

    @staticmethod
    def from_dict(doc: dict) -> "PipelineConfig":
        doc = dict(doc)
        version = doc.pop("schema_version", None)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"config schema_version must be {SCHEMA_VERSION}, "
                              f"got {version!r}")
        unknown = sorted(set(doc) - set(_SECTIONS))
        if unknown:
            raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
        sections = {}
        for name, cls in _SECTIONS.items():
            sections[name] = _from_dict(cls, doc.get(name, {}), name)
            sections[name].validate()
        return PipelineConfig(**sections)

    @staticmethod
    def load(path) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        cfg = PipelineConfig.from_dict(doc)
        # dataset root is resolved relative to the config file location
        root = Path(cfg.dataset.root)
        if not root.is_absolute():
            cfg.dataset.root = str((path.parent / root).resolve())
        return cfg

    def to_dict(self) -> dict:
        doc = {"schema_version": SCHEMA_VERSION}
        for name in _SECTIONS:
            doc[name] = asdict(getattr(self, name))
        return doc

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True)
                              .encode()).hexdigest()[:16]

    def dataset_config(self) -> dict:
        d = asdict(self.dataset)
        d.pop("root")
        d.pop("l_train")
        d["seed"] = self.seeds.master
        return d

    def vae_model_config(self):
        from ..vae.model import VAEConfig
        return VAEConfig(width=self.vae.width, heads=self.vae.heads,
                         geo_blocks=self.vae.geo_blocks,
                         color_blocks=self.vae.color_blocks,
                         decoder_blocks=self.vae.decoder_blocks,
                         d_geo=self.vae.d_geo, d_color=self.vae.d_color,
                         freq_octaves=self.vae.freq_octaves)

    def dit_model_config(self):
        from ..dit.model import DiTConfig
        return DiTConfig(depth=self.dit.depth, width=self.dit.width,
                         heads=self.dit.heads, d_color=self.vae.d_color,
                         d_geo=self.vae.d_geo, d_img=self.dit.d_img,
                         patch_size=self.dit.patch_size,
                         image_res=self.dit.image_res,
                         cfg_drop_prob=self.dit.cfg_drop_prob,
                         gamma_illum=self.dit.gamma_illum)
