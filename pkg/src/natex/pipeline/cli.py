"""Command-line interface.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure,
5 checkpoint mismatch.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..errors import (CheckpointMismatchError, ConfigError, DataError, NatexError,
                      NumericError)

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_CHECKPOINT = 5


def _load_config(path):
    from .config import PipelineConfig
    return PipelineConfig.load(path)


def cmd_synth(args) -> int:
    from ..synth.dataset import make_dataset
    config = _load_config(args.config)
    manifest = make_dataset(config.dataset_config(), config.dataset.root)
    print(f"dataset: {len(manifest.assets)} assets "
          f"({len(manifest.split('heldout'))} heldout), "
          f"{len(manifest.errors)} errors -> {config.dataset.root}")
    return 0 if not manifest.errors else 0


def cmd_train_vae(args) -> int:
    from .train_vae import train_vae
    config = _load_config(args.config)
    out = train_vae(config, args.out, resume=args.resume)
    print(json.dumps(out))
    return 0


def cmd_train_dit(args) -> int:
    from .train_dit import train_dit
    config = _load_config(args.config)
    out = train_dit(config, args.mode, args.out, vae_ckpt=args.vae,
                    init_ckpt=args.init, resume=args.resume)
    print(json.dumps(out))
    return 0


def cmd_generate(args) -> int:
    from .inference import generate_texture
    config = _load_config(args.config)
    out = generate_texture(args.mesh, args.image, config, args.vae, args.dit,
                           args.out, steps=args.steps, guidance=args.guidance,
                           tokens=args.tokens, output_mode=args.output,
                           seed=args.seed)
    print(json.dumps(out))
    return 0


def cmd_refine(args) -> int:
    from .inference import refine_texture
    config = _load_config(args.config)
    out = refine_texture(args.mesh, args.image, config, args.vae, args.dit,
                         args.out, steps=args.steps, guidance=args.guidance,
                         output_mode=args.output, seed=args.seed)
    print(json.dumps(out))
    return 0


def cmd_material(args) -> int:
    from .inference import generate_material
    config = _load_config(args.config)
    out = generate_material(args.mesh, args.image, config, args.vae, args.dit,
                            args.out, steps=args.steps, guidance=args.guidance,
                            seed=args.seed)
    print(json.dumps(out))
    return 0


def cmd_segment(args) -> int:
    from .inference import segment_parts
    config = _load_config(args.config)
    out = segment_parts(args.mesh, args.mask, config, args.vae, args.dit,
                        args.out, steps=args.steps, guidance=args.guidance,
                        seed=args.seed)
    print(json.dumps(out))
    return 0


def cmd_eval(args) -> int:
    from .data import open_dataset
    from .evaluate import evaluate
    from .inference import load_dit, load_vae
    config = _load_config(args.config)
    manifest, store = open_dataset(config.dataset.root)
    heldout = [a["id"] for a in manifest.split("heldout")]
    vae = load_vae(config, args.vae)
    dit = load_dit(config, args.dit)[0] if args.dit else None
    report = evaluate(config, vae, store, heldout, args.protocol, dit_model=dit)
    out_path = Path(args.out or "metrics.json")
    report.write(out_path)
    print(json.dumps(report.aggregate, sort_keys=True))
    print(f"report -> {out_path}")
    return 0


def cmd_gradcheck(args) -> int:
    import torch

    from ..nn.blocks import (AdaLNDiTBlock, AttentionBlockConfig,
                             CrossAttentionBlock, MLP, SelfAttentionBlock)
    from ..nn.gradcheck import module_grad_check

    torch.manual_seed(0)
    cfg = AttentionBlockConfig(width=24, heads=4)
    checks = {}
    x = torch.randn(2, 5, 24, dtype=torch.float64)
    pos = torch.rand(2, 5, 3, dtype=torch.float64) * 2 - 1

    def noisy(module):
        with torch.no_grad():
            for p in module.parameters():
                p.add_(torch.randn_like(p) * 0.05)
        return module

    checks["linear"] = module_grad_check(noisy(torch.nn.Linear(24, 24)),
                                         [x.clone()], n_samples=args.samples)
    checks["mlp"] = module_grad_check(noisy(MLP(24)), [x.clone()],
                                      n_samples=args.samples)
    checks["self_attention"] = module_grad_check(noisy(SelfAttentionBlock(cfg)),
                                                 [x.clone()], n_samples=args.samples)
    ctx = torch.randn(2, 3, 24, dtype=torch.float64)
    checks["cross_attention"] = module_grad_check(noisy(CrossAttentionBlock(cfg)),
                                                  [x.clone(), ctx],
                                                  n_samples=args.samples)

    class RopePath(torch.nn.Module):
        def __init__(self):
            super().__init__()
            self.block = SelfAttentionBlock(cfg)

        def forward(self, x, pos):
            return self.block(x, positions=pos)

    checks["rope3d_path"] = module_grad_check(noisy(RopePath()),
                                              [x.clone(), pos.clone()],
                                              n_samples=args.samples)
    tvec = torch.randn(2, 24, dtype=torch.float64)
    checks["adaln_dit_block"] = module_grad_check(
        noisy(AdaLNDiTBlock(cfg, context_width=24)),
        [x.clone(), tvec, pos.clone(), ctx.clone()], n_samples=args.samples)

    failed = False
    for name, err in checks.items():
        status = "ok" if err < args.tolerance else "FAIL"
        if err >= args.tolerance:
            failed = True
        print(f"{name:>20}: max rel err {err:.3e}  [{status}]")
    if failed:
        raise NumericError("gradient check failed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="natex",
        description="Native 3D texture generation as latent color diffusion")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the procedural dataset")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train-vae", help="train the color VAE")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="runs/vae")
    p.add_argument("--resume")
    p.set_defaults(fn=cmd_train_vae)

    p = sub.add_parser("train-dit", help="train the diffusion transformer")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", required=True,
                   choices=["texture", "material", "segmentation", "refine"])
    p.add_argument("--vae", required=True, help="trained VAE checkpoint")
    p.add_argument("--init", help="texture checkpoint to fine-tune from")
    p.add_argument("--out", default="runs/dit")
    p.add_argument("--resume")
    p.set_defaults(fn=cmd_train_dit)

    def sampling_args(p, image_flag="--image"):
        p.add_argument("--mesh", required=True)
        p.add_argument(image_flag, required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--config", required=True)
        p.add_argument("--vae", required=True)
        p.add_argument("--dit", required=True)
        p.add_argument("--steps", type=int)
        p.add_argument("--guidance", type=float)
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("generate", help="image-conditioned texture generation")
    sampling_args(p)
    p.add_argument("--tokens", type=int, help="inference latent token count")
    p.add_argument("--output", choices=["uv", "vertex"])
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("refine", help="refine an existing texture (color control)")
    sampling_args(p)
    p.add_argument("--output", choices=["uv", "vertex"])
    p.set_defaults(fn=cmd_refine)

    p = sub.add_parser("material", help="roughness/metallic maps from albedo")
    sampling_args(p)
    p.set_defaults(fn=cmd_material)

    p = sub.add_parser("segment", help="part segmentation from a palette mask")
    sampling_args(p, image_flag="--mask")
    p.set_defaults(fn=cmd_segment)

    p = sub.add_parser("eval", help="run an evaluation protocol")
    p.add_argument("--protocol", required=True,
                   choices=["reconstruction", "generation"])
    p.add_argument("--config", required=True)
    p.add_argument("--vae", required=True)
    p.add_argument("--dit")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--samples", type=int, default=80)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointMismatchError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NatexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
