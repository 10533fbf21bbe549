"""Extractor CLI: fine-tune an encoder on percentile masks, then export
per-subset averaged feature maps as MLTEN files for the main toolkit."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import torch

from .config import ExtractorConfigError, parse_extractor_config
from .encoders import build_encoder
from .mlio import WireFormatError, read_manifest, read_mlvol
from .pipeline import ExtractorConfig, export_dataset_tensors, finetune, slices_of


def _load_config(args) -> ExtractorConfig:
    cfg = parse_extractor_config(args.config) if args.config else ExtractorConfig()
    if args.architecture:
        cfg = ExtractorConfig(**{**cfg.__dict__, "architecture": args.architecture})
    if args.seed is not None:
        cfg = ExtractorConfig(**{**cfg.__dict__, "seed": args.seed})
    return cfg


def cmd_finetune(args) -> int:
    cfg = _load_config(args)
    grouped = read_manifest(args.manifest)
    images = []
    for ds_id in sorted(grouped):
        for p in grouped[ds_id]:
            images.extend(slices_of(read_mlvol(p)))
    losses: list = []
    encoder = finetune(images, cfg, loss_log=losses)
    torch.save({"architecture": cfg.architecture,
                "state_dict": encoder.state_dict()}, args.out)
    print(f"fine-tuned {cfg.architecture} on {len(images)} slices; "
          f"BCE {losses[0]:.4f} -> {losses[-1]:.4f}; saved {args.out}")
    return 0


def cmd_extract(args) -> int:
    cfg = _load_config(args)
    payload = torch.load(args.encoder, map_location="cpu", weights_only=True)
    if payload["architecture"] != cfg.architecture:
        print(f"error: encoder archive holds {payload['architecture']}, "
              f"config says {cfg.architecture}", file=sys.stderr)
        return 2
    encoder = build_encoder(cfg.architecture)
    encoder.load_state_dict(payload["state_dict"])
    grouped = read_manifest(args.manifest)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n = 0
    for ds_id in sorted(grouped):
        written = export_dataset_tensors(
            ds_id, grouped[ds_id], encoder, out_dir,
            subset_size=args.subset_size, n_subsets=args.n_subsets,
            seed=cfg.seed, batch=cfg.batch,
        )
        n += len(written)
    print(f"wrote {n} tensors to {out_dir}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="segmeta-extract")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config")
        p.add_argument("--architecture",
                       choices=["vgg16", "resnet50", "mobilenetv1"])
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("finetune", help="fine-tune an encoder on percentile masks")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="encoder checkpoint path")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("extract", help="export per-subset MLTEN tensors")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--encoder", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--subset-size", type=int, default=20)
    p.add_argument("--n-subsets", type=int, default=100)
    p.set_defaults(func=cmd_extract)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ExtractorConfigError, WireFormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
