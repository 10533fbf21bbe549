"""Synthetic fixture generator for tests and scaled-down pipeline runs.

Builds a complete on-disk fixture: MLVOL volumes, a manifest, task
descriptors, a scores CSV and (optionally) MLTEN tensors.  Datasets vary in
two generator knobs: mean intensity (surfacing as the voxel-value and median
features) and background fraction (surfacing as sparsity, entropy and the
shape moments).  Each method's planted score is a monotone mix of the two
knobs plus Gaussian noise, so meta-learners have real signal to find and the
mean baseline is beatable.

Run as a script:

    python -m segmeta.synth --out fixtures/demo --seed 0
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from . import deepfeat_post, evaluation, statfeat, volume_io


def _rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, tag])))


def planted_scores(n_datasets: int, n_methods: int, noise: float,
                   seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (g1, g2, scores) with scores[i, j] monotone in both knobs."""
    rng = _rng(seed, 1)
    g1 = np.linspace(0.0, 1.0, n_datasets)
    g2 = rng.permutation(np.linspace(0.0, 1.0, n_datasets))
    w = np.linspace(0.0, 1.0, n_methods) if n_methods > 1 else np.array([0.5])
    base = 0.07 + 0.85 * (np.outer(g1, w) + np.outer(g2, 1.0 - w))
    # outer mix: scores[i, j] = 0.07 + 0.85*(w_j*g1_i + (1-w_j)*g2_i)
    scores = np.clip(base + rng.normal(0.0, noise, size=base.shape), 0.01, 0.99)
    return g1, g2, scores


def generate_fixture(outdir, n_datasets: int = 10, n_volumes: int = 30,
                     dims: tuple[int, int, int] = (16, 16, 8), n_methods: int = 5,
                     noise: float = 0.02, seed: int = 0, tensors: bool = False,
                     channels: int = 512, tensors_per_dataset: int = 3) -> dict:
    """Write the full fixture tree and return its paths."""
    outdir = Path(outdir)
    vol_dir = outdir / "volumes"
    desc_dir = outdir / "descriptors"
    vol_dir.mkdir(parents=True, exist_ok=True)
    desc_dir.mkdir(parents=True, exist_ok=True)
    x, y, z = dims

    g1, g2, scores = planted_scores(n_datasets, n_methods, noise, seed)
    mu = 1.0 + 8.0 * g1           # mean intensity knob
    # background fraction stays below the point where the shape moments
    # change sign, so no dataset sits on a CVAR pole
    backfrac = 0.02 + 0.13 * g2

    yy, xx = np.meshgrid(np.linspace(-1, 1, y), np.linspace(-1, 1, x), indexing="ij")
    stores = []
    for i in range(n_datasets):
        ds_id = f"synth{i:02d}"
        rng = _rng(seed, 100 + i)
        paths = []
        for v in range(n_volumes):
            base = mu[i] + rng.normal(0.0, 0.15)
            # slice-shared in-plane gradient gives stable adjacent-slice
            # correlation, like anatomy spanning slices
            c1, c2 = rng.normal(0.0, 1.0, size=2)
            pattern = 2.0 * (c1 * yy + c2 * xx)
            vox = base + pattern[None, :, :] + rng.normal(0.0, 1.0, size=(z, y, x))
            vox[rng.random(size=(z, y, x)) < backfrac[i]] = base - 5.0
            p = vol_dir / f"{ds_id}_{v:03d}.mlvol"
            volume_io.write_volume(volume_io.volume_from_array(vox.astype("<f4")), p)
            # manifest-relative paths keep the fixture tree relocatable
            paths.append(str(p.relative_to(outdir)))
        stores.append(volume_io.DatasetStore(ds_id, tuple(paths)))
        statfeat.save_task_descriptor(
            statfeat.TaskSpecificFeatures(
                modality=round(g1[i]),
                location_dependent=0.5,
                sphere_shaped=float(g2[i]),
                relative_size=float(g1[i]),
                multiple_objects=0.0,
            ),
            desc_dir / f"{ds_id}.task",
        )

    manifest = outdir / "manifest.csv"
    volume_io.write_manifest(stores, manifest)

    sm = evaluation.ScoreMatrix(
        tuple(ds.dataset_id for ds in stores),
        tuple(f"method{j:02d}" for j in range(n_methods)),
        scores,
    )
    scores_csv = outdir / "scores.csv"
    evaluation.write_scores_csv(sm, scores_csv)

    tensor_dir = None
    if tensors:
        tensor_dir = outdir / "tensors"
        tensor_dir.mkdir(parents=True, exist_ok=True)
        write_synthetic_tensors(tensor_dir, [ds.dataset_id for ds in stores], g1,
                                channels=channels, per_dataset=tensors_per_dataset,
                                seed=seed)

    return {
        "manifest": manifest,
        "descriptors": desc_dir,
        "scores": scores_csv,
        "tensors": tensor_dir,
        "dataset_ids": [ds.dataset_id for ds in stores],
        "method_ids": list(sm.method_ids),
        "g1": g1,
        "g2": g2,
    }


def write_synthetic_tensors(tensor_dir, dataset_ids, strength, channels: int = 512,
                            per_dataset: int = 3, n_informative: int = 32,
                            seed: int = 0) -> list:
    """MLTEN fixtures with planted structure: the first n_informative
    channels carry dataset-specific patterns (weak cross-dataset
    correlation), the rest share one fixed pattern (correlation 1)."""
    tensor_dir = Path(tensor_dir)
    shared = _rng(seed, 2).normal(0.0, 1.0, size=(channels, deepfeat_post.MAP_SIZE))
    written = []
    for d_idx, ds_id in enumerate(dataset_ids):
        ds_pattern = _rng(seed, 300 + d_idx).normal(
            0.0, 1.0, size=(n_informative, deepfeat_post.MAP_SIZE)
        )
        for k in range(per_dataset):
            rng = _rng(seed, 1000 + d_idx * 97 + k)
            maps = shared + rng.normal(0.0, 1e-3, size=shared.shape)
            maps[:n_informative] = (
                ds_pattern
                + float(strength[d_idx])  # dataset-level mean offset drives the bits
                + rng.normal(0.0, 0.05, size=ds_pattern.shape)
            )
            t = deepfeat_post.tensor_from_maps(maps, ds_id, k)
            p = tensor_dir / f"{ds_id}_{k:03d}.mlten"
            deepfeat_post.write_tensor(t, p)
            written.append(p)
    return written


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="python -m segmeta.synth",
        description="Generate a synthetic MLVOL/MLTEN fixture tree",
    )
    parser.add_argument("--out", required=True)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--datasets", type=int, default=10)
    parser.add_argument("--volumes", type=int, default=30)
    parser.add_argument("--dims", type=int, nargs=3, default=(16, 16, 8),
                        metavar=("X", "Y", "Z"))
    parser.add_argument("--methods", type=int, default=5)
    parser.add_argument("--noise", type=float, default=0.02)
    parser.add_argument("--tensors", action="store_true")
    parser.add_argument("--channels", type=int, default=512,
                        choices=deepfeat_post.VALID_CHANNELS)
    parser.add_argument("--tensors-per-dataset", type=int, default=3)
    args = parser.parse_args(argv)
    paths = generate_fixture(
        args.out, n_datasets=args.datasets, n_volumes=args.volumes,
        dims=tuple(args.dims), n_methods=args.methods, noise=args.noise,
        seed=args.seed, tensors=args.tensors, channels=args.channels,
        tensors_per_dataset=args.tensors_per_dataset,
    )
    print(f"fixture written under {args.out}: manifest={paths['manifest']}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
