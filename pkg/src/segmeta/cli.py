"""Command-line entry point.

Commands: extract-stat, postprocess-deep, crossval, train, predict, report.
Every command is deterministic given its inputs, config and seed; exit code
is 0 iff all outputs were written completely.
"""

from __future__ import annotations

import argparse
import csv
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import deepfeat_post, evaluation, metalearn, statfeat, volume_io
from .config import RunConfig, parse_config
from .errors import ConfigError, ConsistencyError, SegmetaError, ShapeError


def _load_config(args) -> RunConfig:
    cfg = parse_config(args.config) if args.config else RunConfig()
    if getattr(args, "ci", False) and args.seed is None:
        raise ConfigError("--seed is mandatory in CI mode")
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _descriptor_path(descriptor_dir, dataset_id: str) -> Path:
    return Path(descriptor_dir) / f"{dataset_id}.task"


def _load_descriptors(stores, descriptor_dir):
    for ds in stores:
        p = _descriptor_path(descriptor_dir, ds.dataset_id)
        if not p.exists():
            raise ConfigError(
                f"dataset {ds.dataset_id!r} has no task descriptor at {p}"
            )
        ds.descriptor = statfeat.load_task_descriptor(p)
    return stores


def _stats_for_path(path, hist_bins, mi_bins):
    return statfeat.volume_stats(volume_io.read_volume(path), hist_bins, mi_bins)


def _per_volume_stats(ds, cfg: RunConfig, jobs: int):
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(_stats_for_path, p, cfg.hist_bins, cfg.mi_bins)
                for p in ds.volume_paths
            ]
            return [f.result() for f in futures]
    return [_stats_for_path(p, cfg.hist_bins, cfg.mi_bins) for p in ds.volume_paths]


def write_feature_csv(rows, path) -> None:
    """rows: (dataset_id, subset_id, vector).  Column count adapts to the
    vector width; floats carry 9 significant digits."""
    rows = list(rows)
    if not rows:
        raise ConfigError("no feature rows to write")
    width = len(rows[0][2])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["dataset_id", "subset_id"] + [f"f{i:02d}" for i in range(width)])
        for ds_id, subset_id, vec in rows:
            if len(vec) != width:
                raise ShapeError(f"ragged feature rows: {len(vec)} vs {width}")
            writer.writerow([ds_id, subset_id] + ["%.9g" % v for v in vec])


def read_feature_csv(path):
    """Returns (vectors_by_dataset, subset_ids_by_dataset), insertion order."""
    vecs: dict = {}
    subs: dict = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path}: empty feature file") from None
        if header[:2] != ["dataset_id", "subset_id"] or len(header) < 3:
            raise ConfigError(f"{path}:1: bad feature header {header!r}")
        width = len(header) - 2
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width + 2:
                raise ConfigError(f"{path}:{lineno}: expected {width + 2} columns")
            try:
                vec = [float(v) for v in row[2:]]
                sub = int(row[1])
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: bad numeric value") from None
            vecs.setdefault(row[0], []).append(vec)
            subs.setdefault(row[0], []).append(sub)
    if not vecs:
        raise ConfigError(f"{path}: no feature rows")
    return ({d: np.array(v) for d, v in vecs.items()}, subs)


def cmd_extract_stat(args) -> int:
    cfg = _load_config(args)
    stores = _load_descriptors(volume_io.read_manifest(args.manifest), args.descriptors)
    rows = []
    for ds in stores:
        per_volume = _per_volume_stats(ds, cfg, args.jobs)
        plan = volume_io.sample_subsets(ds, cfg.subset_size, cfg.n_subsets, cfg.seed)
        mat = statfeat.features_for_plan(per_volume, plan, ds.n_volumes, ds.descriptor)
        rows.extend((ds.dataset_id, k, mat[k]) for k in range(mat.shape[0]))
    write_feature_csv(rows, args.out)
    print(f"wrote {len(rows)} feature rows to {args.out}")
    return 0


def _load_tensors(tensor_dir):
    tensor_dir = Path(tensor_dir)
    files = sorted(tensor_dir.glob("*.mlten"))
    if not files:
        raise ConfigError(f"no .mlten files under {tensor_dir}")
    by_dataset: dict = {}
    for f in files:
        t = deepfeat_post.ingest_tensor(f)
        by_dataset.setdefault(t.dataset_id, []).append(t)
    for ds_id in by_dataset:
        by_dataset[ds_id].sort(key=lambda t: t.subset_id)
    return by_dataset


def cmd_postprocess_deep(args) -> int:
    cfg = _load_config(args)
    stores = _load_descriptors(volume_io.read_manifest(args.manifest), args.descriptors)
    tensors = _load_tensors(args.tensors)
    for ds in stores:
        if ds.dataset_id not in tensors:
            raise ConfigError(f"no tensors found for dataset {ds.dataset_id!r}")

    models_dir = Path(args.models)
    models_dir.mkdir(parents=True, exist_ok=True)
    if args.apply:
        binarizer = deepfeat_post.load_binarizer(models_dir / "binarizer.mlbzr")
        selector = deepfeat_post.load_selector(models_dir / "selector.mlsel")
    else:
        training = {ds.dataset_id: tensors[ds.dataset_id] for ds in stores}
        binarizer = deepfeat_post.fit_binarizer(training, alpha=cfg.alpha)
        bits, labels = [], []
        for ds_id in sorted(training):
            for t in training[ds_id]:
                bits.append(deepfeat_post.binarize(t, binarizer))
                labels.append(ds_id)
        selector = deepfeat_post.fit_selector(np.vstack(bits), labels)
        deepfeat_post.save_binarizer(binarizer, models_dir / "binarizer.mlbzr")
        deepfeat_post.save_selector(selector, models_dir / "selector.mlsel")

    rows = []
    for ds in stores:
        for t in tensors[ds.dataset_id]:
            vec = deepfeat_post.select(deepfeat_post.binarize(t, binarizer), selector)
            vec = statfeat.append_task_features(vec, ds.descriptor)
            rows.append((ds.dataset_id, t.subset_id, vec))
    write_feature_csv(rows, args.out)
    print(f"wrote {len(rows)} deep feature rows ({len(selector.kept_indices)} kept "
          f"channels) to {args.out}")
    return 0


def _consistent_ids(feature_ids, score_ids):
    missing_scores = [d for d in feature_ids if d not in score_ids]
    if missing_scores:
        raise ConsistencyError(f"datasets in features but not in scores: {missing_scores}")
    missing_feats = [d for d in score_ids if d not in feature_ids]
    if missing_feats:
        raise ConsistencyError(f"datasets in scores but not in features: {missing_feats}")


def _build_feature_source(args, cfg: RunConfig, score_ids):
    if args.features:
        vecs, _ = read_feature_csv(args.features)
        _consistent_ids(list(vecs.keys()), score_ids)
        return evaluation.PrecomputedFeatures(vecs)
    if not (args.tensors and args.descriptors):
        raise ConfigError("crossval needs either --features or --tensors with --descriptors")
    tensors = _load_tensors(args.tensors)
    _consistent_ids(list(tensors.keys()), score_ids)
    tasks = {}
    for ds_id in tensors:
        p = _descriptor_path(args.descriptors, ds_id)
        if not p.exists():
            raise ConfigError(f"dataset {ds_id!r} has no task descriptor at {p}")
        tasks[ds_id] = statfeat.load_task_descriptor(p)
    return deepfeat_post.DeepFeatureSource(tensors, tasks, alpha=cfg.alpha)


def cmd_crossval(args) -> int:
    cfg = _load_config(args)
    S = evaluation.read_scores_csv(args.scores)
    source = _build_feature_source(args, cfg, S.dataset_ids)
    splits = evaluation.make_splits(
        S.dataset_ids, train_size=cfg.cv.train, test_size=cfg.cv.test,
        mode=cfg.cv.mode, n_folds=cfg.cv.folds, seed=cfg.seed,
    )
    report = evaluation.run_crossval(
        source, S, args.learner, splits, seed=cfg.seed,
        svr_params=cfg.svr.as_params(), mlp_params=cfg.mlp.as_params(),
    )
    evaluation.emit_report(report, args.out)
    print(f"MAE  {report.overall_mae[0]:.4f} +- {report.overall_mae[1]:.4f}")
    print(f"NMAE {report.overall_nmae[0]:.4f} +- {report.overall_nmae[1]:.4f}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    S = evaluation.read_scores_csv(args.scores)
    vecs, _ = read_feature_csv(args.features)
    _consistent_ids(list(vecs.keys()), S.dataset_ids)
    bank = metalearn.train_bank(
        vecs, S, args.learner, seed=cfg.seed,
        svr_params=cfg.svr.as_params(), mlp_params=cfg.mlp.as_params(),
    )
    metalearn.save_bank(bank, args.out)
    print(f"trained {len(bank.method_ids)} {args.learner} models -> {args.out}")
    return 0


def cmd_predict(args) -> int:
    bank = metalearn.load_bank(args.bank)
    vecs, _ = read_feature_csv(args.features)
    if len(vecs) != 1:
        raise ConfigError(
            f"predict expects features of exactly one dataset, got {sorted(vecs)}"
        )
    (ds_id, mat), = vecs.items()
    expected = bank.standardizer.means.shape[0]
    if mat.shape[1] != expected:
        raise ShapeError(
            f"feature width {mat.shape[1]} does not match bank q'={expected}"
        )
    preds = metalearn.predict_dataset(bank, mat)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method_id", "predicted_dice"])
        for mid, p in zip(bank.method_ids, preds):
            writer.writerow([mid, "%.9g" % p])
    print(f"predicted {len(preds)} method scores for {ds_id} -> {args.out}")
    return 0


def cmd_report(args) -> int:
    """Re-render report.txt from the CSVs of an existing report directory."""
    d = Path(args.report_dir)
    for name in ("per_dataset.csv", "per_method.csv", "summary.csv"):
        if not (d / name).exists():
            raise ConfigError(f"{d} is missing {name}")

    def read_pairs(path):
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        return rows[1:]

    def pm(mean, std):
        return f"{float(mean):.2f} ± {float(std):.2f}" if mean else "(never tested)"

    lines = ["Per-dataset mean absolute error", "-" * 40]
    lines += [f"{r[0]}  {pm(r[1], r[2])}" for r in read_pairs(d / "per_dataset.csv")]
    lines += ["", "Per-method mean absolute error", "-" * 40]
    lines += [f"{r[0]}  {pm(r[1], r[2])}" for r in read_pairs(d / "per_method.csv")]
    lines.append("")
    for metric, mean, std in read_pairs(d / "summary.csv"):
        lines.append(f"{metric}  {pm(mean, std)}")
    lines.append("")
    with open(d / "report.txt", "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))
    print(f"rendered {d / 'report.txt'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segmeta",
        description="Dataset meta-features and per-method segmentation score regression",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="run configuration file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers")
        p.add_argument("--ci", action="store_true",
                       help="CI mode: an explicit --seed becomes mandatory")

    p = sub.add_parser("extract-stat", help="statistical feature CSV from a manifest")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--descriptors", required=True, help="directory of <dataset>.task files")
    p.add_argument("--out", required=True, help="output feature CSV")
    p.set_defaults(func=cmd_extract_stat)

    p = sub.add_parser("postprocess-deep",
                       help="binarize + select deep tensors into a feature CSV")
    common(p)
    p.add_argument("--tensors", required=True, help="directory of .mlten files")
    p.add_argument("--manifest", required=True)
    p.add_argument("--descriptors", required=True)
    p.add_argument("--out", required=True, help="output feature CSV")
    p.add_argument("--models", required=True, help="directory for fitted model archives")
    p.add_argument("--apply", action="store_true",
                   help="load models from --models instead of refitting")
    p.set_defaults(func=cmd_postprocess_deep)

    p = sub.add_parser("crossval", help="cross-validate a meta-learner and emit reports")
    common(p)
    p.add_argument("--features", help="feature CSV (statistical pipeline)")
    p.add_argument("--tensors", help="tensor directory (deep pipeline, refit per fold)")
    p.add_argument("--descriptors", help="descriptor directory (deep pipeline)")
    p.add_argument("--scores", required=True)
    p.add_argument("--learner", required=True, choices=metalearn.LEARNER_KINDS)
    p.add_argument("--out", required=True, help="report output directory")
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("train", help="train a regressor bank on all listed datasets")
    common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--learner", required=True, choices=metalearn.LEARNER_KINDS)
    p.add_argument("--out", required=True, help="output bank archive")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict per-method scores for one dataset")
    common(p)
    p.add_argument("--bank", required=True)
    p.add_argument("--features", required=True, help="feature CSV of a single dataset")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", help="re-render the text table of a report directory")
    common(p)
    p.add_argument("--report-dir", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SegmetaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
