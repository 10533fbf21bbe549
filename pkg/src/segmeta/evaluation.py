"""Error metrics, train/test split plans, cross-validation and report tables.

MAE is the mean absolute difference between true and predicted scores.  NMAE
divides the summed absolute error by the error of always predicting each
method's mean score over the fold's training datasets, so 1.0 marks the
mean-baseline and values below 1 mean the learner carries signal.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metalearn
from .errors import (
    ConfigError,
    DataError,
    EmptyDataError,
    FormatError,
    InsufficientDataError,
    SegmetaError,
    ShapeError,
)


@dataclass(frozen=True)
class ScoreMatrix:
    """Dice score of every method on every dataset (no missing cells)."""

    dataset_ids: tuple
    method_ids: tuple
    scores: np.ndarray  # (N, M)

    def __post_init__(self):
        n, m = len(self.dataset_ids), len(self.method_ids)
        if self.scores.shape != (n, m):
            raise ShapeError(f"scores shape {self.scores.shape}, expected {(n, m)}")
        if len(set(self.dataset_ids)) != n or len(set(self.method_ids)) != m:
            raise DataError("dataset and method ids must be unique")
        if ((self.scores < 0) | (self.scores > 1)).any() or not np.isfinite(self.scores).all():
            raise DataError("scores must be finite and lie in [0, 1]")

    def has(self, dataset_id, method_id) -> bool:
        return dataset_id in self.dataset_ids and method_id in self.method_ids

    def value(self, dataset_id, method_id) -> float:
        i = self.dataset_ids.index(dataset_id)
        j = self.method_ids.index(method_id)
        return float(self.scores[i, j])

    def row(self, dataset_id) -> np.ndarray:
        return self.scores[self.dataset_ids.index(dataset_id)].copy()


def read_scores_csv(path) -> ScoreMatrix:
    path = Path(path)
    cells: dict = {}
    ds_order: list = []
    m_order: list = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty scores file") from None
        if header != ["dataset_id", "method_id", "dice"]:
            raise FormatError(
                f"{path}:1: header must be 'dataset_id,method_id,dice', got {header!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            ds, mid, raw = row
            try:
                val = float(raw)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: bad dice value {raw!r}") from None
            if not (0.0 <= val <= 1.0):
                raise FormatError(f"{path}:{lineno}: dice {val} outside [0, 1]")
            if (ds, mid) in cells:
                raise FormatError(f"{path}:{lineno}: duplicate cell ({ds}, {mid})")
            cells[(ds, mid)] = val
            if ds not in ds_order:
                ds_order.append(ds)
            if mid not in m_order:
                m_order.append(mid)
    if not cells:
        raise FormatError(f"{path}: no score rows")
    scores = np.empty((len(ds_order), len(m_order)))
    for i, ds in enumerate(ds_order):
        for j, mid in enumerate(m_order):
            if (ds, mid) not in cells:
                raise FormatError(f"{path}: missing cell for ({ds}, {mid})")
            scores[i, j] = cells[(ds, mid)]
    return ScoreMatrix(tuple(ds_order), tuple(m_order), scores)


def write_scores_csv(sm: ScoreMatrix, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["dataset_id", "method_id", "dice"])
        for i, ds in enumerate(sm.dataset_ids):
            for j, mid in enumerate(sm.method_ids):
                writer.writerow([ds, mid, "%.9g" % sm.scores[i, j]])


# --- metrics -------------------------------------------------------------------

def mae(y, yhat) -> float:
    y = np.asarray(y, dtype=float).ravel()
    yhat = np.asarray(yhat, dtype=float).ravel()
    if y.shape != yhat.shape or y.size < 1:
        raise ShapeError(f"mae needs equal non-empty inputs, got {y.shape} vs {yhat.shape}")
    return float(np.abs(y - yhat).mean())


def nmae(y, yhat, ybar) -> float:
    y = np.asarray(y, dtype=float).ravel()
    yhat = np.asarray(yhat, dtype=float).ravel()
    ybar = np.asarray(ybar, dtype=float).ravel()
    if not (y.shape == yhat.shape == ybar.shape) or y.size < 1:
        raise ShapeError("nmae needs three equal-length non-empty inputs")
    denom = float(np.abs(y - ybar).sum())
    if denom <= 0.0:
        raise DataError("degenerate baseline: its summed absolute error is zero")
    return float(np.abs(y - yhat).sum()) / denom


def _avg_ranks(v: np.ndarray) -> np.ndarray:
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size)
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(a, b) -> float:
    """Spearman rank correlation with average ranks for ties; 0 when either
    side is constant (no ordering to correlate)."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.shape} vs {b.shape}")
    if a.size < 2:
        raise InsufficientDataError("rank correlation needs at least 2 values")
    ra, rb = _avg_ranks(a), _avg_ranks(b)
    da = ra - ra.mean()
    db = rb - rb.mean()
    denom = math.sqrt(float((da * da).sum()) * float((db * db).sum()))
    if denom == 0.0:
        return 0.0
    return float(min(1.0, max(-1.0, (da * db).sum() / denom)))


# --- split plans ----------------------------------------------------------------

@dataclass(frozen=True)
class SplitPlan:
    folds: tuple  # of (train_ids tuple, test_ids tuple)
    mode: str
    seed: int


def make_splits(dataset_ids, train_size: int = 7, test_size: int = 3,
                mode: str = "random", n_folds: int = 10, seed: int = 0) -> SplitPlan:
    """Exhaustive mode enumerates all test sets of the requested size in
    lexicographic id order; random mode draws n_folds distinct test sets."""
    ids = sorted(dataset_ids)
    n = len(ids)
    if len(set(ids)) != n:
        raise DataError("dataset ids must be unique")
    if train_size < 1 or test_size < 1 or train_size + test_size > n:
        raise ConfigError(
            f"infeasible split sizes: train {train_size} + test {test_size} > {n} datasets"
        )
    if mode == "exhaustive":
        folds = []
        for combo in itertools.combinations(ids, test_size):
            rest = [d for d in ids if d not in combo]
            folds.append((tuple(rest[:train_size]), tuple(combo)))
        return SplitPlan(folds=tuple(folds), mode=mode, seed=seed)
    if mode != "random":
        raise ConfigError(f"unknown split mode {mode!r}")
    total = math.comb(n, test_size)
    if n_folds < 1 or n_folds > total:
        raise ConfigError(f"cannot draw {n_folds} distinct test sets from {total} possible")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x5eed])))
    seen = set()
    folds = []
    attempts = 0
    while len(folds) < n_folds:
        attempts += 1
        if attempts > 10_000 * n_folds:
            raise ConfigError("random split sampling failed to find distinct test sets")
        test = tuple(sorted(rng.choice(n, size=test_size, replace=False)))
        if test in seen:
            continue
        seen.add(test)
        test_ids = tuple(ids[i] for i in test)
        rest = [d for d in ids if d not in test_ids]
        perm = rng.permutation(len(rest))
        train_ids = tuple(rest[i] for i in perm[:train_size])
        folds.append((train_ids, test_ids))
    return SplitPlan(folds=tuple(folds), mode=mode, seed=seed)


# --- cross-validation ------------------------------------------------------------

class PrecomputedFeatures:
    """Feature source backed by ready-made vectors (statistical pipeline);
    per-fold fitting is a no-op."""

    def __init__(self, vectors_by_dataset: dict):
        self._vectors = {d: np.atleast_2d(np.asarray(v, dtype=float))
                         for d, v in vectors_by_dataset.items()}

    def fit(self, train_ids):
        return None

    def vectors(self, dataset_id: str) -> np.ndarray:
        return self._vectors[dataset_id]


@dataclass
class FoldResult:
    train_ids: tuple
    test_ids: tuple
    bank: metalearn.RegressorBank
    feature_artifacts: object
    predictions: dict  # dataset_id -> (M,) array
    truths: dict       # dataset_id -> (M,) array
    baseline: np.ndarray  # (M,) per-method mean over training datasets


def fold_seed(master_seed: int, fold_index: int) -> int:
    return (master_seed * 1_000_003 + fold_index) % (2**63 - 1)


def run_fold(features, S: ScoreMatrix, train_ids, test_ids, kind: str,
             seed: int = 0, svr_params: dict | None = None,
             mlp_params: dict | None = None) -> FoldResult:
    """Fit the feature post-processing and the regressor bank on training
    datasets only, then score the held-out datasets."""
    artifacts = features.fit(train_ids)
    F = {d: features.vectors(d) for d in train_ids}
    bank = metalearn.train_bank(F, S, kind, seed=seed,
                                svr_params=svr_params, mlp_params=mlp_params)
    predictions, truths = {}, {}
    for d in test_ids:
        predictions[d] = metalearn.predict_dataset(bank, features.vectors(d))
        truths[d] = S.row(d)
    train_rows = np.stack([S.row(d) for d in train_ids])
    return FoldResult(tuple(train_ids), tuple(test_ids), bank, artifacts,
                      predictions, truths, train_rows.mean(axis=0))


@dataclass
class EvalReport:
    dataset_ids: tuple
    method_ids: tuple
    per_dataset: dict          # id -> (mean, std, count)
    per_method: dict           # id -> (mean, std, count)
    overall_mae: tuple         # (mean, std) over folds
    overall_nmae: tuple
    method_rank_corr: list = field(default_factory=list)  # (fold, dataset, rho)
    task_rank_corr: list = field(default_factory=list)    # (fold, rho)
    fold_mae: list = field(default_factory=list)
    fold_nmae: list = field(default_factory=list)
    pairs: list = field(default_factory=list)  # (fold, dataset, method, true, pred)

    def rank_corr_summary(self) -> tuple:
        vals = [r for _, _, r in self.method_rank_corr]
        return _mean_std(vals)

    def task_corr_summary(self) -> tuple:
        vals = [r for _, r in self.task_rank_corr]
        return _mean_std(vals)


def _mean_std(vals) -> tuple:
    arr = np.asarray(list(vals), dtype=float)
    if arr.size == 0:
        return (float("nan"), float("nan"))
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return (float(arr.mean()), std)


def run_crossval(features, S: ScoreMatrix, kind: str, splits: SplitPlan,
                 seed: int = 0, svr_params: dict | None = None,
                 mlp_params: dict | None = None) -> EvalReport:
    """Run every fold, never letting held-out scores reach a fitting step,
    and aggregate MAE / NMAE / rank correlations."""
    for train_ids, test_ids in splits.folds:
        for d in (*train_ids, *test_ids):
            if d not in S.dataset_ids:
                raise ConfigError(f"split references unknown dataset {d!r}")

    errs_by_dataset: dict = {d: [] for d in S.dataset_ids}
    errs_by_method: dict = {m: [] for m in S.method_ids}
    fold_mae, fold_nmae = [], []
    method_rc, task_rc = [], []
    pairs = []

    for f_idx, (train_ids, test_ids) in enumerate(splits.folds):
        try:
            fr = run_fold(features, S, train_ids, test_ids, kind,
                          seed=fold_seed(seed, f_idx),
                          svr_params=svr_params, mlp_params=mlp_params)
        except SegmetaError as exc:
            raise type(exc)(f"fold {f_idx} (test {', '.join(test_ids)}): {exc}") from exc
        abs_errs = []
        base_errs = []
        ds_means_true, ds_means_pred = [], []
        for d in test_ids:
            err = np.abs(fr.truths[d] - fr.predictions[d])
            abs_errs.append(err)
            base_errs.append(np.abs(fr.truths[d] - fr.baseline))
            errs_by_dataset[d].extend(err.tolist())
            for j, mid in enumerate(S.method_ids):
                errs_by_method[mid].append(float(err[j]))
                pairs.append((f_idx, d, mid, float(fr.truths[d][j]),
                              float(fr.predictions[d][j])))
            if len(S.method_ids) >= 2:
                method_rc.append((f_idx, d, spearman(fr.truths[d], fr.predictions[d])))
            ds_means_true.append(float(fr.truths[d].mean()))
            ds_means_pred.append(float(fr.predictions[d].mean()))
        fold_mae.append(float(np.concatenate(abs_errs).mean()))
        denom = float(np.concatenate(base_errs).sum())
        if denom <= 0.0:
            raise DataError(f"fold {f_idx}: degenerate mean baseline")
        fold_nmae.append(float(np.concatenate(abs_errs).sum()) / denom)
        if len(test_ids) >= 2:
            task_rc.append((f_idx, spearman(ds_means_true, ds_means_pred)))

    per_dataset = {
        d: (*(_mean_std(v) if v else (float("nan"), float("nan"))), len(v))
        for d, v in errs_by_dataset.items()
    }
    per_method = {m: (*_mean_std(v), len(v)) for m, v in errs_by_method.items()}
    return EvalReport(
        dataset_ids=S.dataset_ids, method_ids=S.method_ids,
        per_dataset=per_dataset, per_method=per_method,
        overall_mae=_mean_std(fold_mae), overall_nmae=_mean_std(fold_nmae),
        method_rank_corr=method_rc, task_rank_corr=task_rc,
        fold_mae=fold_mae, fold_nmae=fold_nmae, pairs=pairs,
    )


# --- report emission ---------------------------------------------------------------

def _fmt(x: float) -> str:
    return "%.9g" % x


def emit_report(r: EvalReport, outdir) -> None:
    """Write per-dataset / per-method / summary CSVs plus a text table with
    the two-decimal ``m +- s`` rendering."""
    if not r.dataset_ids or not r.method_ids:
        raise EmptyDataError("report holds no datasets or methods")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    def write_rows(path, rows):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            for row in rows:
                writer.writerow(row)

    ds_rows = [["id", "mae_mean", "mae_std"]]
    for d in r.dataset_ids:
        mean, std, count = r.per_dataset[d]
        ds_rows.append([d, _fmt(mean) if count else "", _fmt(std) if count else ""])
    ds_rows.append(["Total", _fmt(r.overall_mae[0]), _fmt(r.overall_mae[1])])
    write_rows(outdir / "per_dataset.csv", ds_rows)

    m_rows = [["id", "mae_mean", "mae_std"]]
    for m in r.method_ids:
        mean, std, count = r.per_method[m]
        m_rows.append([m, _fmt(mean) if count else "", _fmt(std) if count else ""])
    m_rows.append(["Total", _fmt(r.overall_mae[0]), _fmt(r.overall_mae[1])])
    write_rows(outdir / "per_method.csv", m_rows)

    if r.pairs:
        export_predictions(r.pairs, outdir / "predictions.csv")

    rc = r.rank_corr_summary()
    tc = r.task_corr_summary()
    write_rows(outdir / "summary.csv", [
        ["metric", "mean", "std"],
        ["overall_mae", _fmt(r.overall_mae[0]), _fmt(r.overall_mae[1])],
        ["overall_nmae", _fmt(r.overall_nmae[0]), _fmt(r.overall_nmae[1])],
        ["method_rank_corr", _fmt(rc[0]), _fmt(rc[1])],
        ["task_rank_corr", _fmt(tc[0]), _fmt(tc[1])],
    ])

    def pm(pair):
        return f"{pair[0]:.2f} ± {pair[1]:.2f}"

    width = max(len("Total"), *(len(str(i)) for i in (*r.dataset_ids, *r.method_ids)))
    lines = ["Per-dataset mean absolute error", "-" * (width + 16)]
    for d in r.dataset_ids:
        mean, std, count = r.per_dataset[d]
        cell = pm((mean, std)) if count else "(never tested)"
        lines.append(f"{d:<{width}}  {cell}")
    lines.append(f"{'Total':<{width}}  {pm(r.overall_mae)}")
    lines += ["", "Per-method mean absolute error", "-" * (width + 16)]
    for m in r.method_ids:
        mean, std, count = r.per_method[m]
        cell = pm((mean, std)) if count else "(never tested)"
        lines.append(f"{m:<{width}}  {cell}")
    lines.append(f"{'Total':<{width}}  {pm(r.overall_mae)}")
    lines += [
        "",
        f"Overall MAE   {pm(r.overall_mae)}",
        f"Overall NMAE  {pm(r.overall_nmae)}",
        f"Method rank correlation  {pm(rc)}",
        f"Task rank correlation    {pm(tc)}",
        "",
    ]
    with open(outdir / "report.txt", "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))


def export_predictions(report_pairs, path) -> None:
    """CSV of (dataset, method, true, predicted) pairs for external plotting."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["fold", "dataset_id", "method_id", "true_dice", "predicted_dice"])
        for fold, ds, mid, t, p in report_pairs:
            writer.writerow([fold, ds, mid, _fmt(t), _fmt(p)])
