"""Acceptance suite: one test per criterion, each printing a PASS line with
its runtime (the conftest terminal hook also summarises PASS/FAIL).

Criteria: metric formula fidelity, statistical-feature oracle equivalence,
SVR grid-QP oracle equivalence, MLP gradient checks, end-to-end synthetic
NMAE for both learners plus the mean-baseline control, report table shape,
byte-level pipeline determinism, and the held-out-label leakage guard.
"""

import csv
import time

import numpy as np
import pytest

from oracles import (
    bf_feature_vector,
    bf_svr_bias,
    bf_svr_grid,
    bf_svr_predict,
    rbf_gram,
)
from segmeta import deepfeat_post as dfp
from segmeta import evaluation as ev
from segmeta import metalearn as ml
from segmeta import statfeat, synth
from segmeta.cli import main, read_feature_csv
from segmeta.volume_io import volume_from_array

SEED = 0
ACCEPT_CFG = (
    "subset_size = 10\n"
    "n_subsets = 25\n"
    "[mlp]\nepochs = 600\nlr = 0.05\n"
    "[cv]\ntrain = 7\ntest = 3\nmode = random\nfolds = 10\n"
)


def _stamp(name, t0, budget):
    elapsed = time.time() - t0
    print(f"[ACCEPTANCE] {name}: PASS ({elapsed:.2f}s, budget {budget:.0f}s)")
    assert elapsed < budget, f"{name} exceeded its {budget}s budget: {elapsed:.1f}s"


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One full synthetic run shared by the NMAE and report-shape criteria:
    10 datasets x 30 volumes of 16x16x8, 5 methods, score noise 0.02."""
    root = tmp_path_factory.mktemp("accept")
    paths = synth.generate_fixture(root, n_datasets=10, n_volumes=30,
                                   dims=(16, 16, 8), n_methods=5, noise=0.02,
                                   seed=SEED)
    cfg = root / "run.cfg"
    cfg.write_text(ACCEPT_CFG)
    features = root / "features.csv"
    assert main([
        "extract-stat", "--manifest", str(paths["manifest"]),
        "--descriptors", str(paths["descriptors"]),
        "--config", str(cfg), "--seed", str(SEED), "--out", str(features),
    ]) == 0
    summaries = {}
    for kind in ("mean", "svr", "mlp"):
        rep = root / f"report_{kind}"
        assert main([
            "crossval", "--features", str(features), "--scores", str(paths["scores"]),
            "--learner", kind, "--config", str(cfg), "--seed", str(SEED),
            "--out", str(rep),
        ]) == 0
        with open(rep / "summary.csv", newline="") as fh:
            summaries[kind] = {r[0]: (float(r[1]), float(r[2]))
                               for r in list(csv.reader(fh))[1:]}
    return {"root": root, "paths": paths, "cfg": cfg, "features": features,
            "summaries": summaries, "t_start": time.time()}


def test_formula_fidelity():
    t0 = time.time()
    # mae: hand-computed example values, at 1e-12
    assert ev.mae([0.1, 0.5, 0.9], [0.1, 0.5, 0.9]) == 0.0
    assert abs(ev.mae([0.5, 0.7], [0.6, 0.6]) - 0.1) < 1e-12
    lits = ev.mae([0.96], [0.87])
    assert abs(lits - 0.09) < 1e-12
    assert round(lits, 2) == 0.09  # single-dataset error equals the summary cell
    # nmae: hand-computed example values, at 1e-12
    assert ev.nmae([0.2, 0.8], [0.5, 0.5], [0.5, 0.5]) == 1.0
    assert ev.nmae([0.2, 0.8], [0.2, 0.8], [0.5, 0.5]) == 0.0
    assert abs(ev.nmae([0.2, 0.8], [0.4, 0.7], [0.5, 0.5]) - 0.5) < 1e-12
    _stamp("formula-fidelity", t0, 1.0)


def test_statistical_feature_oracle_suite():
    t0 = time.time()
    rng = np.random.Generator(np.random.PCG64(2024))
    # 50 random 8x8x4 volumes in 10 subsets of 5; every slot within 1e-9 rel
    volumes = [rng.normal(1.5, 0.8, size=(4, 8, 8)).astype("<f4").astype(float)
               for _ in range(50)]
    for s in range(10):
        group = volumes[5 * s:5 * (s + 1)]
        stats = [statfeat.volume_stats(volume_from_array(v)) for v in group]
        mine = statfeat.aggregate(stats, 50)
        ref = np.array(bf_feature_vector(group, 50))
        np.testing.assert_allclose(mine, ref, rtol=1e-9, atol=1e-12)

    # degenerate conventions hold exactly
    const = statfeat.volume_stats(volume_from_array(np.full((4, 8, 8), 0.1, "<f4")))
    assert (const.skew, const.kurtosis, const.entropy) == (0.0, 0.0, 0.0)
    assert const.sparsity == 1.0
    assert np.array_equal(const.adj_corr, np.zeros(3))
    flat_slice = np.full((8, 8), 2.0)
    assert statfeat.pearson(rng.normal(size=(8, 8)), flat_slice) == 0.0
    assert statfeat.nsr(3.0, 0.0) == 1e6
    assert statfeat.enf([np.ones(16)] * 4) == 1
    _stamp("statistical-feature-oracle", t0, 10.0)


def test_svr_oracle_equivalence():
    t0 = time.time()
    rng = np.random.Generator(np.random.PCG64(12345))
    for trial in range(20):
        n = int(rng.integers(1, 6))
        q = int(rng.integers(1, 3))
        X = rng.uniform(-1.5, 1.5, size=(n, q))
        y = rng.uniform(0.0, 1.0, size=n)
        gamma = ml.resolve_gamma(X, "scale")
        K = rbf_gram(X, gamma)
        beta = bf_svr_grid(K, y, 1.0, 0.1, final_step=1e-7)
        bias = bf_svr_bias(beta, K, y, 1.0, 0.1, bound_tol=1e-5)
        oracle = bf_svr_predict(X, beta, bias, gamma, X)
        m = ml.svr_fit(X, y, C=1.0, epsilon=0.1, tol=1e-4)
        np.testing.assert_allclose(ml.svr_decision(m, X), oracle, atol=1e-4,
                                   err_msg=f"trial {trial}")
        # dual feasibility and stationarity on every fitted model
        assert (np.abs(m.dual_coef) <= m.C + 1e-9).all()
        assert abs(m.dual_coef.sum()) <= 1e-6 * m.C * n
        assert max(ml.svr_kkt_gap(m, X, y), 0.0) <= 1e-4 + 1e-9
    _stamp("svr-oracle-equivalence", t0, 60.0)


def test_mlp_gradient_check():
    t0 = time.time()
    rng = np.random.Generator(np.random.PCG64(77))
    h = 1e-5
    for trial in range(10):
        q = int(rng.integers(2, 9))
        B = int(rng.integers(2, 6))
        model = ml.mlp_init(q, seed=trial)
        X = rng.normal(size=(B, q))
        y = rng.uniform(0, 1, size=B)
        _, gw, gb = ml.mlp_loss_grad(model, X, y)  # dropout disabled
        for layer in range(3):
            worst = 0.0
            for arr, grad in ((model.weights[layer], gw[layer]),
                              (model.biases[layer], gb[layer])):
                it = np.nditer(arr, flags=["multi_index"])
                for _ in it:
                    idx = it.multi_index
                    old = arr[idx]
                    arr[idx] = old + h
                    lp, _, _ = ml.mlp_loss_grad(model, X, y)
                    arr[idx] = old - h
                    lm, _, _ = ml.mlp_loss_grad(model, X, y)
                    arr[idx] = old
                    num = (lp - lm) / (2 * h)
                    denom = max(abs(num), abs(float(grad[idx])), 1e-8)
                    worst = max(worst, abs(num - float(grad[idx])) / denom)
            assert worst < 1e-4, f"trial {trial} layer {layer}: rel err {worst}"
    _stamp("mlp-gradient-check", t0, 10.0)


def test_end_to_end_synthetic_nmae(pipeline):
    t0 = time.time()
    s = pipeline["summaries"]
    assert abs(s["mean"]["overall_nmae"][0] - 1.0) <= 1e-9
    assert abs(s["mean"]["overall_nmae"][1]) <= 1e-9
    assert s["svr"]["overall_nmae"][0] <= 0.7, s["svr"]["overall_nmae"]
    assert s["mlp"]["overall_nmae"][0] <= 0.7, s["mlp"]["overall_nmae"]
    print(f"[ACCEPTANCE]   svr NMAE {s['svr']['overall_nmae'][0]:.3f}, "
          f"mlp NMAE {s['mlp']['overall_nmae'][0]:.3f}, "
          f"mean baseline {s['mean']['overall_nmae'][0]:.10f}")
    _stamp("end-to-end-synthetic-nmae", t0, 300.0)


def test_report_shape(pipeline):
    t0 = time.time()
    root = pipeline["root"]
    for kind in ("svr", "mlp", "mean"):
        with open(root / f"report_{kind}" / "per_dataset.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 1 + 10 + 1  # header, N datasets, Total
        assert rows[0] == ["id", "mae_mean", "mae_std"]
        assert rows[-1][0] == "Total"
        with open(root / f"report_{kind}" / "per_method.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 1 + 5 + 1  # header, M methods, Total
        assert rows[-1][0] == "Total"
    _stamp("report-shape", t0, 300.0)


def test_pipeline_determinism(pipeline, tmp_path):
    t0 = time.time()
    paths = pipeline["paths"]
    cfg = pipeline["cfg"]

    outputs = {}
    for run in ("run1", "run2"):
        d = tmp_path / run
        d.mkdir()
        feat = d / "features.csv"
        assert main([
            "extract-stat", "--manifest", str(paths["manifest"]),
            "--descriptors", str(paths["descriptors"]),
            "--config", str(cfg), "--seed", str(SEED), "--out", str(feat),
        ]) == 0
        banks = []
        for kind in ("svr", "mlp", "mean"):
            bank = d / f"bank_{kind}.mlbank"
            assert main([
                "train", "--features", str(feat), "--scores", str(paths["scores"]),
                "--learner", kind, "--config", str(cfg), "--seed", str(SEED),
                "--out", str(bank),
            ]) == 0
            banks.append(bank.read_bytes())
        rep = d / "report"
        assert main([
            "crossval", "--features", str(feat), "--scores", str(paths["scores"]),
            "--learner", "svr", "--config", str(cfg), "--seed", str(SEED),
            "--out", str(rep),
        ]) == 0
        reports = {p.name: p.read_bytes() for p in sorted(rep.iterdir())}
        outputs[run] = (feat.read_bytes(), banks, reports)

    a, b = outputs["run1"], outputs["run2"]
    assert a[0] == b[0], "feature CSVs differ between identical runs"
    assert a[1] == b[1], "bank archives differ between identical runs"
    assert a[2] == b[2], "report files differ between identical runs"
    _stamp("pipeline-determinism", t0, 600.0)


def test_leakage_guard(pipeline, tmp_path):
    """Poisoning held-out-dataset scores changes no fitted model or
    post-processing artifact, byte for byte."""
    t0 = time.time()
    S = ev.read_scores_csv(pipeline["paths"]["scores"])
    vecs, _ = read_feature_csv(pipeline["features"])
    train_ids = S.dataset_ids[:7]
    test_ids = S.dataset_ids[7:]
    poisoned_scores = S.scores.copy()
    for d in test_ids:
        poisoned_scores[S.dataset_ids.index(d)] = 0.013
    poisoned = ev.ScoreMatrix(S.dataset_ids, S.method_ids, poisoned_scores)

    feats = ev.PrecomputedFeatures(vecs)
    for kind in ("svr", "mlp", "mean"):
        kw = {"mlp_params": {"epochs": 60, "batch": 32, "lr": 0.05}} if kind == "mlp" else {}
        clean = ev.run_fold(feats, S, train_ids, test_ids, kind, seed=SEED, **kw)
        dirty = ev.run_fold(feats, poisoned, train_ids, test_ids, kind, seed=SEED, **kw)
        pa = tmp_path / f"{kind}_clean.mlbank"
        pb = tmp_path / f"{kind}_dirty.mlbank"
        ml.save_bank(clean.bank, pa)
        ml.save_bank(dirty.bank, pb)
        assert pa.read_bytes() == pb.read_bytes(), kind
        for d in test_ids:
            assert np.array_equal(clean.predictions[d], dirty.predictions[d]), kind

    # deep post-processing artifacts are equally insulated
    tdir = tmp_path / "tensors"
    tdir.mkdir()
    synth.write_synthetic_tensors(tdir, list(S.dataset_ids),
                                  np.linspace(0, 1, len(S.dataset_ids)),
                                  channels=512, per_dataset=2, seed=SEED)
    tensors = {}
    for f in sorted(tdir.iterdir()):
        x = dfp.ingest_tensor(f)
        tensors.setdefault(x.dataset_id, []).append(x)
    tasks = {d: statfeat.TaskSpecificFeatures(0, 0, 0, 0, 0) for d in S.dataset_ids}
    src = dfp.DeepFeatureSource(tensors, tasks, alpha=0.80)
    a = ev.run_fold(src, S, train_ids, test_ids, "svr", seed=SEED)
    b = ev.run_fold(src, poisoned, train_ids, test_ids, "svr", seed=SEED)
    for art_a, art_b, names in (
        (a.feature_artifacts[0], b.feature_artifacts[0],
         ("informative", "channel_median")),
        (a.feature_artifacts[1], b.feature_artifacts[1],
         ("kept_indices", "importance")),
    ):
        for name in names:
            assert np.array_equal(getattr(art_a, name), getattr(art_b, name))
    _stamp("leakage-guard", t0, 300.0)
