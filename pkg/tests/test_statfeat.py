import math

import numpy as np
import pytest

from oracles import bf_enf, bf_feature_vector
from segmeta import statfeat
from segmeta.errors import DataError, EmptyDataError, FormatError, ShapeError
from segmeta.statfeat import (
    FEATURE_NAMES,
    TaskSpecificFeatures,
    aggregate,
    append_task_features,
    enf,
    entropy,
    load_task_descriptor,
    mutual_information,
    nsr,
    pearson,
    save_task_descriptor,
    volume_stats,
)
from segmeta.volume_io import volume_from_array

IDX = {name: i for i, name in enumerate(FEATURE_NAMES)}


def vol(arr):
    return volume_from_array(np.asarray(arr, dtype="<f4"))


# --- entropy -------------------------------------------------------------------

def test_entropy_single_bin():
    assert entropy([10, 0, 0, 0]) == 0.0


def test_entropy_uniform_256():
    assert entropy([4] * 256) == pytest.approx(8.0, abs=1e-12)


def test_entropy_three_one():
    # -0.75*log2(0.75) - 0.25*log2(0.25)
    assert entropy([3, 1]) == pytest.approx(0.8112781244591328, abs=1e-4)


def test_entropy_empty_rejected():
    with pytest.raises(EmptyDataError):
        entropy([0, 0, 0])


# --- mutual information ----------------------------------------------------------

def test_mi_identical_slices_equals_entropy(rng):
    a = rng.normal(size=(8, 8))
    h = entropy(np.histogram(a, bins=64, range=(a.min(), a.max()))[0])
    assert mutual_information(a, a, bins=64) == pytest.approx(h, abs=1e-9)


def test_mi_constant_argument_is_zero(rng):
    a = rng.normal(size=(6, 6))
    b = np.full((6, 6), 3.25)
    assert mutual_information(a, b) == 0.0


def test_mi_checkerboard_one_bit():
    a = np.indices((8, 8)).sum(axis=0) % 2
    b = 1 - a
    assert mutual_information(a, b, bins=2) == pytest.approx(1.0, abs=1e-12)


def test_mi_shape_mismatch():
    with pytest.raises(ShapeError):
        mutual_information(np.zeros((2, 2)), np.zeros((3, 3)))


def test_mi_never_negative(rng):
    for _ in range(20):
        a = rng.normal(size=(5, 5))
        b = rng.normal(size=(5, 5))
        assert mutual_information(a, b) >= 0.0


# --- pearson ----------------------------------------------------------------------

def test_pearson_self(rng):
    a = rng.normal(size=(4, 4))
    assert pearson(a, a) == pytest.approx(1.0, abs=1e-12)


def test_pearson_sign_flip(rng):
    a = rng.normal(size=(4, 4))
    assert pearson(a, -a) == pytest.approx(-1.0, abs=1e-12)


def test_pearson_constant_slice_is_zero(rng):
    a = rng.normal(size=(4, 4))
    assert pearson(a, np.full((4, 4), 7.0)) == 0.0


# --- ENF ---------------------------------------------------------------------------

def test_enf_identical_slices():
    assert enf([np.ones(16)] * 5) == 1


def test_enf_rank_one():
    u = np.arange(1, 17, dtype=float)
    u /= np.linalg.norm(u)
    assert enf([c * u for c in range(1, 21)]) == 1


def test_enf_two_orthogonal_directions():
    u = np.zeros(16); u[0] = 1.0
    w = np.zeros(16); w[1] = 1.0
    slices = [c * u for c in (-2.0, -1.0, 1.0, 2.0)] + [c * w for c in (-2.0, -1.0, 1.0, 2.0)]
    assert bf_enf(slices) == 2  # independent eigendecomposition agrees
    assert enf(slices) == 2


def test_enf_matches_bruteforce(rng):
    for _ in range(10):
        slices = rng.normal(size=(6, 16))
        assert enf(slices) == bf_enf(slices)


# --- NSR -----------------------------------------------------------------------------

def test_nsr_hand_value():
    assert nsr(4.0, 2.0) == pytest.approx(1.0, abs=1e-12)


def test_nsr_equal_inputs():
    assert nsr(3.0, 3.0) == 0.0


def test_nsr_cap():
    assert nsr(2.0, 0.0) == 1e6


# --- per-volume stats ----------------------------------------------------------------

def test_constant_volume_conventions():
    s = volume_stats(vol(np.full((3, 4, 4), 5.0)))
    assert s.mean == 5.0
    assert s.std == 0.0
    assert s.skew == 0.0
    assert s.kurtosis == 0.0
    assert s.entropy == 0.0
    assert s.sparsity == 1.0
    assert s.slice_size == 16
    assert s.n_slices == 3
    assert np.array_equal(s.adj_corr, [0.0, 0.0])


def test_half_zero_half_one_interleaved():
    arr = np.indices((2, 4, 4)).sum(axis=0) % 2
    s = volume_stats(vol(arr))
    assert s.entropy == pytest.approx(1.0, abs=1e-12)
    assert s.skew == pytest.approx(0.0, abs=1e-12)


def test_identical_adjacent_slices(rng):
    sl = rng.normal(size=(8, 8)).astype("<f4")
    v = vol(np.stack([sl, sl]))
    s = volume_stats(v)
    assert s.adj_corr == pytest.approx([1.0], abs=1e-12)
    h = entropy(np.histogram(v.voxels[0], bins=64,
                             range=(float(v.voxels[0].min()), float(v.voxels[0].max())))[0])
    assert s.adj_mi == pytest.approx([h], abs=1e-9)


def test_stats_lengths_and_ranges(rng):
    v = vol(rng.normal(size=(5, 6, 4)))
    s = volume_stats(v)
    assert len(s.adj_mi) == 4 and len(s.adj_corr) == 4
    assert s.std >= 0 and s.entropy >= 0
    assert 0 <= s.sparsity <= 1
    assert np.all(np.abs(s.adj_corr) <= 1) and np.all(s.adj_mi >= 0)
    assert s.mid_slice32.shape == (32 * 32,)


# --- aggregate ----------------------------------------------------------------------

def _stats_list(volumes, **kw):
    return [volume_stats(vol(a), **kw) for a in volumes]


def test_aggregate_identical_volumes_zero_spread(rng):
    a = rng.normal(size=(4, 5, 5))
    vec = aggregate(_stats_list([a, a, a]), n_dataset_volumes=3)
    for name in FEATURE_NAMES:
        if name.endswith("_std") or name.endswith("_cvar"):
            assert vec[IDX[name]] == 0.0, name


def test_aggregate_mean_pair():
    vec = aggregate(_stats_list([np.full((2, 2, 2), 2.0), np.full((2, 2, 2), 4.0)]), 2)
    assert vec[IDX["voxel_value_m"]] == pytest.approx(3.0, abs=1e-12)
    assert vec[IDX["voxel_value_std"]] == pytest.approx(math.sqrt(2), abs=1e-12)
    assert vec[IDX["voxel_value_cvar"]] == pytest.approx(math.sqrt(2) / 3, abs=1e-12)


def test_aggregate_instances_slot():
    stats = _stats_list([np.zeros((1, 2, 2))])
    assert aggregate(stats, 1000)[0] == pytest.approx(3.0, abs=1e-12)
    assert aggregate(stats, 1)[0] == 0.0


def test_aggregate_empty_rejected():
    with pytest.raises(EmptyDataError):
        aggregate([], 5)


def test_aggregate_permutation_invariance(rng):
    vols = [rng.normal(size=(4, 6, 6)) for _ in range(5)]
    stats = _stats_list(vols)
    a = aggregate(stats, 9)
    b = aggregate(stats[::-1], 9)
    assert np.array_equal(a, b)


def test_aggregate_all_finite_on_degenerate_input():
    vec = aggregate(_stats_list([np.full((1, 1, 1), 2.0)] * 3), 3)
    assert np.isfinite(vec).all()
    assert vec[IDX["noise_signal_ratio"]] == 1e6  # zero MI cap


def test_scale_behavior(rng):
    vols = [rng.normal(2.0, 1.0, size=(4, 8, 8)).astype("<f4") for _ in range(4)]
    base = aggregate(_stats_list(vols), 10)
    scaled = aggregate(_stats_list([v * np.float32(2.0) for v in vols]), 10)
    unchanged = [
        "skew_m", "kurtosis_m", "entropy_m", "sparsity_m", "correlation_m",
        "equivalent_n_features",
    ] + [n for n in FEATURE_NAMES if n.endswith("_cvar")]
    for name in unchanged:
        assert scaled[IDX[name]] == pytest.approx(base[IDX[name]], abs=1e-9), name
    assert scaled[IDX["voxel_value_m"]] == pytest.approx(2 * base[IDX["voxel_value_m"]],
                                                         rel=1e-12)


def test_oracle_equivalence_random_volumes(rng):
    """Every slot matches the independent loop-based implementation."""
    for trial in range(8):
        vols = [rng.normal(1.5, 0.8, size=(4, 8, 8)).astype("<f4").astype(float)
                for _ in range(4)]
        mine = aggregate(_stats_list(vols), 50)
        ref = np.array(bf_feature_vector(vols, 50))
        np.testing.assert_allclose(mine, ref, rtol=1e-9, atol=1e-12)


# --- task features --------------------------------------------------------------------

def test_append_lengths():
    t = TaskSpecificFeatures(0.1, 0.2, 0.3, 0.4, 0.5)
    assert append_task_features(np.zeros(33), t).shape == (38,)
    assert append_task_features(np.zeros(120), t).shape == (125,)


def test_append_zero_task_features():
    t = TaskSpecificFeatures(0, 0, 0, 0, 0)
    out = append_task_features(np.ones(33), t)
    assert np.array_equal(out[-5:], np.zeros(5))
    assert np.array_equal(out[:33], np.ones(33))


def test_append_order_matches_declaration():
    t = TaskSpecificFeatures(0.1, 0.2, 0.3, 0.4, 0.5)
    assert np.array_equal(append_task_features(np.zeros(2), t)[-5:],
                          [0.1, 0.2, 0.3, 0.4, 0.5])


def test_task_feature_range_enforced():
    with pytest.raises(DataError):
        TaskSpecificFeatures(1.5, 0, 0, 0, 0)


def test_descriptor_round_trip(tmp_path):
    t = TaskSpecificFeatures(1.0, 0.25, 0.5, 0.125, 0.0)
    p = tmp_path / "ds.task"
    save_task_descriptor(t, p)
    assert load_task_descriptor(p) == t


def test_descriptor_missing_key(tmp_path):
    p = tmp_path / "bad.task"
    p.write_text("modality=0.5\n")
    with pytest.raises(FormatError):
        load_task_descriptor(p)


def test_descriptor_unknown_key(tmp_path):
    p = tmp_path / "bad.task"
    p.write_text("modality=0.5\nbogus=1\n")
    with pytest.raises(FormatError):
        load_task_descriptor(p)


def test_feature_names_cover_all_slots():
    assert len(FEATURE_NAMES) == statfeat.N_STAT_FEATURES == 33


def test_cvar_slots_nonnegative(rng):
    for _ in range(5):
        vols = [rng.normal(-3.0, 2.0, size=(3, 5, 5)) for _ in range(4)]
        vec = aggregate(_stats_list(vols), 7)
        for name in FEATURE_NAMES:
            if name.endswith("_cvar"):
                assert vec[IDX[name]] >= 0.0, name
