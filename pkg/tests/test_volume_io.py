import numpy as np
import pytest

from segmeta import volume_io
from segmeta.errors import (
    DataError,
    EmptyDataError,
    FormatError,
    TruncationError,
)
from segmeta.volume_io import (
    DatasetStore,
    read_manifest,
    read_volume,
    sample_subsets,
    volume_from_array,
    write_manifest,
    write_volume,
)


def test_round_trip_identity(tmp_path):
    v = volume_from_array(np.array([[[1.5, -2.0], [0.25, 3.0]]], dtype="<f4"))
    p = tmp_path / "a.mlvol"
    write_volume(v, p)
    back = read_volume(p)
    assert back.dims == (2, 2, 1)
    assert np.array_equal(back.voxels, v.voxels)


def test_round_trip_single_voxel(tmp_path):
    v = volume_from_array(np.full((1, 1, 1), 3.5, dtype="<f4"))
    p = tmp_path / "one.mlvol"
    write_volume(v, p)
    assert read_volume(p).voxels[0, 0, 0] == np.float32(3.5)


def test_ramp_round_trip(tmp_path):
    # 3x3x2 ramp, voxel k = k in z-major order
    ramp = np.arange(18, dtype="<f4").reshape(2, 3, 3)
    p = tmp_path / "ramp.mlvol"
    write_volume(volume_from_array(ramp), p)
    back = read_volume(p)
    assert back.dims == (3, 3, 2)
    assert back.voxels[0, 0, 0] == 0.0
    assert back.voxels[0, 0, 1] == 1.0   # x fastest
    assert back.voxels[0, 1, 0] == 3.0   # then y
    assert back.voxels[1, 0, 0] == 9.0   # then z
    assert np.array_equal(back.voxels.ravel(), np.arange(18, dtype="<f4"))


def test_write_is_deterministic(tmp_path):
    v = volume_from_array(np.linspace(0, 1, 24, dtype="<f4").reshape(2, 3, 4))
    write_volume(v, tmp_path / "a")
    write_volume(v, tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_all_zero_volume(tmp_path):
    v = volume_from_array(np.zeros((3, 4, 4), dtype="<f4"))
    p = tmp_path / "z.mlvol"
    write_volume(v, p)
    back = read_volume(p)
    assert back.dims == (4, 4, 3)
    assert back.voxels.size == 48
    assert not back.voxels.any()


def test_round_trip_random_volumes_bitwise(tmp_path, rng):
    for k in range(10):
        shape = tuple(int(s) for s in rng.integers(1, 7, size=3))
        vox = rng.normal(size=shape).astype("<f4")
        p = tmp_path / f"r{k}.mlvol"
        write_volume(volume_from_array(vox), p)
        back = read_volume(p)
        assert back.voxels.tobytes() == vox.tobytes()


def test_truncated_payload(tmp_path):
    p = tmp_path / "short.mlvol"
    header = b"MLVOL 1\ndims: 2 2 2\ndtype: f32\norder: zyx\n\n"
    p.write_bytes(header + np.zeros(4, dtype="<f4").tobytes())
    with pytest.raises(TruncationError):
        read_volume(p)


@pytest.mark.parametrize(
    "line_idx,replacement",
    [
        (0, b"MLVOL 2\n"),
        (1, b"dims: 2 2\n"),
        (1, b"dims: 0 2 2\n"),
        (2, b"dtype: f64\n"),
        (3, b"order: xyz\n"),
        (4, b"x\n"),
    ],
)
def test_malformed_header_names_line(tmp_path, line_idx, replacement):
    lines = [b"MLVOL 1\n", b"dims: 2 2 2\n", b"dtype: f32\n", b"order: zyx\n", b"\n"]
    lines[line_idx] = replacement
    p = tmp_path / "bad.mlvol"
    p.write_bytes(b"".join(lines) + np.zeros(8, dtype="<f4").tobytes())
    with pytest.raises(FormatError) as exc:
        read_volume(p)
    assert f"line {line_idx + 1}" in str(exc.value)


def test_non_finite_voxel_reports_index(tmp_path):
    vox = np.zeros(8, dtype="<f4")
    vox[5] = np.nan
    p = tmp_path / "nan.mlvol"
    p.write_bytes(b"MLVOL 1\ndims: 2 2 2\ndtype: f32\norder: zyx\n\n" + vox.tobytes())
    with pytest.raises(DataError) as exc:
        read_volume(p)
    assert "5" in str(exc.value)


def test_volume_from_array_rejects_nan():
    bad = np.zeros((1, 2, 2))
    bad[0, 1, 1] = np.inf
    with pytest.raises(DataError):
        volume_from_array(bad)


def test_manifest_round_trip(tmp_path):
    stores = [
        DatasetStore("alpha", ("a0.mlvol", "a1.mlvol")),
        DatasetStore("beta", ("b0.mlvol",)),
    ]
    p = tmp_path / "manifest.csv"
    write_manifest(stores, p)
    back = read_manifest(p)
    assert [s.dataset_id for s in back] == ["alpha", "beta"]
    assert back[0].n_volumes == 2 and back[1].n_volumes == 1
    # relative paths resolve against the manifest directory
    assert back[0].volume_paths[0] == str(tmp_path / "a0.mlvol")


def test_manifest_bad_header(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("id,path\nx,y\n")
    with pytest.raises(FormatError):
        read_manifest(p)


# --- sampling -----------------------------------------------------------------


def _store(n):
    return DatasetStore("ds", tuple(f"v{i}.mlvol" for i in range(n)))


def test_subsets_without_replacement():
    plan = sample_subsets(_store(50), subset_size=20, n_subsets=100, seed=7)
    assert plan.n_subsets == 100
    for subset in plan.subsets:
        assert len(subset) == 20
        assert len(set(subset)) == 20
        assert all(0 <= i < 50 for i in subset)


def test_single_volume_falls_back_to_replacement():
    plan = sample_subsets(_store(1), subset_size=20, n_subsets=5, seed=3)
    for subset in plan.subsets:
        assert subset == (0,) * 20


def test_sampling_is_deterministic():
    a = sample_subsets(_store(30), 10, 50, seed=42)
    b = sample_subsets(_store(30), 10, 50, seed=42)
    assert a == b
    c = sample_subsets(_store(30), 10, 50, seed=43)
    assert c.subsets != a.subsets


def test_sampling_differs_across_datasets_same_seed():
    a = sample_subsets(DatasetStore("one", ("p",) * 30), 10, 5, seed=0)
    b = sample_subsets(DatasetStore("two", ("p",) * 30), 10, 5, seed=0)
    assert a.subsets != b.subsets


def test_coverage_stochasticity():
    # >= 2*subset_size volumes, >= 100 subsets: at least two distinct subsets
    plan = sample_subsets(_store(40), subset_size=20, n_subsets=100, seed=0)
    assert len({tuple(sorted(s)) for s in plan.subsets}) >= 2


def test_indices_always_in_range():
    for n, s in ((3, 5), (5, 5), (12, 4)):
        plan = sample_subsets(_store(n), s, 25, seed=9)
        assert all(0 <= i < n for subset in plan.subsets for i in subset)


def test_empty_dataset_rejected():
    with pytest.raises(EmptyDataError):
        sample_subsets(DatasetStore("empty", ()), 5, 5, seed=0)


def test_store_reads_back_with_stats(tiny_store):
    v = read_volume(tiny_store.volume_paths[0])
    assert v.dims == (5, 6, 4)
    assert v.voxels.shape == (4, 6, 5)
