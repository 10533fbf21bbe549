"""Bit-exact volume storage, dataset manifests and seeded subset sampling.

MLVOL on-disk layout (header lines are LF-terminated ASCII):

    MLVOL 1
    dims: X Y Z
    dtype: f32
    order: zyx
    <empty line>
    X*Y*Z little-endian IEEE-754 float32

The payload is slice-major: z varies slowest, then y, then x.  In memory a
volume is a read-only float32 array of shape (Z, Y, X), so ``voxels[k]`` is
slice k and round-trips are byte-identical.

Manifests are UTF-8 CSV with header ``dataset_id,volume_path``, one row per
volume.  Relative volume paths are resolved against the manifest's directory.

Subset sampling uses numpy's PCG64.  The per-dataset stream is seeded with
the user seed mixed with an 8-byte BLAKE2b hash of the dataset id, so plans
are reproducible across platforms and do not depend on manifest ordering.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DataError,
    EmptyDataError,
    FormatError,
    ShapeError,
    TruncationError,
)

MLVOL_MAGIC = "MLVOL 1"


@dataclass(frozen=True)
class Volume:
    """A 3D scalar image: dims (X, Y, Z) plus a (Z, Y, X) float32 array."""

    dims: tuple[int, int, int]
    voxels: np.ndarray

    @property
    def n_voxels(self) -> int:
        x, y, z = self.dims
        return x * y * z

    def slice(self, k: int) -> np.ndarray:
        return self.voxels[k]


def volume_from_array(arr) -> Volume:
    """Build a validated Volume from a (Z, Y, X)-shaped array."""
    vox = np.ascontiguousarray(arr, dtype="<f4")
    if vox.ndim != 3:
        raise ShapeError(f"expected a 3D (Z, Y, X) array, got ndim={vox.ndim}")
    z, y, x = vox.shape
    if min(x, y, z) < 1:
        raise ShapeError(f"all dims must be >= 1, got X={x} Y={y} Z={z}")
    bad = np.flatnonzero(~np.isfinite(vox.ravel()))
    if bad.size:
        raise DataError(f"non-finite voxel at flat index {int(bad[0])}")
    vox.setflags(write=False)
    return Volume(dims=(x, y, z), voxels=vox)


def read_volume(path) -> Volume:
    path = Path(path)
    with open(path, "rb") as fh:
        lines = [fh.readline() for _ in range(5)]
        payload = fh.read()

    def text(i):
        try:
            return lines[i].decode("ascii")
        except UnicodeDecodeError:
            raise FormatError(f"{path}: header line {i + 1} is not ASCII") from None

    if text(0) != MLVOL_MAGIC + "\n":
        raise FormatError(f"{path}: line 1 must be {MLVOL_MAGIC!r}, got {text(0)!r}")
    dims_line = text(1)
    if not dims_line.startswith("dims: ") or not dims_line.endswith("\n"):
        raise FormatError(f"{path}: line 2 malformed, got {dims_line!r}")
    parts = dims_line[len("dims: "):].split()
    if len(parts) != 3 or not all(p.isdigit() for p in parts):
        raise FormatError(f"{path}: line 2 must read 'dims: X Y Z', got {dims_line!r}")
    x, y, z = (int(p) for p in parts)
    if min(x, y, z) < 1:
        raise FormatError(f"{path}: line 2 dims must be positive, got {x} {y} {z}")
    if text(2) != "dtype: f32\n":
        raise FormatError(f"{path}: line 3 must be 'dtype: f32', got {text(2)!r}")
    if text(3) != "order: zyx\n":
        raise FormatError(f"{path}: line 4 must be 'order: zyx', got {text(3)!r}")
    if text(4) != "\n":
        raise FormatError(f"{path}: line 5 must be empty, got {text(4)!r}")

    expected = x * y * z * 4
    if len(payload) != expected:
        raise TruncationError(
            f"{path}: payload holds {len(payload)} bytes, header promises {expected}"
        )
    vox = np.frombuffer(payload, dtype="<f4").reshape(z, y, x)
    bad = np.flatnonzero(~np.isfinite(vox.ravel()))
    if bad.size:
        raise DataError(f"{path}: non-finite voxel at flat index {int(bad[0])}")
    return Volume(dims=(x, y, z), voxels=vox)


def write_volume(v: Volume, path) -> None:
    x, y, z = v.dims
    vox = np.ascontiguousarray(v.voxels, dtype="<f4")
    if vox.shape != (z, y, x):
        raise ShapeError(f"voxels shape {vox.shape} does not match dims {v.dims}")
    if not np.isfinite(vox).all():
        raise DataError("volume contains non-finite voxels")
    header = f"{MLVOL_MAGIC}\ndims: {x} {y} {z}\ndtype: f32\norder: zyx\n\n"
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(vox.tobytes())


@dataclass
class DatasetStore:
    """One dataset: its id, ordered volume paths and (optionally) its
    task descriptor (attached later by the CLI)."""

    dataset_id: str
    volume_paths: tuple[str, ...]
    descriptor: object | None = None

    @property
    def n_volumes(self) -> int:
        return len(self.volume_paths)


def read_manifest(path) -> list[DatasetStore]:
    path = Path(path)
    base = path.parent
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty manifest") from None
        if header != ["dataset_id", "volume_path"]:
            raise FormatError(
                f"{path}: header must be 'dataset_id,volume_path', got {header!r}"
            )
        grouped: dict[str, list[str]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise FormatError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            ds_id, vol_path = row
            if not ds_id:
                raise FormatError(f"{path}:{lineno}: empty dataset_id")
            p = Path(vol_path)
            if not p.is_absolute():
                p = base / p
            grouped.setdefault(ds_id, []).append(str(p))
    if not grouped:
        raise FormatError(f"{path}: manifest lists no volumes")
    return [DatasetStore(ds_id, tuple(paths)) for ds_id, paths in grouped.items()]


def write_manifest(stores, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["dataset_id", "volume_path"])
        for ds in stores:
            for p in ds.volume_paths:
                writer.writerow([ds.dataset_id, p])


@dataclass(frozen=True)
class SubsetPlan:
    """Seeded sampling plan: n_subsets index lists of length subset_size."""

    dataset_id: str
    subset_size: int
    n_subsets: int
    seed: int
    subsets: tuple[tuple[int, ...], ...] = field(repr=False)


def dataset_rng(seed: int, dataset_id: str) -> np.random.Generator:
    """PCG64 stream for one dataset, keyed by (seed, BLAKE2b-64(dataset_id))."""
    digest = hashlib.blake2b(dataset_id.encode("utf-8"), digest_size=8).digest()
    mix = int.from_bytes(digest, "little")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, mix])))


def sample_subsets(ds: DatasetStore, subset_size: int, n_subsets: int, seed: int) -> SubsetPlan:
    """Draw n_subsets index subsets of the dataset's volumes.

    Within one subset indices are unique when the dataset has at least
    subset_size volumes; smaller datasets fall back to sampling with
    replacement.  Subsets are drawn independently from one seeded stream.
    """
    if ds.n_volumes == 0:
        raise EmptyDataError(f"dataset {ds.dataset_id!r} has no volumes")
    if subset_size < 1 or n_subsets < 1:
        raise DataError("subset_size and n_subsets must both be >= 1")
    rng = dataset_rng(seed, ds.dataset_id)
    replace = ds.n_volumes < subset_size
    subsets = tuple(
        tuple(int(i) for i in rng.choice(ds.n_volumes, size=subset_size, replace=replace))
        for _ in range(n_subsets)
    )
    return SubsetPlan(ds.dataset_id, subset_size, n_subsets, seed, subsets)
