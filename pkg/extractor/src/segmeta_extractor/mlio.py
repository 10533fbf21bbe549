"""MLVOL/MLTEN codecs and manifest reading.

These mirror the wire formats the main toolkit defines; the extractor talks
to it only through these files, so the formats are reimplemented here from
their specification rather than imported.

MLVOL: ``MLVOL 1`` / ``dims: X Y Z`` / ``dtype: f32`` / ``order: zyx`` /
empty line / X*Y*Z little-endian float32, slice-major.

MLTEN: ``MLTEN 1`` / ``shape: Z 7 7`` / ``dataset: <id>`` /
``subset: <int>`` / empty line / Z*49 little-endian float32, channel-major.
"""

from __future__ import annotations

import csv
import hashlib
import os
from pathlib import Path

import numpy as np


class WireFormatError(Exception):
    pass


def read_mlvol(path) -> np.ndarray:
    """Volume as a (Z, Y, X) float32 array."""
    with open(path, "rb") as fh:
        lines = [fh.readline().decode("ascii") for _ in range(5)]
        payload = fh.read()
    if lines[0] != "MLVOL 1\n":
        raise WireFormatError(f"{path}: bad magic {lines[0]!r}")
    parts = lines[1].split()
    if parts[:1] != ["dims:"] or len(parts) != 4:
        raise WireFormatError(f"{path}: bad dims line {lines[1]!r}")
    x, y, z = (int(p) for p in parts[1:])
    if lines[2] != "dtype: f32\n" or lines[3] != "order: zyx\n" or lines[4] != "\n":
        raise WireFormatError(f"{path}: unexpected header")
    if len(payload) != x * y * z * 4:
        raise WireFormatError(f"{path}: payload length mismatch")
    return np.frombuffer(payload, dtype="<f4").reshape(z, y, x).copy()


def write_mlten(maps: np.ndarray, dataset_id: str, subset_id: int, path) -> None:
    """Write (Z, 7, 7) or (Z, 49) float maps atomically (temp + rename)."""
    m = np.ascontiguousarray(maps, dtype="<f4")
    if m.ndim == 3 and m.shape[1:] == (7, 7):
        m = m.reshape(m.shape[0], 49)
    if m.ndim != 2 or m.shape[1] != 49:
        raise WireFormatError(f"maps must be (Z, 7, 7), got {maps.shape}")
    header = (f"MLTEN 1\nshape: {m.shape[0]} 7 7\n"
              f"dataset: {dataset_id}\nsubset: {subset_id}\n\n")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header.encode("utf-8"))
        fh.write(m.tobytes())
    os.replace(tmp, path)


def read_mlten(path) -> tuple[np.ndarray, str, int]:
    with open(path, "rb") as fh:
        lines = [fh.readline().decode("utf-8") for _ in range(5)]
        payload = fh.read()
    if lines[0] != "MLTEN 1\n":
        raise WireFormatError(f"{path}: bad magic")
    z = int(lines[1].split()[1])
    dataset_id = lines[2][len("dataset: "):-1]
    subset_id = int(lines[3].split()[1])
    if len(payload) != z * 49 * 4:
        raise WireFormatError(f"{path}: payload length mismatch")
    return np.frombuffer(payload, dtype="<f4").reshape(z, 49).copy(), dataset_id, subset_id


def read_manifest(path) -> dict[str, list[str]]:
    """dataset_id -> volume paths, resolved against the manifest directory."""
    base = Path(path).parent
    grouped: dict[str, list[str]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["dataset_id", "volume_path"]:
            raise WireFormatError(f"{path}: bad manifest header {header!r}")
        for row in reader:
            if not row:
                continue
            ds, vp = row
            p = Path(vp)
            grouped.setdefault(ds, []).append(str(p if p.is_absolute() else base / p))
    if not grouped:
        raise WireFormatError(f"{path}: empty manifest")
    return grouped


def subset_plan(dataset_id: str, n_volumes: int, subset_size: int,
                n_subsets: int, seed: int) -> list[list[int]]:
    """Same seeded sampling scheme as the main toolkit (PCG64 keyed by seed
    and BLAKE2b-64 of the dataset id) so exported subset ids line up with
    its statistical feature rows."""
    digest = hashlib.blake2b(dataset_id.encode("utf-8"), digest_size=8).digest()
    mix = int.from_bytes(digest, "little")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, mix])))
    replace = n_volumes < subset_size
    return [
        [int(i) for i in rng.choice(n_volumes, size=subset_size, replace=replace)]
        for _ in range(n_subsets)
    ]
