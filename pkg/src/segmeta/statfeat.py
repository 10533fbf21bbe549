"""The 33 statistical dataset features plus the 5 task descriptor values.

Per-volume constituents (moments, entropy, median, sparsity, slice-pair
mutual information and correlation) are aggregated over a subset of volumes
into a fixed 33-slot vector; most base statistics contribute a mean (M), a
sample standard deviation (STD) and a coefficient of variation
(CVAR = STD / |M|) slot.

Conventions pinned here so every slot is finite for any valid volume:

* moments use population variance; skew = m3 / m2^1.5, excess kurtosis
  = m4 / m2^2 - 3; a constant volume (min == max) gets skew = kurtosis =
  entropy = 0 and correlation 0 per slice pair
* entropy is Shannon entropy (bits) of a histogram over [min, max]
* sparsity = fraction of voxels equal to the volume minimum
* MI / correlation relate each pair of adjacent slices; a single-slice
  volume contributes empty pair lists (summarised as 0)
* ENF input slices are middle slices resized to 32x32 by nearest neighbour
* CVAR is 0 whenever |M| < 1e-12; STD over fewer than two values is 0
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, EmptyDataError, FormatError, ShapeError
from .volume_io import Volume

N_STAT_FEATURES = 33
N_TASK_FEATURES = 5

FEATURE_NAMES = (
    "n_instances_log10",
    "voxel_value_m", "voxel_value_std", "voxel_value_cvar",
    "skew_m", "skew_std", "skew_cvar",
    "kurtosis_m", "kurtosis_std", "kurtosis_cvar",
    "entropy_m", "entropy_std", "entropy_cvar",
    "median_m", "median_std",
    "mutual_information_m", "mutual_information_std", "mutual_information_cvar",
    "mutual_information_max",
    "correlation_m", "correlation_std", "correlation_cvar",
    "sparsity_m", "sparsity_std", "sparsity_cvar",
    "slice_size_m", "slice_size_std", "slice_size_cvar",
    "n_slices_m", "n_slices_std", "n_slices_cvar",
    "equivalent_n_features",
    "noise_signal_ratio",
)

TASK_FEATURE_ORDER = (
    "modality",
    "location_dependent",
    "sphere_shaped",
    "relative_size",
    "multiple_objects",
)

NSR_CAP = 1e6
ENF_VARIANCE_FLOOR = 1e-12
ENF_GRID = 32


@dataclass(frozen=True)
class TaskSpecificFeatures:
    modality: float
    location_dependent: float
    sphere_shaped: float
    relative_size: float
    multiple_objects: float

    def __post_init__(self):
        for name in TASK_FEATURE_ORDER:
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise DataError(f"task feature {name}={v} outside [0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in TASK_FEATURE_ORDER], dtype=float)


def load_task_descriptor(path) -> TaskSpecificFeatures:
    """Parse a key=value descriptor file (one line per task feature)."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, val = line.partition("=")
            key = key.strip()
            if key not in TASK_FEATURE_ORDER:
                raise FormatError(f"{path}:{lineno}: unknown task feature {key!r}")
            if key in values:
                raise FormatError(f"{path}:{lineno}: duplicate key {key!r}")
            try:
                values[key] = float(val.strip())
            except ValueError:
                raise FormatError(f"{path}:{lineno}: bad value {val.strip()!r}") from None
    missing = [k for k in TASK_FEATURE_ORDER if k not in values]
    if missing:
        raise FormatError(f"{path}: missing task features {missing}")
    return TaskSpecificFeatures(**values)


def save_task_descriptor(t: TaskSpecificFeatures, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for name in TASK_FEATURE_ORDER:
            fh.write(f"{name}={getattr(t, name)!r}\n")


@dataclass(frozen=True)
class PerVolumeStats:
    """Per-volume constituents of the 33 aggregates.

    mid_slice32 is the flattened 32x32 nearest-neighbour resize of the
    middle slice, carried along so the aggregate step can compute ENF
    without re-reading the volume.
    """

    mean: float
    std: float
    skew: float
    kurtosis: float
    entropy: float
    median: float
    sparsity: float
    slice_size: int
    n_slices: int
    adj_mi: np.ndarray
    adj_corr: np.ndarray
    mid_slice32: np.ndarray


def entropy(hist) -> float:
    """Shannon entropy in bits of a histogram of non-negative counts."""
    h = np.asarray(hist, dtype=float)
    if h.size == 0 or (h < 0).any():
        raise DataError("histogram must hold non-negative counts")
    total = h.sum()
    if total <= 0:
        raise EmptyDataError("all-zero histogram has no distribution")
    p = h[h > 0] / total
    return float(-(p * np.log2(p)).sum())


def _hist_counts(x: np.ndarray, bins: int) -> np.ndarray:
    lo, hi = float(x.min()), float(x.max())
    if hi <= lo:
        return np.array([x.size], dtype=float)
    counts, _ = np.histogram(x, bins=bins, range=(lo, hi))
    return counts.astype(float)


def _slice_range(x: np.ndarray) -> tuple[float, float]:
    lo, hi = float(x.min()), float(x.max())
    if hi <= lo:
        # degenerate slice: park all mass in one bin
        return lo - 0.5, lo + 0.5
    return lo, hi


def mutual_information(a, b, bins: int = 64) -> float:
    """MI in bits between two equally-shaped slices, each binned over its
    own [min, max] range.  Clamped to 0 from below."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ShapeError(f"slice shapes differ: {a.shape} vs {b.shape}")
    if bins < 2:
        raise DataError("bins must be >= 2")
    joint, _, _ = np.histogram2d(
        a.ravel(), b.ravel(), bins=bins, range=[_slice_range(a), _slice_range(b)]
    )
    total = joint.sum()
    pa = joint.sum(axis=1) / total
    pb = joint.sum(axis=0) / total
    pj = joint.ravel() / total
    ha = float(-(pa[pa > 0] * np.log2(pa[pa > 0])).sum())
    hb = float(-(pb[pb > 0] * np.log2(pb[pb > 0])).sum())
    hab = float(-(pj[pj > 0] * np.log2(pj[pj > 0])).sum())
    mi = ha + hb - hab
    if mi < -1e-9:
        raise DataError(f"mutual information {mi} below clamp tolerance")
    return max(mi, 0.0)


def pearson(a, b) -> float:
    """Sample Pearson correlation; 0 when either slice has zero spread."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"slice shapes differ: {a.shape} vs {b.shape}")
    if a.min() == a.max() or b.min() == b.max():
        return 0.0
    da = a - a.mean()
    db = b - b.mean()
    denom = math.sqrt(float((da * da).sum()) * float((db * db).sum()))
    if denom == 0.0:
        return 0.0
    r = float((da * db).sum()) / denom
    return min(1.0, max(-1.0, r))


def resize_nearest(slice2d: np.ndarray, out_h: int = ENF_GRID, out_w: int = ENF_GRID) -> np.ndarray:
    """Nearest-neighbour resize: out[r, c] = in[floor(r*H/out_h), floor(c*W/out_w)]."""
    s = np.asarray(slice2d, dtype=float)
    h, w = s.shape
    rows = (np.arange(out_h) * h) // out_h
    cols = (np.arange(out_w) * w) // out_w
    return s[np.ix_(rows, cols)]


def enf(subset_slices, explained: float = 0.95) -> int:
    """Smallest number of principal components of the slice collection
    explaining at least ``explained`` of total variance; 1 when the total
    variance is below 1e-12."""
    mat = np.asarray(list(subset_slices), dtype=float)
    if mat.ndim != 2 or mat.shape[0] < 1:
        raise ShapeError("need a non-empty list of equal-length flattened slices")
    mat = mat[np.lexsort(mat.T[::-1])]  # canonical row order: input order must not matter
    centered = mat - mat.mean(axis=0, keepdims=True)
    # eigenvalues of the sample covariance via SVD; the ddof factor cancels
    # in the explained-variance ratio
    svals = np.linalg.svd(centered, compute_uv=False)
    variances = svals**2
    total = float(variances.sum())
    if total < ENF_VARIANCE_FLOOR:
        return 1
    cum = np.cumsum(variances) / total
    return int(np.searchsorted(cum, explained - 1e-12) + 1)


def nsr(entropy_m: float, mi_m: float) -> float:
    """Noise-to-signal ratio (entropy_m - mi_m) / mi_m, floored at 0 and
    capped at 1e6 when mi_m vanishes."""
    if entropy_m < 0 or mi_m < 0:
        raise DataError("entropy and MI summaries must be non-negative")
    if mi_m < 1e-9:
        return NSR_CAP
    return max(0.0, (entropy_m - mi_m) / mi_m)


def volume_stats(v: Volume, hist_bins: int = 256, mi_bins: int = 64) -> PerVolumeStats:
    """All per-volume constituents of the statistical feature vector."""
    if hist_bins < 2:
        raise DataError("hist_bins must be >= 2")
    x, y, z = v.dims
    flat = v.voxels.astype(float).ravel()
    constant = flat.min() == flat.max()

    mean = float(flat.mean())
    m2 = float(((flat - mean) ** 2).mean())
    std = math.sqrt(m2)
    if constant or m2 == 0.0:
        skew = 0.0
        kurt = 0.0
        ent = 0.0
    else:
        d = flat - mean
        m3 = float((d**3).mean())
        m4 = float((d**4).mean())
        skew = m3 / m2**1.5
        kurt = m4 / m2**2 - 3.0
        ent = entropy(_hist_counts(flat, hist_bins))

    median = float(np.median(flat))
    sparsity = float(np.count_nonzero(flat == flat.min())) / flat.size

    adj_mi = np.empty(max(z - 1, 0))
    adj_corr = np.empty(max(z - 1, 0))
    for k in range(z - 1):
        a, b = v.voxels[k], v.voxels[k + 1]
        adj_mi[k] = mutual_information(a, b, bins=mi_bins)
        adj_corr[k] = pearson(a, b)

    mid = resize_nearest(v.voxels[z // 2].astype(float)).ravel()

    return PerVolumeStats(
        mean=mean, std=std, skew=skew, kurtosis=kurt, entropy=ent,
        median=median, sparsity=sparsity, slice_size=x * y, n_slices=z,
        adj_mi=adj_mi, adj_corr=adj_corr, mid_slice32=mid,
    )


def _m_std_cvar(values) -> tuple[float, float, float]:
    # exact fsum keeps the result independent of subset ordering
    vals = [float(v) for v in values]
    n = len(vals)
    m = math.fsum(vals) / n
    s = math.sqrt(math.fsum((v - m) ** 2 for v in vals) / (n - 1)) if n > 1 else 0.0
    cvar = s / abs(m) if abs(m) >= 1e-12 else 0.0
    return m, s, cvar


def aggregate(stats: list[PerVolumeStats], n_dataset_volumes: int) -> np.ndarray:
    """Fold a subset's per-volume stats into the 33-slot feature vector,
    ordered as FEATURE_NAMES."""
    if not stats:
        raise EmptyDataError("cannot aggregate an empty subset")
    if n_dataset_volumes < 1:
        raise DataError("n_dataset_volumes must be >= 1")

    def summary(fn):
        return _m_std_cvar([fn(s) for s in stats])

    vox = summary(lambda s: s.mean)
    skew = summary(lambda s: s.skew)
    kurt = summary(lambda s: s.kurtosis)
    ent = summary(lambda s: s.entropy)
    med = summary(lambda s: s.median)
    # a volume's MI / correlation value is the mean over its adjacent pairs
    mi = summary(lambda s: float(s.adj_mi.mean()) if s.adj_mi.size else 0.0)
    corr = summary(lambda s: float(s.adj_corr.mean()) if s.adj_corr.size else 0.0)
    spars = summary(lambda s: s.sparsity)
    ssize = summary(lambda s: float(s.slice_size))
    nsl = summary(lambda s: float(s.n_slices))

    all_mi = np.concatenate([s.adj_mi for s in stats]) if any(
        s.adj_mi.size for s in stats
    ) else np.empty(0)
    mi_max = float(all_mi.max()) if all_mi.size else 0.0

    enf_val = float(enf([s.mid_slice32 for s in stats]))
    nsr_val = nsr(ent[0], mi[0])

    vec = np.array(
        [
            math.log10(n_dataset_volumes),
            *vox, *skew, *kurt, *ent,
            med[0], med[1],
            *mi, mi_max,
            *corr, *spars, *ssize, *nsl,
            enf_val, nsr_val,
        ],
        dtype=float,
    )
    assert vec.shape == (N_STAT_FEATURES,)
    if not np.isfinite(vec).all():
        raise DataError("aggregate produced a non-finite feature")
    return vec


def append_task_features(x, t: TaskSpecificFeatures) -> np.ndarray:
    """Append the five task descriptor values after the feature vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ShapeError("feature vector must be 1D")
    return np.concatenate([x, t.as_array()])


def features_for_plan(per_volume, plan, n_dataset_volumes: int,
                      task: TaskSpecificFeatures) -> np.ndarray:
    """One 38-column row per subset of the plan (33 stats + 5 task values)."""
    rows = [
        append_task_features(aggregate([per_volume[i] for i in subset], n_dataset_volumes), task)
        for subset in plan.subsets
    ]
    return np.vstack(rows)
