"""Binarization and channel selection for externally produced 7x7 feature maps.

MLTEN on-disk layout (header lines are LF-terminated ASCII):

    MLTEN 1
    shape: Z 7 7
    dataset: <dataset_id>
    subset: <integer>
    <empty line>
    Z*49 little-endian IEEE-754 float32, channel-major

A tensor holds one averaged map per encoder channel for one (dataset,
subset) pair; Z is 512, 2048 or 1024 depending on the encoder family.

Post-processing is two fitted stages, both trained on training datasets only:

1. Binarization: a channel is *informative* when its per-dataset mean maps
   correlate weakly across training datasets (mean absolute pairwise Pearson
   below alpha).  A sample's bit is 1 iff the channel is informative and the
   sample's mean activation exceeds the training median for that channel.
2. Selection: one-vs-rest linear hinge classifiers (dataset identity as the
   class) score channels by their largest absolute weight; channels at or
   above the mean importance are kept.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    FormatError,
    InsufficientDataError,
    ShapeError,
    TruncationError,
)

MLTEN_MAGIC = "MLTEN 1"
VALID_CHANNELS = (512, 2048, 1024)
MAP_SIZE = 49

# selector training schedule (full-batch subgradient descent, deterministic);
# the L2 term acts on weights only, so channel weight that merely mimics the
# unregularized bias decays away given enough iterations
SELECTOR_ITERS = 2000
SELECTOR_LR = 0.5
SELECTOR_LR_DECAY = 0.01
SELECTOR_L2 = 0.05


@dataclass(frozen=True)
class FeatureTensor:
    channels: int
    maps: np.ndarray  # (channels, 49) float32
    dataset_id: str
    subset_id: int


def tensor_from_maps(maps, dataset_id: str, subset_id: int,
                     allow_any_channels: bool = False) -> FeatureTensor:
    m = np.ascontiguousarray(maps, dtype="<f4")
    if m.ndim == 3 and m.shape[1:] == (7, 7):
        m = m.reshape(m.shape[0], MAP_SIZE)
    if m.ndim != 2 or m.shape[1] != MAP_SIZE:
        raise ShapeError(f"maps must be (Z, 49) or (Z, 7, 7), got {m.shape}")
    if m.shape[0] not in VALID_CHANNELS and not allow_any_channels:
        raise ShapeError(f"channel count {m.shape[0]} not in {VALID_CHANNELS}")
    if not np.isfinite(m).all():
        raise ShapeError("maps contain non-finite entries")
    m.setflags(write=False)
    return FeatureTensor(channels=m.shape[0], maps=m,
                         dataset_id=dataset_id, subset_id=subset_id)


def ingest_tensor(path) -> FeatureTensor:
    path = Path(path)
    with open(path, "rb") as fh:
        lines = [fh.readline() for _ in range(5)]
        payload = fh.read()

    def text(i):
        try:
            return lines[i].decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{path}: header line {i + 1} is not UTF-8") from None

    if text(0) != MLTEN_MAGIC + "\n":
        raise FormatError(f"{path}: line 1 must be {MLTEN_MAGIC!r}, got {text(0)!r}")
    shape_line = text(1)
    if not shape_line.startswith("shape: "):
        raise FormatError(f"{path}: line 2 malformed, got {shape_line!r}")
    parts = shape_line[len("shape: "):].split()
    if len(parts) != 3 or not all(p.isdigit() for p in parts):
        raise FormatError(f"{path}: line 2 must read 'shape: Z 7 7', got {shape_line!r}")
    z, h, w = (int(p) for p in parts)
    if (h, w) != (7, 7):
        raise FormatError(f"{path}: maps must be 7x7, got {h}x{w}")
    if z not in VALID_CHANNELS:
        raise ShapeError(f"{path}: channel count {z} not in {VALID_CHANNELS}")
    ds_line = text(2)
    if not ds_line.startswith("dataset: ") or not ds_line.endswith("\n"):
        raise FormatError(f"{path}: line 3 malformed, got {ds_line!r}")
    dataset_id = ds_line[len("dataset: "):-1]
    sub_line = text(3)
    if not sub_line.startswith("subset: "):
        raise FormatError(f"{path}: line 4 malformed, got {sub_line!r}")
    try:
        subset_id = int(sub_line[len("subset: "):])
    except ValueError:
        raise FormatError(f"{path}: line 4 subset must be an integer") from None
    if text(4) != "\n":
        raise FormatError(f"{path}: line 5 must be empty")

    expected = z * MAP_SIZE * 4
    if len(payload) != expected:
        raise TruncationError(
            f"{path}: payload holds {len(payload)} bytes, header promises {expected}"
        )
    maps = np.frombuffer(payload, dtype="<f4").reshape(z, MAP_SIZE)
    if not np.isfinite(maps).all():
        raise FormatError(f"{path}: payload contains non-finite values")
    return FeatureTensor(channels=z, maps=maps, dataset_id=dataset_id, subset_id=subset_id)


def write_tensor(t: FeatureTensor, path) -> None:
    maps = np.ascontiguousarray(t.maps, dtype="<f4")
    if maps.shape != (t.channels, MAP_SIZE):
        raise ShapeError(f"maps shape {maps.shape} does not match channels {t.channels}")
    header = (
        f"{MLTEN_MAGIC}\nshape: {t.channels} 7 7\n"
        f"dataset: {t.dataset_id}\nsubset: {t.subset_id}\n\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8"))
        fh.write(maps.tobytes())


@dataclass(frozen=True)
class BinarizationModel:
    alpha: float
    informative: np.ndarray    # (z,) bool
    channel_median: np.ndarray  # (z,) float64


@dataclass(frozen=True)
class SelectionModel:
    kept_indices: np.ndarray  # strictly increasing channel indices
    importance: np.ndarray    # (z,) float64, >= 0
    tau: float


def _channel_means(t: FeatureTensor) -> np.ndarray:
    return t.maps.mean(axis=1, dtype=np.float64)


def fit_binarizer(training: dict, alpha: float = 0.80) -> BinarizationModel:
    """Fit channel informativeness and per-channel medians on training
    datasets only.

    For channel c the per-dataset mean map is averaged over that dataset's
    tensors; rho_c is the mean absolute Pearson correlation over all dataset
    pairs (pairs involving a constant map count as 1).  Channels with
    rho_c < alpha are informative.
    """
    if not (0.0 < alpha <= 1.0):
        raise ConfigError(f"alpha must be in (0, 1], got {alpha}")
    ids = list(training.keys())
    if len(ids) < 2:
        raise InsufficientDataError("binarizer needs at least 2 training datasets")
    zs = {t.channels for ts in training.values() for t in ts}
    if len(zs) != 1:
        raise ShapeError(f"mixed channel counts across training tensors: {sorted(zs)}")
    z = zs.pop()
    for ds_id in ids:
        if not training[ds_id]:
            raise InsufficientDataError(f"dataset {ds_id!r} has no tensors")

    # order-independent: datasets processed in sorted id order
    ids = sorted(ids)
    mean_maps = np.stack(
        [np.mean([t.maps for t in training[d]], axis=0, dtype=np.float64) for d in ids]
    )  # (D, z, 49)

    centered = mean_maps - mean_maps.mean(axis=2, keepdims=True)
    norms = np.sqrt((centered**2).sum(axis=2))  # (D, z)
    spread = mean_maps.max(axis=2) - mean_maps.min(axis=2)
    constant = spread == 0.0

    n_pairs = len(ids) * (len(ids) - 1) // 2
    rho = np.zeros(z)
    for a in range(len(ids)):
        for b in range(a + 1, len(ids)):
            num = (centered[a] * centered[b]).sum(axis=1)
            den = norms[a] * norms[b]
            pair_ok = ~(constant[a] | constant[b]) & (den > 0)
            r = np.ones(z)
            r[pair_ok] = np.clip(np.abs(num[pair_ok] / den[pair_ok]), 0.0, 1.0)
            rho += r
    rho /= n_pairs

    all_means = np.stack([_channel_means(t) for d in ids for t in training[d]])
    channel_median = np.median(all_means, axis=0)

    return BinarizationModel(alpha=alpha, informative=rho < alpha,
                             channel_median=channel_median)


def binarize(t: FeatureTensor, m: BinarizationModel) -> np.ndarray:
    """Per-channel bits: 1 iff the channel is informative and the tensor's
    mean activation strictly exceeds the training median."""
    if t.channels != m.informative.shape[0]:
        raise ShapeError(
            f"tensor has {t.channels} channels, model fitted for {m.informative.shape[0]}"
        )
    means = _channel_means(t)
    return (m.informative & (means > m.channel_median)).astype(float)


def fit_selector(vectors, labels) -> SelectionModel:
    """Score channels with one-vs-rest linear hinge classifiers over dataset
    identity and keep those at or above the mean importance.

    Training is full-batch subgradient descent on
    mean(max(0, 1 - y*(Xw + b))) + (L2/2)*||w||^2 with a 1/(1 + decay*t)
    step schedule; it is deterministic (zero init, no shuffling).
    """
    X = np.asarray(vectors, dtype=float)
    if X.ndim != 2:
        raise ShapeError("vectors must form a 2D (n, z) array of equal lengths")
    labels = list(labels)
    if len(labels) != X.shape[0]:
        raise ShapeError(f"{X.shape[0]} vectors but {len(labels)} labels")
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise InsufficientDataError("selector needs at least 2 distinct dataset labels")

    n, z = X.shape
    importance = np.zeros(z)
    for cls in classes:
        y = np.where(np.asarray(labels) == cls, 1.0, -1.0)
        w = np.zeros(z)
        b = 0.0
        for it in range(SELECTOR_ITERS):
            margins = y * (X @ w + b)
            viol = margins < 1.0
            grad_w = SELECTOR_L2 * w - (X[viol] * y[viol, None]).sum(axis=0) / n
            grad_b = -y[viol].sum() / n
            lr = SELECTOR_LR / (1.0 + SELECTOR_LR_DECAY * it)
            w -= lr * grad_w
            b -= lr * grad_b
        importance = np.maximum(importance, np.abs(w))

    tau = float(importance.mean())
    kept = np.flatnonzero((importance >= tau) & (importance > 0))
    if kept.size == 0:
        # degenerate case (e.g. identical vectors): keep one channel
        kept = np.array([int(np.argmax(importance))])
    return SelectionModel(kept_indices=kept, importance=importance, tau=tau)


def select(v, m: SelectionModel) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != m.importance.shape:
        raise ShapeError(
            f"vector length {v.shape} does not match importance length {m.importance.shape}"
        )
    return v[m.kept_indices]


# --- model archives ---------------------------------------------------------

def save_binarizer(m: BinarizationModel, path) -> None:
    z = m.informative.shape[0]
    header = f"MLBZR 1\nchannels: {z}\nalpha: {m.alpha!r}\n\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(m.informative.astype("<u1").tobytes())
        fh.write(np.ascontiguousarray(m.channel_median, dtype="<f8").tobytes())


def load_binarizer(path) -> BinarizationModel:
    with open(path, "rb") as fh:
        if fh.readline() != b"MLBZR 1\n":
            raise FormatError(f"{path}: bad binarizer magic")
        z = int(fh.readline().decode("ascii").split(":")[1])
        alpha = float(fh.readline().decode("ascii").split(":")[1])
        fh.readline()
        informative = np.frombuffer(fh.read(z), dtype="<u1").astype(bool)
        channel_median = np.frombuffer(fh.read(z * 8), dtype="<f8")
    if informative.shape != (z,) or channel_median.shape != (z,):
        raise TruncationError(f"{path}: binarizer payload shorter than header promises")
    return BinarizationModel(alpha=alpha, informative=informative,
                             channel_median=channel_median)


def save_selector(m: SelectionModel, path) -> None:
    z = m.importance.shape[0]
    kept = " ".join(str(int(i)) for i in m.kept_indices)
    header = f"MLSEL 1\nchannels: {z}\ntau: {m.tau!r}\nkept: {kept}\n\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(m.importance, dtype="<f8").tobytes())


def load_selector(path) -> SelectionModel:
    with open(path, "rb") as fh:
        if fh.readline() != b"MLSEL 1\n":
            raise FormatError(f"{path}: bad selector magic")
        z = int(fh.readline().decode("ascii").split(":")[1])
        tau = float(fh.readline().decode("ascii").split(":")[1])
        kept_txt = fh.readline().decode("ascii").split(":", 1)[1].split()
        fh.readline()
        importance = np.frombuffer(fh.read(z * 8), dtype="<f8")
    if importance.shape != (z,):
        raise TruncationError(f"{path}: selector payload shorter than header promises")
    kept = np.array([int(s) for s in kept_txt], dtype=int)
    return SelectionModel(kept_indices=kept, importance=importance, tau=tau)


class DeepFeatureSource:
    """Per-fold deep feature pipeline for cross-validation.

    Holds raw tensors and task descriptors for every dataset; fit() trains
    the binarizer and selector on the given training datasets only, and
    vectors() then yields selected binary vectors with the five task values
    appended.  Held-out labels are never visible here.
    """

    def __init__(self, tensors_by_dataset: dict, task_by_dataset: dict,
                 alpha: float = 0.80):
        self.tensors = {d: list(ts) for d, ts in tensors_by_dataset.items()}
        self.tasks = dict(task_by_dataset)
        self.alpha = alpha
        self.binarizer: BinarizationModel | None = None
        self.selector: SelectionModel | None = None

    def fit(self, train_ids):
        training = {d: self.tensors[d] for d in train_ids}
        self.binarizer = fit_binarizer(training, alpha=self.alpha)
        bits, labels = [], []
        for d in sorted(train_ids):
            for t in self.tensors[d]:
                bits.append(binarize(t, self.binarizer))
                labels.append(d)
        self.selector = fit_selector(np.vstack(bits), labels)
        return self.binarizer, self.selector

    def vectors(self, dataset_id: str) -> np.ndarray:
        from .statfeat import append_task_features

        if self.binarizer is None or self.selector is None:
            raise InsufficientDataError("DeepFeatureSource.fit must run before vectors()")
        task = self.tasks[dataset_id]
        rows = [
            append_task_features(select(binarize(t, self.binarizer), self.selector), task)
            for t in self.tensors[dataset_id]
        ]
        return np.vstack(rows)
