"""Fine-tuning and feature extraction.

Images are 2D slices of the manifest's volumes: each slice is min-max
normalized to [0, 1], replicated to three channels, resized bilinearly to
the working resolution, and normalized with the ImageNet statistics the
encoders expect.  Targets are percentile masks of the same slices, resized
alongside (nearest).

Fine-tuning trains the encoder-decoder as a binary segmenter with BCE loss
and Adam; the decoder is dropped afterwards.  Extraction averages the
encoder's bottleneck maps over all slices of a subset's volumes and writes
one MLTEN tensor per (dataset, subset).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .encoders import ENCODER_CHANNELS, build_encoder
from .masks import make_percentile_mask
from .mlio import read_mlvol, subset_plan, write_mlten
from .unet import UnetSegmenter

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# exports must be 7x7, which the stride-32 bottleneck produces at 224;
# the config's resize only governs the fine-tuning working resolution
EXPORT_RESOLUTION = 224


@dataclass
class ExtractorConfig:
    architecture: str = "vgg16"
    percentile: float = 10.0
    epochs: int = 2
    lr: float = 1e-4
    batch: int = 4
    resize: int = 224
    seed: int = 0
    pretrained: bool = False

    def __post_init__(self):
        if self.architecture not in ENCODER_CHANNELS:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if not (0.0 < self.percentile < 100.0):
            raise ValueError(f"percentile must lie in (0, 100), got {self.percentile}")
        if self.epochs < 0 or self.batch < 1 or self.lr <= 0 or self.resize < 32:
            raise ValueError("bad fine-tuning configuration")

    @property
    def channels(self) -> int:
        return ENCODER_CHANNELS[self.architecture]


def slices_of(voxels: np.ndarray) -> list[np.ndarray]:
    return [voxels[k].astype(np.float32) for k in range(voxels.shape[0])]


def to_model_input(img: np.ndarray, resize: int) -> torch.Tensor:
    """(H, W) slice -> normalized (3, resize, resize) tensor."""
    t = torch.from_numpy(np.ascontiguousarray(img, dtype=np.float32))
    lo, hi = float(t.min()), float(t.max())
    t = (t - lo) / (hi - lo) if hi > lo else torch.zeros_like(t)
    t = F.interpolate(t[None, None], size=(resize, resize), mode="bilinear",
                      align_corners=False)[0]
    t = t.repeat(3, 1, 1)
    mean = torch.tensor(IMAGENET_MEAN).view(3, 1, 1)
    std = torch.tensor(IMAGENET_STD).view(3, 1, 1)
    return (t - mean) / std


def mask_input(mask: np.ndarray, resize: int) -> torch.Tensor:
    t = torch.from_numpy(np.ascontiguousarray(mask, dtype=np.float32))
    return F.interpolate(t[None, None], size=(resize, resize), mode="nearest")[0]


def build_training_set(images: list[np.ndarray], percentile: float,
                       resize: int) -> tuple[torch.Tensor, torch.Tensor]:
    xs = torch.stack([to_model_input(im, resize) for im in images])
    ys = torch.stack([mask_input(make_percentile_mask(im, percentile), resize)
                      for im in images])
    return xs, ys


def dataset_loss(net: nn.Module, xs: torch.Tensor, ys: torch.Tensor,
                 batch: int) -> float:
    net.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for start in range(0, xs.shape[0], batch):
            xb, yb = xs[start:start + batch], ys[start:start + batch]
            logits = net(xb)
            total += F.binary_cross_entropy_with_logits(
                logits, yb, reduction="sum").item()
            count += yb.numel()
    return total / count


def finetune(images: list[np.ndarray], config: ExtractorConfig,
             loss_log: list | None = None) -> nn.Module:
    """Fine-tune an encoder on percentile-mask segmentation and return the
    encoder alone.  loss_log, when given, receives the full-set BCE before
    and after each epoch."""
    torch.manual_seed(config.seed)
    encoder = build_encoder(config.architecture, pretrained=config.pretrained)
    net = UnetSegmenter(encoder)
    xs, ys = build_training_set(images, config.percentile, config.resize)
    optimizer = torch.optim.Adam(net.parameters(), lr=config.lr)
    gen = torch.Generator().manual_seed(config.seed)

    if loss_log is not None:
        loss_log.append(dataset_loss(net, xs, ys, config.batch))
    for epoch in range(config.epochs):
        net.train()
        order = torch.randperm(xs.shape[0], generator=gen)
        for start in range(0, xs.shape[0], config.batch):
            rows = order[start:start + config.batch]
            optimizer.zero_grad()
            logits = net(xs[rows])
            loss = F.binary_cross_entropy_with_logits(logits, ys[rows])
            if not torch.isfinite(loss):
                raise RuntimeError(f"fine-tuning diverged at epoch {epoch}")
            loss.backward()
            optimizer.step()
        if loss_log is not None:
            loss_log.append(dataset_loss(net, xs, ys, config.batch))
    encoder.eval()
    return encoder


@torch.no_grad()
def extract_maps(images: list[np.ndarray], encoder: nn.Module,
                 resize: int = 224, batch: int = 4) -> np.ndarray:
    """Bottleneck maps averaged over the images; (z, 7, 7) at resize 224."""
    if not images:
        raise ValueError("no images to extract from")
    encoder.eval()
    xs = torch.stack([to_model_input(im, resize) for im in images])
    acc = None
    for start in range(0, xs.shape[0], batch):
        _, bottom = encoder.stages(xs[start:start + batch])
        s = bottom.sum(dim=0)
        acc = s if acc is None else acc + s
    return (acc / xs.shape[0]).numpy()


def export_dataset_tensors(dataset_id: str, volume_paths: list[str],
                           encoder: nn.Module, out_dir, subset_size: int,
                           n_subsets: int, seed: int, batch: int = 4) -> list:
    """One MLTEN file per subset: maps averaged over all slices of the
    subset's volumes, always extracted at EXPORT_RESOLUTION so the maps are
    7x7.  Subset indices follow the shared sampling scheme."""
    plan = subset_plan(dataset_id, len(volume_paths), subset_size, n_subsets, seed)
    slice_cache = {}
    written = []
    for subset_id, subset in enumerate(plan):
        images = []
        for vi in subset:
            if vi not in slice_cache:
                slice_cache[vi] = slices_of(read_mlvol(volume_paths[vi]))
            images.extend(slice_cache[vi])
        maps = extract_maps(images, encoder, resize=EXPORT_RESOLUTION, batch=batch)
        path = f"{out_dir}/{dataset_id}_{subset_id:03d}.mlten"
        write_mlten(maps, dataset_id, subset_id, path)
        written.append(path)
    return written
