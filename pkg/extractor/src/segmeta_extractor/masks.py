"""Auxiliary segmentation targets from intensity percentiles.

The mask is a pure function of intensities, so no ground-truth labels are
ever involved: voxels strictly above the volume's p-th percentile (numpy
linear-interpolation convention) are foreground.  A constant volume yields
an all-zero mask.
"""

from __future__ import annotations

import numpy as np


def make_percentile_mask(voxels: np.ndarray, percentile: float = 10.0) -> np.ndarray:
    if not (0.0 < percentile < 100.0):
        raise ValueError(f"percentile must lie in (0, 100), got {percentile}")
    threshold = np.percentile(voxels.astype(np.float64), percentile)
    return (voxels > threshold).astype(np.float32)
