"""segmeta: dataset-level meta-features and per-method score regression.

Pipeline: volumes (MLVOL) -> subset sampling -> statistical or deep feature
vectors -> one regressor per segmentation method -> cross-validated MAE /
NMAE / rank-correlation reports.
"""

__version__ = "0.1.0"

from .errors import SegmetaError

__all__ = ["SegmetaError", "__version__"]
