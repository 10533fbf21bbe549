"""segmeta-extractor: encoder fine-tuning on percentile masks and 7x7
feature-map export in MLTEN format."""

__version__ = "0.1.0"
