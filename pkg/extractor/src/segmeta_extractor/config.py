"""Config files for the extractor share the toolkit grammar: flat
``key = value`` lines, ``#`` comments, strict keys.  All keys are top
level here:

    architecture = vgg16 | resnet50 | mobilenetv1
    percentile = 10
    epochs = 2
    lr = 1e-4
    batch = 4
    resize = 224
    seed = 0
    pretrained = false
"""

from __future__ import annotations

from .pipeline import ExtractorConfig


class ExtractorConfigError(Exception):
    pass


_PARSERS = {
    "architecture": str,
    "percentile": float,
    "epochs": int,
    "lr": float,
    "batch": int,
    "resize": int,
    "seed": int,
    "pretrained": lambda v: {"true": True, "false": False}[v.lower()],
}


def parse_extractor_config(path) -> ExtractorConfig:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ExtractorConfigError(f"{path}:{lineno}: expected key = value")
            key, _, val = line.partition("=")
            key = key.strip().lower()
            if key not in _PARSERS:
                raise ExtractorConfigError(f"{path}:{lineno}: unknown key {key!r}")
            if key in values:
                raise ExtractorConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            try:
                values[key] = _PARSERS[key](val.strip())
            except (ValueError, KeyError):
                raise ExtractorConfigError(
                    f"{path}:{lineno}: bad value {val.strip()!r} for {key}"
                ) from None
    try:
        return ExtractorConfig(**values)
    except ValueError as exc:
        raise ExtractorConfigError(f"{path}: {exc}") from None
