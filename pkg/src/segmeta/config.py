"""Strict run configuration: flat ``key = value`` lines with ``#`` comments
and ``[section]`` headers.

Accepted keys (everything else is rejected):

    subset_size, n_subsets, hist_bins, mi_bins, alpha, seed
    [svr]  c, epsilon, tol, max_iter
    [mlp]  epochs, batch, lr, dropout
    [cv]   train, test, mode, folds

Full-scale defaults: 20-volume subsets, 100 subsets per dataset, alpha
0.80, SVR C=1 eps=0.1, 7/3 random cross-validation.  All values are
overridable so scaled-down runs are first-class.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .errors import ConfigError


@dataclass(frozen=True)
class SvrConfig:
    c: float = 1.0
    epsilon: float = 0.1
    tol: float = 1e-3
    max_iter: int = 100_000

    def as_params(self) -> dict:
        return {"C": self.c, "epsilon": self.epsilon, "tol": self.tol,
                "max_iter": self.max_iter}


@dataclass(frozen=True)
class MlpConfig:
    epochs: int = 200
    batch: int = 32
    lr: float = 1e-3
    dropout: float = 0.5

    def as_params(self) -> dict:
        return {"epochs": self.epochs, "batch": self.batch, "lr": self.lr,
                "dropout_rate": self.dropout}


@dataclass(frozen=True)
class CvConfig:
    train: int = 7
    test: int = 3
    mode: str = "random"
    folds: int = 10


@dataclass(frozen=True)
class RunConfig:
    subset_size: int = 20
    n_subsets: int = 100
    hist_bins: int = 256
    mi_bins: int = 64
    alpha: float = 0.80
    seed: int = 0
    svr: SvrConfig = field(default_factory=SvrConfig)
    mlp: MlpConfig = field(default_factory=MlpConfig)
    cv: CvConfig = field(default_factory=CvConfig)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=seed)


_SCHEMA = {
    "": {
        "subset_size": ("int", lambda v: v >= 1, ">= 1"),
        "n_subsets": ("int", lambda v: v >= 1, ">= 1"),
        "hist_bins": ("int", lambda v: v >= 2, ">= 2"),
        "mi_bins": ("int", lambda v: v >= 2, ">= 2"),
        "alpha": ("float", lambda v: 0.0 < v <= 1.0, "in (0, 1]"),
        "seed": ("int", lambda v: v >= 0, ">= 0"),
    },
    "svr": {
        "c": ("float", lambda v: v > 0, "> 0"),
        "epsilon": ("float", lambda v: v >= 0, ">= 0"),
        "tol": ("float", lambda v: v > 0, "> 0"),
        "max_iter": ("int", lambda v: v >= 1, ">= 1"),
    },
    "mlp": {
        "epochs": ("int", lambda v: v >= 0, ">= 0"),
        "batch": ("int", lambda v: v >= 1, ">= 1"),
        "lr": ("float", lambda v: v > 0, "> 0"),
        "dropout": ("float", lambda v: 0.0 <= v < 1.0, "in [0, 1)"),
    },
    "cv": {
        "train": ("int", lambda v: v >= 1, ">= 1"),
        "test": ("int", lambda v: v >= 1, ">= 1"),
        "mode": ("str", lambda v: v in ("random", "exhaustive"),
                 "one of random, exhaustive"),
        "folds": ("int", lambda v: v >= 1, ">= 1"),
    },
}


def parse_config(path) -> RunConfig:
    values: dict = {"": {}, "svr": {}, "mlp": {}, "cv": {}}
    section = ""
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
                if section not in _SCHEMA or section == "":
                    raise ConfigError(f"{path}:{lineno}: unknown section [{section}]")
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
            key, _, val = line.partition("=")
            key = key.strip().lower()
            val = val.strip()
            schema = _SCHEMA[section]
            if key not in schema:
                where = f"[{section}]" if section else "top level"
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r} at {where}")
            if key in values[section]:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            typ, check, desc = schema[key]
            try:
                if typ == "int":
                    parsed = int(val)
                elif typ == "float":
                    parsed = float(val)
                else:
                    parsed = val
            except ValueError:
                raise ConfigError(
                    f"{path}:{lineno}: {key} expects {typ}, got {val!r}"
                ) from None
            if not check(parsed):
                raise ConfigError(f"{path}:{lineno}: {key} must be {desc}, got {parsed}")
            values[section][key] = parsed

    return RunConfig(
        **values[""],
        svr=SvrConfig(**values["svr"]),
        mlp=MlpConfig(**values["mlp"]),
        cv=CvConfig(**values["cv"]),
    )


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            f"subset_size = {cfg.subset_size}\n"
            f"n_subsets = {cfg.n_subsets}\n"
            f"hist_bins = {cfg.hist_bins}\n"
            f"mi_bins = {cfg.mi_bins}\n"
            f"alpha = {cfg.alpha!r}\n"
            f"seed = {cfg.seed}\n\n"
            f"[svr]\nc = {cfg.svr.c!r}\nepsilon = {cfg.svr.epsilon!r}\n"
            f"tol = {cfg.svr.tol!r}\nmax_iter = {cfg.svr.max_iter}\n\n"
            f"[mlp]\nepochs = {cfg.mlp.epochs}\nbatch = {cfg.mlp.batch}\n"
            f"lr = {cfg.mlp.lr!r}\ndropout = {cfg.mlp.dropout!r}\n\n"
            f"[cv]\ntrain = {cfg.cv.train}\ntest = {cfg.cv.test}\n"
            f"mode = {cfg.cv.mode}\nfolds = {cfg.cv.folds}\n"
        )
