"""
Experiment configuration files (TOML).

Schema::

    [dataset]
    names = ["ml100k"]          # or name = "ml100k"
    data_dir = "data"           # optional; defaults to $RECBENCH_DATA or ./data
    h = 5                       # optional h-core override
    threshold = 4.0             # optional positivity threshold override

    [model.ease]                # one table per model; keys pin hyper-parameters
    reg = 250.0                 # pinned keys are removed from the search space

    [protocol]
    names = ["strong-gen"]      # strong-gen, loo-memorization, rerank-memorization,
                                # subgroups, diversity, sci
    seed = 0
    folds = 5
    loo_mask = true

    [hpo]
    trials = 50
    strategy = "random"         # or "tpe"
    shared = false              # reuse the round-0 search in every round

Unknown sections or keys are errors.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .data import DATASETS
from .hpo import STRATEGIES
from .models import MODELS
from .protocols import PROTOCOLS


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    datasets: list[str] = field(default_factory=lambda: ["ml100k"])
    models: dict[str, dict] = field(default_factory=dict)
    protocols: list[str] = field(default_factory=lambda: ["strong-gen"])
    data_dir: str | None = None
    h: int | None = None
    threshold: float | None = None
    seed: int = 0
    folds: int = 5
    loo_mask: bool = True
    trials: int = 50
    strategy: str = "random"
    shared: bool = False

    def validate(self):
        for d in self.datasets:
            if d not in DATASETS:
                raise ConfigError(f"unknown dataset {d!r}; choose from {sorted(DATASETS)}")
        if not self.models:
            raise ConfigError("no models selected")
        for name, params in self.models.items():
            if name not in MODELS:
                raise ConfigError(f"unknown model {name!r}; choose from {sorted(MODELS)}")
            bad = set(params) - set(MODELS[name].defaults())
            if bad:
                raise ConfigError(f"[model.{name}]: unknown keys {sorted(bad)}")
        for p in self.protocols:
            if p not in PROTOCOLS:
                raise ConfigError(f"unknown protocol {p!r}; choose from {list(PROTOCOLS)}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.trials < 1:
            raise ConfigError("hpo.trials must be at least 1")
        if self.folds < 3:
            raise ConfigError("need at least 3 folds")
        return self

    def resolved_data_dir(self) -> Path:
        if self.data_dir:
            return Path(self.data_dir)
        return Path(os.environ.get("RECBENCH_DATA", "data"))

    def as_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {
    "dataset": {"name", "names", "data_dir", "h", "threshold"},
    "model": None,
    "protocol": {"name", "names", "seed", "folds", "loo_mask"},
    "hpo": {"trials", "strategy", "shared"},
}


def _names(sec: dict, where: str) -> list[str] | None:
    if "name" in sec and "names" in sec:
        raise ConfigError(f"[{where}]: give either name or names")
    if "name" in sec:
        return [sec["name"]]
    if "names" in sec:
        if not isinstance(sec["names"], list):
            raise ConfigError(f"[{where}]: names must be a list")
        return list(sec["names"])
    return None


def parse_config(doc: dict) -> ExperimentConfig:
    for sec, body in doc.items():
        if sec not in _SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
        allowed = _SECTIONS[sec]
        if allowed is not None:
            if not isinstance(body, dict):
                raise ConfigError(f"[{sec}] must be a table")
            bad = set(body) - allowed
            if bad:
                raise ConfigError(f"[{sec}]: unknown keys {sorted(bad)}")
    cfg = ExperimentConfig()
    ds = doc.get("dataset", {})
    cfg.datasets = _names(ds, "dataset") or cfg.datasets
    cfg.data_dir = ds.get("data_dir")
    cfg.h = ds.get("h")
    cfg.threshold = ds.get("threshold")
    models = doc.get("model", {})
    if not isinstance(models, dict) or any(not isinstance(v, dict) for v in models.values()):
        raise ConfigError("[model.<name>] sections must be tables")
    cfg.models = {k: dict(v) for k, v in models.items()}
    pr = doc.get("protocol", {})
    cfg.protocols = _names(pr, "protocol") or cfg.protocols
    cfg.seed = int(pr.get("seed", cfg.seed))
    cfg.folds = int(pr.get("folds", cfg.folds))
    cfg.loo_mask = bool(pr.get("loo_mask", cfg.loo_mask))
    hp = doc.get("hpo", {})
    cfg.trials = int(hp.get("trials", cfg.trials))
    cfg.strategy = str(hp.get("strategy", cfg.strategy))
    cfg.shared = bool(hp.get("shared", cfg.shared))
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path, "rb") as f:
        try:
            doc = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}") from None
    return parse_config(doc)
