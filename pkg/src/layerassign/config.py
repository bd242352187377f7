"""Run configuration: one JSON document describing a complete experiment.

Unknown keys anywhere in the document are rejected.  Example::

    {
      "seed": 0,
      "spec": {"n": 3, "channel_plan": [8, 16, 32], "target_depth": 8},
      "train": {"epochs": 10, "base_lr": 0.05},
      "search": {"step_epochs": 10, "warmup_epochs": 5},
      "data": {"synthetic": {"samples_per_class": 250, "noise": 1.2}},
      "oracle": {"depth_lo": 4, "depth_hi": 8}
    }
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import DatasetSplit, generate_synthetic_task, load_dataset
from .nn.network import SearchSpaceSpec
from .nn.training import TrainConfig
from .search import SearchConfig

__all__ = ["ConfigError", "SyntheticTask", "DataSource", "OracleSettings", "SurrogateSettings", "RunConfig", "load_config"]


class ConfigError(ValueError):
    pass


def _strict(cls, d: dict, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass
class SyntheticTask:
    num_classes: int = 8
    samples_per_class: int = 250
    noise: float = 1.2
    seed: int = 0


@dataclass
class DataSource:
    synthetic: SyntheticTask | None = None
    path: str | None = None
    format: str | None = None

    def load(self, spec: SearchSpaceSpec) -> DatasetSplit:
        if self.path is not None:
            split = load_dataset(self.path, self.format, spec.num_classes)
        else:
            s = self.synthetic or SyntheticTask(num_classes=spec.num_classes)
            split = generate_synthetic_task(s.seed, s.num_classes, s.samples_per_class, spec.input_shape, s.noise)
        if split.shape != spec.input_shape:
            raise ConfigError(f"dataset images are {split.shape}, search space expects {spec.input_shape}")
        if split.num_classes > spec.num_classes:
            raise ConfigError(f"dataset has {split.num_classes} classes, search space {spec.num_classes}")
        return split


@dataclass
class OracleSettings:
    depth_lo: int = 4
    depth_hi: int = 8
    workers: int = 1
    repeats: int = 1


@dataclass
class SurrogateSettings:
    kind: str = "planted"
    seed: int = 0
    trap_depth: int | None = None


SEARCH_KEYS = [f.name for f in dataclasses.fields(SearchConfig) if f.name not in ("spec", "seed")]


@dataclass
class RunConfig:
    seed: int = 0
    spec: SearchSpaceSpec = field(default_factory=SearchSpaceSpec)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=10, base_lr=0.05, milestones=(6, 9)))
    search: dict = field(default_factory=dict)
    data: DataSource = field(default_factory=DataSource)
    oracle: OracleSettings = field(default_factory=OracleSettings)
    surrogate: SurrogateSettings = field(default_factory=SurrogateSettings)

    def search_config(self) -> SearchConfig:
        return SearchConfig(spec=self.spec, seed=self.seed, **self.search)

    def to_dict(self) -> dict:
        def plain(v):
            if dataclasses.is_dataclass(v):
                return {k: plain(x) for k, x in dataclasses.asdict(v).items()}
            if isinstance(v, dict):
                return {k: plain(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [plain(x) for x in v]
            return v

        d = {
            "seed": self.seed,
            "spec": self.spec.to_dict(),
            "train": plain(self.train),
            "search": {k: plain(v) for k, v in self.search_config().to_dict().items() if k in SEARCH_KEYS},
            "data": plain(self.data),
            "oracle": plain(self.oracle),
            "surrogate": plain(self.surrogate),
        }
        return d

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(d) - {f.name for f in dataclasses.fields(cls)})
        if unknown:
            raise ConfigError(f"unknown key(s) in config: {', '.join(unknown)}")
        kw = {}
        if "seed" in d:
            kw["seed"] = int(d["seed"])
        if "spec" in d:
            try:
                kw["spec"] = SearchSpaceSpec.from_dict(d["spec"])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"spec: {exc}") from None
        if "train" in d:
            kw["train"] = _strict(TrainConfig, d["train"], "train")
        if "search" in d:
            bad = sorted(set(d["search"]) - set(SEARCH_KEYS))
            if bad:
                raise ConfigError(f"unknown key(s) in search: {', '.join(bad)}")
            kw["search"] = dict(d["search"])
        if "data" in d:
            src = dict(d["data"])
            if src.get("synthetic") is not None:
                src["synthetic"] = _strict(SyntheticTask, src["synthetic"], "data.synthetic")
            kw["data"] = _strict(DataSource, src, "data")
        if "oracle" in d:
            kw["oracle"] = _strict(OracleSettings, d["oracle"], "oracle")
        if "surrogate" in d:
            kw["surrogate"] = _strict(SurrogateSettings, d["surrogate"], "surrogate")
        cfg = cls(**kw)
        try:
            cfg.search_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"search: {exc}") from None
        return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return RunConfig.from_dict(d)
