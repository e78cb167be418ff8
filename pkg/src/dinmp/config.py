"""Run configuration and checkpoint persistence."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .ingest import DEFAULT_COUNT_BOUNDARIES, DEFAULT_TIME_BOUNDARIES, CountBucketScheme, EventType, TimeBucketScheme
from .model import VARIANTS, InterestModel, ModelConfig
from .nn import ParameterStore
from .synth import GeneratorConfig
from .train import TrainConfig

CHECKPOINT_FORMAT = "dinmp-ckpt-v1"
# filled from the data unless the config pins them
VOCAB_FIELDS = ("n_keys", "n_categories", "other_vocab")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    time_boundaries: tuple[int, ...] = DEFAULT_TIME_BOUNDARIES
    count_boundaries: tuple[int, ...] = DEFAULT_COUNT_BOUNDARIES
    type_filter: tuple[str, ...] = ("click",)
    max_sequence_len: int = 200
    key_thresholds: tuple[int, ...] = (400, 500)
    behavior_thresholds: tuple[int, ...] = (200, 400)

    def __post_init__(self):
        for name in ("time_boundaries", "count_boundaries", "type_filter", "key_thresholds", "behavior_thresholds"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        self.time_scheme()
        self.count_scheme()
        for t in self.type_filter:
            EventType(t)
        if self.max_sequence_len < 0:
            raise ConfigError("max_sequence_len must be >= 0")

    def time_scheme(self) -> TimeBucketScheme:
        return TimeBucketScheme(self.time_boundaries)

    def count_scheme(self) -> CountBucketScheme:
        return CountBucketScheme(self.count_boundaries)


def _check_keys(section: str, d: dict, allowed) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"config section {section!r} must be an object")
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown field(s) in {section!r}: {sorted(unknown)}")


@dataclass(frozen=True)
class RunConfig:
    model: dict = field(default_factory=dict)  # ModelConfig overrides
    train: TrainConfig = TrainConfig()
    data: DataConfig = DataConfig()
    generator: GeneratorConfig = GeneratorConfig()
    baseline: str = "DIN"

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        _check_keys("<root>", d, {f.name for f in fields(cls)})
        model = dict(d.get("model", {}))
        _check_keys("model", model, {f.name for f in fields(ModelConfig)})
        _check_keys("train", d.get("train", {}), {f.name for f in fields(TrainConfig)})
        _check_keys("data", d.get("data", {}), {f.name for f in fields(DataConfig)})
        _check_keys("generator", d.get("generator", {}), {f.name for f in fields(GeneratorConfig)})
        baseline = d.get("baseline", "DIN")
        if baseline not in VARIANTS:
            raise ConfigError(f"baseline must be one of {VARIANTS}")
        try:
            cfg = cls(
                model=model,
                train=TrainConfig(**d.get("train", {})),
                data=DataConfig(**d.get("data", {})),
                generator=GeneratorConfig(**d.get("generator", {})),
                baseline=baseline,
            )
            ModelConfig(**{k: v for k, v in model.items()})
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return cfg

    @classmethod
    def load(cls, path: str | Path | None) -> RunConfig:
        if path is None:
            return cls()
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return {
            "model": dict(self.model),
            "train": self.train.to_dict(),
            "data": asdict(self.data),
            "generator": asdict(self.generator),
            "baseline": self.baseline,
        }

    def with_overrides(self, *, seed: int | None = None, variant: str | None = None,
                       truncate_len: int | None = None, interaction: str | None = None) -> RunConfig:
        model = dict(self.model)
        train = self.train.to_dict()
        if seed is not None:
            model["seed"] = seed
            train["seed"] = seed
        if variant is not None:
            model["variant"] = variant
        if interaction is not None:
            model["interaction"] = interaction
        if truncate_len is not None:
            train["truncate_len"] = truncate_len
        return RunConfig(model, TrainConfig(**train), self.data, self.generator, self.baseline)

    def model_config(self, vocab: dict, variant: str | None = None) -> ModelConfig:
        """ModelConfig for ``variant`` with vocabulary sizes taken from the data."""
        kw = {k: vocab[k] for k in VOCAB_FIELDS if k in vocab}
        kw.update(self.model)
        if variant is not None:
            kw["variant"] = variant
        kw["n_time_buckets"] = self.data.time_scheme().n_buckets
        kw["n_count_buckets"] = self.data.count_scheme().n_buckets
        return ModelConfig(**kw)


def save_checkpoint(path: str | Path, model: InterestModel, run_config: RunConfig | None = None, extra: dict | None = None) -> None:
    params = {name: {"shape": list(model.store[name].shape), "values": model.store[name].ravel().tolist()} for name in model.store}
    doc = {
        "format": CHECKPOINT_FORMAT,
        "model": model.config.to_dict(),
        "run": run_config.to_dict() if run_config is not None else None,
        "adam_step": model.store.step,
        "params": params,
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_checkpoint(path: str | Path) -> tuple[InterestModel, RunConfig | None, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
    cfg = ModelConfig.from_dict(doc["model"])
    store = ParameterStore(step=int(doc.get("adam_step", 0)))
    for name, p in doc["params"].items():
        store.add(name, np.array(p["values"], dtype=np.float64).reshape(p["shape"]))
    model = InterestModel(cfg, store)
    expected = InterestModel(cfg)  # parameter layout check
    if set(expected.store) != set(store) or any(expected.store[n].shape != store[n].shape for n in store):
        raise ConfigError(f"{path}: parameters do not match the {cfg.variant} layout")
    run = RunConfig.from_dict(doc["run"]) if doc.get("run") else None
    return model, run, doc.get("extra", {})
