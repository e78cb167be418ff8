"""End-to-end workflows shared by the CLI and the acceptance suite."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import metrics
from .config import RunConfig
from .ingest import Compacted, EventTable, SampleTable, compact, dataset_stats, read_events, read_samples
from .model import VARIANTS, InterestModel
from .synth import MANIFEST, EVENTS, SAMPLES, split_samples, take_samples
from .train import BatchSource, evaluate, train

log = logging.getLogger(__name__)


def vocab_of(events: EventTable, samples: SampleTable) -> dict:
    other = samples.other_features
    return {
        "n_keys": int(max(events.key_id.max(initial=0), samples.target_key.max(initial=0))) + 1,
        "n_categories": int(max(events.category_id.max(initial=0), samples.target_category.max(initial=0))) + 1,
        "other_vocab": [int(other[:, f].max()) + 1 for f in range(other.shape[1])] if len(samples) else [],
    }


def convert(events: EventTable, samples: SampleTable, cfg: RunConfig, vocab: dict | None = None) -> Compacted:
    d = cfg.data
    out = compact(
        events,
        samples,
        time_scheme=d.time_scheme(),
        count_scheme=d.count_scheme(),
        type_filter=d.type_filter,
        max_sequence_len=d.max_sequence_len,
    )
    out.meta["vocab"] = vocab if vocab is not None else vocab_of(events, samples)
    return out


def stats_report(data: Compacted, cfg: RunConfig) -> dict:
    return dataset_stats(data.batch, cfg.data.key_thresholds, cfg.data.behavior_thresholds)


@dataclass
class SplitData:
    train: Compacted
    test: Compacted
    vocab: dict
    manifest: dict


def load_split(data_dir: str | Path, cfg: RunConfig) -> SplitData:
    """Read events/samples/manifest from a generated data dir and split by time."""
    data_dir = Path(data_dir)
    events = read_events(data_dir / EVENTS)
    samples = read_samples(data_dir / SAMPLES)
    manifest = json.loads((data_dir / MANIFEST).read_text())
    return split_tables(events, samples, manifest, cfg)


def split_tables(events: EventTable, samples: SampleTable, manifest: dict, cfg: RunConfig) -> SplitData:
    vocab = vocab_of(events, samples)
    tr, te = split_samples(samples, int(manifest["split_time"]))
    return SplitData(
        train=convert(events, take_samples(samples, tr), cfg, vocab),
        test=convert(events, take_samples(samples, te), cfg, vocab),
        vocab=vocab,
        manifest=manifest,
    )


def source_for(model: InterestModel, data: Compacted, cfg: RunConfig) -> BatchSource:
    return BatchSource(data, model.config.dense_input, cfg.train.truncate_len)


def fit_variant(split: SplitData, cfg: RunConfig, variant: str) -> tuple[InterestModel, list[dict], dict]:
    model = InterestModel(cfg.model_config(split.vocab, variant))
    history = train(model, source_for(model, split.train, cfg), cfg.train)
    report = evaluate(model, source_for(model, split.test, cfg))
    return model, history, report


def ablate(split: SplitData, cfg: RunConfig, variants=VARIANTS) -> dict:
    """Train every variant on the same data and seed; AUC plus RelaImpr vs the baseline."""
    rows = []
    models = {}
    for v in variants:
        model, history, report = fit_variant(split, cfg, v)
        models[v] = model
        log.info("%s: test auc %.4f", v, report["auc"])
        rows.append({"model": v, "auc": report["auc"], "log_loss": report["log_loss"], "train_loss": history[-1]["train_loss"] if history else None})
    by_name = {r["model"]: r for r in rows}
    base = by_name.get(cfg.baseline)
    for r in rows:
        r["rela_impr"] = round(metrics.rela_impr(r["auc"], base["auc"]), 2) if base else None
    return {"baseline": cfg.baseline, "seed": cfg.train.seed, "rows": rows, "models": models}


def time_factor_table(model: InterestModel, data: Compacted | None, labels: list[str], seed: int = 0) -> list[dict]:
    values = model.time_factors(data.batch if data is not None else None, seed=seed)
    return [{"bucket": k, "label": labels[k], "factor": float(v)} for k, v in enumerate(values)]


def mean_auc(reports: list[dict]) -> dict[str, float]:
    names = [r["model"] for r in reports[0]["rows"]]
    return {n: float(np.mean([next(r["auc"] for r in rep["rows"] if r["model"] == n) for rep in reports])) for n in names}
