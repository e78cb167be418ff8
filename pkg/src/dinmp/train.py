"""Mini-batch Adam training and evaluation."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import metrics, nn
from .ingest import Compacted, dense_from_sequences
from .model import InterestModel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 5
    batch_size: int = 256
    seed: int = 0
    truncate_len: int = 20

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.epochs < 0 or self.batch_size < 1 or self.truncate_len < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and truncate_len >= 1 required")

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


class TrainingDiverged(FloatingPointError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step
        self.loss = loss


class BatchSource:
    """Serves mini-batches in the input format a model variant expects."""

    def __init__(self, data: Compacted, dense: bool, truncate_len: int = 20):
        self.data = data
        self.dense = dense
        self.truncate_len = truncate_len
        if dense and data.sequences is None:
            raise ValueError("truncated-sequence model needs raw sequences in the batch file")

    def __len__(self) -> int:
        return self.data.batch.n_samples

    @property
    def labels(self) -> np.ndarray:
        return self.data.batch.labels

    def get(self, rows: np.ndarray):
        batch = self.data.batch.take(rows)
        if self.dense:
            return dense_from_sequences(self.data.sequences.take(rows), batch, self.truncate_len)
        return batch


def predict(model: InterestModel, source: BatchSource, batch_size: int = 1024) -> np.ndarray:
    n = len(source)
    out = np.empty(n)
    for start in range(0, n, batch_size):
        rows = np.arange(start, min(n, start + batch_size))
        out[rows] = model.predict(source.get(rows))
    return out


def evaluate(model: InterestModel, source: BatchSource, batch_size: int = 1024) -> dict:
    p = predict(model, source, batch_size)
    y = source.labels
    report = {"samples": int(len(y)), "positives": int(y.sum()), "log_loss": metrics.log_loss(p, y)}
    try:
        report["auc"] = metrics.auc(p, y)
    except metrics.MetricError as exc:
        report["auc"] = None
        report["auc_error"] = str(exc)
    return report


def train(
    model: InterestModel,
    source: BatchSource,
    cfg: TrainConfig,
    valid: BatchSource | None = None,
) -> list[dict]:
    """Train in place; returns one metrics record per epoch."""
    rng = np.random.default_rng(cfg.seed)
    store = model.store
    history = []
    n = len(source)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            rows = np.sort(order[start : start + cfg.batch_size])
            store.zero_grad()
            loss = model.loss(source.get(rows), backward=True)
            if not np.isfinite(loss):
                raise TrainingDiverged(store.step + 1, loss)
            nn.adam_step(store, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
            total += loss * rows.size
            seen += rows.size
        record = {"epoch": epoch + 1, "train_loss": total / max(seen, 1), "steps": store.step}
        if valid is not None:
            ev = evaluate(model, valid)
            record["valid_auc"] = ev["auc"]
            record["valid_log_loss"] = ev["log_loss"]
        log.info("epoch %d: %s", epoch + 1, record)
        history.append(record)
    return history
