"""Sparse key-vector behavior modeling for CTR prediction.

Modules:

* ``ingest``: event logs to aggregated key-vector batches (and the KVB1 file format in ``kvb``)
* ``nn``: float64 layers with hand-written backward passes, Adam, gradient checking
* ``model``: DIN, DINSKV, EDIN, DINTP and DINMP
* ``metrics``: AUC, RelaImpr, log-loss
* ``synth``: seeded synthetic clickstream generator
* ``cli``: the ``dinmp`` command
"""

from .ingest import BehaviorEvent, EventType, KeyVectorEntry, SparseBatch, aggregate_events, build_sparse_batch
from .metrics import auc, rela_impr
from .model import VARIANTS, InterestModel, ModelConfig

__all__ = [
    "BehaviorEvent",
    "EventType",
    "KeyVectorEntry",
    "SparseBatch",
    "aggregate_events",
    "build_sparse_batch",
    "auc",
    "rela_impr",
    "VARIANTS",
    "InterestModel",
    "ModelConfig",
]
__version__ = "0.1.0"
