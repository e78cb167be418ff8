"""Shared builders for small random batches and models."""

from __future__ import annotations

import numpy as np
import pytest

from dinmp.ingest import CAT_COL, DAY, DenseBatch, KeyVectorEntry, Sample, build_sparse_batch
from dinmp.model import InterestModel, ModelConfig

SMALL = dict(n_keys=30, n_categories=5, other_vocab=(3,), mlp_layers=(16, 8), attention_hidden=8)


def random_samples(rng: np.random.Generator, n: int, max_keys: int = 6, n_keys: int = 30, n_cats: int = 5) -> list[Sample]:
    out = []
    for _ in range(n):
        ref = 400 * DAY
        k = int(rng.integers(0, max_keys + 1))
        keys = np.sort(rng.choice(n_keys, size=k, replace=False))
        entries = [
            KeyVectorEntry(int(key), int(ref - rng.integers(1, 300 * DAY)), int(rng.integers(1, 40)), int(rng.integers(n_cats)))
            for key in keys
        ]
        out.append(Sample(entries, int(rng.integers(n_keys)), int(rng.integers(n_cats)), [int(rng.integers(3))], int(rng.integers(2)), ref))
    return out


def random_batch(seed: int, n: int = 4, **kw):
    return build_sparse_batch(random_samples(np.random.default_rng(seed), n, **kw))


def expand_to_dense(batch) -> DenseBatch:
    """Repeat every key-vector entry ``count`` times as a plain sequence."""
    B = batch.n_samples
    rows = []
    for i in range(B):
        lo, hi = batch.row_offsets[i], batch.row_offsets[i + 1]
        seq = [(k, c) for k, c, n in zip(batch.keys[lo:hi], batch.values[lo:hi, CAT_COL], batch.counts[lo:hi]) for _ in range(n)]
        rows.append(seq)
    L = max(1, max(len(r) for r in rows))
    keys = np.zeros((B, L), dtype=np.int64)
    cats = np.zeros((B, L), dtype=np.int64)
    for i, r in enumerate(rows):
        for j, (k, c) in enumerate(r):
            keys[i, j], cats[i, j] = k, c
    lens = np.array([len(r) for r in rows])
    return DenseBatch(keys, cats, lens, batch.labels, batch.target_key, batch.target_category, batch.other_features)


def small_model(variant: str, **overrides) -> InterestModel:
    return InterestModel(ModelConfig(variant=variant, **{**SMALL, **overrides}))


def condition_for_gradcheck(model: InterestModel, seed: int = 1) -> None:
    """Move parameters away from initial values where many gradients vanish.

    At initialization the combiner weights other than w0 are zero, so
    factor-table gradients are exactly zero and a relative-error check says
    nothing.  Drawing them from N(0, 1) makes every path carry gradient.
    """
    rng = np.random.default_rng(seed)
    s = model.store
    for name in s:
        v = s[name]
        if name == "combiner.w" or name.startswith("factor."):
            s.set_value(name, rng.normal(0.0, 1.0, v.shape))
        elif name.startswith("inter."):
            s.set_value(name, rng.normal(0.0, 0.3, v.shape))
        elif name.split(".")[-1] in ("b0", "b1", "b2", "b3"):
            s.set_value(name, rng.normal(0.0, 0.1, v.shape))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the test session
ACCEPTANCE_LINES: list[str] = []


def record_acceptance(criterion: str, passed: bool, detail: str) -> None:
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
