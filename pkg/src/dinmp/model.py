"""Deep interest model family over key-vector behavior batches.

Variants form an ablation ladder, each adding one mechanism:

* ``DIN``    -- truncated raw sequences, base attention, plain weighted sum.
* ``DINSKV`` -- full aggregated history; each key's attention is multiplied by
  its occurrence count, which reproduces DIN over the untruncated sequence.
* ``EDIN``   -- time-aware attention: base score combined with time, count
  and category factors; count enters only through its factor.
* ``DINTP``  -- EDIN plus per-time-bucket pooled interests.
* ``DINMP``  -- DINTP plus per-category pooled interests.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from . import nn
from .ingest import CAT_COL, COUNT_COL, TIME_COL, DenseBatch, SparseBatch
from .nn import ParameterStore, ShapeError

VARIANTS = ("DIN", "DINSKV", "EDIN", "DINTP", "DINMP")
INTERACTIONS = ("concat", "self_attention")
# theta: p_t = theta_j . theta_k; embedding: p_t = e_j . theta_k; scalar: p_t = theta_k
TIME_FACTOR_MODES = ("theta", "embedding", "scalar")
N_COMBINER = 6


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "DINMP"
    n_keys: int = 1000
    n_categories: int = 20
    other_vocab: tuple[int, ...] = ()
    n_time_buckets: int = 10
    n_count_buckets: int = 6
    key_dim: int = 8
    cat_dim: int = 8
    other_dim: int = 4
    attention_hidden: int = 16
    factor_dim: int = 4
    mlp_layers: tuple[int, ...] = (128, 256, 80, 256)
    interaction: str = "concat"
    time_factor_mode: str = "theta"
    # None means "as the variant prescribes"
    use_time: bool | None = None
    use_count: bool | None = None
    use_category: bool | None = None
    count_multiplier: bool | None = None
    partition_time: bool | None = None
    partition_category: bool | None = None
    seed: int = 0
    embedding_init: str = "uniform(-1/sqrt(dim), 1/sqrt(dim))"

    def __post_init__(self):
        object.__setattr__(self, "other_vocab", tuple(int(v) for v in self.other_vocab))
        object.__setattr__(self, "mlp_layers", tuple(int(v) for v in self.mlp_layers))
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.interaction not in INTERACTIONS:
            raise ValueError(f"unknown interaction {self.interaction!r}")
        if self.time_factor_mode not in TIME_FACTOR_MODES:
            raise ValueError(f"unknown time_factor_mode {self.time_factor_mode!r}")
        if self.factor_dim < 1:
            raise ValueError("factor_dim must be >= 1")
        for name in ("n_keys", "n_categories", "n_time_buckets", "n_count_buckets", "key_dim", "cat_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.variant == "DIN" and (self.partition_time or self.partition_category or self.uses_factors):
            raise ValueError("DIN takes plain sequences: no factors or partitions")

    def _flag(self, name: str, default: bool) -> bool:
        v = getattr(self, name)
        return default if v is None else bool(v)

    @property
    def enhanced(self) -> bool:
        return self.variant in ("EDIN", "DINTP", "DINMP")

    @property
    def time_on(self) -> bool:
        return self._flag("use_time", self.enhanced)

    @property
    def count_on(self) -> bool:
        return self._flag("use_count", self.enhanced)

    @property
    def category_on(self) -> bool:
        return self._flag("use_category", self.enhanced)

    @property
    def uses_factors(self) -> bool:
        return self.time_on or self.count_on or self.category_on

    @property
    def multiplier_on(self) -> bool:
        return self._flag("count_multiplier", self.variant == "DINSKV")

    @property
    def time_partition_on(self) -> bool:
        return self._flag("partition_time", self.variant in ("DINTP", "DINMP"))

    @property
    def category_partition_on(self) -> bool:
        return self._flag("partition_category", self.variant == "DINMP")

    @property
    def dense_input(self) -> bool:
        return self.variant == "DIN"

    @property
    def emb_dim(self) -> int:
        return self.key_dim + self.cat_dim

    def to_dict(self) -> dict:
        d = asdict(self)
        d["other_vocab"] = list(self.other_vocab)
        d["mlp_layers"] = list(self.mlp_layers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


def base_attention(e: np.ndarray, q_exp: np.ndarray, layers: Sequence[nn.Layer]) -> tuple[np.ndarray, tuple]:
    """Unnormalised relevance score of each behavior to its sample's target.

    MLP over concat(e, q, e*q, e-q); returns (N x 1 scores, cache).
    """
    if e.shape != q_exp.shape:
        raise ShapeError(f"behavior {e.shape} and target {q_exp.shape} embeddings differ")
    x = np.concatenate([e, q_exp, e * q_exp, e - q_exp], axis=1)
    p_a, cache = nn.mlp_forward(x, layers)
    return p_a, (e, q_exp, cache)


def base_attention_backward(dp_a: np.ndarray, cache: tuple):
    """Returns (de, dq_exp, [(dW, db), ...])."""
    e, q_exp, mlp_cache = cache
    dx, grads = nn.mlp_backward(dp_a, mlp_cache)
    d = e.shape[1]
    d_e, d_q, d_prod, d_diff = (dx[:, i * d : (i + 1) * d] for i in range(4))
    de = d_e + d_prod * q_exp + d_diff
    dq = d_q + d_prod * e - d_diff
    return de, dq, grads


@dataclass
class FactorTables:
    """Per-bucket factor vectors plus the projection producing theta_j from e_j.

    Any table set to ``None`` is a disabled factor and contributes the constant 1.
    """

    projection: np.ndarray  # d_emb x d_theta
    time: np.ndarray | None = None
    count: np.ndarray | None = None
    category: np.ndarray | None = None
    time_mode: str = "theta"


def compute_factors(e: np.ndarray, buckets: np.ndarray, tables: FactorTables):
    """Time, count and category factors for each behavior.

    ``buckets`` is N x 3 (time bucket, count bucket, category).  Returns
    ((p_t, p_c, p_cat) each N x 1, cache).
    """
    theta = e @ tables.projection
    out, cache = [], []
    for table, col in ((tables.time, TIME_COL), (tables.count, COUNT_COL), (tables.category, CAT_COL)):
        if table is None:
            out.append(np.ones((e.shape[0], 1)))
            cache.append(None)
            continue
        idx = buckets[:, col]
        if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
            raise IndexError(f"bucket index outside [0, {table.shape[0]}) in column {col}")
        rows = table[idx]
        if col == TIME_COL and tables.time_mode == "scalar":
            out.append(rows[:, :1].copy())
            cache.append((idx, rows, None))
            continue
        left = e if (col == TIME_COL and tables.time_mode == "embedding") else theta
        out.append(np.sum(left * rows, axis=1, keepdims=True))
        cache.append((idx, rows, left is e))
    return tuple(out), (e, theta, tables, cache)


def compute_factors_backward(dps: Sequence[np.ndarray], cache: tuple):
    """Returns (de, dprojection, [dtable or None for time, count, category])."""
    e, theta, tables, per = cache
    de = np.zeros_like(e)
    dtheta = np.zeros_like(theta)
    dtables = []
    for dp, table, c in zip(dps, (tables.time, tables.count, tables.category), per):
        if c is None:
            dtables.append(None)
            continue
        idx, rows, from_e = c
        dt = np.zeros_like(table)
        if from_e is None:  # scalar mode: p = theta_k
            nn.embedding_backward(dt, idx, dp)
            dtables.append(dt)
            continue
        left = e if from_e else theta
        if from_e:
            de += dp * rows
        else:
            dtheta += dp * rows
        nn.embedding_backward(dt, idx, dp * left)
        dtables.append(dt)
    dproj = e.T @ dtheta
    de += dtheta @ tables.projection.T
    return de, dproj, dtables


def combine_attention(p_a, p_t, p_c, p_cat, w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if w.shape != (N_COMBINER,):
        raise ShapeError("combiner needs exactly six weights")
    triple = p_t * p_c * p_cat
    return w[0] * p_a + w[1] * p_t + w[2] * p_c + w[3] * p_cat + w[4] * triple + w[5] * p_a * triple


def combine_attention_backward(da, p_a, p_t, p_c, p_cat, w):
    """Returns (dp_a, dp_t, dp_c, dp_cat, dw)."""
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    triple = p_t * p_c * p_cat
    dw = np.array(
        [
            np.sum(da * p_a),
            np.sum(da * p_t),
            np.sum(da * p_c),
            np.sum(da * p_cat),
            np.sum(da * triple),
            np.sum(da * p_a * triple),
        ]
    )
    g = w[4] + w[5] * p_a  # d a' / d triple
    dp_a = da * (w[0] + w[5] * triple)
    dp_t = da * (w[1] + g * p_c * p_cat)
    dp_c = da * (w[2] + g * p_t * p_cat)
    dp_cat = da * (w[3] + g * p_t * p_c)
    return dp_a, dp_t, dp_c, dp_cat, dw


def weighted_pool(e, a, counts, row_offsets) -> np.ndarray:
    """Per-sample sum of m_j * a'_j * e_j; ``counts=None`` means m_j = 1."""
    w = a if counts is None else a * np.asarray(counts, dtype=np.float64).reshape(-1, 1)
    return nn.segment_sum(w * e, row_offsets)


def partition_pool(weighted, time_bucket, category, row_offsets, n_time, n_cat):
    """Global, per-time-bucket and per-category sums of already weighted rows.

    Returns (E: B x d, E_time: B x T x d, E_cat: B x C x d).
    """
    offsets = nn.check_offsets(row_offsets, weighted.shape[0])
    B = offsets.size - 1
    seg = np.repeat(np.arange(B), np.diff(offsets))
    time_bucket = np.asarray(time_bucket, dtype=np.int64)
    category = np.asarray(category, dtype=np.int64)
    for name, ids, hi in (("time bucket", time_bucket, n_time), ("category", category, n_cat)):
        if ids.size and (ids.min() < 0 or ids.max() >= hi):
            raise IndexError(f"{name} outside [0, {hi})")
    d = weighted.shape[1]
    E = nn.segment_sum(weighted, offsets)
    E_time = np.asarray(nn.group_matrix(seg * n_time + time_bucket, B * n_time) @ weighted).reshape(B, n_time, d)
    E_cat = np.asarray(nn.group_matrix(seg * n_cat + category, B * n_cat) @ weighted).reshape(B, n_cat, d)
    return E, E_time, E_cat


def interaction_layer(E_time: np.ndarray, mode: str, projections=None) -> tuple[np.ndarray, tuple | None]:
    """Flatten B x T x d bucket interests, optionally after per-sample self-attention."""
    B = E_time.shape[0]
    if mode == "concat":
        return E_time.reshape(B, -1), None
    if mode == "self_attention":
        out, cache = nn.self_attention_forward(E_time, *projections)
        return out.reshape(B, -1), cache
    raise ValueError(f"unknown interaction mode {mode!r}")


def bce_loss(p, y) -> float:
    p = np.clip(np.asarray(p, dtype=np.float64), 1e-12, 1.0 - 1e-12)
    y = np.asarray(y, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def bce_with_logits(z: np.ndarray, y: np.ndarray) -> float:
    """Mean binary cross-entropy of sigmoid(z); smooth everywhere, for training."""
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


# ---------------------------------------------------------------------------
# the model
# ---------------------------------------------------------------------------


@dataclass
class Flat:
    """A behavior batch flattened to entry rows; dense sequences become count-1 entries."""

    row_offsets: np.ndarray
    keys: np.ndarray
    categories: np.ndarray
    buckets: np.ndarray | None
    counts: np.ndarray | None
    target_key: np.ndarray
    target_category: np.ndarray
    other_features: np.ndarray
    labels: np.ndarray


def flatten_dense(batch: DenseBatch) -> Flat:
    B, L = batch.keys.shape
    mask = np.arange(L)[None, :] < batch.lengths[:, None]
    return Flat(
        row_offsets=np.concatenate([[0], np.cumsum(batch.lengths)]).astype(np.int64),
        keys=batch.keys[mask],
        categories=batch.categories[mask],
        buckets=None,
        counts=None,
        target_key=batch.target_key,
        target_category=batch.target_category,
        other_features=batch.other_features,
        labels=batch.labels,
    )


def flatten_sparse(batch: SparseBatch) -> Flat:
    return Flat(
        row_offsets=batch.row_offsets,
        keys=batch.keys,
        categories=batch.values[:, CAT_COL],
        buckets=batch.values,
        counts=batch.counts,
        target_key=batch.target_key,
        target_category=batch.target_category,
        other_features=batch.other_features,
        labels=batch.labels,
    )


class InterestModel:
    def __init__(self, config: ModelConfig, store: ParameterStore | None = None):
        self.config = config
        if store is None:
            store = ParameterStore()
            self._init_params(store, np.random.default_rng(config.seed))
        self.store = store

    # -- parameters -------------------------------------------------------

    def mlp_input_dim(self) -> int:
        c = self.config
        d = c.emb_dim
        n = d + d + c.other_dim * len(c.other_vocab)  # interest + target + other
        if c.time_partition_on:
            n += c.n_time_buckets * d
        if c.category_partition_on:
            n += c.n_categories * d
        return n

    def _init_params(self, store: ParameterStore, rng: np.random.Generator) -> None:
        c = self.config
        d = c.emb_dim
        store.add("emb.key", nn.init_embedding(rng, c.n_keys, c.key_dim))
        store.add("emb.cat", nn.init_embedding(rng, c.n_categories, c.cat_dim))
        for f, vocab in enumerate(c.other_vocab):
            store.add(f"emb.other{f}", nn.init_embedding(rng, vocab, c.other_dim))
        W, b = nn.init_dense(rng, 4 * d, c.attention_hidden)
        store.add("att.W0", W)
        store.add("att.b0", b)
        W, b = nn.init_dense(rng, c.attention_hidden, 1)
        store.add("att.W1", W)
        store.add("att.b1", b)
        if c.uses_factors:
            k = c.factor_dim
            store.add("factor.proj", nn.init_dense(rng, d, k)[0])
            if c.time_on:
                if c.time_factor_mode == "scalar":
                    # starts at the neutral factor value of a disabled factor
                    store.add("factor.time", np.ones((c.n_time_buckets, 1)))
                else:
                    width = d if c.time_factor_mode == "embedding" else k
                    store.add("factor.time", nn.init_embedding(rng, c.n_time_buckets, width))
            if c.count_on:
                store.add("factor.count", nn.init_embedding(rng, c.n_count_buckets, k))
            if c.category_on:
                store.add("factor.cat", nn.init_embedding(rng, c.n_categories, k))
            store.add("combiner.w", np.array([1.0, 0, 0, 0, 0, 0]))
        if c.time_partition_on and c.interaction == "self_attention":
            for name in ("Wq", "Wk", "Wv"):
                store.add(f"inter.{name}", nn.init_dense(rng, d, d)[0])
        dims = [self.mlp_input_dim(), *c.mlp_layers, 1]
        for i, (a, b_) in enumerate(zip(dims, dims[1:])):
            W, b = nn.init_dense(rng, a, b_)
            store.add(f"mlp.W{i}", W)
            store.add(f"mlp.b{i}", b)

    def _mlp_layers(self) -> list[nn.Layer]:
        s = self.store
        n = len(self.config.mlp_layers) + 1
        return [(s[f"mlp.W{i}"], s[f"mlp.b{i}"], "relu" if i < n - 1 else "identity") for i in range(n)]

    def _att_layers(self) -> list[nn.Layer]:
        s = self.store
        return [(s["att.W0"], s["att.b0"], "relu"), (s["att.W1"], s["att.b1"], "identity")]

    def factor_tables(self) -> FactorTables | None:
        if not self.config.uses_factors:
            return None
        s = self.store
        return FactorTables(
            projection=s["factor.proj"],
            time=s["factor.time"] if "factor.time" in s else None,
            count=s["factor.count"] if "factor.count" in s else None,
            category=s["factor.cat"] if "factor.cat" in s else None,
            time_mode=self.config.time_factor_mode,
        )

    # -- forward / backward -----------------------------------------------

    def _flatten(self, batch) -> Flat:
        c = self.config
        if isinstance(batch, DenseBatch):
            if not c.dense_input:
                raise TypeError(f"{c.variant} takes a SparseBatch, got a DenseBatch")
            return flatten_dense(batch)
        if isinstance(batch, SparseBatch):
            if c.dense_input:
                raise TypeError("DIN takes a DenseBatch of truncated sequences, got a SparseBatch")
            return flatten_sparse(batch)
        raise TypeError(f"unsupported batch type {type(batch).__name__}")

    def embed_behaviors(self, keys, categories) -> np.ndarray:
        s = self.store
        return np.concatenate([nn.embedding_lookup(s["emb.key"], keys), nn.embedding_lookup(s["emb.cat"], categories)], axis=1)

    def forward(self, batch) -> tuple[np.ndarray, dict]:
        """Click logits per sample plus the cache for :meth:`backward`."""
        c = self.config
        s = self.store
        x = self._flatten(batch)
        B = x.labels.shape[0]
        lens = np.diff(x.row_offsets)
        seg = np.repeat(np.arange(B), lens)

        e = self.embed_behaviors(x.keys, x.categories)
        q = self.embed_behaviors(x.target_key, x.target_category)
        p_a, att_cache = base_attention(e, q[seg], self._att_layers())

        tables = self.factor_tables()
        fac_cache = None
        if tables is not None:
            (p_t, p_c, p_cat), fac_cache = compute_factors(e, x.buckets, tables)
            a = combine_attention(p_a, p_t, p_c, p_cat, s["combiner.w"])
            fac_cache = (fac_cache, p_a, p_t, p_c, p_cat)
        else:
            a = p_a
        mult = None
        if c.multiplier_on and x.counts is not None:
            mult = x.counts.astype(np.float64).reshape(-1, 1)
        weights = a if mult is None else a * mult
        we = weights * e

        parts = []
        d = c.emb_dim
        if c.time_partition_on or c.category_partition_on:
            E, E_time, E_cat = partition_pool(we, x.buckets[:, TIME_COL], x.categories, x.row_offsets, c.n_time_buckets, c.n_categories)
        else:
            E, E_time, E_cat = nn.segment_sum(we, x.row_offsets), None, None
        parts.append(E)
        inter_cache = None
        if c.time_partition_on:
            proj = None
            if c.interaction == "self_attention":
                proj = (s["inter.Wq"], s["inter.Wk"], s["inter.Wv"])
            flat_time, inter_cache = interaction_layer(E_time, c.interaction, proj)
            parts.append(flat_time)
        if c.category_partition_on:
            parts.append(E_cat.reshape(B, -1))
        parts.append(q)
        for f in range(len(c.other_vocab)):
            parts.append(nn.embedding_lookup(s[f"emb.other{f}"], x.other_features[:, f]))
        feats = np.concatenate(parts, axis=1)
        logits, mlp_cache = nn.mlp_forward(feats, self._mlp_layers())
        cache = dict(
            x=x, seg=seg, e=e, q=q, att=att_cache, fac=fac_cache, mult=mult, weights=weights,
            inter=inter_cache, mlp=mlp_cache, widths=[p.shape[1] for p in parts], d=d,
        )
        return logits[:, 0], cache

    def backward(self, dlogits: np.ndarray, cache: dict) -> None:
        """Accumulate d(loss)/d(param) into the store given d(loss)/d(logits)."""
        c = self.config
        s = self.store
        x = cache["x"]
        seg = cache["seg"]
        e = cache["e"]
        B = x.labels.shape[0]
        d = cache["d"]

        dfeats, mlp_grads = nn.mlp_backward(dlogits.reshape(-1, 1), cache["mlp"])
        for i, (dW, db) in enumerate(mlp_grads):
            s.grad(f"mlp.W{i}")[...] += dW
            s.grad(f"mlp.b{i}")[...] += db
        splits = np.cumsum(cache["widths"])[:-1]
        dparts = np.split(dfeats, splits, axis=1)
        it = iter(dparts)
        dE = next(it)
        dwe = dE[seg]
        if c.time_partition_on:
            dflat = next(it)
            dE_time = dflat.reshape(B, c.n_time_buckets, d)
            if c.interaction == "self_attention":
                dE_time, dWq, dWk, dWv = nn.self_attention_backward(dE_time, cache["inter"])
                s.grad("inter.Wq")[...] += dWq
                s.grad("inter.Wk")[...] += dWk
                s.grad("inter.Wv")[...] += dWv
            dwe = dwe + dE_time.reshape(B * c.n_time_buckets, d)[seg * c.n_time_buckets + x.buckets[:, TIME_COL]]
        if c.category_partition_on:
            dE_cat = next(it).reshape(B * c.n_categories, d)
            dwe = dwe + dE_cat[seg * c.n_categories + x.categories]
        dq = next(it).copy()
        for f in range(len(c.other_vocab)):
            nn.embedding_backward(s.grad(f"emb.other{f}"), x.other_features[:, f], next(it))

        weights = cache["weights"]
        de = weights * dwe
        da = np.sum(dwe * e, axis=1, keepdims=True)
        if cache["mult"] is not None:
            da = da * cache["mult"]

        if cache["fac"] is not None:
            fac_cache, p_a, p_t, p_c, p_cat = cache["fac"]
            dp_a, dp_t, dp_c, dp_cat, dw = combine_attention_backward(da, p_a, p_t, p_c, p_cat, s["combiner.w"])
            s.grad("combiner.w")[...] += dw
            de_f, dproj, dtables = compute_factors_backward((dp_t, dp_c, dp_cat), fac_cache)
            de += de_f
            s.grad("factor.proj")[...] += dproj
            for name, dt in zip(("factor.time", "factor.count", "factor.cat"), dtables):
                if dt is not None:
                    s.grad(name)[...] += dt
        else:
            dp_a = da

        de_att, dq_exp, att_grads = base_attention_backward(dp_a, cache["att"])
        de += de_att
        for (dW, db), (wn, bn) in zip(att_grads, (("att.W0", "att.b0"), ("att.W1", "att.b1"))):
            s.grad(wn)[...] += dW
            s.grad(bn)[...] += db
        dq += nn.segment_sum(dq_exp, x.row_offsets)

        kd = c.key_dim
        nn.embedding_backward(s.grad("emb.key"), x.keys, de[:, :kd])
        nn.embedding_backward(s.grad("emb.cat"), x.categories, de[:, kd:])
        nn.embedding_backward(s.grad("emb.key"), x.target_key, dq[:, :kd])
        nn.embedding_backward(s.grad("emb.cat"), x.target_category, dq[:, kd:])

    def predict(self, batch) -> np.ndarray:
        logits, _ = self.forward(batch)
        return nn.sigmoid(logits)

    def loss(self, batch, backward: bool = False) -> float:
        logits, cache = self.forward(batch)
        y = cache["x"].labels.astype(np.float64)
        value = bce_with_logits(logits, y)
        if backward:
            self.backward((nn.sigmoid(logits) - y) / y.shape[0], cache)
        return value

    def relu_pattern(self, batch) -> np.ndarray:
        """On/off state of every relu unit in the forward pass (for gradient checks)."""
        _, cache = self.forward(batch)
        layers = cache["att"][2] + cache["mlp"]
        return np.concatenate([(z > 0).ravel() for _, _, z, _, act in layers if act == "relu"])

    # -- analysis ---------------------------------------------------------

    def time_factors(self, batch: SparseBatch | None = None, max_entries: int = 5000, seed: int = 0) -> np.ndarray:
        """Per-time-bucket factor value, most recent bucket first.

        In scalar mode this is the bucket parameter itself; otherwise the
        mean of theta_j . theta_k (or e_j . theta_k) over (up to
        ``max_entries``) behaviors sampled from ``batch``.
        """
        c = self.config
        if not (c.uses_factors and c.time_on):
            raise ValueError(f"{c.variant} has no time factor")
        table = self.store["factor.time"]
        if c.time_factor_mode == "scalar":
            return table[:, 0].copy()
        if batch is None or batch.n_entries == 0:
            raise ValueError("need behaviors to average the time factor over")
        rng = np.random.default_rng(seed)
        n = batch.n_entries
        pick = rng.choice(n, size=min(max_entries, n), replace=False)
        e = self.embed_behaviors(batch.keys[pick], batch.values[pick, CAT_COL])
        left = e if c.time_factor_mode == "embedding" else e @ self.store["factor.proj"]
        return (left @ table.T).mean(axis=0)
