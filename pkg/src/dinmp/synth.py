"""Deterministic synthetic behavior logs with planted time-sensitive interest.

Each user has a concentrated long-term category preference plus a "current"
category that drifts over time.  Key visits are drawn from the mixture in
force at visit time and every visit repeats a geometric number of times (mean
``duplication``) over the following days.  A sample asks whether the user
clicks a target at a reference time; its label is Bernoulli of

    sigmoid(bias + long_weight * log1p(n_c) + recent_weight * r_c)

where ``n_c`` counts all of the user's earlier behaviors in the target
category and ``r_c`` sums ``0.5 ** (age / half_life)`` over them, so both the
full history and its timing carry signal.  ``bias`` is solved so the mean
click probability equals ``base_rate``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.optimize import brentq

from .ingest import DAY, EVENT_HEADER, SAMPLE_HEADER, EventTable, SampleTable
from .nn import sigmoid

MANIFEST = "manifest.json"
EVENTS = "events.csv"
SAMPLES = "samples.csv"


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 0
    n_users: int = 12500
    n_keys: int = 2000
    n_categories: int = 20
    horizon_days: int = 240
    visits_per_day: float = 0.1  # mean distinct-key visits per user per day
    duplication: float = 4.0  # mean occurrences per visit
    repeat_spread_days: float = 2.0  # mean gap between repeats of a visit
    half_life_days: float = 14.0
    drift_per_day: float = 0.05  # rate at which the current interest switches
    current_weight: float = 0.5  # share of visits driven by the current interest
    preference_concentration: float = 0.3
    negatives_per_positive: int = 3
    sample_window_days: int = 8
    test_days: int = 1
    long_weight: float = 1.5
    recent_weight: float = 6.0
    base_rate: float = 0.25
    n_user_groups: int = 8

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "seed":
                if v < 0:
                    raise ValueError("seed must be >= 0")
            elif f.name in ("long_weight", "recent_weight"):
                if v < 0:
                    raise ValueError(f"{f.name} must be >= 0")
            elif v <= 0:
                raise ValueError(f"{f.name} must be positive, got {v}")
        if self.n_keys < self.n_categories:
            raise ValueError("need at least one key per category")
        if self.duplication < 1:
            raise ValueError("duplication is a mean repeat count and must be >= 1")
        if not 0 < self.base_rate < 1:
            raise ValueError("base_rate must lie in (0, 1)")
        if self.sample_window_days >= self.horizon_days or self.test_days >= self.sample_window_days:
            raise ValueError("need test_days < sample_window_days < horizon_days")

    @property
    def horizon(self) -> int:
        return self.horizon_days * DAY

    @property
    def split_time(self) -> int:
        """Samples with reference_time >= split_time form the test set."""
        return (self.horizon_days - self.test_days) * DAY

    @classmethod
    def from_dict(cls, d: dict) -> GeneratorConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown generator fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Generated:
    events: EventTable
    samples: SampleTable
    true_prob: np.ndarray
    manifest: dict


def key_categories(config: GeneratorConfig) -> np.ndarray:
    """Fixed key -> category map: keys are dealt round-robin to categories."""
    return np.arange(config.n_keys) % config.n_categories


def _pick_keys(rng: np.random.Generator, keys_by_cat: list[np.ndarray], cats: np.ndarray) -> np.ndarray:
    sizes = np.array([k.size for k in keys_by_cat])
    flat = np.concatenate(keys_by_cat)
    starts = np.cumsum(sizes) - sizes
    return flat[starts[cats] + (rng.random(cats.size) * sizes[cats]).astype(np.int64)]


def _user_events(cfg: GeneratorConfig, rng: np.random.Generator, keys_by_cat: list[np.ndarray]):
    C = cfg.n_categories
    H = cfg.horizon
    pref = rng.dirichlet(np.full(C, cfg.preference_concentration))
    # active and inactive users differ a lot in volume
    rate = cfg.visits_per_day * rng.gamma(2.0, 0.5)
    n_visits = rng.poisson(rate * cfg.horizon_days)
    # current-interest switch points
    n_switch = rng.poisson(cfg.drift_per_day * cfg.horizon_days)
    switch_t = np.sort(rng.uniform(0, H, n_switch))
    current = rng.choice(C, size=n_switch + 1, p=pref)
    t_visit = np.sort(rng.uniform(0, H, n_visits))
    cur_at = current[np.searchsorted(switch_t, t_visit, side="right")]
    from_current = rng.random(n_visits) < cfg.current_weight
    cat = np.where(from_current, cur_at, rng.choice(C, size=n_visits, p=pref))
    key = _pick_keys(rng, keys_by_cat, cat)
    reps = rng.geometric(1.0 / cfg.duplication, size=n_visits)
    idx = np.repeat(np.arange(n_visits), reps)
    first = np.repeat(np.cumsum(reps) - reps, reps)
    nth = np.arange(idx.size) - first
    gaps = rng.exponential(cfg.repeat_spread_days * DAY, size=idx.size)
    gaps[nth == 0] = 0.0
    cum = np.cumsum(gaps)
    cum -= cum[first]
    ts = t_visit[idx] + cum
    ok = ts < H
    ts = ts[ok].astype(np.int64)
    key_ev = key[idx][ok]
    cat_ev = cat[idx][ok]
    order = np.argsort(ts, kind="stable")
    return pref, switch_t, current, key_ev[order], cat_ev[order], ts[order]


def _sample_targets(cfg, rng, pref, switch_t, current, ref):
    C = cfg.n_categories
    cur = current[np.searchsorted(switch_t, ref, side="right")]
    p_now = (1 - cfg.current_weight) * pref
    p_now[cur] += cfg.current_weight
    pos_cat = rng.choice(C, p=p_now)
    neg_cat = rng.integers(0, C, size=cfg.negatives_per_positive)
    return np.concatenate([[pos_cat], neg_cat])


def affinity_features(
    ev_ts: np.ndarray, ev_cat: np.ndarray, ref: int, target_cat: np.ndarray, half_life_days: float
) -> tuple[np.ndarray, np.ndarray]:
    """(count, recency-weighted count) of earlier behaviors in each target category."""
    before = ev_ts < ref
    ts = ev_ts[before]
    cats = ev_cat[before]
    age_days = (ref - ts) / DAY
    decay = 0.5 ** (age_days / half_life_days)
    match = cats[None, :] == np.asarray(target_cat)[:, None]
    return match.sum(axis=1).astype(np.float64), (match * decay[None, :]).sum(axis=1)


def generate(config: GeneratorConfig) -> Generated:
    cfg = config
    cat_of_key = key_categories(cfg)
    keys_by_cat = [np.flatnonzero(cat_of_key == c) for c in range(cfg.n_categories)]
    seqs = np.random.SeedSequence(cfg.seed).spawn(cfg.n_users)
    ev_cols: list[list[np.ndarray]] = [[], [], [], []]
    s_rows = []
    feats = []
    hist_events, hist_keys = [], []
    window = cfg.sample_window_days * DAY
    for u, ss in enumerate(seqs):
        rng = np.random.default_rng(ss)
        pref, switch_t, current, key_ev, cat_ev, ts = _user_events(cfg, rng, keys_by_cat)
        ev_cols[0].append(np.full(ts.size, u, dtype=np.int64))
        ev_cols[1].append(key_ev)
        ev_cols[2].append(cat_ev)
        ev_cols[3].append(ts)
        ref = int(rng.integers(cfg.horizon - window, cfg.horizon))
        tcat = _sample_targets(cfg, rng, pref, switch_t, current, ref)
        tkey = _pick_keys(rng, keys_by_cat, tcat)
        n_c, r_c = affinity_features(ts, cat_ev, ref, tcat, cfg.half_life_days)
        before = ts < ref
        hist_events.append(np.full(tcat.size, before.sum()))
        hist_keys.append(np.full(tcat.size, np.unique(key_ev[before]).size))
        feats.append(cfg.long_weight * np.log1p(n_c) + cfg.recent_weight * r_c)
        for k, c in zip(tkey, tcat):
            s_rows.append((u, int(k), int(c), ref, u % cfg.n_user_groups))
    events = EventTable(
        user_id=np.concatenate(ev_cols[0]),
        key_id=np.concatenate(ev_cols[1]),
        category_id=np.concatenate(ev_cols[2]),
        timestamp=np.concatenate(ev_cols[3]),
        event_type=np.zeros(sum(a.size for a in ev_cols[0]), dtype=np.int64),
    )
    z = np.concatenate(feats)
    bias = brentq(lambda b: float(sigmoid(z + b).mean()) - cfg.base_rate, -50.0, 50.0, xtol=1e-12)
    prob = sigmoid(z + bias)
    label_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    labels = (label_rng.random(prob.size) < prob).astype(np.int64)
    arr = np.array(s_rows, dtype=np.int64)
    samples = SampleTable(
        user_id=arr[:, 0],
        target_key=arr[:, 1],
        target_category=arr[:, 2],
        label=labels,
        reference_time=arr[:, 3],
        other_features=arr[:, 4:5],
    )
    per_user = np.bincount(events.user_id, minlength=cfg.n_users)
    hist_events = np.concatenate(hist_events)
    hist_keys = np.concatenate(hist_keys)
    manifest = {
        "generator": asdict(cfg),
        "bias": bias,
        "split_time": cfg.split_time,
        "n_events": int(len(events)),
        "n_samples": int(len(samples)),
        "label_rate": float(labels.mean()),
        "mean_true_prob": float(prob.mean()),
        "avg_events_per_user": float(per_user.mean()),
        # per sample, counting only events before its reference time
        "avg_history_events": float(hist_events.mean()),
        "avg_history_keys": float(hist_keys.mean()),
        "history_events_per_key": float(hist_events.mean() / hist_keys.mean()),
        "n_keys": cfg.n_keys,
        "n_categories": cfg.n_categories,
        "other_vocab": [cfg.n_user_groups],
    }
    return Generated(events, samples, prob, manifest)


def true_logits(events: EventTable, samples: SampleTable, cfg: GeneratorConfig, bias: float) -> np.ndarray:
    """Recompute the planted click logit of every sample from the raw tables."""
    order = np.lexsort((events.timestamp, events.user_id))
    u = events.user_id[order]
    ts = events.timestamp[order]
    cat = events.category_id[order]
    starts = np.searchsorted(u, samples.user_id, side="left")
    ends = np.searchsorted(u, samples.user_id, side="right")
    out = np.empty(len(samples))
    for i in range(len(samples)):
        s, e = starts[i], ends[i]
        n_c, r_c = affinity_features(ts[s:e], cat[s:e], int(samples.reference_time[i]), samples.target_category[i : i + 1], cfg.half_life_days)
        out[i] = cfg.long_weight * np.log1p(n_c[0]) + cfg.recent_weight * r_c[0] + bias
    return out


def write_generated(gen: Generated, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ev = gen.events
    types = np.array(["click", "buy", "cart", "fav"])
    pd.DataFrame(
        {
            "user_id": ev.user_id,
            "key_id": ev.key_id,
            "category_id": ev.category_id,
            "timestamp": ev.timestamp,
            "event_type": types[ev.event_type],
        },
        columns=EVENT_HEADER,
    ).to_csv(out / EVENTS, index=False, lineterminator="\n")
    s = gen.samples
    pd.DataFrame(
        {
            "user_id": s.user_id,
            "target_key": s.target_key,
            "target_category": s.target_category,
            "label": s.label,
            "reference_time": s.reference_time,
            "other_features": [";".join(map(str, row)) for row in s.other_features],
        },
        columns=SAMPLE_HEADER,
    ).to_csv(out / SAMPLES, index=False, lineterminator="\n")
    (out / MANIFEST).write_text(json.dumps(gen.manifest, indent=2, sort_keys=True) + "\n")
    return {"events": out / EVENTS, "samples": out / SAMPLES, "manifest": out / MANIFEST}


def split_samples(samples: SampleTable, split_time: int) -> tuple[np.ndarray, np.ndarray]:
    """Row indices of (train, test) samples split by reference time."""
    test = samples.reference_time >= split_time
    return np.flatnonzero(~test), np.flatnonzero(test)


def take_samples(samples: SampleTable, rows: np.ndarray) -> SampleTable:
    return SampleTable(
        samples.user_id[rows],
        samples.target_key[rows],
        samples.target_category[rows],
        samples.label[rows],
        samples.reference_time[rows],
        samples.other_features[rows],
    )
