"""Structured-pool retrieval evaluation.

Each query is scored against its own candidate pool: the true partner, a
quota of hard negatives (same piece, other segment), semi-hard negatives
(same composer, other piece) and random fill. Similarity is cosine on
L2-normalized projection outputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import jsonschema
import numpy as np

from .batch import Batch, DescriptorCache, make_batch
from .rng import generator

SCHEMA_VERSION = 1
CANONICAL_POOL = {"pool_size": 256, "n_queries": 500, "n_hard": 64, "n_semihard": 32, "seed": 42}
TOY_POOL = {"pool_size": 32, "n_queries": 64, "n_hard": 8, "n_semihard": 4, "seed": 42}


class PoolQuotaError(ValueError):
    pass


@dataclass(frozen=True)
class ItemKey:
    piece_id: int
    composer_id: int
    segment_index: int


@dataclass(frozen=True)
class EvalPool:
    """Index-level pool description, independent of any model.

    ``candidates[q]`` lists corpus indices in scoring order and
    ``true_pos[q]`` is where query ``q``'s own item sits in that list.
    """

    queries: np.ndarray  # (Q,)
    candidates: np.ndarray  # (Q, P)
    true_pos: np.ndarray  # (Q,)
    hard: np.ndarray  # (Q, n_hard) corpus indices
    semihard: np.ndarray  # (Q, n_semihard)
    pool_size: int
    n_hard: int
    n_semihard: int
    seed: int

    @property
    def n_queries(self) -> int:
        return len(self.queries)


def _keys(items) -> list[ItemKey]:
    return [ItemKey(it.piece_id, it.composer_id, it.segment_index) for it in items]


def build_pool(items: Sequence, pool_size: int, n_queries: int, n_hard: int, n_semihard: int,
               seed: int = 42) -> EvalPool:
    """Sample queries and per-query candidate lists; deterministic under ``seed``."""
    keys = _keys(items)
    n = len(keys)
    if pool_size < 1 + n_hard + n_semihard:
        raise PoolQuotaError(f"pool_size {pool_size} cannot hold 1 + {n_hard} hard + {n_semihard} semi-hard")
    if pool_size > n:
        raise PoolQuotaError(f"random fill: pool_size {pool_size} exceeds corpus size {n}")
    if n_queries < 1:
        raise PoolQuotaError("n_queries must be positive")
    piece = np.array([k.piece_id for k in keys])
    comp = np.array([k.composer_id for k in keys])
    rng = generator(seed, "pool")
    queries = rng.choice(n, size=n_queries, replace=n_queries > n)
    cands, true_pos, hards, semis = [], [], [], []
    for q in queries:
        hard_ids = np.flatnonzero((piece == piece[q]) & (np.arange(n) != q))
        semi_ids = np.flatnonzero((comp == comp[q]) & (piece != piece[q]))
        if len(hard_ids) < n_hard:
            raise PoolQuotaError(f"hard negatives: item {q} has {len(hard_ids)}, need {n_hard}")
        if len(semi_ids) < n_semihard:
            raise PoolQuotaError(f"semi-hard negatives: item {q} has {len(semi_ids)}, need {n_semihard}")
        h = rng.choice(hard_ids, size=n_hard, replace=False)
        s = rng.choice(semi_ids, size=n_semihard, replace=False)
        used = np.zeros(n, bool)
        used[[q, *h, *s]] = True
        rest = np.flatnonzero(~used)
        fill = rng.choice(rest, size=pool_size - 1 - n_hard - n_semihard, replace=False)
        members = np.concatenate([[q], h, s, fill]).astype(np.int64)
        order = rng.permutation(pool_size)
        members = members[order]
        cands.append(members)
        true_pos.append(int(np.flatnonzero(members == q)[0]))
        hards.append(np.sort(h))
        semis.append(np.sort(s))
    return EvalPool(np.asarray(queries, np.int64), np.stack(cands), np.array(true_pos), np.stack(hards),
                    np.stack(semis), pool_size, n_hard, n_semihard, seed)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def rank_of(similarities: np.ndarray, true_index: int) -> int:
    """1-based rank of ``true_index`` under a stable descending sort."""
    order = np.argsort(-np.asarray(similarities), kind="stable")
    return int(np.flatnonzero(order == true_index)[0]) + 1


def recall_at_k(similarities: np.ndarray, true_index: int, k: int) -> int:
    if k > len(similarities):
        raise ValueError(f"k={k} exceeds pool size {len(similarities)}")
    return int(rank_of(similarities, true_index) <= k)


def mrr(similarities: np.ndarray, true_index: int) -> float:
    return 1.0 / rank_of(similarities, true_index)


def s_metric(r10_am: float, r10_ma: float) -> float:
    for r in (r10_am, r10_ma):
        if not 0.0 <= r <= 1.0:
            raise ValueError(f"recall {r} outside [0, 1]")
    return min(r10_am, r10_ma)


def l2_normalize(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    norm = np.linalg.norm(z, axis=1, keepdims=True)
    return z / np.where(norm > 0, norm, 1.0)


def pool_similarities(pool: EvalPool, za: np.ndarray, zm: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cosine scores (Q, P) for audio->MIDI and MIDI->audio."""
    za, zm = l2_normalize(za), l2_normalize(zm)
    s_am = np.einsum("qd,qpd->qp", za[pool.queries], zm[pool.candidates])
    s_ma = np.einsum("qd,qpd->qp", zm[pool.queries], za[pool.candidates])
    return s_am, s_ma


def hard_negative_accuracy(pool: EvalPool, za: np.ndarray, zm: np.ndarray) -> float:
    """Fraction of queries (audio->MIDI) whose partner beats every hard negative strictly."""
    za, zm = l2_normalize(za), l2_normalize(zm)
    true = np.einsum("qd,qd->q", za[pool.queries], zm[pool.queries])
    neg = np.einsum("qd,qhd->qh", za[pool.queries], zm[pool.hard])
    return float(np.mean(np.all(true[:, None] > neg, axis=1)))


def pool_metrics(pool: EvalPool, za: np.ndarray, zm: np.ndarray) -> dict[str, float]:
    s_am, s_ma = pool_similarities(pool, za, zm)
    out = {}
    for tag, sims in (("am", s_am), ("ma", s_ma)):
        ranks = np.array([rank_of(row, t) for row, t in zip(sims, pool.true_pos)])
        # fsum is correctly rounded, so the result does not depend on summation order
        out[f"r1_{tag}"] = math.fsum(ranks <= 1) / len(ranks)
        out[f"r10_{tag}"] = math.fsum(ranks <= min(10, pool.pool_size)) / len(ranks)
        out[f"mrr_{tag}"] = math.fsum(1.0 / ranks) / len(ranks)
    out["s"] = s_metric(out["r10_am"], out["r10_ma"])
    out["hardneg"] = hard_negative_accuracy(pool, za, zm)
    return out


# ---------------------------------------------------------------------------
# embedding and reports
# ---------------------------------------------------------------------------

BatchTransform = Callable[[Batch, np.ndarray], Batch]


def embed_items(model, items: Sequence, cache: DescriptorCache | None = None, batch_size: int = 64,
                transform: BatchTransform | None = None, control_seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode projection outputs for every item, in item order.

    ``transform`` may rewrite each batch (ablations, perturbations); it also
    receives the item indices of the batch.
    """
    cache = cache if cache is not None else DescriptorCache()
    was_training = model.training
    model.eval()
    za, zm = [], []
    try:
        for start in range(0, len(items), batch_size):
            idx = np.arange(start, min(start + batch_size, len(items)))
            batch = make_batch([items[i] for i in idx], model.config, cache, control_seed, ("eval", int(start)))
            if transform is not None:
                batch = transform(batch, idx)
            out = model(batch)
            za.append(np.asarray(out.z_a.data, np.float64))
            zm.append(np.asarray(out.z_m.data, np.float64))
    finally:
        model.train(was_training)
    return np.concatenate(za), np.concatenate(zm)


REPORT_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "arm", "seed", "config_hash", "pool", "metrics"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "arm": {"type": "string"},
        "seed": {"type": "integer"},
        "config_hash": {"type": "string"},
        "pool": {
            "type": "object",
            "required": ["size", "n_queries", "n_hard", "n_semihard"],
            "additionalProperties": False,
            "properties": {k: {"type": "integer", "minimum": 0}
                           for k in ("size", "n_queries", "n_hard", "n_semihard")},
        },
        "metrics": {
            "type": "object",
            "required": ["s", "r1_am", "r10_am", "mrr_am", "r1_ma", "r10_ma", "mrr_ma", "hardneg"],
            "additionalProperties": False,
            "properties": {k: {"type": "number", "minimum": 0, "maximum": 1}
                           for k in ("s", "r1_am", "r10_am", "mrr_am", "r1_ma", "r10_ma", "mrr_ma", "hardneg")},
        },
    },
}


@dataclass(frozen=True)
class RetrievalReport:
    arm: str
    seed: int
    config_hash: str
    pool: dict
    metrics: dict

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "arm": self.arm, "seed": self.seed,
                "config_hash": self.config_hash, "pool": dict(self.pool), "metrics": dict(self.metrics)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "RetrievalReport":
        validate_report(d)
        return cls(d["arm"], d["seed"], d["config_hash"], d["pool"], d["metrics"])


def validate_report(d: dict) -> None:
    jsonschema.validate(d, REPORT_SCHEMA)
    m = d["metrics"]
    if m["s"] != min(m["r10_am"], m["r10_ma"]):
        raise jsonschema.ValidationError("s must equal min(r10_am, r10_ma)")


def report_from_embeddings(pool: EvalPool, za: np.ndarray, zm: np.ndarray, arm: str, seed: int,
                           config_hash: str) -> RetrievalReport:
    metrics = pool_metrics(pool, za, zm)
    rep = RetrievalReport(arm, int(seed), config_hash,
                          {"size": pool.pool_size, "n_queries": pool.n_queries, "n_hard": pool.n_hard,
                           "n_semihard": pool.n_semihard}, metrics)
    validate_report(rep.to_dict())
    return rep


def scoreboard(model, items: Sequence, pool: EvalPool, seed: int, config_hash: str,
               cache: DescriptorCache | None = None, transform: BatchTransform | None = None) -> RetrievalReport:
    za, zm = embed_items(model, items, cache, transform=transform, control_seed=seed)
    return report_from_embeddings(pool, za, zm, model.config.name, seed, config_hash)
