import json

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xmodal import retrieval as R
import oracles


@pytest.fixture(scope="module")
def pool(small_corpus):
    return R.build_pool(small_corpus, pool_size=24, n_queries=40, n_hard=6, n_semihard=5, seed=7)


def test_pool_structure(pool, small_corpus):
    assert pool.candidates.shape == (40, 24)
    piece = np.array([it.piece_id for it in small_corpus])
    comp = np.array([it.composer_id for it in small_corpus])
    for q, cands, tp, hard, semi in zip(pool.queries, pool.candidates, pool.true_pos, pool.hard, pool.semihard):
        assert cands[tp] == q
        assert len(set(cands.tolist())) == 24
        assert set(hard) <= set(cands) and set(semi) <= set(cands)
        assert np.all(piece[hard] == piece[q]) and q not in hard
        assert np.all((comp[semi] == comp[q]) & (piece[semi] != piece[q]))


def test_pool_is_deterministic(small_corpus, pool):
    again = R.build_pool(small_corpus, 24, 40, 6, 5, seed=7)
    for f in ("queries", "candidates", "true_pos", "hard", "semihard"):
        assert np.array_equal(getattr(pool, f), getattr(again, f))
    other = R.build_pool(small_corpus, 24, 40, 6, 5, seed=8)
    assert not np.array_equal(pool.candidates, other.candidates)


@pytest.mark.parametrize("kw, match", [
    ({"pool_size": 8, "n_hard": 6, "n_semihard": 5}, "cannot hold"),
    ({"pool_size": 100}, "random fill"),
    ({"n_hard": 10}, "hard negatives"),
    ({"n_semihard": 31}, "semi-hard"),
    ({"n_queries": 0}, "n_queries"),
])
def test_pool_quota_errors(small_corpus, kw, match):
    args = {"pool_size": 48, "n_queries": 10, "n_hard": 4, "n_semihard": 4, **kw}
    with pytest.raises(R.PoolQuotaError, match=match):
        R.build_pool(small_corpus, **args)


@pytest.mark.parametrize("seed", range(10))
def test_metrics_match_exhaustive_oracle(pool, seed):
    rng = np.random.default_rng(seed)
    za = rng.standard_normal((80, 6))
    zm = za + rng.uniform(0.2, 3.0) * rng.standard_normal((80, 6))
    assert R.pool_metrics(pool, za, zm) == oracles.pool_metrics(pool, za, zm)


def test_metrics_with_ties_match_oracle(pool):
    rng = np.random.default_rng(1)
    za = rng.integers(-1, 2, (80, 2)).astype(float)
    zm = rng.integers(-1, 2, (80, 2)).astype(float)
    # no zero vectors
    za[np.abs(za).sum(axis=1) == 0] = 1.0
    zm[np.abs(zm).sum(axis=1) == 0] = 1.0
    assert R.pool_metrics(pool, za, zm) == oracles.pool_metrics(pool, za, zm)


def test_perfect_embeddings(pool):
    z = np.eye(80)
    m = R.pool_metrics(pool, z, z)
    assert all(m[k] == 1.0 for k in m)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=1, max_size=30), st.data())
def test_rank_counts_strictly_better(sims, data):
    t = data.draw(st.integers(0, len(sims) - 1))
    assert R.rank_of(np.array(sims), t) == oracles.rank_pairwise(sims, t)
    assert R.mrr(np.array(sims), t) == 1.0 / oracles.rank_pairwise(sims, t)


def test_recall_k_beyond_pool():
    with pytest.raises(ValueError):
        R.recall_at_k(np.zeros(5), 0, 10)


def test_s_metric():
    assert R.s_metric(0.7, 0.4) == 0.4
    with pytest.raises(ValueError):
        R.s_metric(1.2, 0.5)


def test_l2_normalize_keeps_zero_rows():
    z = R.l2_normalize(np.array([[3.0, 4.0], [0.0, 0.0]]))
    assert z.tolist() == [[0.6, 0.8], [0.0, 0.0]]


def test_report_schema_and_consistency(pool):
    rng = np.random.default_rng(0)
    za = rng.standard_normal((80, 4))
    rep = R.report_from_embeddings(pool, za, za + rng.standard_normal((80, 4)), "d0", 1, "abc")
    d = json.loads(rep.to_json())
    R.validate_report(d)
    assert d["metrics"]["s"] == min(d["metrics"]["r10_am"], d["metrics"]["r10_ma"])
    assert R.RetrievalReport.from_dict(d) == rep
    d["metrics"]["s"] = 0.0 if d["metrics"]["s"] else 0.5
    with pytest.raises(jsonschema.ValidationError):
        R.validate_report(d)


def test_report_rejects_extra_fields(pool):
    z = np.eye(80)
    d = R.report_from_embeddings(pool, z, z, "d0", 0, "h").to_dict()
    d["extra"] = 1
    with pytest.raises(jsonschema.ValidationError):
        R.validate_report(d)


def test_canonical_pool_constants():
    assert R.CANONICAL_POOL == {"pool_size": 256, "n_queries": 500, "n_hard": 64, "n_semihard": 32, "seed": 42}
