"""Acceptance criteria, one test each; a pass/fail line per criterion is printed after the run."""

import statistics
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import ortho_group

from xmodal import audio as A
from xmodal import checkpoint
from xmodal import tensor as T
from xmodal import validation as V
from xmodal.batch import DescriptorCache, make_batch
from xmodal.corpus import CorpusConfig, generate_corpus, write_corpus
from xmodal.encoders import arm_names, attention_cost_ratio, build_model, make_arm
from xmodal.losses import VicregWeights
from xmodal.midi import MidiSegment, NoteEvent, d4_descriptor, is_clamp_free, padded_d4, transpose
from xmodal.retrieval import build_pool, embed_items, pool_metrics, report_from_embeddings, validate_report
from xmodal.training import TrainConfig, compute_loss, split_items, train
from conftest import record
from gradcheck import cases, check
import oracles
from test_descriptors import HOP, NFFT, SR, TABLE_BANDS, random_signal, sines

SEEDS = (0, 1, 2)


def test_criterion_01_gradients():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        for name, (fn, arrays) in cases(rng).items():
            worst = max(worst, check(fn, arrays, rng))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and elapsed < 60
    record(1, ok, f"max rel err {worst:.2e} over 20 seeds, {elapsed:.1f} s")
    assert ok


def test_criterion_02_descriptor_oracles():
    worst = 0.0
    for seed in range(10):
        x = random_signal(seed)
        for kind, ref in (("a4", oracles.a4), ("a7", oracles.a7), ("a8", oracles.a8), ("a9", oracles.a9)):
            got = A.audio_descriptor(kind, x, SR, NFFT, HOP).values
            worst = max(worst, float(np.max(np.abs(got - ref(x, SR, NFFT, HOP)))))
        p = np.random.default_rng(seed).integers(0, 128, 20)
        worst = max(worst, float(np.max(np.abs(d4_descriptor(p) - oracles.d4(p)))))
    bands_ok = A.band_table() == TABLE_BANDS
    fifth = A.a7_descriptor(sines([440, 660], n=96000, sr=24000), 24000, 2048, 512).values
    argmax = int(np.argmax(fifth.mean(axis=0)))
    ok = worst <= 1e-5 and bands_ok and argmax == 7
    record(2, ok, f"max abs diff {worst:.1e}, band table exact={bands_ok}, 3/2 pair argmax={argmax}")
    assert ok


def test_criterion_03_frame_count():
    x = np.random.default_rng(0).standard_normal(96000)
    n = A.stft_magnitude(x, 2048, 512, 24000).n_frames
    shape = A.a4_descriptor(x, 24000, 2048, 512).values.shape
    ok = n == 188 and shape == (188, 8)
    record(3, ok, f"{n} frames, A4 {shape[0]}x{shape[1]}")
    assert ok


def test_criterion_04_cka():
    prop, orac = 0.0, 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        x, y = rng.standard_normal((25, 6)), rng.standard_normal((25, 4))
        q = ortho_group.rvs(6, random_state=seed)
        base = V.cka(x, y)
        prop = max(prop, abs(V.cka(x, x) - 1), abs(V.cka(x @ q, y) - base), abs(V.cka(2.5 * x, y) - base),
                   abs(V.cka(y, x) - base))
        orac = max(orac, abs(base - oracles.cka_hsic(x, y)))
    ok = prop <= 1e-10 and orac <= 1e-12
    record(4, ok, f"property err {prop:.1e}, oracle err {orac:.1e}")
    assert ok


def test_criterion_05_retrieval_oracle():
    items = generate_corpus(CorpusConfig(n_pieces=8, segments_per_piece=8), 1)
    mismatches, reports = 0, 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        size = int(rng.integers(16, 65))
        pool = build_pool(items, size, 30, 4, 4, seed=seed)
        za = rng.standard_normal((len(items), 5))
        zm = za + rng.uniform(0.1, 3) * rng.standard_normal(za.shape)
        mismatches += pool_metrics(pool, za, zm) != oracles.pool_metrics(pool, za, zm)
        d = report_from_embeddings(pool, za, zm, "x", seed, "h").to_dict()
        validate_report(d)
        reports += d["metrics"]["s"] == min(d["metrics"]["r10_am"], d["metrics"]["r10_ma"])
    ok = mismatches == 0 and reports == 10
    record(5, ok, f"{mismatches} oracle mismatches over 10 pools (16-64), S consistent on {reports}/10 reports")
    assert ok


def test_criterion_06_speedup_and_reverse_tokens():
    ratio = attention_cost_ratio(2400, 188)
    items = generate_corpus(CorpusConfig(n_pieces=2, segments_per_piece=2), 0)
    tokens = {}
    for name in ("a4r", "d4-a4r"):
        arm = make_arm(name)
        out = build_model(arm, 0).eval()(make_batch(items, arm))
        tokens[name] = (out.audio.n_tokens, arm.audio.n_desc_frames)
    ok = 162.9 <= ratio <= 163.0 and all(a == b for a, b in tokens.values())
    record(6, ok, f"ratio {ratio:.3f}, reverse tokens {tokens}")
    assert ok


def test_criterion_07_effect_size():
    r = V.effect_size(84.0, 2.7, 5, 75.2, 2.3, 5)
    ok = abs(r["cohen_d"] - 3.51) <= 0.01 and abs(r["welch_t"] - 5.55) <= 0.01
    record(7, ok, f"d = {r['cohen_d']:.3f}, t = {r['welch_t']:.3f}")
    assert ok


@pytest.fixture(scope="module")
def toy_runs():
    """D0 and d4a4 at the default toy configuration, three seeds each."""
    base = TrainConfig()
    items = generate_corpus(base.corpus, base.corpus_seed)
    cache = DescriptorCache()
    start = time.perf_counter()
    runs = {(arm, s): train(replace(base, arm=make_arm(arm), seed=s), items, cache=cache)
            for arm in ("d0", "d4a4") for s in SEEDS}
    return runs, items, cache, time.perf_counter() - start


def test_criterion_08_directional_replication(toy_runs):
    runs, _, _, elapsed = toy_runs
    s = {arm: [runs[(arm, k)].best_s for k in SEEDS] for arm in ("d0", "d4a4")}
    means = {arm: statistics.fmean(v) for arm, v in s.items()}
    epochs = max(len(r.history) for r in runs.values())
    ok = means["d4a4"] > means["d0"] and epochs <= 20 and elapsed < 1800
    record(8, ok, f"mean S d4a4 {means['d4a4']:.3f} {s['d4a4']} vs D0 {means['d0']:.3f} {s['d0']}, "
                  f"{epochs} epochs, {elapsed / 60:.1f} min")
    assert ok


def test_criterion_09_causal_ablation(toy_runs):
    runs, items, cache, _ = toy_runs
    model = runs[("d4a4", 0)].best_model()
    val = split_items(items, TrainConfig().val_fraction)[1]
    pool = build_pool(val, 32, len(val), 8, 4, seed=42)
    a4 = V.ablate(model, val, pool, V.AblationSpec("a4", "zero"), cache)
    d4 = V.ablate(model, val, pool, V.AblationSpec("d4", "zero"), cache)
    drop_pp, d4_pp = -100 * a4["delta"], 100 * d4["delta"]
    ok = drop_pp >= 20 and abs(d4_pp) <= 5
    record(9, ok, f"zero-A4 changes S by {-drop_pp:+.1f} pp (need <= -20), zero-D4 by {d4_pp:+.1f} pp (need |.| <= 5)"
                  f", S {a4['s_normal']:.3f}")
    assert ok


def test_criterion_10_d4_transposition():
    items = generate_corpus(CorpusConfig(n_pieces=10), 3)
    rng = np.random.default_rng(0)
    segs = [it.midi for it in items if len(it.midi)]
    for _ in range(50):
        p = sorted(rng.integers(10, 118, rng.integers(1, 30)).tolist())
        segs.append(MidiSegment(tuple(NoteEvent(int(q), 80, 0.1, 0.01 * i) for i, q in enumerate(p))))
    checked = failures = 0
    for seg in segs:
        for k in range(-6, 7):
            if not is_clamp_free(seg, k):
                continue
            checked += 1
            failures += not np.array_equal(padded_d4(seg), padded_d4(transpose(seg, k)))
    ok = failures == 0 and checked > 0
    record(10, ok, f"{checked} (segment, k) pairs with |k| <= 6, {failures} differ")
    assert ok


def test_criterion_11_determinism(tmp_path):
    cfg = TrainConfig(arm=make_arm("d4a4"), corpus=CorpusConfig(n_pieces=8, segments_per_piece=6), epochs=2,
                      batch_size=8, val_fraction=0.5,
                      pool=replace(TrainConfig().pool, pool_size=12, n_queries=16, n_hard=3, n_semihard=2))
    blobs = []
    for run in ("a", "b"):
        out = tmp_path / run
        items = generate_corpus(cfg.corpus, cfg.corpus_seed)
        write_corpus(out / "corpus", items, cfg.corpus, cfg.corpus_seed)
        res = train(cfg, items, out_dir=out)
        val = split_items(items, cfg.val_fraction)[1]
        pool = build_pool(val, 12, 16, 3, 2, seed=42)
        za, zm = embed_items(res.best_model(), val)
        report = report_from_embeddings(pool, za, zm, "d4a4", 0, cfg.hash).to_json()
        blobs.append({
            "corpus": b"".join((out / "corpus" / f).read_bytes() for f in ("audio.f32", "manifest.jsonl", "corpus.json")),
            "history": (out / "ckpt" / "history.jsonl").read_bytes(),
            "checkpoint": (out / "ckpt" / "best.xmck").read_bytes() + (out / "ckpt" / "last.xmck").read_bytes(),
            "report": report.encode(),
        })
    same = {k: blobs[0][k] == blobs[1][k] for k in blobs[0]}
    ok = all(same.values())
    record(11, ok, ", ".join(f"{k} {'identical' if v else 'DIFFERENT'}" for k, v in same.items()))
    assert ok


def test_criterion_12_all_arms_step():
    items = generate_corpus(CorpusConfig(n_pieces=2, segments_per_piece=3), 0)
    cache = DescriptorCache()
    failed = []
    for name in arm_names():
        try:
            arm = make_arm(name)
            model = build_model(arm, 0).train()
            out = model(make_batch(items, arm, cache))
            loss = compute_loss(model, out, VicregWeights())
            grads = T.backward(loss.total, model.parameters())
            if not (np.isfinite(float(loss.total.data)) and all(np.all(np.isfinite(g)) for g in grads)):
                failed.append(name)
        except Exception as e:  # noqa: BLE001 - any error fails the arm
            failed.append(f"{name}: {e}")
    ok = not failed
    record(12, ok, f"{len(arm_names()) - len(failed)}/{len(arm_names())} arms completed forward+backward"
                   + (f"; failed {failed}" if failed else ""))
    assert ok
