"""Scientific validation battery for trained checkpoints.

Covers causal descriptor ablation, parameter-matched controls, linear
probes, transposition sweeps, CKA/RSA, A4 band sensitivity, the invariance
suite, cosine alignment with embedding export, and effect-size statistics.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats
from scipy.spatial.distance import pdist

from .audio import add_noise_snr, band_log_energy, chroma, stft_magnitude
from .batch import Batch, DescriptorCache, make_batch
from .corpus import CorpusItem, temporal_shift
from .encoders import ArmConfig, DualEncoder
from .midi import MidiSegment, scale_velocity, transpose
from .retrieval import EvalPool, embed_items, l2_normalize, pool_metrics
from .rng import generator, subseed

REPORT_VERSION = 1
TESTS = ("t01", "t02", "t03", "t04", "t06", "t08", "t09", "t10")


class NotApplicable(ValueError):
    """The requested test does not apply to this arm."""


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

def effect_size(mean_a: float, sd_a: float, n_a: int, mean_b: float, sd_b: float, n_b: int) -> dict:
    """Cohen's d (root-mean-square pooled sd) and Welch's t with a two-sided p-value."""
    if sd_a <= 0 or sd_b <= 0 or n_a < 2 or n_b < 2:
        raise ValueError("need positive sds and at least two samples per group")
    diff = mean_a - mean_b
    d = diff / math.sqrt((sd_a ** 2 + sd_b ** 2) / 2.0)
    va, vb = sd_a ** 2 / n_a, sd_b ** 2 / n_b
    t = diff / math.sqrt(va + vb)
    dof = (va + vb) ** 2 / (va ** 2 / (n_a - 1) + vb ** 2 / (n_b - 1))
    p = 2.0 * stats.t.sf(abs(t), dof)
    return {"cohen_d": d, "welch_t": t, "dof": dof, "p": float(p)}


def cka(x: np.ndarray, y: np.ndarray) -> float:
    """Linear CKA on column-centred activations: ||Y'X||^2 / (||X'X|| ||Y'Y||)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0] or x.shape[0] < 2:
        raise ValueError(f"cka needs matching n >= 2 rows, got {x.shape} and {y.shape}")
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    xx = np.linalg.norm(xc.T @ xc)
    yy = np.linalg.norm(yc.T @ yc)
    if xx == 0 or yy == 0:
        raise ValueError("cka undefined for zero-variance input")
    return float(np.linalg.norm(yc.T @ xc) ** 2 / (xx * yy))


def rsa(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson correlation of the upper-triangle Euclidean distance matrices."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] != y.shape[0] or x.shape[0] < 3:
        raise ValueError("rsa needs matching n >= 3 rows")
    dx, dy = pdist(x), pdist(y)
    if np.ptp(dx) == 0 or np.ptp(dy) == 0:
        raise ValueError("rsa undefined for constant distance matrices")
    return float(np.corrcoef(dx, dy)[0, 1])


def ridge_fit(x: np.ndarray, y: np.ndarray, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form ridge with an unpenalized intercept; returns (W, b)."""
    mx, my = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - mx, y - my
    w = np.linalg.solve(xc.T @ xc + lam * np.eye(x.shape[1]), xc.T @ yc)
    return w, my - mx @ w


def r2_score(y: np.ndarray, pred: np.ndarray) -> tuple[float, list[int]]:
    """Mean R^2 over target columns with nonzero variance; also the excluded columns."""
    sst = ((y - y.mean(axis=0)) ** 2).sum(axis=0)
    sse = ((y - pred) ** 2).sum(axis=0)
    keep = sst > 1e-12
    if not keep.any():
        raise ValueError("every target dimension has zero variance")
    return float(np.mean(1.0 - sse[keep] / sst[keep])), [int(i) for i in np.flatnonzero(~keep)]


def linear_probe(emb: np.ndarray, targets: np.ndarray, lam: float = 1e-2, seed: int = 0,
                 train_frac: float = 0.8) -> dict:
    """Ridge probe on a seeded 80/20 split; R^2 on both splits."""
    if lam <= 0:
        raise ValueError("ridge lambda must be positive")
    x = np.asarray(emb, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    y = y[:, None] if y.ndim == 1 else y
    n = x.shape[0]
    order = generator(seed, "probe").permutation(n)
    n_tr = int(round(train_frac * n))
    tr, te = order[:n_tr], order[n_tr:]
    if len(te) == 0 or n_tr <= 1:
        raise ValueError("probe split leaves an empty side")
    w, b = ridge_fit(x[tr], y[tr], lam)
    r2_tr, _ = r2_score(y[tr], x[tr] @ w + b)
    # variance screening is done on the held-out side, where R^2 is reported
    r2_te, excluded = r2_score(y[te], x[te] @ w + b)
    return {"r2": r2_te, "r2_train": r2_tr, "excluded_dims": excluded, "lambda": lam,
            "n_train": int(n_tr), "n_test": int(len(te))}


# ---------------------------------------------------------------------------
# probe targets
# ---------------------------------------------------------------------------

def pitch_histogram(midi: MidiSegment) -> np.ndarray:
    h = np.bincount(midi.pitches, minlength=128).astype(float)
    return h / max(h.sum(), 1.0)


def interval_histogram(midi: MidiSegment) -> np.ndarray:
    p = midi.pitches
    h = np.zeros(25)
    if len(p) > 1:
        iv = np.clip(np.diff(p), -12, 12) + 12
        h = np.bincount(iv, minlength=25).astype(float)
        h /= h.sum()
    return h


def mean_chroma(item: CorpusItem, nfft: int, hop: int) -> np.ndarray:
    return chroma(item.audio.samples, item.audio.sample_rate, nfft, hop).mean(axis=0)


def pitch_centroid(midi: MidiSegment) -> np.ndarray:
    return np.array([midi.pitches.mean() / 127.0 if len(midi) else 0.0])


PROBE_TARGETS = ("pitch_histogram", "interval_histogram", "chroma", "centroid")
PROBE_DIMS = {"pitch_histogram": 128, "interval_histogram": 25, "chroma": 12, "centroid": 1}


def probe_targets(items: Sequence[CorpusItem], kind: str, nfft: int = 256, hop: int = 64) -> np.ndarray:
    if kind == "pitch_histogram":
        return np.stack([pitch_histogram(it.midi) for it in items])
    if kind == "interval_histogram":
        return np.stack([interval_histogram(it.midi) for it in items])
    if kind == "chroma":
        return np.stack([mean_chroma(it, nfft, hop) for it in items])
    if kind == "centroid":
        return np.stack([pitch_centroid(it.midi) for it in items])
    raise ValueError(f"unknown probe target {kind!r}")


# ---------------------------------------------------------------------------
# descriptor ablation and controls
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AblationSpec:
    descriptor: str  # "a4" or "d4"
    mode: str  # zero | noise | shuffle
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("zero", "noise", "shuffle"):
            raise ValueError(f"unknown ablation mode {self.mode!r}")


def _desc_fields(batch: Batch, descriptor: str) -> list[str]:
    return [f for f, k in (("audio_desc", batch.audio_desc_kind), ("midi_desc", batch.midi_desc_kind))
            if k == descriptor]


def arm_descriptor_fields(arm: ArmConfig, descriptor: str) -> list[str]:
    out = []
    if arm.audio_injection and arm.audio_injection.descriptor == descriptor:
        out.append("audio_desc")
    if arm.midi_injection and arm.midi_injection.descriptor == descriptor:
        out.append("midi_desc")
    return out


def ablate_batch(batch: Batch, spec: AblationSpec, key=()) -> Batch:
    """Replace one injected descriptor stream at inference."""
    changes = {}
    mask = batch.midi["mask"].astype(float)
    for f in _desc_fields(batch, spec.descriptor):
        v = getattr(batch, f)
        valid = mask[..., None] if f == "midi_desc" else np.ones(v.shape[:2] + (1,))
        rng = generator(spec.seed, "ablate", spec.mode, f, *key)
        if spec.mode == "zero":
            new = np.zeros_like(v)
        elif spec.mode == "shuffle":
            new = v[rng.permutation(v.shape[0])]
        else:
            w = np.broadcast_to(valid, v.shape)
            count = w.sum(axis=(0, 1))
            mu = (v * w).sum(axis=(0, 1)) / count
            sd = np.sqrt((((v - mu) ** 2) * w).sum(axis=(0, 1)) / count)
            new = mu + sd * rng.standard_normal(v.shape)
        changes[f] = new * valid
    return batch.replace(**changes)


def ablate(model: DualEncoder, items: Sequence[CorpusItem], pool: EvalPool, spec: AblationSpec,
           cache: DescriptorCache | None = None, control_seed: int = 0) -> dict:
    if not arm_descriptor_fields(model.config, spec.descriptor):
        raise NotApplicable(f"arm {model.config.name} has no {spec.descriptor} injection path")
    za, zm = embed_items(model, items, cache, control_seed=control_seed)
    normal = pool_metrics(pool, za, zm)["s"]
    za2, zm2 = embed_items(model, items, cache, control_seed=control_seed,
                           transform=lambda b, idx: ablate_batch(b, spec, (int(idx[0]),)))
    s = pool_metrics(pool, za2, zm2)["s"]
    return {"descriptor": spec.descriptor, "mode": spec.mode, "s_normal": normal, "s_ablated": s,
            "delta": s - normal}


def param_matched_controls(arm: ArmConfig) -> dict[str, ArmConfig]:
    """Same architecture with descriptor content replaced at train time."""
    if arm.audio_injection is None and arm.midi_injection is None:
        raise NotApplicable(f"arm {arm.name} has no descriptor path to control")
    return {f"{mode}_desc": replace(arm, control=mode) for mode in ("zero", "random", "shuffled")}


# ---------------------------------------------------------------------------
# perturbation sweeps
# ---------------------------------------------------------------------------

def _with_midi(items: Sequence[CorpusItem], fn) -> list[CorpusItem]:
    return [CorpusItem(it.piece_id, it.composer_id, it.segment_index, it.audio, fn(it.midi)) for it in items]


def _s(model, items, pool, cache, control_seed) -> float:
    za, zm = embed_items(model, items, cache, control_seed=control_seed)
    return pool_metrics(pool, za, zm)["s"]


def transposition_sweep(model: DualEncoder, items: Sequence[CorpusItem], pool: EvalPool,
                        ks=(-6, -3, -1, 0, 1, 3, 6), cache: DescriptorCache | None = None,
                        control_seed: int = 0) -> dict:
    """S with the MIDI side transposed by each k; audio untouched."""
    ks = list(ks)
    if 0 not in ks:
        raise ValueError("transposition sweep needs k = 0")
    s = {k: _s(model, _with_midi(items, lambda m, k=k: transpose(m, k)), pool, cache, control_seed) for k in ks}
    out = {"s": {str(k): v for k, v in s.items()}}
    if 3 in s and -3 in s:
        out["retention_3"] = (s[3] + s[-3]) / 2.0 / s[0] if s[0] > 0 else float("nan")
    mono = True
    for m in (3, 6):
        if m in s and -m in s:
            prev = 0 if m == 3 else 3
            lo = min(s[m], s[-m])
            ref = s[0] if prev == 0 else min(s.get(3, s[0]), s.get(-3, s[0]))
            mono &= lo <= ref
    out["monotone_degradation"] = bool(mono)
    return out


def invariance_suite(model: DualEncoder, items: Sequence[CorpusItem], pool: EvalPool,
                     cache: DescriptorCache | None = None, control_seed: int = 0, noise_seed: int = 0,
                     shift_frac: float = 0.083, velocities=(0.5, 0.8, 1.2, 1.5),
                     snrs=(40, 30, 20, 10, 5)) -> dict:
    """Worst-direction S under temporal shift, velocity scaling, octave transposition and noise."""
    out = {"clean": _s(model, items, pool, cache, control_seed)}
    n = len(items[0].audio.samples)
    shift = int(round(shift_frac * n))
    out["temporal_shift"] = {"samples": shift, "s": min(
        _s(model, [temporal_shift(it, sgn * shift) for it in items], pool, cache, control_seed) for sgn in (1, -1))}
    out["velocity"] = {str(f): _s(model, _with_midi(items, lambda m, f=f: scale_velocity(m, f)), pool, cache,
                                  control_seed) for f in velocities}
    out["octave"] = min(_s(model, _with_midi(items, lambda m, k=k: transpose(m, k)), pool, cache, control_seed)
                        for k in (12, -12))
    noise = {}
    for snr in snrs:
        noisy = [CorpusItem(it.piece_id, it.composer_id, it.segment_index,
                            replace(it.audio, samples=add_noise_snr(it.audio.samples, snr,
                                                                    subseed(noise_seed, "snr", snr, i))), it.midi)
                 for i, it in enumerate(items)]
        noise[str(snr)] = _s(model, noisy, pool, cache, control_seed)
    out["noise_snr_db"] = noise
    return out


# ---------------------------------------------------------------------------
# representation analysis
# ---------------------------------------------------------------------------

def collect_taps(model: DualEncoder, items: Sequence[CorpusItem], cache: DescriptorCache | None = None,
                 batch_size: int = 64, control_seed: int = 0) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Per-layer activations, mean pooled over tokens (masked for MIDI), for every item."""
    cache = cache if cache is not None else DescriptorCache()
    was = model.training
    model.eval()
    audio_layers: list[list[np.ndarray]] = []
    midi_layers: list[list[np.ndarray]] = []
    try:
        for start in range(0, len(items), batch_size):
            chunk = list(items[start:start + batch_size])
            batch = make_batch(chunk, model.config, cache, control_seed, ("eval", start))
            out = model(batch)
            mask = batch.midi["mask"].astype(np.float64)
            a = [np.asarray(t.data, np.float64).mean(axis=1) for t in out.audio.taps]
            m = [(np.asarray(t.data, np.float64) * mask[..., None]).sum(1) / mask.sum(1, keepdims=True)
                 for t in out.midi.taps]
            if not audio_layers:
                audio_layers = [[] for _ in a]
                midi_layers = [[] for _ in m]
            for lst, v in zip(audio_layers, a):
                lst.append(v)
            for lst, v in zip(midi_layers, m):
                lst.append(v)
    finally:
        model.train(was)
    return [np.concatenate(l) for l in audio_layers], [np.concatenate(l) for l in midi_layers]


def cka_matrix(model: DualEncoder, items: Sequence[CorpusItem], cache: DescriptorCache | None = None,
               control_seed: int = 0) -> dict:
    a, m = collect_taps(model, items, cache, control_seed=control_seed)
    mat = np.array([[cka(x, y) for y in m] for x in a])
    rs = np.array([[rsa(x, y) for y in m] for x in a])
    return {"matrix": mat.tolist(), "cross_mean": float(mat.mean()), "rsa_matrix": rs.tolist(),
            "rsa_mean": float(rs.mean()), "rsa_method": "pearson/euclidean", "n": len(items)}


def band_sensitivity(model: DualEncoder, items: Sequence[CorpusItem], eps: float = 0.1,
                     cache: DescriptorCache | None = None, control_seed: int = 0,
                     symmetric: bool = False) -> dict:
    """Mean embedding change when one A4 band is offset by ``eps`` on every frame.

    The embedding of the side carrying A4 is measured. ``deltas`` uses +eps;
    ``deltas_minus`` repeats with -eps, and with ``symmetric`` the reported
    ``deltas`` are the average of both. Also reports, per band, the largest
    |Pearson r| between the item's mean band log-energy and any embedding
    dimension.
    """
    arm = model.config
    fields_ = arm_descriptor_fields(arm, "a4")
    if not fields_:
        raise NotApplicable(f"arm {arm.name} does not inject A4")
    field_ = fields_[0]
    side = 0 if field_ == "audio_desc" else 1
    base = embed_items(model, items, cache, control_seed=control_seed)[side]
    def sweep(offset: float) -> list[float]:
        out = []
        for band in range(8):
            def bump(b, idx, band=band):
                v = getattr(b, field_).copy()
                v[..., band] += offset
                if field_ == "midi_desc":
                    v *= b.midi["mask"][..., None]
                return b.replace(**{field_: v})
            z = embed_items(model, items, cache, control_seed=control_seed, transform=bump)[side]
            out.append(float(np.mean(np.linalg.norm(z - base, axis=1))))
        return out

    plus, minus = sweep(eps), sweep(-eps)
    deltas = [(p + m) / 2.0 for p, m in zip(plus, minus)] if symmetric else plus
    dims = arm.audio
    energy = np.stack([band_log_energy(stft_magnitude(it.audio.samples, dims.nfft, dims.hop,
                                                      dims.sample_rate)).mean(axis=0) for it in items])
    max_r = []
    for band in range(8):
        e = energy[:, band]
        if np.ptp(e) == 0:
            max_r.append(None)
            continue
        rs = [abs(np.corrcoef(e, base[:, j])[0, 1]) for j in range(base.shape[1]) if np.ptp(base[:, j]) > 0]
        max_r.append(float(max(rs)) if rs else None)
    return {"eps": eps, "symmetric": symmetric, "deltas": deltas, "deltas_plus": plus, "deltas_minus": minus,
            "max_abs_r": max_r, "side": "audio" if side == 0 else "midi"}


def cosine_alignment(za: np.ndarray, zm: np.ndarray, bins: int = 50) -> dict:
    if len(za) < 2:
        raise ValueError("need at least two pairs")
    # rounding can push a cosine just past +-1, out of the histogram range
    cos = np.clip(np.sum(l2_normalize(za) * l2_normalize(zm), axis=1), -1.0, 1.0)
    hist, edges = np.histogram(cos, bins=bins, range=(-1.0, 1.0))
    return {"mean": float(cos.mean()), "std": float(cos.std()), "histogram": hist.tolist(),
            "edges": edges.tolist()}


def export_embeddings(model: DualEncoder, items: Sequence[CorpusItem], n: int, path: str | Path | None = None,
                      cache: DescriptorCache | None = None, control_seed: int = 0) -> str:
    """CSV with one row per (item, modality): modality, piece_id, item_id, e0..e{D-1}."""
    if n > len(items):
        raise ValueError(f"n={n} exceeds corpus size {len(items)}")
    dim = model.config.embed_dim
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["modality", "piece_id", "item_id"] + [f"e{i}" for i in range(dim)])
    if n:
        sel = list(items[:n])
        za, zm = embed_items(model, sel, cache, control_seed=control_seed)
        for tag, z in (("audio", za), ("midi", zm)):
            for it, row in zip(sel, z):
                w.writerow([tag, it.piece_id, it.item_id] + [repr(float(v)) for v in row])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_embeddings(text: str) -> list[tuple[str, int, str, np.ndarray]]:
    rows = list(csv.reader(io.StringIO(text)))
    return [(r[0], int(r[1]), r[2], np.array([float(v) for v in r[3:]])) for r in rows[1:]]


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def validation_report(test: str, arm: str, config_hash: str, seed: int, inputs: dict, metrics: dict,
                      status: str = "ok") -> dict:
    return {"schema_version": REPORT_VERSION, "test": test, "arm": arm, "config_hash": config_hash,
            "seed": seed, "status": status, "inputs": inputs, "metrics": metrics}


def dashboard(reports: Sequence[dict]) -> dict:
    return {"schema_version": REPORT_VERSION,
            "tests": {r["test"]: {"status": r["status"], "metrics": r["metrics"]} for r in reports}}


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1, default=_json_default))


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")

