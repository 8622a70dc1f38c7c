"""Synthetic matched audio/MIDI corpus.

Pieces are generated from a composer profile (register, rhythm palette,
dynamics) and a piece-level motif that recurs with variations, so segments
of one piece resemble each other more than segments of different pieces.
Every MIDI segment is rendered to audio with a small additive synthesizer.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioSegment
from .midi import MidiSegment, NoteEvent, midi_hz, shift_samples, velocity_curve
from .rng import generator

PEAK_LEVEL = 0.9
RELEASE_S = 0.005

SCALES = {
    "major": (0, 2, 4, 5, 7, 9, 11),
    "minor": (0, 2, 3, 5, 7, 8, 10),
    "dorian": (0, 2, 3, 5, 7, 9, 10),
    "pentatonic": (0, 2, 4, 7, 9),
}
RHYTHM_GRID_S = (0.0625, 0.09375, 0.125, 0.1875, 0.25)


@dataclass(frozen=True)
class SynthParams:
    n_harmonics: int = 6
    rolloff: float = 1.0
    decay_s: float = 0.25
    velocity_exponent: float = 1.2

    def __post_init__(self):
        if self.n_harmonics < 1:
            raise ValueError("n_harmonics must be >= 1")
        if not self.decay_s > 0:
            raise ValueError("decay_s must be positive")


def render_audio(segment: MidiSegment, params: SynthParams = SynthParams(), sample_rate: int = 4000,
                 duration: float = 0.5, normalize: bool = True) -> AudioSegment:
    """Additive rendering of ``segment`` into a mono buffer of ``duration`` seconds.

    Each note is a stack of harmonics with amplitude ``h ** -rolloff`` under an
    exponential decay, cut off with a short linear release at the note end.
    Harmonics at or above Nyquist are skipped. With ``normalize`` the output
    peak is scaled to 0.9; an empty segment renders as silence.
    """
    n = int(round(duration * sample_rate))
    out = np.zeros(n)
    for e in segment.events:
        if e.onset_s >= duration:
            raise ValueError(f"onset {e.onset_s} outside segment of {duration} s")
        start = int(round(e.onset_s * sample_rate))
        stop = min(n, start + int(round(e.duration_s * sample_rate)))
        if stop <= start:
            continue
        t = np.arange(stop - start) / sample_rate
        env = np.exp(-t / params.decay_s)
        rel = int(RELEASE_S * sample_rate)
        note_len = int(round(e.duration_s * sample_rate))
        if rel > 0:
            tail = np.clip((note_len - np.arange(stop - start)) / rel, 0.0, 1.0)
            env = env * tail
        f0 = midi_hz(e.pitch)
        tone = np.zeros_like(t)
        for h in range(1, params.n_harmonics + 1):
            if h * f0 >= sample_rate / 2:
                break
            tone += h ** -params.rolloff * np.sin(2 * np.pi * h * f0 * t)
        out[start:stop] += velocity_curve(e.velocity, params.velocity_exponent) * env * tone
    peak = np.max(np.abs(out)) if n else 0.0
    if normalize and peak > 0:
        out *= PEAK_LEVEL / peak
    return AudioSegment(out.astype(np.float32), sample_rate)


@dataclass(frozen=True)
class CorpusItem:
    piece_id: int
    composer_id: int
    segment_index: int
    audio: AudioSegment
    midi: MidiSegment

    @property
    def item_id(self) -> str:
        return f"p{self.piece_id:03d}s{self.segment_index:03d}"


def temporal_shift(item: CorpusItem, shift: int) -> CorpusItem:
    """Misalign audio against MIDI by ``shift`` samples; MIDI is unchanged."""
    shifted = shift_samples(item.audio.samples, shift)
    return CorpusItem(item.piece_id, item.composer_id, item.segment_index,
                      AudioSegment(shifted, item.audio.sample_rate), item.midi)


@dataclass(frozen=True)
class CorpusConfig:
    n_pieces: int = 50
    n_composers: int = 2
    segments_per_piece: int = 10
    segment_s: float = 0.5
    hop_s: float = 0.5
    sample_rate: int = 4000
    max_notes: int = 64
    synth: SynthParams = field(default_factory=SynthParams)
    # per-note probabilities of replacing the motif step / duration
    pitch_mutation: float = 0.05
    rhythm_mutation: float = 0.7

    def __post_init__(self):
        if self.n_pieces < 0 or self.segments_per_piece < 0 or self.n_composers < 1:
            raise ValueError("counts must be non-negative and n_composers >= 1")
        if not (0.0 <= self.pitch_mutation <= 1.0 and 0.0 <= self.rhythm_mutation <= 1.0):
            raise ValueError("mutation rates must lie in [0, 1]")
        if not (self.segment_s > 0 and self.hop_s > 0 and self.sample_rate > 0):
            raise ValueError("segment_s, hop_s and sample_rate must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusConfig":
        d = dict(d)
        synth = SynthParams(**d.pop("synth", {}))
        return cls(synth=synth, **d)


@dataclass(frozen=True)
class _Composer:
    register: int
    spread: int
    rhythm_weights: np.ndarray
    velocity: float
    chord_prob: float


def _composer(seed: int, cid: int) -> _Composer:
    rng = generator(seed, "composer", cid)
    w = rng.dirichlet(np.full(len(RHYTHM_GRID_S), 0.6))
    return _Composer(register=int(rng.integers(50, 78)), spread=int(rng.integers(4, 9)),
                     rhythm_weights=w, velocity=float(rng.uniform(55, 105)),
                     chord_prob=float(rng.uniform(0.0, 0.3)))


def _piece_notes(seed: int, piece_id: int, comp: _Composer, total_s: float, pitch_mut: float,
                 rhythm_mut: float) -> list[NoteEvent]:
    rng = generator(seed, "piece", piece_id)
    scale = SCALES[list(SCALES)[int(rng.integers(len(SCALES)))]]
    tonic = comp.register + int(rng.integers(-5, 6))
    motif_len = int(rng.integers(4, 8))
    motif_steps = rng.integers(-comp.spread // 2, comp.spread // 2 + 1, size=motif_len)
    motif_rhythm = rng.choice(len(RHYTHM_GRID_S), size=motif_len, p=comp.rhythm_weights)
    piece_vel = comp.velocity + rng.normal(0, 8)

    def pitch_of(degree: int) -> int:
        octave, idx = divmod(degree, len(scale))
        return int(np.clip(tonic + 12 * octave + scale[idx], 21, 108))

    events: list[NoteEvent] = []
    t = 0.0
    while t < total_s:
        offset = int(rng.integers(-2, 3))
        for step, r in zip(motif_steps, motif_rhythm):
            if t >= total_s:
                break
            if rng.random() < pitch_mut:
                step = int(rng.integers(-comp.spread // 2, comp.spread // 2 + 1))
            if rng.random() < rhythm_mut:
                r = int(rng.choice(len(RHYTHM_GRID_S), p=comp.rhythm_weights))
            dur = RHYTHM_GRID_S[r]
            vel = int(np.clip(round(piece_vel + rng.normal(0, 10)), 1, 127))
            p = pitch_of(int(step) + offset)
            events.append(NoteEvent(p, vel, dur, round(t, 6)))
            if rng.random() < comp.chord_prob:
                events.append(NoteEvent(max(p - int(rng.choice([3, 4, 7])), 0), vel, dur, round(t, 6)))
            t += dur
    return events


def _window(events: list[NoteEvent], start: float, length: float, max_notes: int) -> MidiSegment:
    picked = [NoteEvent(e.pitch, e.velocity, e.duration_s, round(e.onset_s - start, 6))
              for e in events if start <= e.onset_s < start + length]
    picked.sort(key=lambda e: (e.onset_s, e.pitch))
    return MidiSegment(tuple(picked[:max_notes]), max_notes)


def generate_corpus(config: CorpusConfig, seed: int) -> list[CorpusItem]:
    """Deterministic list of rendered items ordered by (piece, segment)."""
    if config.n_pieces * config.segments_per_piece == 0:
        raise ValueError("corpus configuration yields zero items")
    composers = [_composer(seed, c) for c in range(config.n_composers)]
    total_s = (config.segments_per_piece - 1) * config.hop_s + config.segment_s
    items = []
    for pid in range(config.n_pieces):
        cid = pid % config.n_composers
        notes = _piece_notes(seed, pid, composers[cid], total_s, config.pitch_mutation, config.rhythm_mutation)
        for s in range(config.segments_per_piece):
            midi = _window(notes, s * config.hop_s, config.segment_s, config.max_notes)
            audio = render_audio(midi, config.synth, config.sample_rate, config.segment_s)
            items.append(CorpusItem(pid, cid, s, audio, midi))
    return items


# ---- on-disk layout -------------------------------------------------------

def write_pcm(path: str | Path, samples: np.ndarray, sample_rate: int) -> None:
    """Raw float32 little-endian samples plus a ``.json`` sidecar."""
    path = Path(path)
    data = np.ascontiguousarray(samples, dtype="<f4")
    path.write_bytes(data.tobytes())
    Path(str(path) + ".json").write_text(json.dumps({"sample_rate": int(sample_rate), "length": int(data.size)}))


def read_pcm(path: str | Path) -> AudioSegment:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    data = np.frombuffer(path.read_bytes(), dtype="<f4")
    if data.size != meta["length"]:
        raise ValueError(f"{path}: sidecar says {meta['length']} samples, found {data.size}")
    return AudioSegment(data.astype(np.float32), int(meta["sample_rate"]))


def write_corpus(out_dir: str | Path, items: list[CorpusItem], config: CorpusConfig, seed: int) -> Path:
    """Write ``manifest.jsonl``, one shared ``audio.f32`` blob and ``corpus.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    blob = np.concatenate([it.audio.samples for it in items]).astype("<f4") if items else np.zeros(0, "<f4")
    write_pcm(out / "audio.f32", blob, config.sample_rate)
    offset = 0
    with open(out / "manifest.jsonl", "w") as fh:
        for it in items:
            n = len(it.audio.samples)
            fh.write(json.dumps({"item_id": it.item_id, "piece_id": it.piece_id,
                                 "composer_id": it.composer_id, "segment_index": it.segment_index,
                                 "audio_offset": offset, "audio_length": n,
                                 "midi": it.midi.to_json()}) + "\n")
            offset += n
    (out / "corpus.json").write_text(json.dumps({"config": config.to_dict(), "seed": seed,
                                                 "n_items": len(items)}, sort_keys=True, indent=1))
    return out


def read_corpus(out_dir: str | Path) -> tuple[list[CorpusItem], CorpusConfig, int]:
    out = Path(out_dir)
    info = json.loads((out / "corpus.json").read_text())
    config = CorpusConfig.from_dict(info["config"])
    blob = read_pcm(out / "audio.f32")
    items = []
    with open(out / "manifest.jsonl") as fh:
        for line in fh:
            row = json.loads(line)
            a, n = row["audio_offset"], row["audio_length"]
            items.append(CorpusItem(row["piece_id"], row["composer_id"], row["segment_index"],
                                    AudioSegment(blob.samples[a:a + n].copy(), blob.sample_rate),
                                    MidiSegment.from_json(row["midi"], config.max_notes)))
    if len(items) != info["n_items"]:
        raise ValueError(f"manifest has {len(items)} items, expected {info['n_items']}")
    return items, config, int(info["seed"])
