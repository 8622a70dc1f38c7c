"""Symbolic note events, the D4 interval descriptor and symbolic perturbations."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

N_DURATION_BUCKETS = 32
DURATION_MIN_S = 0.05
DURATION_MAX_S = 4.0
DURATION_EDGES = np.geomspace(DURATION_MIN_S, DURATION_MAX_S, N_DURATION_BUCKETS)


@dataclass(frozen=True)
class NoteEvent:
    pitch: int
    velocity: int
    duration_s: float
    onset_s: float

    def __post_init__(self):
        if not 0 <= self.pitch <= 127:
            raise ValueError(f"pitch out of range: {self.pitch}")
        if not 0 <= self.velocity <= 127:
            raise ValueError(f"velocity out of range: {self.velocity}")
        if not self.duration_s > 0:
            raise ValueError(f"duration must be positive: {self.duration_s}")
        if self.onset_s < 0:
            raise ValueError(f"onset must be non-negative: {self.onset_s}")

    def to_list(self) -> list:
        return [self.pitch, self.velocity, self.duration_s, self.onset_s]

    @classmethod
    def from_list(cls, row) -> "NoteEvent":
        p, v, d, o = row
        return cls(int(p), int(v), float(d), float(o))


@dataclass(frozen=True)
class MidiSegment:
    """Onset-ordered notes plus the encoder capacity they are padded to."""

    events: tuple[NoteEvent, ...]
    max_notes: int = 64

    def __post_init__(self):
        if len(self.events) > self.max_notes:
            raise ValueError(f"{len(self.events)} events exceed capacity {self.max_notes}")
        onsets = [e.onset_s for e in self.events]
        if any(b < a for a, b in zip(onsets, onsets[1:])):
            raise ValueError("events must be sorted by onset")

    @property
    def pitches(self) -> np.ndarray:
        return np.array([e.pitch for e in self.events], dtype=np.int64)

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.max_notes, dtype=bool)
        m[: len(self.events)] = True
        return m

    def __len__(self) -> int:
        return len(self.events)

    def padded(self) -> dict[str, np.ndarray]:
        """Fixed-length integer/float arrays for the encoder."""
        n = self.max_notes
        pitch = np.zeros(n, dtype=np.int64)
        vel = np.zeros(n, dtype=np.int64)
        dur = np.zeros(n, dtype=np.int64)
        onset = np.zeros(n)
        for i, e in enumerate(self.events):
            pitch[i] = e.pitch
            vel[i] = e.velocity
            dur[i] = bucket_duration(e.duration_s)
            onset[i] = e.onset_s
        return {"pitch": pitch, "velocity": vel, "duration": dur, "onset": onset, "mask": self.mask}

    def to_json(self) -> list:
        return [e.to_list() for e in self.events]

    @classmethod
    def from_json(cls, rows, max_notes: int = 64) -> "MidiSegment":
        return cls(tuple(NoteEvent.from_list(r) for r in rows), max_notes)


def sort_events(events) -> tuple[NoteEvent, ...]:
    return tuple(sorted(events, key=lambda e: (e.onset_s, e.pitch)))


def d4_descriptor(pitches) -> np.ndarray:
    """Neighbour intervals per note: raw /24 and octave-clamped /12 forms, N x 4.

    Missing neighbours at either end contribute a zero interval.
    """
    p = np.asarray(pitches, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("d4 needs at least one pitch")
    prev_iv = np.zeros_like(p)
    next_iv = np.zeros_like(p)
    prev_iv[1:] = p[1:] - p[:-1]
    next_iv[:-1] = p[1:] - p[:-1]
    return np.stack([
        prev_iv / 24.0,
        next_iv / 24.0,
        np.clip(prev_iv / 12.0, -2.0, 2.0) / 2.0,
        np.clip(next_iv / 12.0, -2.0, 2.0) / 2.0,
    ], axis=1)


def padded_d4(segment: MidiSegment) -> np.ndarray:
    out = np.zeros((segment.max_notes, 4))
    if len(segment):
        out[: len(segment)] = d4_descriptor(segment.pitches)
    return out


def bucket_duration(duration_s: float) -> int:
    """Index of the half-open log-spaced interval containing ``duration_s``.

    Durations outside [0.05, 4.0] s clamp to the end buckets.
    """
    if not duration_s > 0:
        raise ValueError(f"duration must be positive: {duration_s}")
    i = int(np.searchsorted(DURATION_EDGES, duration_s, side="right")) - 1
    return min(max(i, 0), N_DURATION_BUCKETS - 1)


def transpose(segment: MidiSegment, semitones: int) -> MidiSegment:
    """Shift every pitch; results outside 0..127 are clamped."""
    if abs(semitones) > 24:
        raise ValueError(f"transposition limited to +-24 semitones, got {semitones}")
    if semitones == 0:
        return segment
    events = tuple(replace(e, pitch=min(max(e.pitch + semitones, 0), 127)) for e in segment.events)
    return MidiSegment(events, segment.max_notes)


def scale_velocity(segment: MidiSegment, factor: float) -> MidiSegment:
    if not factor > 0:
        raise ValueError(f"velocity factor must be positive, got {factor}")
    events = tuple(replace(e, velocity=min(max(round_half_up(e.velocity * factor), 0), 127))
                   for e in segment.events)
    return MidiSegment(events, segment.max_notes)


def midi_hz(pitch: float) -> float:
    return 440.0 * 2.0 ** ((pitch - 69) / 12.0)


def is_clamp_free(segment: MidiSegment, semitones: int) -> bool:
    p = segment.pitches
    return bool(p.size == 0 or (p.min() + semitones >= 0 and p.max() + semitones <= 127))


def shift_samples(audio: np.ndarray, shift: int) -> np.ndarray:
    """Delay (positive) or advance (negative) ``audio``, zero-filling the exposed edge."""
    n = len(audio)
    if abs(shift) >= n:
        raise ValueError(f"shift {shift} must be smaller than the segment length {n}")
    out = np.zeros_like(audio)
    if shift > 0:
        out[shift:] = audio[:-shift]
    elif shift < 0:
        out[:shift] = audio[-shift:]
    else:
        out[:] = audio
    return out


def velocity_curve(velocity: int, exponent: float) -> float:
    return (velocity / 127.0) ** exponent


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))
