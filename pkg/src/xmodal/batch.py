"""Assembly of model inputs from corpus items.

Descriptors are computed from the item audio/MIDI and aligned to whatever
time base the arm's injection mechanism consumes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np

from .audio import audio_descriptor
from .corpus import CorpusItem
from .encoders import ArmConfig, AudioDims
from .midi import padded_d4
from .rng import generator

AUDIO_KINDS = ("a4", "a7", "a8", "a9")


@dataclass
class Batch:
    audio: np.ndarray  # (B, n_samples)
    midi: dict[str, np.ndarray]  # padded (B, N) arrays
    audio_desc: np.ndarray | None = None
    midi_desc: np.ndarray | None = None
    tower_desc: np.ndarray | None = None
    audio_desc_kind: str | None = None
    midi_desc_kind: str | None = None
    tower_desc_kind: str | None = None

    def __len__(self) -> int:
        return self.audio.shape[0]

    def replace(self, **changes) -> "Batch":
        return replace(self, **changes)


class DescriptorCache:
    """Memoizes audio descriptors keyed by a digest of the samples."""

    def __init__(self):
        self._store: dict[tuple, np.ndarray] = {}

    def get(self, kind: str, samples: np.ndarray, dims: AudioDims) -> np.ndarray:
        digest = hashlib.blake2b(np.ascontiguousarray(samples).tobytes(), digest_size=16).digest()
        key = (kind, digest, dims.sample_rate, dims.nfft, dims.hop)
        if key not in self._store:
            self._store[key] = audio_descriptor(kind, samples, dims.sample_rate, dims.nfft, dims.hop).values
        return self._store[key]

    def __len__(self) -> int:
        return len(self._store)


def descriptor_times(dims: AudioDims) -> np.ndarray:
    return np.arange(dims.n_desc_frames) * dims.hop / dims.sample_rate


def feature_times(dims: AudioDims) -> np.ndarray:
    """Centre time of each CNN output frame, spread evenly over the segment."""
    dur = dims.n_samples / dims.sample_rate
    return (np.arange(dims.n_frames) + 0.5) * dur / dims.n_frames


def resample(values: np.ndarray, src_t: np.ndarray, dst_t: np.ndarray) -> np.ndarray:
    """Per-column linear interpolation of a (T, k) matrix onto new times (edges held)."""
    return np.stack([np.interp(dst_t, src_t, values[:, j]) for j in range(values.shape[1])], axis=1)


def _audio_side(item: CorpusItem, arm: ArmConfig, cache: DescriptorCache) -> np.ndarray | None:
    inj = arm.audio_injection
    if inj is None:
        return None
    dims = arm.audio
    if inj.descriptor == "d4":  # cross-modal: note intervals on the CNN time base
        n = len(item.midi)
        d4 = padded_d4(item.midi)[:n]
        onsets = np.array([e.onset_s for e in item.midi.events])
        return resample(d4, onsets, feature_times(dims)) if n > 1 else np.repeat(d4, dims.n_frames, 0)
    raw = cache.get(inj.descriptor, item.audio.samples, dims)
    if inj.mechanism == "concat":
        return resample(raw, descriptor_times(dims), feature_times(dims))
    return raw


def _midi_side(item: CorpusItem, arm: ArmConfig, cache: DescriptorCache) -> np.ndarray | None:
    inj = arm.midi_injection
    if inj is None:
        return None
    if inj.descriptor == "d4":
        return padded_d4(item.midi)
    # cross-modal: audio descriptor sampled at each note onset
    raw = cache.get(inj.descriptor, item.audio.samples, arm.audio)
    out = np.zeros((item.midi.max_notes, raw.shape[1]))
    n = len(item.midi)
    if n:
        onsets = np.array([e.onset_s for e in item.midi.events])
        out[:n] = resample(raw, descriptor_times(arm.audio), onsets)
    return out


def apply_control(values: np.ndarray, mode: str, rng: np.random.Generator,
                  mask: np.ndarray | None = None) -> np.ndarray:
    """Replace descriptor content: ``zero``, ``random`` (standard normal) or ``shuffled`` (across rows)."""
    if mode == "none":
        return values
    if mode == "zero":
        out = np.zeros_like(values)
    elif mode == "random":
        out = rng.standard_normal(values.shape)
    elif mode == "shuffled":
        out = values[rng.permutation(values.shape[0])]
    else:
        raise ValueError(f"unknown control mode {mode!r}")
    if mask is not None:
        out = out * mask[..., None]
    return out


def make_batch(items: list[CorpusItem], arm: ArmConfig, cache: DescriptorCache | None = None,
               control_seed: int = 0, control_key=()) -> Batch:
    """Stack items into model inputs for ``arm``.

    Control arms replace the injected descriptors here, with a stream keyed by
    ``control_seed`` and ``control_key`` so it is reproducible.
    """
    if not items:
        raise ValueError("cannot build an empty batch")
    cache = cache if cache is not None else DescriptorCache()
    dims = arm.audio
    for it in items:
        if len(it.audio.samples) != dims.n_samples or it.audio.sample_rate != dims.sample_rate:
            raise ValueError(f"item {it.item_id}: audio {len(it.audio.samples)} samples @ {it.audio.sample_rate} Hz, "
                             f"arm expects {dims.n_samples} @ {dims.sample_rate}")
        if it.midi.max_notes != arm.midi.max_notes:
            raise ValueError(f"item {it.item_id}: MIDI capacity {it.midi.max_notes}, arm expects {arm.midi.max_notes}")
    audio = np.stack([it.audio.samples for it in items]).astype(np.float64)
    padded = [it.midi.padded() for it in items]
    midi = {k: np.stack([p[k] for p in padded]) for k in padded[0]}

    def stack(fn):
        vals = [fn(it, arm, cache) for it in items]
        return None if vals[0] is None else np.stack(vals)

    audio_desc = stack(_audio_side)
    midi_desc = stack(_midi_side)
    tower_desc = None
    if arm.tower is not None:
        tower_desc = np.stack([cache.get(arm.tower.descriptor, it.audio.samples, dims) for it in items])

    if arm.control != "none":
        rng = generator(control_seed, "control", *control_key)
        if audio_desc is not None:
            audio_desc = apply_control(audio_desc, arm.control, rng)
        if midi_desc is not None:
            midi_desc = apply_control(midi_desc, arm.control, rng, midi["mask"].astype(float))
    return Batch(audio, midi, audio_desc, midi_desc, tower_desc,
                 arm.audio_injection.descriptor if arm.audio_injection else None,
                 arm.midi_injection.descriptor if arm.midi_injection else None,
                 arm.tower.descriptor if arm.tower else None)
