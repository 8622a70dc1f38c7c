"""STFT front-end and audio-side descriptors.

A4 (octave-band energy dynamics), A7 (just-intonation ratio attractors),
A8 (onset-gated chroma), A9 (IDF-weighted attractors), plain chroma, and the
additive-noise perturbation used by the invariance tests.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import get_window

A4_EPS = 1e-5
# bands whose delta std falls below these are zeroed / flagged
DEGENERATE_STD = 1e-12
NEAR_ZERO_STD = 1e-4

# nominal octave-band edges in Hz (24 kHz / nfft 2048 reference grid)
BAND_HZ = ((47, 94), (94, 188), (188, 375), (375, 750),
           (750, 1500), (1500, 3000), (3000, 6000), (6000, 12000))

# just-intonation attractors: (numerator, denominator)
ATTRACTOR_RATIOS = ((1, 1), (16, 15), (9, 8), (6, 5), (5, 4), (4, 3),
                    (7, 5), (3, 2), (8, 5), (5, 3), (7, 4), (15, 8))
ATTRACTOR_SIGMA = 0.02
A7_TOP_PEAKS = 8
A7_MIN_HZ = 50.0
# peaks quieter than this fraction of the frame maximum are ignored; keeps
# Hann sidelobes (-31 dB) out of the pair set
A7_PEAK_FLOOR = 0.05
A7_EPS = 1e-8
A9_TAU = 0.05
A8_EPS = 1e-8
CHROMA_REF_HZ = 32.7


@dataclass(frozen=True)
class AudioSegment:
    samples: np.ndarray
    sample_rate: int

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class Spectrogram:
    mags: np.ndarray  # frames x bins
    nfft: int
    hop: int
    sample_rate: int

    @property
    def n_frames(self) -> int:
        return self.mags.shape[0]

    @property
    def bin_hz(self) -> float:
        return self.sample_rate / self.nfft


@dataclass(frozen=True)
class DescriptorTensor:
    kind: str
    values: np.ndarray  # frames x dims
    flags: tuple[str, ...] = field(default=())

    DIMS = {"a4": 8, "a7": 12, "a8": 12, "a9": 12, "d4": 4}

    def __post_init__(self):
        want = self.DIMS.get(self.kind)
        if want is None:
            raise ValueError(f"unknown descriptor kind {self.kind!r}")
        if self.values.ndim != 2 or self.values.shape[1] != want:
            raise ValueError(f"{self.kind} descriptor must be frames x {want}, got {self.values.shape}")


def stft_magnitude(audio: np.ndarray, nfft: int = 2048, hop: int = 512,
                   sample_rate: int = 24000) -> Spectrogram:
    """Hann-windowed, reflect-centred magnitude STFT.

    Yields ``len(audio) // hop + 1`` frames and ``nfft // 2 + 1`` bins.
    """
    x = np.asarray(audio, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("audio must be a non-empty 1-D array")
    if nfft <= 0 or nfft & (nfft - 1):
        raise ValueError(f"nfft must be a power of two, got {nfft}")
    pad = nfft // 2
    if x.size <= pad:
        raise ValueError(f"audio of {x.size} samples too short for reflect padding with nfft={nfft}")
    xp = np.pad(x, pad, mode="reflect")
    n_frames = 1 + (xp.size - nfft) // hop
    frames = np.lib.stride_tricks.sliding_window_view(xp, nfft)[::hop][:n_frames]
    window = get_window("hann", nfft, fftbins=True)
    mags = np.abs(np.fft.rfft(frames * window, axis=1))
    return Spectrogram(mags=mags, nfft=nfft, hop=hop, sample_rate=sample_rate)


def _hz_to_bin(hz: float, sample_rate: int, nfft: int) -> int:
    n_bins = nfft // 2 + 1
    if hz >= sample_rate / 2:
        return n_bins
    return min(int(math.floor(hz * nfft / sample_rate + 0.5)), n_bins)


def band_edges(band_index: int, sample_rate: int = 24000, nfft: int = 2048) -> tuple[int, int, int, int]:
    """(lo_hz, hi_hz, bin_lo, bin_hi) for an octave band; bins are half-open.

    Hz ranges are fixed; bins are recomputed for the given grid. Bands above
    Nyquist come back empty (``bin_lo == bin_hi``).
    """
    if not 0 <= band_index < len(BAND_HZ):
        raise IndexError(f"band index must be in 0..7, got {band_index}")
    lo, hi = BAND_HZ[band_index]
    return lo, hi, _hz_to_bin(lo, sample_rate, nfft), _hz_to_bin(hi, sample_rate, nfft)


def band_table(sample_rate: int = 24000, nfft: int = 2048) -> list[tuple[int, int, int, int]]:
    return [band_edges(b, sample_rate, nfft) for b in range(len(BAND_HZ))]


def band_log_energy(spec: Spectrogram) -> np.ndarray:
    """Mean log1p magnitude per octave band, frames x 8 (empty bands are 0)."""
    logmag = np.log1p(spec.mags)
    out = np.zeros((spec.n_frames, len(BAND_HZ)))
    for b, (_, _, lo, hi) in enumerate(band_table(spec.sample_rate, spec.nfft)):
        if hi > lo:
            out[:, b] = logmag[:, lo:hi].mean(axis=1)
    return out


def a4_descriptor(audio: np.ndarray, sample_rate: int = 24000, nfft: int = 2048,
                  hop: int = 512) -> DescriptorTensor:
    """Per-band z-scored temporal deltas of octave-band log energy."""
    spec = stft_magnitude(audio, nfft, hop, sample_rate)
    energy = band_log_energy(spec)
    delta = np.zeros_like(energy)
    delta[:-1] = energy[1:] - energy[:-1]
    mu = delta.mean(axis=0)
    sigma = delta.std(axis=0)
    out = (delta - mu) / (sigma + A4_EPS)
    degenerate = sigma <= DEGENERATE_STD
    out[:, degenerate] = 0.0
    flags = tuple(f"near_zero_variance:band{b}" for b in np.flatnonzero(sigma < NEAR_ZERO_STD))
    return DescriptorTensor("a4", out, flags)


def attractor_table() -> list[tuple[str, float, float]]:
    """(ratio, octave-folded log2 value, cents) per attractor."""
    rows = []
    for num, den in ATTRACTOR_RATIOS:
        l2 = math.log2(num / den) % 1.0
        rows.append((f"{num}/{den}", l2, 1200.0 * l2))
    return rows


ATTRACTOR_LOG2 = np.array([r[1] for r in attractor_table()])


def spectral_peaks(mags: np.ndarray, bin_hz: float, k: int = A7_TOP_PEAKS,
                   min_hz: float = A7_MIN_HZ, floor: float = A7_PEAK_FLOOR) -> tuple[np.ndarray, np.ndarray]:
    """Top-``k`` local maxima of one spectrum frame, returned in frequency order.

    Returns (frequencies_hz, magnitudes).
    """
    if mags.size < 3 or mags.max() <= 0:
        return np.empty(0), np.empty(0)
    m = mags
    idx = np.arange(1, m.size - 1)
    is_peak = (m[1:-1] > m[:-2]) & (m[1:-1] >= m[2:])
    idx = idx[is_peak]
    idx = idx[(idx * bin_hz >= min_hz) & (m[idx] >= floor * m.max()) & (m[idx] > 0)]
    if idx.size == 0:
        return np.empty(0), np.empty(0)
    order = np.argsort(-m[idx], kind="stable")[:k]
    chosen = np.sort(idx[order])
    return chosen * bin_hz, m[chosen]


def _attractor_raw(spec: Spectrogram) -> tuple[np.ndarray, np.ndarray]:
    """Unnormalized attractor activations and a per-frame has-pairs mask."""
    raw = np.zeros((spec.n_frames, len(ATTRACTOR_RATIOS)))
    has_pairs = np.zeros(spec.n_frames, dtype=bool)
    iu = None
    for t in range(spec.n_frames):
        freqs, mags = spectral_peaks(spec.mags[t], spec.bin_hz)
        if freqs.size < 2:
            continue
        has_pairs[t] = True
        if iu is None or iu[0].size != freqs.size * (freqs.size - 1) // 2:
            iu = np.triu_indices(freqs.size, k=1)
        i, j = iu
        r = np.log2(freqs[j] / freqs[i]) % 1.0
        w = np.sqrt(mags[i] * mags[j])
        kern = np.exp(-((r[:, None] - ATTRACTOR_LOG2[None, :]) ** 2) / (2 * ATTRACTOR_SIGMA ** 2))
        raw[t] = (w[:, None] * kern).sum(axis=0)
    return raw, has_pairs


def a7_descriptor(audio: np.ndarray, sample_rate: int = 24000, nfft: int = 2048,
                  hop: int = 512) -> DescriptorTensor:
    """Soft assignment of pairwise peak ratios onto 12 just-intonation attractors."""
    spec = stft_magnitude(audio, nfft, hop, sample_rate)
    raw, has_pairs = _attractor_raw(spec)
    out = raw / (raw.sum(axis=1, keepdims=True) + A7_EPS)
    out[~has_pairs] = 1.0 / len(ATTRACTOR_RATIOS)
    flags = ("degenerate_frames",) if not has_pairs.all() else ()
    return DescriptorTensor("a7", out, flags)


def idf_weights(raw: np.ndarray, tau: float = A9_TAU) -> np.ndarray:
    df = (raw > tau).mean(axis=0)
    return np.clip(np.log(1.0 / (df + 1e-3)), 0.0, 5.0)


def a9_descriptor(audio: np.ndarray, sample_rate: int = 24000, nfft: int = 2048,
                  hop: int = 512) -> DescriptorTensor:
    """A7 activations reweighted by inverse frame frequency of each attractor."""
    spec = stft_magnitude(audio, nfft, hop, sample_rate)
    raw, has_pairs = _attractor_raw(spec)
    weighted = raw * idf_weights(raw)[None, :]
    total = weighted.sum(axis=1, keepdims=True)
    out = np.divide(weighted, total, out=np.zeros_like(weighted), where=total > 0)
    out[~has_pairs] = 1.0 / len(ATTRACTOR_RATIOS)
    flags = []
    if not has_pairs.all():
        flags.append("degenerate_frames")
    if np.any(has_pairs & (total[:, 0] <= 0)):
        flags.append("zero_mass_frames")
    return DescriptorTensor("a9", out, tuple(flags))


def pitch_class_of_bins(n_bins: int, sample_rate: int, nfft: int) -> np.ndarray:
    """Nearest pitch class (0 = C) of each bin; -1 for the DC bin."""
    k = np.arange(n_bins)
    pc = np.full(n_bins, -1)
    f = k[1:] * sample_rate / nfft
    pc[1:] = np.floor(12.0 * np.log2(f / CHROMA_REF_HZ) + 0.5).astype(int) % 12
    return pc


def _chroma_energy(spec: Spectrogram) -> np.ndarray:
    pc = pitch_class_of_bins(spec.mags.shape[1], spec.sample_rate, spec.nfft)
    power = spec.mags ** 2
    out = np.zeros((spec.n_frames, 12))
    for c in range(12):
        out[:, c] = power[:, pc == c].sum(axis=1)
    return out


def chroma(audio: np.ndarray, sample_rate: int = 24000, nfft: int = 2048, hop: int = 512) -> np.ndarray:
    """Per-frame pitch-class energy, normalized to sum to 1 (silent frames stay 0)."""
    c = _chroma_energy(stft_magnitude(audio, nfft, hop, sample_rate))
    total = c.sum(axis=1, keepdims=True)
    return np.divide(c, total + A8_EPS, out=np.zeros_like(c), where=total > 0)


def spectral_flux(spec: Spectrogram) -> np.ndarray:
    flux = np.zeros(spec.n_frames)
    flux[1:] = np.maximum(0.0, spec.mags[1:] - spec.mags[:-1]).sum(axis=1)
    return flux


def onset_gated_chroma(audio: np.ndarray, sample_rate: int = 24000, nfft: int = 2048,
                       hop: int = 512) -> np.ndarray:
    """Chroma energy scaled by flux / max(flux), before per-frame normalization."""
    spec = stft_magnitude(audio, nfft, hop, sample_rate)
    flux = spectral_flux(spec)
    peak = flux.max()
    if peak <= 0:
        return np.zeros((spec.n_frames, 12))
    return _chroma_energy(spec) * (flux / peak)[:, None]


def a8_descriptor(audio: np.ndarray, sample_rate: int = 24000, nfft: int = 2048,
                  hop: int = 512) -> DescriptorTensor:
    gated = onset_gated_chroma(audio, sample_rate, nfft, hop)
    total = gated.sum(axis=1, keepdims=True)
    out = np.divide(gated, total + A8_EPS, out=np.zeros_like(gated), where=total > 0)
    flags = ("zero_flux",) if not np.any(total > 0) else ()
    return DescriptorTensor("a8", out, flags)


AUDIO_DESCRIPTORS = {
    "a4": a4_descriptor,
    "a7": a7_descriptor,
    "a8": a8_descriptor,
    "a9": a9_descriptor,
}


def audio_descriptor(kind: str, audio: np.ndarray, sample_rate: int, nfft: int, hop: int) -> DescriptorTensor:
    try:
        fn = AUDIO_DESCRIPTORS[kind]
    except KeyError:
        raise ValueError(f"unknown audio descriptor {kind!r}") from None
    return fn(audio, sample_rate, nfft, hop)


def signal_power(x: np.ndarray) -> float:
    return float(np.mean(np.asarray(x, dtype=np.float64) ** 2))


def add_noise_snr(audio: np.ndarray, snr_db: float, seed: int) -> np.ndarray:
    """Add white Gaussian noise at ``snr_db``; ``math.inf`` returns the input unchanged.

    The noise draw is rescaled so the realized SNR equals the request exactly.
    """
    x = np.asarray(audio)
    if math.isinf(snr_db) and snr_db > 0:
        return x.copy()
    p_signal = signal_power(x)
    if p_signal <= 0:
        raise ValueError("cannot set an SNR on a silent signal")
    rng = np.random.Generator(np.random.Philox(seed))
    noise = rng.standard_normal(x.shape)
    noise *= math.sqrt(p_signal / (10.0 ** (snr_db / 10.0)) / signal_power(noise))
    return (x + noise).astype(x.dtype)


def dump_descriptor(desc: DescriptorTensor) -> bytes:
    """One JSON header line (kind, shape, flags) followed by row-major float32 LE values."""
    header = json.dumps({"kind": desc.kind, "shape": list(desc.values.shape),
                         "flags": list(desc.flags), "dtype": "float32le"})
    return header.encode() + b"\n" + np.ascontiguousarray(desc.values, dtype="<f4").tobytes()


def load_descriptor(data: bytes) -> DescriptorTensor:
    head, _, payload = data.partition(b"\n")
    meta = json.loads(head.decode())
    shape = tuple(meta["shape"])
    values = np.frombuffer(payload, dtype="<f4")
    if values.size != int(np.prod(shape)):
        raise ValueError(f"payload has {values.size} values, header shape {shape}")
    return DescriptorTensor(meta["kind"], values.reshape(shape).astype(np.float32), tuple(meta["flags"]))
