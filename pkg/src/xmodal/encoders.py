"""Audio and MIDI encoders, projection heads and descriptor injection.

Modules declare their parameters with shapes and init rules; arrays are
only allocated by :func:`initialize`, so parameter counts of full-sized
configurations can be computed without building them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import tensor as T
from .rng import generator, truncated_normal
from .tensor import Tensor


# ---------------------------------------------------------------------------
# module system
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamSpec:
    shape: tuple[int, ...]
    init: str = "fan_in"  # fan_in | normal | zeros | ones
    std: float = 0.02


class Module:
    """Container of named parameters, buffers and child modules."""

    def __init__(self):
        self._specs: dict[str, ParamSpec] = {}
        self._params: dict[str, Tensor] = {}
        self._buffers: dict[str, tuple[int, ...]] = {}
        self._buffer_values: dict[str, np.ndarray] = {}
        self._children: dict[str, Module] = {}
        self.training = True

    def declare(self, name: str, shape, init: str = "fan_in", std: float = 0.02) -> None:
        self._specs[name] = ParamSpec(tuple(int(s) for s in shape), init, std)

    def declare_buffer(self, name: str, shape) -> None:
        self._buffers[name] = tuple(int(s) for s in shape)

    def add(self, name: str, module: "Module | None") -> "Module | None":
        if module is not None:
            self._children[name] = module
        return module

    def p(self, name: str) -> Tensor:
        return self._params[name]

    def buf(self, name: str) -> np.ndarray:
        return self._buffer_values[name]

    def named_specs(self, prefix: str = "") -> Iterator[tuple[str, ParamSpec]]:
        for name, spec in self._specs.items():
            yield prefix + name, spec
        for cname, child in self._children.items():
            yield from child.named_specs(f"{prefix}{cname}.")

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for cname, child in self._children.items():
            yield from child.named_modules(f"{prefix}{cname}.")

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for path, mod in self.named_modules():
            for name, t in mod._params.items():
                yield (f"{path}.{name}" if path else name), t

    def named_buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        for path, mod in self.named_modules():
            for name, arr in mod._buffer_values.items():
                yield (f"{path}.{name}" if path else name), arr

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def n_params(self) -> int:
        return sum(int(np.prod(s.shape)) for _, s in self.named_specs())

    def train(self, mode: bool = True) -> "Module":
        for _, mod in self.named_modules():
            mod.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {name: t.data for name, t in self.named_parameters()}
        out.update({f"buffer:{name}": arr for name, arr in self.named_buffers()})
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise KeyError(f"state mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for path, mod in self.named_modules():
            pre = f"{path}." if path else ""
            for name, t in mod._params.items():
                src = np.asarray(state[pre + name])
                if src.shape != t.data.shape:
                    raise ValueError(f"{pre + name}: shape {src.shape} != {t.data.shape}")
                t.data = src.astype(t.data.dtype).copy()
            for name, arr in mod._buffer_values.items():
                src = np.asarray(state[f"buffer:{pre}{name}"])
                mod._buffer_values[name] = src.astype(arr.dtype).copy()


def initialize(model: Module, seed: int, dtype=np.float32) -> Module:
    """Allocate every declared parameter from a per-path seeded stream.

    Parameters are keyed by path, so two arms built from the same seed share
    identical weights for every component they have in common.
    """
    for path, mod in model.named_modules():
        pre = f"{path}." if path else ""
        for name, spec in mod._specs.items():
            full = pre + name
            if spec.init == "zeros":
                arr = np.zeros(spec.shape, dtype=dtype)
            elif spec.init == "ones":
                arr = np.ones(spec.shape, dtype=dtype)
            else:
                std = spec.std if spec.init == "normal" else 1.0 / math.sqrt(_fan_in(spec.shape))
                arr = truncated_normal(generator(seed, "init", full), spec.shape, std=std, dtype=dtype)
            mod._params[name] = Tensor(arr, requires_grad=True)
        for name, shape in mod._buffers.items():
            init = np.ones if name.endswith("var") else np.zeros
            mod._buffer_values[name] = init(shape, dtype=dtype)
    return model


def _fan_in(shape: tuple[int, ...]) -> int:
    if len(shape) == 3:  # conv (out, in, k)
        return shape[1] * shape[2]
    return shape[0]


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

class Linear(Module):
    def __init__(self, d_in: int, d_out: int, bias: bool = True, zero: bool = False):
        super().__init__()
        self.d_in, self.d_out, self.bias = d_in, d_out, bias
        self.declare("weight", (d_in, d_out), "zeros" if zero else "fan_in")
        if bias:
            self.declare("bias", (d_out,), "zeros")

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.p("weight"), self.p("bias") if self.bias else None)


class LayerNorm(Module):
    def __init__(self, d: int):
        super().__init__()
        self.declare("gamma", (d,), "ones")
        self.declare("beta", (d,), "zeros")

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.p("gamma"), self.p("beta"))


class BatchNorm(Module):
    def __init__(self, d: int, momentum: float = 0.1):
        super().__init__()
        self.momentum = momentum
        self.declare("gamma", (d,), "ones")
        self.declare("beta", (d,), "zeros")
        self.declare_buffer("running_mean", (d,))
        self.declare_buffer("running_var", (d,))

    def __call__(self, x: Tensor) -> Tensor:
        return T.batch_norm(x, self.p("gamma"), self.p("beta"), self.buf("running_mean"),
                            self.buf("running_var"), self.training, self.momentum)


class ConvBlock(Module):
    """Conv1d, GroupNorm, GELU."""

    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int, padding: int, groups: int):
        super().__init__()
        self.stride, self.padding, self.groups = stride, padding, groups
        self.declare("weight", (c_out, c_in, kernel))
        self.declare("bias", (c_out,), "zeros")
        self.declare("gn_gamma", (c_out,), "ones")
        self.declare("gn_beta", (c_out,), "zeros")

    def __call__(self, x: Tensor) -> Tensor:
        h = T.conv1d(x, self.p("weight"), self.p("bias"), self.stride, self.padding)
        h = T.group_norm(h, self.groups, self.p("gn_gamma"), self.p("gn_beta"))
        return T.gelu(h)


class Dropout:
    """Inverted dropout drawing masks from a generator owned by the model."""

    def __init__(self, p: float, source: "RngSource"):
        self.p, self.source = p, source

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if not training or self.p <= 0:
            return x
        return T.dropout(x, self.p, self.source.rng, True)


class RngSource:
    def __init__(self):
        self.rng = np.random.Generator(np.random.Philox(0))

    def reseed(self, seed: int, *names) -> None:
        self.rng = generator(seed, "dropout", *names)


class MultiHeadAttention(Module):
    def __init__(self, d_model: int, n_heads: int, d_kv: int | None = None):
        super().__init__()
        if d_model % n_heads:
            raise ValueError(f"d_model {d_model} not divisible by {n_heads} heads")
        self.d_model, self.n_heads = d_model, n_heads
        self.q = self.add("q", Linear(d_model, d_model))
        self.k = self.add("k", Linear(d_kv or d_model, d_model))
        self.v = self.add("v", Linear(d_kv or d_model, d_model))
        self.o = self.add("o", Linear(d_model, d_model))

    def _split(self, x: Tensor) -> Tensor:
        b, t, _ = x.shape
        return T.transpose(x.reshape(b, t, self.n_heads, self.d_model // self.n_heads), (0, 2, 1, 3))

    def __call__(self, xq: Tensor, xkv: Tensor, key_mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
        b, tq, _ = xq.shape
        mask = None if key_mask is None else np.asarray(key_mask, bool)[:, None, None, :]
        out, w = T.scaled_dot_product_attention(self._split(self.q(xq)), self._split(self.k(xkv)),
                                                self._split(self.v(xkv)), mask)
        out = T.transpose(out, (0, 2, 1, 3)).reshape(b, tq, self.d_model)
        return self.o(out), w


class FeedForward(Module):
    def __init__(self, d: int, d_ff: int):
        super().__init__()
        self.fc1 = self.add("fc1", Linear(d, d_ff))
        self.fc2 = self.add("fc2", Linear(d_ff, d))

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


@dataclass(frozen=True)
class MoESpec:
    n_experts: int = 4
    top_k: int = 2
    balance_coef: float = 0.01
    entropy_coef: float = 0.01

    def __post_init__(self):
        if not 1 <= self.top_k <= self.n_experts:
            raise ValueError(f"need 1 <= top_k <= n_experts, got k={self.top_k}, E={self.n_experts}")


class MoEFeedForward(Module):
    """Sparse top-k gated mixture of feed-forward experts.

    Gates are the softmax probabilities of the selected experts (not
    renormalized). The auxiliary loss is the squared coefficient of variation
    of per-expert importance plus ``log E - H(mean gate distribution)``.
    """

    def __init__(self, d: int, d_ff: int, spec: MoESpec):
        super().__init__()
        self.spec = spec
        self.gate = self.add("gate", Linear(d, spec.n_experts))
        self.experts = [self.add(f"expert{i}", FeedForward(d, d_ff)) for i in range(spec.n_experts)]
        self.last_gates: np.ndarray | None = None

    def __call__(self, x: Tensor, token_mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
        e, k = self.spec.n_experts, self.spec.top_k
        probs = T.softmax(self.gate(x), axis=-1)
        order = np.argsort(-probs.data, axis=-1, kind="stable")
        keep = np.zeros_like(probs.data)
        np.put_along_axis(keep, order[..., :k], 1.0, axis=-1)
        gates = probs * Tensor(keep)
        self.last_gates = gates.data
        y = None
        for i, expert in enumerate(self.experts):
            term = T.getitem(gates, (..., slice(i, i + 1))) * expert(x)
            y = term if y is None else y + term

        w = np.ones(x.shape[:-1], dtype=x.dtype) if token_mask is None else np.asarray(token_mask, x.dtype)
        w = (w / w.sum())[..., None]
        importance = (gates * Tensor(w)).sum(axis=tuple(range(x.ndim - 1)))  # (E,)
        mu = importance.mean()
        cv2 = ((importance - mu) ** 2).mean() / (mu * mu + 1e-10)
        p_bar = (probs * Tensor(w)).sum(axis=tuple(range(x.ndim - 1)))
        entropy = -(p_bar * T.log(p_bar + 1e-10)).sum()
        aux = cv2 * self.spec.balance_coef + (math.log(e) - entropy) * self.spec.entropy_coef
        return y, aux


class TransformerBlock(Module):
    def __init__(self, d: int, n_heads: int, d_ff: int, norm_first: bool, dropout: float,
                 rng: RngSource, moe: MoESpec | None = None):
        super().__init__()
        self.norm_first = norm_first
        self.attn = self.add("attn", MultiHeadAttention(d, n_heads))
        self.ln1 = self.add("ln1", LayerNorm(d))
        self.ln2 = self.add("ln2", LayerNorm(d))
        self.ffn = self.add("moe" if moe else "ffn", MoEFeedForward(d, d_ff, moe) if moe else FeedForward(d, d_ff))
        self.drop = Dropout(dropout, rng)
        self.last_attention: np.ndarray | None = None

    def _ff(self, x: Tensor, mask) -> tuple[Tensor, Tensor | None]:
        if isinstance(self.ffn, MoEFeedForward):
            return self.ffn(x, mask)
        return self.ffn(x), None

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> tuple[Tensor, Tensor | None]:
        if self.norm_first:
            h = self.ln1(x)
            a, w = self.attn(h, h, mask)
            x = x + self.drop(a, self.training)
            f, aux = self._ff(self.ln2(x), mask)
            x = x + self.drop(f, self.training)
        else:
            a, w = self.attn(x, x, mask)
            x = self.ln1(x + self.drop(a, self.training))
            f, aux = self._ff(x, mask)
            x = self.ln2(x + self.drop(f, self.training))
        self.last_attention = w.data
        return x, aux


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(0, d, 2)[None, :]
    angle = pos / np.power(10000.0, i / d)
    out = np.zeros((n, d))
    out[:, 0::2] = np.sin(angle)
    out[:, 1::2] = np.cos(angle[:, : d // 2])
    return out


# ---------------------------------------------------------------------------
# injection mechanisms
# ---------------------------------------------------------------------------

class ConcatInjection(Module):
    """h' = LayerNorm(W [h ; d]), keeping the feature width."""

    def __init__(self, d_model: int, k: int):
        super().__init__()
        self.d_model, self.k = d_model, k
        self.proj = self.add("proj", Linear(d_model + k, d_model))
        self.ln = self.add("ln", LayerNorm(d_model))

    def __call__(self, h: Tensor, desc: Tensor) -> Tensor:
        _check_desc(desc, h.shape[1], self.k, "concat")
        return self.ln(self.proj(T.concat([h, desc], axis=-1)))


class CrossAttentionInjection(Module):
    """Features query descriptor tokens; the result is added residually."""

    def __init__(self, d_model: int, n_heads: int, k: int):
        super().__init__()
        self.k = k
        self.desc_proj = self.add("desc_proj", Linear(k, d_model))
        self.ln = self.add("ln", LayerNorm(d_model))
        self.attn = self.add("attn", MultiHeadAttention(d_model, n_heads))
        self.last_attention: np.ndarray | None = None

    def __call__(self, h: Tensor, desc: Tensor, desc_mask: np.ndarray | None = None) -> Tensor:
        _check_desc(desc, None, self.k, "cross-attention")
        a, w = self.attn(self.ln(h), self.desc_proj(desc), desc_mask)
        self.last_attention = w.data
        return h + a


class ReverseCrossAttention(Module):
    """Descriptor tokens query the feature stream; output has one token per descriptor frame.

    Queries are the projected descriptor plus their own learnable position
    table, separate from the main positional embeddings.
    """

    def __init__(self, d_model: int, n_heads: int, k: int, max_tokens: int):
        super().__init__()
        self.k, self.max_tokens = k, max_tokens
        self.desc_proj = self.add("desc_proj", Linear(k, d_model))
        self.declare("query_pos", (max_tokens, d_model), "normal", 0.02)
        self.ln_q = self.add("ln_q", LayerNorm(d_model))
        self.ln_kv = self.add("ln_kv", LayerNorm(d_model))
        self.attn = self.add("attn", MultiHeadAttention(d_model, n_heads))
        self.last_attention: np.ndarray | None = None

    def __call__(self, desc: Tensor, feats: Tensor, feat_mask: np.ndarray | None = None) -> Tensor:
        _check_desc(desc, None, self.k, "reverse cross-attention")
        t_d = desc.shape[1]
        if t_d > self.max_tokens:
            raise T.ShapeError(f"reverse cross-attention: {t_d} descriptor frames exceed {self.max_tokens}")
        q = self.desc_proj(desc) + T.getitem(self.p("query_pos"), slice(0, t_d))
        a, w = self.attn(self.ln_q(q), self.ln_kv(feats), feat_mask)
        self.last_attention = w.data
        return q + a


class FiLMGenerator(Module):
    """Per-layer (gamma, beta) from a two-layer MLP on the time-pooled descriptor.

    The output layer starts at zero so modulation begins as the identity.
    """

    def __init__(self, k: int, d_model: int, n_layers: int, hidden: int | None = None):
        super().__init__()
        hidden = hidden or d_model
        self.d_model = d_model
        self.k = k
        self.heads = []
        for i in range(n_layers):
            fc1 = self.add(f"layer{i}_fc1", Linear(k, hidden))
            fc2 = self.add(f"layer{i}_fc2", Linear(hidden, 2 * d_model, zero=True))
            self.heads.append((fc1, fc2))

    def __call__(self, desc: Tensor, mask: np.ndarray | None = None) -> list[tuple[Tensor, Tensor]]:
        _check_desc(desc, None, self.k, "film")
        pooled = T.mean(desc, axis=1) if mask is None else T.masked_mean(desc, mask)
        out = []
        for fc1, fc2 in self.heads:
            gb = fc2(T.relu(fc1(pooled)))
            gamma = T.getitem(gb, (slice(None), slice(0, self.d_model))).reshape(-1, 1, self.d_model)
            beta = T.getitem(gb, (slice(None), slice(self.d_model, 2 * self.d_model))).reshape(-1, 1, self.d_model)
            out.append((gamma, beta))
        return out


def film_modulate(features: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """F' = (1 + gamma) * F + beta, broadcast over time."""
    return features * (gamma + 1.0) + beta


def attention_cost_ratio(t_f: int, t_d: int) -> float:
    """Self-attention cost of a T_F-token stream relative to a T_D-token stream."""
    if t_f <= 0 or t_d <= 0:
        raise ValueError("token counts must be positive")
    return (t_f / t_d) ** 2


def _check_desc(desc: Tensor, frames: int | None, k: int, where: str) -> None:
    if desc.ndim != 3 or desc.shape[-1] != k or (frames is not None and desc.shape[1] != frames):
        want = f"(B, {frames if frames is not None else 'T_D'}, {k})"
        raise T.ShapeError(f"{where}: descriptor shape {desc.shape}, expected {want}")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

DESC_DIMS = {"a4": 8, "a7": 12, "a8": 12, "a9": 12, "d4": 4}
MECHANISMS = ("concat", "xattn", "reverse", "film")

# descriptor/mechanism pairs each side accepts; d4 on audio and a4 on MIDI
# only occur in the cross-modal arm
ALLOWED = {
    "audio": {("a4", "concat"), ("a7", "concat"), ("a8", "concat"), ("a9", "concat"),
              ("a4", "xattn"), ("a7", "xattn"), ("a4", "reverse"), ("a4", "film"),
              ("d4", "concat")},
    "midi": {("d4", "concat"), ("d4", "xattn"), ("d4", "reverse"), ("d4", "film"),
             ("a4", "concat")},
}
CONTROLS = ("none", "zero", "random", "shuffled")


@dataclass(frozen=True)
class Injection:
    descriptor: str
    mechanism: str

    @property
    def k(self) -> int:
        return DESC_DIMS[self.descriptor]


@dataclass(frozen=True)
class AudioDims:
    sample_rate: int = 4000
    n_samples: int = 2000
    channels: tuple[int, ...] = (4, 4, 4, 64)
    kernels: tuple[int, ...] = (10, 3, 3, 3)
    strides: tuple[int, ...] = (5, 2, 2, 2)
    paddings: tuple[int, ...] = (0, 1, 1, 1)
    gn_groups: int = 4
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 128
    max_positions: int = 64
    dropout: float = 0.0
    nfft: int = 256
    hop: int = 64

    @property
    def n_frames(self) -> int:
        n = self.n_samples
        for k, s, p in zip(self.kernels, self.strides, self.paddings):
            n = T.conv1d_output_length(n, k, s, p)
        return n

    @property
    def n_desc_frames(self) -> int:
        return self.n_samples // self.hop + 1


@dataclass(frozen=True)
class MidiDims:
    d_model: int = 32
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 64
    max_notes: int = 64
    dropout: float = 0.0


@dataclass(frozen=True)
class TowerSpec:
    """Separate descriptor encoder aligned to both modalities."""

    descriptor: str = "a4"
    mode: str = "weighted"  # weighted | anchor
    alpha: float = 0.5
    beta: float = 0.5
    d_model: int = 32
    n_heads: int = 4
    n_layers: int = 1
    d_ff: int = 64


@dataclass(frozen=True)
class ArmConfig:
    name: str = "d0"
    audio: AudioDims = field(default_factory=AudioDims)
    midi: MidiDims = field(default_factory=MidiDims)
    embed_dim: int = 32
    proj_hidden: int = 32
    audio_injection: Injection | None = None
    midi_injection: Injection | None = None
    audio_moe: MoESpec | None = None
    midi_moe: MoESpec | None = None
    tower: TowerSpec | None = None
    control: str = "none"

    def __post_init__(self):
        for side, inj in (("audio", self.audio_injection), ("midi", self.midi_injection)):
            if inj is None:
                continue
            if inj.mechanism not in MECHANISMS or (inj.descriptor, inj.mechanism) not in ALLOWED[side]:
                raise ValueError(f"{side} injection {inj.descriptor}/{inj.mechanism} is not in the arm catalog")
        if self.control not in CONTROLS:
            raise ValueError(f"control must be one of {CONTROLS}")
        if self.tower is not None and self.tower.mode not in ("weighted", "anchor"):
            raise ValueError(f"unknown tower mode {self.tower.mode!r}")

    @property
    def reverse_audio(self) -> bool:
        return self.audio_injection is not None and self.audio_injection.mechanism == "reverse"

    def to_dict(self) -> dict:
        from dataclasses import asdict
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArmConfig":
        d = dict(d)
        def opt(key, typ):
            v = d.pop(key, None)
            return None if v is None else typ(**v)
        audio = d.pop("audio", {})
        audio = AudioDims(**{k: tuple(v) if isinstance(v, list) else v for k, v in audio.items()})
        return cls(audio=audio, midi=MidiDims(**d.pop("midi", {})),
                   audio_injection=opt("audio_injection", Injection),
                   midi_injection=opt("midi_injection", Injection),
                   audio_moe=opt("audio_moe", MoESpec), midi_moe=opt("midi_moe", MoESpec),
                   tower=opt("tower", TowerSpec), **d)


def _arm_table() -> dict[str, dict]:
    a = lambda d, m: Injection(d, m)  # noqa: E731
    moe = MoESpec
    return {
        "d0": {},
        "d4": {"midi_injection": a("d4", "concat")},
        "a4": {"audio_injection": a("a4", "concat")},
        "a7": {"audio_injection": a("a7", "concat")},
        "a8": {"audio_injection": a("a8", "concat")},
        "a9": {"audio_injection": a("a9", "concat")},
        "d4x": {"midi_injection": a("d4", "xattn")},
        "a4x": {"audio_injection": a("a4", "xattn")},
        "a7x": {"audio_injection": a("a7", "xattn")},
        "d4r": {"midi_injection": a("d4", "reverse")},
        "a4r": {"audio_injection": a("a4", "reverse")},
        "d4a4": {"audio_injection": a("a4", "concat"), "midi_injection": a("d4", "concat")},
        "d4a4cm": {"audio_injection": a("d4", "concat"), "midi_injection": a("a4", "concat")},
        "d4-a4r": {"audio_injection": a("a4", "reverse"), "midi_injection": a("d4", "concat")},
        "film-a4": {"audio_injection": a("a4", "film")},
        "film-d4": {"midi_injection": a("d4", "film")},
        "film-dual": {"audio_injection": a("a4", "film"), "midi_injection": a("d4", "film")},
        "moe-a4": {"audio_injection": a("a4", "concat"), "audio_moe": moe(4, 2)},
        "moe-a4-v2": {"audio_injection": a("a4", "concat"), "audio_moe": moe(8, 2)},
        "moe-a4-v3": {"audio_injection": a("a4", "concat"), "audio_moe": moe(4, 1)},
        "moe-a4-v4": {"audio_injection": a("a4", "concat"), "audio_moe": moe(8, 1)},
        "moe-dual": {"audio_injection": a("a4", "concat"), "midi_injection": a("d4", "concat"),
                     "audio_moe": moe(4, 2), "midi_moe": moe(4, 2)},
        "t3-wt": {"tower": TowerSpec(alpha=0.5, beta=0.5)},
        "t3-tri": {"tower": TowerSpec(alpha=1.0, beta=1.0)},
        "t3-anc": {"tower": TowerSpec(mode="anchor", alpha=1.0, beta=1.0)},
    }


ARMS = _arm_table()


def arm_names() -> list[str]:
    return list(ARMS)


def make_arm(name: str, **overrides) -> ArmConfig:
    """Look up an arm by (case-insensitive) name and apply field overrides."""
    key = name.lower()
    if key not in ARMS:
        raise KeyError(f"unknown arm {name!r}; known: {', '.join(ARMS)}")
    fields = dict(ARMS[key])
    fields.update(overrides)
    return ArmConfig(name=key, **fields)


def full_scale(arm: ArmConfig) -> ArmConfig:
    """The same arm at full dimensions (parameter counting only)."""
    from dataclasses import replace
    audio = AudioDims(sample_rate=24000, n_samples=96000, channels=(512, 512, 512, 1024),
                      gn_groups=32, d_model=1024, n_heads=8, n_layers=4, d_ff=4096,
                      max_positions=6000, nfft=2048, hop=512, dropout=0.1)
    midi = MidiDims(d_model=512, n_heads=8, n_layers=4, d_ff=2048, max_notes=2048, dropout=0.1)
    tower = None if arm.tower is None else replace(arm.tower, d_model=256, n_heads=4, n_layers=2, d_ff=1024)
    return replace(arm, audio=audio, midi=midi, embed_dim=256, proj_hidden=512, tower=tower)


# ---------------------------------------------------------------------------
# encoders
# ---------------------------------------------------------------------------

@dataclass
class EncoderOutput:
    pooled: Tensor
    taps: list[Tensor]
    aux: Tensor | None = None
    n_tokens: int = 0


class AudioEncoder(Module):
    """Strided CNN front-end, optional injection, learned positions, post-norm Transformer, mean pool."""

    def __init__(self, dims: AudioDims, injection: Injection | None, moe: MoESpec | None, rng: RngSource):
        super().__init__()
        self.dims, self.injection = dims, injection
        chans = (1,) + tuple(dims.channels)
        if chans[-1] != dims.d_model:
            raise ValueError("last CNN channel count must equal the audio d_model")
        self.convs = [self.add(f"conv{i}", ConvBlock(chans[i], chans[i + 1], dims.kernels[i], dims.strides[i],
                                                      dims.paddings[i], dims.gn_groups))
                      for i in range(len(dims.channels))]
        self.declare("pos", (dims.max_positions, dims.d_model), "normal", 0.02)
        mech = injection.mechanism if injection else None
        d = dims.d_model
        self.inject = None
        if mech == "concat":
            self.inject = self.add("inject", ConcatInjection(d, injection.k))
        elif mech == "xattn":
            self.inject = self.add("inject", CrossAttentionInjection(d, dims.n_heads, injection.k))
        elif mech == "reverse":
            self.inject = self.add("inject", ReverseCrossAttention(d, dims.n_heads, injection.k,
                                                                   dims.n_desc_frames))
        elif mech == "film":
            self.inject = self.add("inject", FiLMGenerator(injection.k, d, dims.n_layers))
        self.blocks = [self.add(f"block{i}", TransformerBlock(d, dims.n_heads, dims.d_ff, False, dims.dropout, rng,
                                                              moe if i == dims.n_layers - 1 else None))
                       for i in range(dims.n_layers)]

    def features(self, audio: Tensor) -> Tensor:
        h = audio.reshape(audio.shape[0], 1, audio.shape[1])
        for conv in self.convs:
            h = conv(h)
        return T.swapaxes(h, 1, 2)

    def __call__(self, audio: Tensor, desc: Tensor | None = None) -> EncoderOutput:
        if (desc is None) != (self.injection is None):
            raise ValueError("audio descriptor must be given exactly when the arm injects one")
        f = self.features(audio)
        t_f = f.shape[1]
        if t_f > self.dims.max_positions:
            raise T.ShapeError(f"{t_f} frames exceed {self.dims.max_positions} positions")
        mech = self.injection.mechanism if self.injection else None
        film = None
        if mech == "concat":
            f = self.inject(f, desc)
        elif mech == "xattn":
            f = self.inject(f, desc)
        elif mech == "film":
            film = self.inject(desc)
        f = f + T.getitem(self.p("pos"), slice(0, t_f))
        if mech == "reverse":
            f = self.inject(desc, f)
        taps, aux = [], None
        for i, block in enumerate(self.blocks):
            f, a = block(f)
            if film is not None:
                f = film_modulate(f, *film[i])
            if a is not None:
                aux = a if aux is None else aux + a
            taps.append(f)
        return EncoderOutput(T.mean(f, axis=1), taps, aux, f.shape[1])


class MidiEncoder(Module):
    """Pitch/velocity/duration embeddings, optional injection, sinusoidal positions,
    pre-norm Transformer, masked mean pool and a final LayerNorm."""

    def __init__(self, dims: MidiDims, injection: Injection | None, moe: MoESpec | None, rng: RngSource):
        super().__init__()
        d = dims.d_model
        if d % 4:
            raise ValueError("MIDI d_model must be divisible by 4")
        self.dims, self.injection = dims, injection
        self.declare("pitch_emb", (128, d // 2), "normal", 1.0)
        self.declare("velocity_emb", (128, d // 4), "normal", 1.0)
        self.declare("duration_emb", (32, d // 4), "normal", 1.0)
        self.in_proj = self.add("in_proj", Linear(d, d))
        self.in_ln = self.add("in_ln", LayerNorm(d))
        self._pos = sinusoidal_positions(dims.max_notes, d)
        mech = injection.mechanism if injection else None
        self.inject = None
        if mech == "concat":
            self.inject = self.add("inject", ConcatInjection(d, injection.k))
        elif mech == "xattn":
            self.inject = self.add("inject", CrossAttentionInjection(d, dims.n_heads, injection.k))
        elif mech == "reverse":
            self.inject = self.add("inject", ReverseCrossAttention(d, dims.n_heads, injection.k, dims.max_notes))
        elif mech == "film":
            self.inject = self.add("inject", FiLMGenerator(injection.k, d, dims.n_layers))
        self.blocks = [self.add(f"block{i}", TransformerBlock(d, dims.n_heads, dims.d_ff, True, dims.dropout, rng,
                                                              moe if i == dims.n_layers - 1 else None))
                       for i in range(dims.n_layers)]
        self.out_ln = self.add("out_ln", LayerNorm(d))

    def __call__(self, midi: dict[str, np.ndarray], desc: Tensor | None = None) -> EncoderOutput:
        if (desc is None) != (self.injection is None):
            raise ValueError("MIDI descriptor must be given exactly when the arm injects one")
        mask = np.asarray(midi["mask"], bool)
        if not mask.any(axis=1).all():
            raise ValueError("every MIDI segment needs at least one valid note")
        h = T.concat([T.embedding(self.p("pitch_emb"), midi["pitch"]),
                      T.embedding(self.p("velocity_emb"), midi["velocity"]),
                      T.embedding(self.p("duration_emb"), midi["duration"])], axis=-1)
        h = self.in_ln(self.in_proj(h))
        n = h.shape[1]
        mech = self.injection.mechanism if self.injection else None
        film = None
        if mech == "concat":
            h = self.inject(h, desc)
        elif mech == "xattn":
            h = self.inject(h, desc, mask)
        elif mech == "film":
            film = self.inject(desc, mask)
        h = h + Tensor(self._pos[:n].astype(h.dtype))
        if mech == "reverse":
            h = self.inject(desc, h, mask)
        taps, aux = [], None
        for i, block in enumerate(self.blocks):
            h, a = block(h, mask)
            if film is not None:
                h = film_modulate(h, *film[i])
            if a is not None:
                aux = a if aux is None else aux + a
            taps.append(h)
        return EncoderOutput(self.out_ln(T.masked_mean(h, mask)), taps, aux, n)


class ProjectionHead(Module):
    """Linear, BN, ReLU, Linear, BN, ReLU, Linear into the shared space."""

    def __init__(self, d_in: int, hidden: int, d_out: int):
        super().__init__()
        self.fc1 = self.add("fc1", Linear(d_in, hidden))
        self.bn1 = self.add("bn1", BatchNorm(hidden))
        self.fc2 = self.add("fc2", Linear(hidden, hidden))
        self.bn2 = self.add("bn2", BatchNorm(hidden))
        self.fc3 = self.add("fc3", Linear(hidden, d_out))

    def __call__(self, h: Tensor) -> Tensor:
        h = T.relu(self.bn1(self.fc1(h)))
        h = T.relu(self.bn2(self.fc2(h)))
        return self.fc3(h)


def project(head: ProjectionHead, h: Tensor) -> Tensor:
    return head(h)


class DescriptorTower(Module):
    """Small Transformer over descriptor frames, mean pooled and projected to the shared space."""

    def __init__(self, spec: TowerSpec, k: int, max_frames: int, embed_dim: int, rng: RngSource):
        super().__init__()
        self.k = k
        self.in_proj = self.add("in_proj", Linear(k, spec.d_model))
        self.declare("pos", (max_frames, spec.d_model), "normal", 0.02)
        self.blocks = [self.add(f"block{i}", TransformerBlock(spec.d_model, spec.n_heads, spec.d_ff, True, 0.0, rng))
                       for i in range(spec.n_layers)]
        self.out_ln = self.add("out_ln", LayerNorm(spec.d_model))
        self.head = self.add("head", ProjectionHead(spec.d_model, spec.d_model, embed_dim))

    def __call__(self, desc: Tensor) -> Tensor:
        _check_desc(desc, None, self.k, "descriptor tower")
        h = self.in_proj(desc) + T.getitem(self.p("pos"), slice(0, desc.shape[1]))
        for block in self.blocks:
            h, _ = block(h)
        return self.head(self.out_ln(T.mean(h, axis=1)))


def third_tower_encode(tower: DescriptorTower, desc: Tensor) -> Tensor:
    return tower(desc)


@dataclass
class ModelOutput:
    z_a: Tensor
    z_m: Tensor
    z_d: Tensor | None
    aux: Tensor | None
    audio: EncoderOutput
    midi: EncoderOutput


class DualEncoder(Module):
    def __init__(self, config: ArmConfig):
        super().__init__()
        self.config = config
        self.rng_source = RngSource()
        self.audio = self.add("audio", AudioEncoder(config.audio, config.audio_injection, config.audio_moe,
                                                    self.rng_source))
        self.midi = self.add("midi", MidiEncoder(config.midi, config.midi_injection, config.midi_moe,
                                                 self.rng_source))
        self.audio_head = self.add("audio_head", ProjectionHead(config.audio.d_model, config.proj_hidden,
                                                                config.embed_dim))
        self.midi_head = self.add("midi_head", ProjectionHead(config.midi.d_model, config.proj_hidden,
                                                              config.embed_dim))
        self.tower = None
        if config.tower is not None:
            k = DESC_DIMS[config.tower.descriptor]
            self.tower = self.add("tower", DescriptorTower(config.tower, k, config.audio.n_desc_frames,
                                                           config.embed_dim, self.rng_source))

    def __call__(self, batch) -> ModelOutput:
        dtype = self.audio.p("pos").dtype
        def t(x):
            return None if x is None else Tensor(np.asarray(x, dtype=dtype))
        a = self.audio(t(batch.audio), t(batch.audio_desc))
        m = self.midi(batch.midi, t(batch.midi_desc))
        z_a = self.audio_head(a.pooled)
        z_m = self.midi_head(m.pooled)
        z_d = self.tower(t(batch.tower_desc)) if self.tower is not None else None
        aux = None
        for x in (a.aux, m.aux):
            if x is not None:
                aux = x if aux is None else aux + x
        return ModelOutput(z_a, z_m, z_d, aux, a, m)


def build_model(config: ArmConfig, seed: int, dtype=np.float32) -> DualEncoder:
    return initialize(DualEncoder(config), seed, dtype)


COMPONENTS = (
    ("audio_cnn", ("audio.conv",)),
    ("audio_positions", ("audio.pos",)),
    ("audio_injection", ("audio.inject.",)),
    ("audio_transformer", ("audio.block",)),
    ("midi_embeddings", ("midi.pitch_emb", "midi.velocity_emb", "midi.duration_emb", "midi.in_")),
    ("midi_injection", ("midi.inject.",)),
    ("midi_transformer", ("midi.block", "midi.out_ln")),
    ("audio_projection", ("audio_head.",)),
    ("midi_projection", ("midi_head.",)),
    ("descriptor_tower", ("tower.",)),
)


def param_count(config: ArmConfig) -> dict[str, int]:
    """Exact parameter counts per component plus ``total``; nothing is allocated."""
    counts = {name: 0 for name, _ in COMPONENTS}
    for path, spec in DualEncoder(config).named_specs():
        n = int(np.prod(spec.shape))
        for name, prefixes in COMPONENTS:
            if path.startswith(prefixes):
                counts[name] += n
                break
        else:
            raise AssertionError(f"parameter {path} not assigned to a component")
    counts["total"] = sum(counts.values())
    return counts
