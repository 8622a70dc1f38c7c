"""AdamW and learning-rate multipliers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .tensor import Tensor


class NonFiniteGradient(FloatingPointError):
    """A gradient contained NaN or inf; the optimizer step was not applied."""


@dataclass
class AdamWState:
    base_lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adamw_step(state: AdamWState, params: Sequence[Tensor], grads: Sequence[np.ndarray],
               lr_mult: float = 1.0) -> None:
    """Apply one decoupled-weight-decay Adam update in place.

    Raises :class:`NonFiniteGradient` without touching parameters or moments
    if any gradient is non-finite.
    """
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient("non-finite gradient; step skipped")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    for p, m in zip(params, state.m):
        if m.shape != p.data.shape:
            raise ValueError(f"moment shape {m.shape} does not match parameter {p.data.shape}")

    state.step += 1
    t = state.step
    lr = state.base_lr * lr_mult
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.weight_decay:
            p.data -= lr * state.weight_decay * p.data
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= (lr * update).astype(p.data.dtype)


@dataclass(frozen=True)
class LrSchedule:
    """Shape of the learning-rate multiplier over training.

    ``cosine``: warmup then cosine from 1 over ``ref_epochs``, clamped at ``floor_frac``.
    ``cosine_tail``: as cosine, clamped at ``floor_frac``; the final epoch
    decays linearly to ``tail_frac``.
    ``trapezoidal``: warmup, hold at 1 until ``decay_start_frac`` of training,
    then linear decay to ``tail_frac``.
    """

    kind: Literal["cosine", "cosine_tail", "trapezoidal"] = "cosine_tail"
    warmup_steps: int = 500
    ref_epochs: int = 30
    floor_frac: float = 0.10
    tail_frac: float = 0.02
    decay_start_frac: float = 0.8

    def __post_init__(self):
        if self.kind not in ("cosine", "cosine_tail", "trapezoidal"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not 0.0 <= self.tail_frac <= self.floor_frac <= 1.0:
            raise ValueError("need 0 <= tail_frac <= floor_frac <= 1")
        if self.warmup_steps < 0 or self.ref_epochs < 1:
            raise ValueError("warmup_steps must be >= 0 and ref_epochs >= 1")


def _cosine(progress: float) -> float:
    progress = min(max(progress, 0.0), 1.0)
    return 0.5 * (1.0 + math.cos(math.pi * progress))


def lr_at(schedule: LrSchedule, step: int, steps_per_epoch: int, total_epochs: int) -> float:
    if step < 0:
        raise ValueError("step must be non-negative")
    w = schedule.warmup_steps
    if step < w:
        # the very first steps are held at tail_frac so the multiplier stays positive
        return max(step / w, schedule.tail_frac)
    total = steps_per_epoch * total_epochs
    ref = schedule.ref_epochs * steps_per_epoch

    if schedule.kind == "cosine":
        return max(schedule.floor_frac, _cosine((step - w) / max(ref - w, 1)))

    if schedule.kind == "trapezoidal":
        start = max(int(round(schedule.decay_start_frac * total)), w)
        if step < start:
            return 1.0
        span = max(total - 1 - start, 1)
        frac = min((step - start) / span, 1.0)
        return 1.0 + (schedule.tail_frac - 1.0) * frac

    def clamped(s: int) -> float:
        return max(schedule.floor_frac, _cosine((s - w) / max(ref - w, 1)))

    tail_start = (total_epochs - 1) * steps_per_epoch
    if step < tail_start or total_epochs < 1:
        return clamped(step)
    head = clamped(tail_start) if tail_start >= w else 1.0
    if steps_per_epoch <= 1:
        return schedule.tail_frac
    frac = min((step - tail_start) / (steps_per_epoch - 1), 1.0)
    return head + (schedule.tail_frac - head) * frac
