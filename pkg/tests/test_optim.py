import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xmodal.optim import AdamWState, LrSchedule, NonFiniteGradient, adamw_step, lr_at
from xmodal.tensor import Tensor
import oracles


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(-2, 2), st.floats(1e-4, 1e-1), st.floats(0, 0.1), st.integers(1, 12))
def test_adamw_matches_scalar_reference(p0, g, lr, wd, steps):
    p = Tensor(np.array([p0]))
    state = AdamWState(base_lr=lr, weight_decay=wd)
    for _ in range(steps):
        adamw_step(state, [p], [np.array([g])])
    assert p.data[0] == pytest.approx(oracles.adamw_scalar(p0, g, lr, wd, steps), rel=1e-12, abs=1e-14)


def test_first_step_moves_by_lr():
    p = Tensor(np.array([1.0, -1.0]))
    adamw_step(AdamWState(base_lr=0.1, weight_decay=0.0), [p], [np.array([5.0, -0.01])])
    np.testing.assert_allclose(p.data, [0.9, -0.9], rtol=1e-6)


def test_non_finite_gradient_leaves_state_untouched():
    p = Tensor(np.array([1.0]))
    state = AdamWState()
    with pytest.raises(NonFiniteGradient):
        adamw_step(state, [p], [np.array([np.nan])])
    assert p.data[0] == 1.0 and state.step == 0


def test_lr_multiplier_scales_update():
    a, b = Tensor(np.array([1.0])), Tensor(np.array([1.0]))
    adamw_step(AdamWState(base_lr=0.1, weight_decay=0), [a], [np.array([1.0])], lr_mult=1.0)
    adamw_step(AdamWState(base_lr=0.1, weight_decay=0), [b], [np.array([1.0])], lr_mult=0.5)
    assert 1 - b.data[0] == pytest.approx(0.5 * (1 - a.data[0]))


SCHEDULES = [LrSchedule(kind=k, warmup_steps=w, ref_epochs=r)
             for k in ("cosine", "cosine_tail", "trapezoidal") for w in (0, 5, 40) for r in (3, 10)]


@pytest.mark.parametrize("schedule", SCHEDULES, ids=lambda s: f"{s.kind}-w{s.warmup_steps}-r{s.ref_epochs}")
def test_multiplier_bounds(schedule):
    spe, epochs = 7, 10
    vals = [lr_at(schedule, s, spe, epochs) for s in range(spe * epochs)]
    assert all(0 < v <= 1 for v in vals)
    after_warmup = vals[schedule.warmup_steps:]
    assert min(after_warmup) >= schedule.tail_frac - 1e-12


def test_warmup_is_linear():
    s = LrSchedule(warmup_steps=10)
    assert [lr_at(s, i, 100, 5) for i in (0, 1, 5, 10)] == [0.02, 0.1, 0.5, 1.0]


def test_cosine_floor():
    s = LrSchedule(kind="cosine", warmup_steps=0, ref_epochs=2)
    assert lr_at(s, 0, 10, 5) == 1.0
    assert lr_at(s, 10, 10, 5) == pytest.approx(0.5)
    assert lr_at(s, 40, 10, 5) == 0.1


def test_cosine_tail_final_epoch_decays_to_tail():
    s = LrSchedule(kind="cosine_tail", warmup_steps=0, ref_epochs=30)
    spe, epochs = 10, 4
    last = [lr_at(s, (epochs - 1) * spe + i, spe, epochs) for i in range(spe)]
    assert last[-1] == pytest.approx(0.02)
    assert all(a >= b for a, b in zip(last, last[1:]))


def test_trapezoidal_hold_then_decay():
    s = LrSchedule(kind="trapezoidal", warmup_steps=0, decay_start_frac=0.5)
    vals = [lr_at(s, i, 10, 2) for i in range(20)]
    assert vals[:10] == [1.0] * 10
    assert vals[-1] == pytest.approx(0.02)


@pytest.mark.parametrize("kw", [{"kind": "step"}, {"tail_frac": 0.5, "floor_frac": 0.1}, {"warmup_steps": -1}])
def test_schedule_validation(kw):
    with pytest.raises(ValueError):
        LrSchedule(**kw)


def test_negative_step_rejected():
    with pytest.raises(ValueError):
        lr_at(LrSchedule(), -1, 10, 2)
