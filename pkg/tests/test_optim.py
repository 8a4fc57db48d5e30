import numpy as np
import pytest

from dualmar.nn.optim import (INPAINT_EPOCHS, INPAINT_SCHEDULE, UNET_EPOCHS, UNET_SCHEDULE,
                              AdamState, LrSchedule, adam_step, lr_at_epoch)


def test_zero_gradient_leaves_params():
    p = {"w": np.array([1.0, -2.0])}
    adam_step(p, {"w": np.zeros(2)}, AdamState(lr=0.1))
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_first_step_moves_by_lr():
    p = {"w": np.array([0.0])}
    st = AdamState(lr=5e-3)
    adam_step(p, {"w": np.array([1.0])}, st)
    assert p["w"][0] == pytest.approx(-5e-3 / (1 + 1e-8), rel=1e-12)
    assert st.step == 1


def test_descends_on_quadratic():
    p = {"w": np.array([1.0])}
    st = AdamState(lr=5e-3)
    trace = [1.0]
    for _ in range(100):
        adam_step(p, {"w": 2 * p["w"]}, st)
        trace.append(abs(p["w"][0]))
    assert trace[-1] < trace[0]
    assert all(b < a for a, b in zip(trace, trace[1:]))


@pytest.mark.parametrize("seed", range(10))
def test_first_update_sign_is_gradient_scale_invariant(seed):
    rng = np.random.default_rng(seed)
    g = rng.standard_normal(20)
    c = rng.uniform(0.01, 100)
    out = []
    for scale in (1.0, c):
        p = {"w": np.zeros(20)}
        adam_step(p, {"w": scale * g}, AdamState(lr=1e-2))
        out.append(np.sign(p["w"]))
    np.testing.assert_array_equal(out[0], out[1])


def test_inpainting_schedule_values():
    assert lr_at_epoch(INPAINT_SCHEDULE, 0) == pytest.approx(5e-3)
    assert lr_at_epoch(INPAINT_SCHEDULE, 350) == pytest.approx(6.25e-4)
    assert lr_at_epoch(INPAINT_SCHEDULE, 99) == pytest.approx(5e-3)
    assert lr_at_epoch(INPAINT_SCHEDULE, 100) == pytest.approx(2.5e-3)
    assert lr_at_epoch(INPAINT_SCHEDULE, 499) == pytest.approx(6.25e-4 * 1e-4)
    assert INPAINT_EPOCHS == 500


def test_unet_schedule_values():
    assert lr_at_epoch(UNET_SCHEDULE, 200) == pytest.approx(5e-3 * 0.125)
    assert lr_at_epoch(UNET_SCHEDULE, 160) == pytest.approx(5e-3 * 0.25)
    assert UNET_EPOCHS == 200


def test_scaled_schedule_keeps_order_and_factors():
    s = INPAINT_SCHEDULE.scaled(50, INPAINT_EPOCHS)
    assert [f for _, f in s.milestones] == [f for _, f in INPAINT_SCHEDULE.milestones]
    assert [e for e, _ in s.milestones] == [10, 20, 30, 40, 45, 48, 49]
    tiny = UNET_SCHEDULE.scaled(2, UNET_EPOCHS)
    epochs = [e for e, _ in tiny.milestones]
    assert all(b > a for a, b in zip(epochs, epochs[1:]))


@pytest.mark.parametrize("ms", [((10, 0.5), (10, 0.5)), ((10, 0.5), (5, 0.5)),
                                ((10, 1.5),), ((10, 0.0),)])
def test_invalid_schedule(ms):
    with pytest.raises(ValueError):
        LrSchedule(1e-3, ms)


def test_negative_epoch_rejected():
    with pytest.raises(ValueError):
        lr_at_epoch(UNET_SCHEDULE, -1)
