"""Adam and milestone learning-rate schedules."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> None:
    """In-place bias-corrected Adam update of every array in ``params``."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)


@dataclass(frozen=True)
class LrSchedule:
    initial_lr: float
    milestones: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        epochs = [e for e, _ in self.milestones]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError("milestone epochs must be strictly increasing")
        if any(not (0 < f <= 1) for _, f in self.milestones):
            raise ValueError("milestone multipliers must be in (0, 1]")

    def scaled(self, total_epochs: int, reference_epochs: int) -> "LrSchedule":
        """Same milestones rescaled from ``reference_epochs`` to ``total_epochs``."""
        out, last = [], 0
        for e, f in self.milestones:
            ne = max(last + 1, round(e * total_epochs / reference_epochs))
            out.append((ne, f))
            last = ne
        return LrSchedule(self.initial_lr, tuple(out))


def lr_at_epoch(sched: LrSchedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    lr = sched.initial_lr
    for e, f in sched.milestones:
        if e <= epoch:
            lr *= f
    return lr


# 500-epoch inpainting and 200-epoch UNet schedules
INPAINT_SCHEDULE = LrSchedule(5e-3, ((100, 0.5), (200, 0.5), (300, 0.5),
                                     (400, 0.1), (450, 0.1), (475, 0.1), (490, 0.1)))
INPAINT_EPOCHS = 500
UNET_SCHEDULE = LrSchedule(5e-3, ((100, 0.5), (150, 0.5), (175, 0.5)))
UNET_EPOCHS = 200
