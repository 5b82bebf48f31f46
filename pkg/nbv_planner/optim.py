"""Adam optimizer over a flat list of parameter arrays."""

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from nbv_planner.errors import InvalidArgumentError
from nbv_planner.models import TrainConfig


@dataclass
class AdamState:
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    step: int = 0

    @classmethod
    def zeros_like(cls, arrays: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], 0)


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    cfg: TrainConfig,
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update. Inputs are left untouched.

    Moments start at zero on the first step when `state` is empty.
    """
    if len(params) != len(grads):
        raise InvalidArgumentError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.m:
        state = AdamState.zeros_like(params)
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise InvalidArgumentError(
                f"parameter {p.shape}, gradient {g.shape} and moment {m.shape} disagree"
            )

    t = state.step + 1
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t

    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        new_params.append(p - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(new_m, new_v, t)
