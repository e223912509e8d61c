"""Online exploit/explore router.

The E-pool weight ``w_e`` moves by the stage-wise improvement signal; the
X-pool weight is pinned at 1.0, so the exploitation probability
``w_e / (w_e + 1)`` always lies in [0.5, 1).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

W_X = 1.0


class PoolChoice(str, Enum):
    EXPLOIT = "exploit"
    EXPLORE = "explore"


@dataclass(frozen=True)
class RouterState:
    w_e: float = 1.0
    increment: float = 0.5
    decay: float = 0.5
    floor: float = 1.0

    def __post_init__(self) -> None:
        if not self.w_e >= self.floor:
            raise ValueError(f"w_e={self.w_e} below floor {self.floor}")
        if self.increment <= 0 or not 0 < self.decay < 1:
            raise ValueError("increment must be > 0 and decay in (0, 1)")
        if self.floor < W_X:
            # keeps alpha >= 0.5
            raise ValueError("floor must be >= 1.0")

    @property
    def w_x(self) -> float:
        return W_X


def selection_prob(state: RouterState) -> float:
    return state.w_e / (state.w_e + state.w_x)


def choose_with_prob(alpha: float, rng: np.random.Generator) -> PoolChoice:
    return PoolChoice.EXPLOIT if rng.random() < alpha else PoolChoice.EXPLORE


def choose(state: RouterState, rng: np.random.Generator) -> PoolChoice:
    return choose_with_prob(selection_prob(state), rng)


def update(state: RouterState, choice: PoolChoice, delta: int) -> RouterState:
    """Apply one stage of feedback.

    Exploiting and improving, or exploring and not improving, adds
    ``increment`` to ``w_e``; the other two cases decay it toward the floor.
    """
    if delta not in (0, 1):
        raise ValueError(f"delta must be 0 or 1, got {delta!r}")
    reinforce = (choice is PoolChoice.EXPLOIT) == (delta == 1)
    if reinforce:
        w_e = state.w_e + state.increment
    else:
        w_e = max(state.floor, state.decay * state.w_e)
    return replace(state, w_e=w_e)
