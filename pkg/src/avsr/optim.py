"""ADAM optimizer step and the plateau-halving learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import PoisonedUpdateError, ShapeError

# Moment decay constants: assumed standard defaults, recorded here as the
# single source of truth rather than scattered literals.
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

INITIAL_LEARNING_RATE = 1e-4
FINAL_LEARNING_RATE = 1e-6
PLATEAU_FACTOR = 0.5


@dataclass
class AdamState:
    """Per-parameter first/second moments plus the shared step counter."""

    learning_rate: float = INITIAL_LEARNING_RATE
    step: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")


def adam_step(
    state: AdamState,
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
) -> dict[str, np.ndarray]:
    """One ADAM update. Returns new parameter arrays; mutates `state`.

    Gradients containing NaN/Inf poison the moment estimates irrecoverably,
    so they abort the step instead of being applied.
    """
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise PoisonedUpdateError(f"gradient for {name!r} contains non-finite values")
        if g.shape != params[name].shape:
            raise ShapeError(f"adam_step: grad shape {g.shape} != param shape {params[name].shape} for {name!r}")
    state.step += 1
    t = state.step
    out = {}
    for name, p in params.items():
        g = grads[name]
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = ADAM_BETA1 * m + (1 - ADAM_BETA1) * g
        v = ADAM_BETA2 * v + (1 - ADAM_BETA2) * g * g
        state.first_moment[name] = m
        state.second_moment[name] = v
        m_hat = m / (1 - ADAM_BETA1 ** t)
        v_hat = v / (1 - ADAM_BETA2 ** t)
        out[name] = p - state.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return out


class PlateauScheduler:
    """Halve the learning rate whenever the watched metric stops improving.

    A metric is "improved" when it drops below the best seen so far by more
    than `min_delta`. After `patience` consecutive non-improving reports the
    rate is multiplied by 0.5, never below the floor.
    """

    def __init__(
        self,
        state: AdamState,
        patience: int = 2,
        min_delta: float = 1e-4,
        floor: float = FINAL_LEARNING_RATE,
    ):
        self.state = state
        self.patience = patience
        self.min_delta = min_delta
        self.floor = floor
        self.best = np.inf
        self.stale = 0

    def report(self, metric: float) -> bool:
        """Feed one validation metric; returns True when the rate was reduced."""
        if metric < self.best - self.min_delta:
            self.best = metric
            self.stale = 0
            return False
        self.stale += 1
        if self.stale >= self.patience:
            self.stale = 0
            new_rate = max(self.state.learning_rate * PLATEAU_FACTOR, self.floor)
            reduced = new_rate < self.state.learning_rate
            self.state.learning_rate = new_rate
            return reduced
        return False
