"""Log-domain multiplicative potentials driving the per-step option choice."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .core import select_option


@dataclass
class PotentialState:
    """Potentials and their update schedule for one run (or one stage).

    After a step that consumed ``X`` and earned ``Y``::

        log_phi_x += x_rate * X - x_decay[step]
        log_phi_y += y_rate * Y - y_decay[step]

    ``x_decay``/``y_decay`` have shape ``(horizon, n)``.  A profit row whose
    potential is ``-inf`` carries no weight (its target is zero).
    """
    log_phi_x: np.ndarray
    log_phi_y: np.ndarray
    x_rate: np.ndarray
    y_rate: np.ndarray
    x_decay: np.ndarray
    y_decay: np.ndarray
    step: int = 0

    @property
    def horizon(self) -> int:
        return self.x_decay.shape[0]

    def weights(self) -> Tuple[np.ndarray, np.ndarray]:
        """Resource prices and profit weights after joint max-subtraction."""
        top = max(self.log_phi_x.max(initial=-np.inf), self.log_phi_y.max(initial=-np.inf))
        if not np.isfinite(top):
            top = 0.0
        return np.exp(self.log_phi_x - top), np.exp(self.log_phi_y - top)

    def choose(self, A: np.ndarray, W: np.ndarray) -> int:
        px, py = self.weights()
        return select_option(A, W, px, py)

    def advance(self, consumed: Optional[np.ndarray], earned: Optional[np.ndarray]) -> None:
        if self.step >= self.horizon:
            raise ValueError(f"potential state exhausted after {self.horizon} steps")
        s = self.step
        if consumed is not None:
            self.log_phi_x += self.x_rate * consumed
        self.log_phi_x -= self.x_decay[s]
        if earned is not None:
            with np.errstate(invalid="ignore"):
                self.log_phi_y += self.y_rate * earned
        self.log_phi_y -= self.y_decay[s]
        self.step = s + 1


def constant_decay(horizon: int, per_step: np.ndarray) -> np.ndarray:
    per_step = np.asarray(per_step, dtype=float)
    return np.broadcast_to(per_step, (horizon, per_step.shape[0]))
