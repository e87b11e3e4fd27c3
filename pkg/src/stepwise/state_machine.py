"""Rule-based step tracker: median-smoothed probabilities -> unobserved/current/done."""
from __future__ import annotations

from collections import deque

import numpy as np

from .belief import BeliefRecord, StepState
from .tasks import BACKGROUND

__all__ = ["StateMachine", "StepState"]


class StateMachine:
    """Tracks one task run.

    Probability vectors have ``num_steps + 1`` entries with index 0 for
    background. Each update takes the element-wise median of the last ``p``
    vectors (fewer at the start), renormalises it, and moves the argmax step
    to current, retiring the previous current step to done. A background
    argmax, or an argmax on a step that is already done, changes nothing.
    """

    def __init__(self, num_steps: int, p: int = 3):
        if num_steps < 1 or p < 1:
            raise ValueError("num_steps and p must be >= 1")
        self.num_steps = num_steps
        self.p = p
        self.states = [StepState.UNOBSERVED] * num_steps
        self.history: deque[np.ndarray] = deque(maxlen=p)
        self.smoothed = np.zeros(num_steps + 1)
        self.current: int | None = None

    def update(self, probs) -> tuple[list[StepState], np.ndarray]:
        probs = np.asarray(probs, dtype=np.float64)
        if probs.shape != (self.num_steps + 1,):
            raise ValueError(f"expected {self.num_steps + 1} probabilities, got shape {probs.shape}")
        if not np.all(np.isfinite(probs)) or abs(probs.sum() - 1.0) > 1e-6:
            raise ValueError("probability vector must be finite and sum to 1")
        self.history.append(probs)
        med = np.median(np.stack(self.history), axis=0)
        total = med.sum()
        self.smoothed = med / total if total > 0 else np.full_like(med, 1.0 / med.size)

        best = int(np.argmax(self.smoothed))
        if best != BACKGROUND:
            i = best - 1
            if self.states[i] is StepState.UNOBSERVED:
                if self.current is not None:
                    self.states[self.current] = StepState.DONE
                self.states[i] = StepState.CURRENT
                self.current = i
        return list(self.states), self.smoothed.copy()

    def done_steps(self) -> list[int]:
        return [i + 1 for i, s in enumerate(self.states) if s is StepState.DONE]

    def emit_states(self, task_code: str, timestamp: float) -> list[BeliefRecord]:
        conf = np.clip(self.smoothed[1:], 0.0, 1.0)
        return [
            BeliefRecord(task_code, i + 1, state, float(conf[i]), float(timestamp))
            for i, state in enumerate(self.states)
        ]
