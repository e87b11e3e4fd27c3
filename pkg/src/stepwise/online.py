"""Streaming inference: bounded frame buffer, ordering penalty, softmax."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .tasks import TaskDefinition
from .tcn import CausalTcnModel, StageParams, _einsum_contract, model_forward, softmax


class FrameBuffer:
    """The most recent ``capacity`` feature vectors with their absolute frame indices."""

    def __init__(self, dim: int, capacity: int = 1200):
        if capacity < 1 or dim < 1:
            raise ValueError("capacity and dim must be >= 1")
        self.dim = dim
        self.capacity = capacity
        self._frames: deque[np.ndarray] = deque(maxlen=capacity)
        self.next_index = 0

    def __len__(self) -> int:
        return len(self._frames)

    def push(self, feature) -> None:
        f = np.asarray(feature, dtype=np.float64)
        if f.shape != (self.dim,):
            raise ValueError(f"expected a feature of width {self.dim}, got shape {f.shape}")
        if not np.all(np.isfinite(f)):
            raise ValueError("feature contains non-finite values")
        self._frames.append(f.copy())
        self.next_index += 1

    @property
    def oldest_index(self) -> int:
        return self.next_index - len(self._frames)

    @property
    def indices(self) -> range:
        return range(self.oldest_index, self.next_index)

    def window(self) -> np.ndarray:
        return np.stack(self._frames)


def infer_current(buffer: FrameBuffer, model: CausalTcnModel) -> np.ndarray:
    """Final-stage logits of the newest frame, computed over the buffered window."""
    if len(buffer) == 0:
        raise ValueError("buffer is empty")
    if buffer.dim != model.input_dim:
        raise ValueError(f"buffer width {buffer.dim} does not match model input width {model.input_dim}")
    return model_forward(buffer.window(), model)[-1].logits[-1]


class _StageState:
    """Per-layer history of one stage, long enough for the widest tap."""

    def __init__(self, stage: StageParams):
        self.stage = stage
        H = stage.hidden_dim
        self.history = [deque([np.zeros(H)] * (2 * 2**l), maxlen=2 * 2**l) for l in range(len(stage.layers))]

    def step(self, x: np.ndarray) -> np.ndarray:
        st = self.stage
        h = _einsum_contract(x[None, :], st.in_w) + st.in_b
        for l, layer in enumerate(st.layers):
            d = 2**l
            past = self.history[l]
            taps = np.concatenate([past[0], past[d], h[0]])[None, :]
            past.append(h[0])
            pre = _einsum_contract(taps, layer.conv_w.reshape(-1, layer.conv_w.shape[2])) + layer.conv_b
            act = np.maximum(pre, 0.0)
            h = h + (_einsum_contract(act, layer.res_w) + layer.res_b)
        return (_einsum_contract(h, st.out_w) + st.out_b)[0]


class StreamingTcn:
    """Frame-by-frame causal forward pass.

    The newest logits always equal ``infer_current`` on the same buffer.
    While nothing has been evicted, or when ``capacity`` covers the receptive
    field, they come from per-layer caches at O(1) cost per frame; otherwise
    the whole buffer is re-run.
    """

    def __init__(self, model: CausalTcnModel, capacity: int = 1200):
        self.model = model
        self.buffer = FrameBuffer(model.input_dim, capacity)
        self.incremental = capacity >= model.receptive_field
        self._states = [_StageState(st) for st in model.stages]

    def push(self, feature) -> np.ndarray:
        self.buffer.push(feature)
        x = np.asarray(feature, dtype=np.float64)
        for s, state in enumerate(self._states):
            logits = state.step(x)
            if s + 1 < len(self._states):
                x = softmax(logits[None, :])[0]
        if self.incremental or self.buffer.oldest_index == 0:
            return logits
        return infer_current(self.buffer, self.model)


@dataclass
class ProgressTracker:
    """Completion flags for steps 1..num_steps; flags never go back to 0."""

    num_steps: int
    alpha: float = 3.0
    done: np.ndarray = field(init=False)

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        self.done = np.zeros(self.num_steps + 1, dtype=bool)

    def mark_done(self, step: int) -> None:
        self.done[step] = True

    def sync(self, done_steps) -> None:
        for step in done_steps:
            self.done[step] = True

    def is_done(self, step: int) -> bool:
        return bool(self.done[step])


def apply_ordering_penalty(z, tracker: ProgressTracker, task: TaskDefinition) -> np.ndarray:
    """Subtract alpha per incomplete predecessor and per completed successor.

    The background logit (class 0) is left unchanged.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (task.num_classes,) or tracker.num_steps != task.num_steps:
        raise ValueError("logit vector, tracker and task disagree on the number of steps")
    done = tracker.done
    order = np.asarray(task.order)
    done_in_order = done[order].astype(np.int64)
    # position i in canonical order: incomplete predecessors = i - done before i
    done_before = np.concatenate([[0], np.cumsum(done_in_order)[:-1]])
    done_after = done_in_order.sum() - np.cumsum(done_in_order)
    counts = np.arange(len(order)) - done_before + done_after
    out = z.copy()
    out[order] -= tracker.alpha * counts
    return out


def finalize_probabilities(z_tilde) -> np.ndarray:
    return softmax(np.asarray(z_tilde, dtype=np.float64))
