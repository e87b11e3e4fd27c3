"""Loss, random trimming and the per-task training loop."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields
from typing import Mapping, Sequence

import numpy as np

from .tasks import TaskDefinition
from .tcn import (
    CausalTcnModel,
    FeatureSequence,
    StageOutput,
    backward_from_cache,
    forward_for_training,
)

log = logging.getLogger(__name__)

LOG_CLAMP = 1e-12


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class LabeledSequence:
    features: FeatureSequence
    labels: np.ndarray
    task: TaskDefinition | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (len(self.features),):
            raise ValueError(f"{self.labels.shape[0]} labels for {len(self.features)} frames")
        if self.labels.min() < 0:
            raise ValueError("labels must be non-negative")
        if self.task is not None and self.labels.max() >= self.task.num_classes:
            raise ValueError(f"label {self.labels.max()} out of range for {self.task.num_classes} classes")

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class TrainConfig:
    lam: float = 0.15
    epochs: int = 20
    batch_size: int = 1
    learning_rate: float = 5e-4
    seed: int = 0
    trim_min: float = 0.5
    trim_max: float = 1.0
    num_stages: int = 4
    num_layers: int = 10
    hidden_dim: int = 64

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not 0 < self.trim_min <= self.trim_max <= 1:
            raise ValueError(f"trim range [{self.trim_min}, {self.trim_max}] must lie within (0, 1]")
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("epochs >= 0, batch_size >= 1 and learning_rate > 0 required")

    @classmethod
    def from_mapping(cls, values: Mapping[str, str], **overrides) -> "TrainConfig":
        """Build from string key/values (e.g. a config file); ``overrides`` win."""
        kinds = {f.name: f.type for f in fields(cls)}
        aliases = {"lambda": "lam", "lr": "learning_rate"}
        kwargs = {}
        for key, raw in values.items():
            name = aliases.get(key, key)
            if name not in kinds:
                raise ValueError(f"unknown training config key {key!r}")
            kwargs[name] = int(raw) if kinds[name] == "int" else float(raw)
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kwargs)


@dataclass
class LossResult:
    value: float
    cross_entropy: float
    smoothing: float
    prob_grads: list[np.ndarray]
    clamped: bool


def loss(stage_outputs: Sequence[StageOutput], labels, lam: float) -> LossResult:
    """Per-stage cross-entropy plus lambda * squared frame-to-frame probability change.

    The probability before the first frame counts as zero. Returns the total
    and dLoss/dprobs for every stage.
    """
    labels = np.asarray(labels, dtype=np.int64)
    T = labels.shape[0]
    if T < 1:
        raise ValueError("empty label sequence")
    ce_total = smooth_total = 0.0
    grads = []
    clamped = False
    rows = np.arange(T)
    for out in stage_outputs:
        p = out.probs
        if p.shape[0] != T:
            raise ValueError(f"{p.shape[0]} predicted frames for {T} labels")
        if labels.max() >= p.shape[1] or labels.min() < 0:
            raise ValueError("label id out of range")
        py = p[rows, labels]
        small = py < LOG_CLAMP
        if small.any():
            clamped = True
            log.warning("clamped %d probabilities inside log", int(small.sum()))
        ce_total += float(-np.log(np.maximum(py, LOG_CLAMP)).sum())
        diff = p.copy()
        diff[1:] -= p[:-1]
        smooth_total += float(np.sum(diff * diff))

        g = 2.0 * lam * diff
        g[:-1] -= 2.0 * lam * diff[1:]
        g[rows, labels] -= np.where(small, 0.0, 1.0 / np.maximum(py, LOG_CLAMP))
        grads.append(g)
    return LossResult(ce_total + lam * smooth_total, ce_total, smooth_total, grads, clamped)


def random_trim(seq: LabeledSequence, rng: np.random.Generator, trim_range=(0.5, 1.0)) -> LabeledSequence:
    """Contiguous crop whose length is uniform over the integer lengths in trim_range * T."""
    lo, hi = trim_range
    T = len(seq)
    min_len = max(1, math.ceil(lo * T - 1e-9))
    max_len = max(min_len, math.floor(hi * T + 1e-9))
    length = int(rng.integers(min_len, max_len + 1))
    start = int(rng.integers(0, T - length + 1))
    sl = slice(start, start + length)
    feats = FeatureSequence(seq.features.data[sl], seq.features.frame_rate)
    return LabeledSequence(feats, seq.labels[sl], seq.task)


class Adam:
    def __init__(self, model: CausalTcnModel, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in model.parameters()]
        self.v = [np.zeros_like(a) for a in model.parameters()]
        self.t = 0

    def step(self, model: CausalTcnModel, grad: CausalTcnModel) -> None:
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for p, g, m, v in zip(model.parameters(), grad.parameters(), self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def sequence_gradient(model: CausalTcnModel, seq: LabeledSequence, lam: float):
    outputs, caches = forward_for_training(seq.features.data, model)
    res = loss(outputs, seq.labels, lam)
    return res, backward_from_cache(model, outputs, caches, res.prob_grads)


@dataclass
class TrainResult:
    model: CausalTcnModel
    trace: list[float]


def train_task(
    dataset: Sequence[LabeledSequence],
    config: TrainConfig,
    model: CausalTcnModel | None = None,
) -> TrainResult:
    """Fit one model on one task's sequences.

    ``trace[e]`` is the loss of epoch ``e`` divided by the number of frames seen.
    """
    if not dataset:
        raise ValueError("empty training set")
    D = dataset[0].features.dim
    K = max(int(s.labels.max()) for s in dataset) + 1
    if dataset[0].task is not None:
        K = dataset[0].task.num_classes
    if any(s.features.dim != D for s in dataset):
        raise ValueError("inconsistent feature widths in training set")
    rng = np.random.default_rng(config.seed)
    if model is None:
        model = CausalTcnModel.init(
            D, K, config.num_stages, config.num_layers, config.hidden_dim, seed=rng
        )
    elif model.input_dim != D or model.num_classes < K:
        raise ValueError("initial model does not match the training data")
    opt = Adam(model, config.learning_rate)
    trace = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(dataset))
        total, frames = 0.0, 0
        for b in range(0, len(order), config.batch_size):
            batch = order[b : b + config.batch_size]
            acc = None
            for i in batch:
                seq = random_trim(dataset[i], rng, (config.trim_min, config.trim_max))
                res, grad = sequence_gradient(model, seq, config.lam)
                if not math.isfinite(res.value):
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch}, sequence {int(i)}")
                total += res.value
                frames += len(seq)
                if acc is None:
                    acc = grad
                else:
                    for a, g in zip(acc.parameters(), grad.parameters()):
                        a += g
            if len(batch) > 1:
                for a in acc.parameters():
                    a /= len(batch)
            opt.step(model, acc)
        if not all(np.all(np.isfinite(a)) for a in model.parameters()):
            raise TrainingDiverged(f"non-finite weights after epoch {epoch}")
        trace.append(total / frames)
        log.info("epoch %d mean loss %.5f", epoch, trace[-1])
    return TrainResult(model, trace)
