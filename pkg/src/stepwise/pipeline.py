"""Glue between the pieces: streaming a sequence to beliefs, and the synthetic benchmark."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .belief import BeliefRecord, save_beliefs
from .evaluation import ActionSegment, EvalReport, THRESHOLDS, bin_and_extract_segments, build_report
from .fileio import format_loss_trace, format_segments, save_features
from .online import ProgressTracker, StreamingTcn, apply_ordering_penalty, finalize_probabilities
from .state_machine import StateMachine
from .synth import SyntheticEpisode, episode_rng, generate_episode, resolve_overlaps, task_means
from .tasks import PROFILES, TaskDefinition
from .tcn import CausalTcnModel, FeatureSequence, save_model
from .training import LabeledSequence, TrainConfig, train_task

log = logging.getLogger(__name__)


@dataclass
class OnlineTrace:
    records: list[BeliefRecord]
    logits: np.ndarray  # raw final-stage logits per frame
    penalized: np.ndarray
    done_before: np.ndarray  # (T, K) completion flags used for each frame's penalty


def run_online(
    features: FeatureSequence,
    model: CausalTcnModel,
    task: TaskDefinition,
    alpha: float = 3.0,
    capacity: int = 1200,
    p: int = 3,
) -> OnlineTrace:
    """Stream ``features`` frame by frame through model, ordering penalty and state machine."""
    if model.num_classes != task.num_classes:
        raise ValueError(f"model predicts {model.num_classes} classes, task {task.code} has {task.num_classes}")
    stream = StreamingTcn(model, capacity)
    tracker = ProgressTracker(task.num_steps, alpha)
    sm = StateMachine(task.num_steps, p)
    T = len(features)
    raw = np.empty((T, task.num_classes))
    pen = np.empty_like(raw)
    flags = np.empty((T, task.num_classes), dtype=bool)
    records: list[BeliefRecord] = []
    for t in range(T):
        z = stream.push(features.data[t])
        tracker.sync(sm.done_steps())
        flags[t] = tracker.done
        zt = apply_ordering_penalty(z, tracker, task)
        sm.update(finalize_probabilities(zt))
        records.extend(sm.emit_states(task.code, t / features.frame_rate))
        raw[t], pen[t] = z, zt
    return OnlineTrace(records, raw, pen, flags)


def episode_segments(ep: SyntheticEpisode, video: str) -> list[ActionSegment]:
    return [ActionSegment(iv.step_id, iv.start, iv.stop, 1.0, video) for iv in ep.intervals]


@dataclass
class BenchmarkConfig:
    seed: int = 1
    separation: float = 10.0
    dim: int = 64
    train_episodes: int = 40
    eval_episodes: int = 10
    lam: float = 0.15
    alpha: float = 3.0
    epochs: int = 12
    learning_rate: float = 5e-4
    num_stages: int = 2
    num_layers: int = 8
    hidden_dim: int = 32
    capacity: int = 1200
    profiles: Sequence[str] = tuple(PROFILES)
    thresholds: Sequence[float] = THRESHOLDS


@dataclass
class BenchmarkResult:
    report: EvalReport
    traces: dict[str, list[float]]
    seconds: float
    predictions: dict[str, list[ActionSegment]] = field(default_factory=dict)
    ground_truth: dict[str, list[ActionSegment]] = field(default_factory=dict)


def make_episodes(code: str, cfg: BenchmarkConfig, split: int, count: int) -> list[SyntheticEpisode]:
    profile = PROFILES[code]
    means = task_means(profile, cfg.dim, cfg.separation, cfg.seed)
    return [
        generate_episode(profile, episode_rng(cfg.seed, code, split, i), cfg.dim, cfg.separation, means)
        for i in range(count)
    ]


def run_benchmark(cfg: BenchmarkConfig, out_dir: Path | None = None) -> BenchmarkResult:
    """Synthesize, train one model per task, stream the held-out episodes, and score them.

    With ``out_dir`` every intermediate artifact is written there.
    """
    t0 = time.perf_counter()
    per_task, traces, preds_all, gts_all = {}, {}, {}, {}
    for code in cfg.profiles:
        task = PROFILES[code].task
        train_eps = make_episodes(code, cfg, 0, cfg.train_episodes)
        eval_eps = make_episodes(code, cfg, 1, cfg.eval_episodes)
        tcfg = TrainConfig(
            lam=cfg.lam, epochs=cfg.epochs, learning_rate=cfg.learning_rate, seed=cfg.seed,
            num_stages=cfg.num_stages, num_layers=cfg.num_layers, hidden_dim=cfg.hidden_dim,
        )
        data = [LabeledSequence(ep.features, ep.labels, task) for ep in train_eps]
        result = train_task(data, tcfg)
        traces[code] = result.trace
        log.info("%s trained: loss %.4f -> %.4f", code, result.trace[0] if result.trace else float("nan"),
                 result.trace[-1] if result.trace else float("nan"))

        preds, gts = [], []
        for i, ep in enumerate(eval_eps):
            video = f"{code}_eval{i:03d}"
            trace = run_online(ep.features, result.model, task, cfg.alpha, cfg.capacity)
            preds.extend(bin_and_extract_segments(trace.records, video=video))
            gts.extend(episode_segments(ep, video))
            if out_dir is not None:
                d = Path(out_dir) / code
                d.mkdir(parents=True, exist_ok=True)
                save_beliefs(trace.records, d / f"{video}.beliefs.csv")
                (d / f"{video}.gt.csv").write_text(format_segments(ep.intervals))
        if out_dir is not None:
            save_model(result.model, Path(out_dir) / code / f"{code}.tcn")
            (Path(out_dir) / code / f"{code}.loss.csv").write_text(format_loss_trace(result.trace))
        per_task[code] = (preds, gts)
        preds_all[code], gts_all[code] = preds, gts
        log.info("%s done after %.1f s", code, time.perf_counter() - t0)
    report = build_report(per_task, cfg.thresholds)
    return BenchmarkResult(report, traces, time.perf_counter() - t0, preds_all, gts_all)
