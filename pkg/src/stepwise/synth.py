"""Seeded synthetic episodes: step timelines, overlap-resolved labels, features.

Step durations are log-normal, floored at the profile minimum, with the
location chosen so the floored mean equals the profile mean. Gaps between
steps are exponential and sized so the expected episode length matches the
profile's mean video duration. Features are a per-class mean direction
scaled by ``separation`` plus unit Gaussian noise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from .tasks import BACKGROUND, TaskDefinition, TaskProfile
from .tcn import FeatureSequence

FRAME_RATE = 30.0


@dataclass(frozen=True)
class StepInterval:
    step_id: int
    start: float
    stop: float

    @property
    def duration(self) -> float:
        return self.stop - self.start


@dataclass
class Timeline:
    intervals: list[StepInterval]
    duration: float


@dataclass
class SyntheticEpisode:
    features: FeatureSequence
    intervals: list[StepInterval]
    labels: np.ndarray
    task: TaskDefinition
    duration: float


def floored_lognormal_mean(mu: float, sigma: float, floor: float) -> float:
    """E[max(X, floor)] for X ~ LogNormal(mu, sigma)."""
    if floor <= 0:
        return math.exp(mu + sigma**2 / 2)
    z = (math.log(floor) - mu) / sigma
    return floor * norm.cdf(z) + math.exp(mu + sigma**2 / 2) * norm.sf(z - sigma)


@lru_cache(maxsize=None)
def lognormal_location(mean: float, floor: float, sigma: float) -> float:
    """Location ``mu`` for which the floored log-normal has the requested mean."""
    if sigma == 0 or mean <= floor:
        return math.log(max(mean, 1e-12))
    f = lambda mu: floored_lognormal_mean(mu, sigma, floor) - mean
    hi = math.log(mean)
    lo = hi - 10 * sigma - 10
    return brentq(f, lo, hi, xtol=1e-13)


def sample_timeline(
    profile: TaskProfile,
    rng: np.random.Generator,
    sigma: float = 0.5,
    overlap_depth: float = 0.25,
) -> Timeline:
    """Raw step intervals in canonical order, possibly overlapping their predecessor.

    ``overlap_depth`` is the overlapped length as a fraction of the shorter of
    the two steps.
    """
    n = profile.num_steps
    mu = lognormal_location(profile.mean_step_duration, profile.min_step_duration, sigma)
    durations = np.maximum(rng.lognormal(mu, sigma, size=n), profile.min_step_duration)
    gap_mean = max(profile.mean_video_duration - n * profile.mean_step_duration, 0.0) / (n + 1)
    gaps = rng.exponential(gap_mean, size=n + 1) if gap_mean > 0 else np.zeros(n + 1)
    overlaps = rng.random(n) < profile.overlap_fraction

    order = profile.task.order
    intervals = []
    t = float(gaps[0])
    for i, step in enumerate(order):
        if i == 0:
            start = t
        elif overlaps[i]:
            prev = intervals[-1]
            start = prev.stop - overlap_depth * min(prev.duration, float(durations[i]))
        else:
            start = intervals[-1].stop + float(gaps[i])
        intervals.append(StepInterval(step, start, start + float(durations[i])))
    return Timeline(intervals, intervals[-1].stop + float(gaps[n]))


def resolve_overlaps(intervals, num_frames: int, frame_rate: float = FRAME_RATE) -> np.ndarray:
    """Single label per frame; overlapped time goes to the later step, unlabeled time to background.

    Frame ``f`` sits at time ``f / frame_rate`` and belongs to ``[start, stop)``.
    """
    labels = np.full(num_frames, BACKGROUND, dtype=np.int64)
    for iv in sorted(intervals, key=lambda iv: iv.start):
        a = max(0, math.ceil(iv.start * frame_rate - 1e-9))
        b = min(num_frames, math.ceil(iv.stop * frame_rate - 1e-9))
        labels[a:b] = iv.step_id
    return labels


def class_means(num_classes: int, dim: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    """Unit-norm class directions (orthonormal when num_classes <= dim) scaled by ``separation``."""
    g = rng.normal(size=(dim, num_classes))
    if num_classes <= dim:
        q, r = np.linalg.qr(g)
        dirs = (q * np.sign(np.diag(r))).T
    else:
        dirs = (g / np.linalg.norm(g, axis=0)).T
    return separation * dirs


def emit_features(
    labels,
    dim: int,
    separation: float,
    rng: np.random.Generator,
    means: np.ndarray | None = None,
    frame_rate: float = FRAME_RATE,
) -> FeatureSequence:
    labels = np.asarray(labels, dtype=np.int64)
    if dim < 1 or separation < 0:
        raise ValueError("dim must be >= 1 and separation >= 0")
    if means is None:
        means = class_means(int(labels.max()) + 1, dim, separation, rng)
    noise = rng.normal(size=(labels.shape[0], dim))
    return FeatureSequence(means[labels] + noise, frame_rate)


def task_means(profile: TaskProfile, dim: int, separation: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, _code_key(profile.code), 0xC1A55]))
    return class_means(profile.task.num_classes, dim, separation, rng)


def _code_key(code: str) -> int:
    return int.from_bytes(code.encode(), "little") % (2**32)


def episode_rng(seed: int, code: str, split: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, _code_key(code), split, index]))


def generate_episode(
    profile: TaskProfile,
    rng: np.random.Generator,
    dim: int,
    separation: float,
    means: np.ndarray | None = None,
    frame_rate: float = FRAME_RATE,
    sigma: float = 0.5,
    overlap_depth: float = 0.25,
) -> SyntheticEpisode:
    timeline = sample_timeline(profile, rng, sigma, overlap_depth)
    num_frames = max(1, math.ceil(timeline.duration * frame_rate - 1e-9))
    labels = resolve_overlaps(timeline.intervals, num_frames, frame_rate)
    if means is None:
        means = class_means(profile.task.num_classes, dim, separation, rng)
    feats = emit_features(labels, dim, separation, rng, means, frame_rate)
    return SyntheticEpisode(feats, timeline.intervals, labels, profile.task, timeline.duration)


def overlap_rate(timelines) -> float:
    """Fraction of steps (those with a predecessor) that start before the predecessor stops."""
    hits = total = 0
    for tl in timelines:
        ivs = tl.intervals
        for prev, cur in zip(ivs, ivs[1:]):
            total += 1
            hits += cur.start < prev.stop
    return hits / total if total else 0.0
