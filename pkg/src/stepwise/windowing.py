"""Fixed-duration windows over each labeled clip of a video.

Every maximal run of one label (including background) is a clip. The first
window's last frame lands on one of the clip's first ``fs`` frames, chosen at
random, and later windows advance by the stride. A window keeps the clip's
label plus a positional label ``(begin, end)`` where ``begin`` is the
distance from the clip's first frame to the window's last frame over the
clip length, and ``end = 1 - begin``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Window:
    first: int  # first frame, inclusive
    last: int  # last frame, inclusive
    label: int
    begin: float

    @property
    def end(self) -> float:
        return 1.0 - self.begin

    @property
    def positional(self) -> tuple[float, float]:
        return (self.begin, self.end)


def window_geometry(frame_rate: float, k_seconds: float = 2.0, overlap: float = 0.5) -> tuple[int, int]:
    """(window length, stride) in frames for the given frame rate."""
    if not k_seconds > 0 or not 0 <= overlap < 1 or not frame_rate > 0:
        raise ValueError("need k_seconds > 0, 0 <= overlap < 1 and frame_rate > 0")
    length = max(1, round(k_seconds * frame_rate))
    stride = max(1, round(k_seconds * frame_rate * (1 - overlap)))
    return length, stride


def clips(labels) -> list[tuple[int, int, int]]:
    """(start, stop_exclusive, label) for each run of equal labels."""
    labels = np.asarray(labels)
    if labels.size == 0:
        return []
    cuts = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate([[0], cuts])
    stops = np.concatenate([cuts, [labels.size]])
    return [(int(a), int(b), int(labels[a])) for a, b in zip(starts, stops)]


def slide_windows(
    labels,
    frame_rate: float,
    k_seconds: float = 2.0,
    overlap: float = 0.5,
    fs: int = 5,
    rng: np.random.Generator | None = None,
    include_background: bool = True,
) -> list[Window]:
    """Windows for every clip. Windows reaching before frame 0 or past the clip end are dropped."""
    rng = rng if rng is not None else np.random.default_rng()
    length, stride = window_geometry(frame_rate, k_seconds, overlap)
    out = []
    for start, stop, label in clips(labels):
        n = stop - start
        if n < 1:
            log.warning("skipping empty clip at frame %d", start)
            continue
        if label == 0 and not include_background:
            continue
        offset = int(rng.integers(0, min(fs, n)))
        for last in range(start + offset, stop, stride):
            first = last - length + 1
            if first < 0:
                continue
            out.append(Window(first, last, label, (last - start) / n))
    return out
