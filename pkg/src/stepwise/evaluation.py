"""Belief files -> action segments -> IOU matching -> AP / mAP / precision / recall."""
from __future__ import annotations

import csv
import io
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .belief import BeliefRecord, StepState

log = logging.getLogger(__name__)

BIN_WIDTH = 0.1
THRESHOLDS = (0.1, 0.2, 0.3, 0.4, 0.5)


@dataclass(frozen=True)
class ActionSegment:
    """A step interval in seconds. ``video`` scopes matching to one recording."""

    step_id: int
    start: float
    stop: float
    confidence: float = 1.0
    video: str = ""
    open_ended: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.start) and math.isfinite(self.stop)) or not self.stop > self.start >= 0:
            raise ValueError(f"segment needs stop > start >= 0, got [{self.start}, {self.stop}]")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def duration(self) -> float:
        return self.stop - self.start


def _bin_index(ts: float, width: float) -> int:
    return int(math.floor(ts / width + 1e-9))


def _bin_time(b: int, width: float) -> float:
    return round(b * width, 9)


def bin_and_extract_segments(
    records: Iterable[BeliefRecord], bin_width: float = BIN_WIDTH, video: str = ""
) -> list[ActionSegment]:
    """Segments of one task run.

    A step's segment starts at the bin where it first becomes current and
    stops at the bin where it first becomes done. A step still current at the
    end of the stream is closed one bin after the final timestamp and marked
    ``open_ended``. Steps that never become current yield nothing.
    """
    records = list(records)
    if not records:
        return []
    if len({r.task_code for r in records}) > 1:
        raise ValueError("records span more than one task")
    final_bin = _bin_index(max(r.timestamp for r in records), bin_width)
    by_step: dict[int, list[BeliefRecord]] = defaultdict(list)
    for r in records:
        by_step[r.task_step_num].append(r)

    segments = []
    for step in sorted(by_step):
        rows = sorted(by_step[step], key=lambda r: r.timestamp)
        start_bin = stop_bin = None
        conf = 0.0
        for r in rows:
            if r.step_state is StepState.CURRENT:
                if start_bin is None:
                    start_bin = _bin_index(r.timestamp, bin_width)
                conf = max(conf, r.step_state_confidence)
            elif r.step_state is StepState.DONE:
                if start_bin is None:
                    log.warning("step %d is done before it was ever current; dropped", step)
                    break
                stop_bin = _bin_index(r.timestamp, bin_width)
                break
        if start_bin is None:
            continue
        open_ended = stop_bin is None
        if open_ended:
            stop_bin = final_bin + 1
            log.info("step %d still current at end of stream; closed at %.1f s", step, stop_bin * bin_width)
        # current and done inside one bin: keep a one-bin segment
        stop_bin = max(stop_bin, start_bin + 1)
        segments.append(
            ActionSegment(step, _bin_time(start_bin, bin_width), _bin_time(stop_bin, bin_width), conf, video, open_ended)
        )
    return segments


def iou(a: ActionSegment, b: ActionSegment) -> float:
    inter = min(a.stop, b.stop) - max(a.start, b.start)
    if inter <= 0:
        return 0.0
    return inter / (a.duration + b.duration - inter)


def ranking(preds: Sequence[ActionSegment]) -> list[int]:
    """Prediction indices by descending confidence; ties by earlier start, then lower step id."""
    return sorted(range(len(preds)), key=lambda i: (-preds[i].confidence, preds[i].start, preds[i].step_id, i))


@dataclass
class MatchResult:
    pairs: list[tuple[int, int, float]]  # (pred index, gt index, iou)
    unmatched_pred: list[int]
    unmatched_gt: list[int]
    is_tp: list[bool]  # indexed by prediction


def match_segments(preds: Sequence[ActionSegment], gts: Sequence[ActionSegment], threshold: float) -> MatchResult:
    """Greedy one-to-one matching in confidence order.

    Each prediction claims the unclaimed ground-truth segment of the same step
    and video with the highest IOU, if that IOU is at least ``threshold``.
    """
    if not 0 < threshold <= 1:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    claimed = [False] * len(gts)
    by_key: dict[tuple[str, int], list[int]] = defaultdict(list)
    for j, g in enumerate(gts):
        by_key[(g.video, g.step_id)].append(j)
    pairs = []
    is_tp = [False] * len(preds)
    for i in ranking(preds):
        p = preds[i]
        best, best_iou = None, -1.0
        for j in by_key.get((p.video, p.step_id), ()):
            if claimed[j]:
                continue
            v = iou(p, gts[j])
            if v >= threshold and v > best_iou:
                best, best_iou = j, v
        if best is not None:
            claimed[best] = True
            is_tp[i] = True
            pairs.append((i, best, best_iou))
    return MatchResult(
        pairs,
        [i for i in range(len(preds)) if not is_tp[i]],
        [j for j in range(len(gts)) if not claimed[j]],
        is_tp,
    )


def precision_recall_curve(preds, gts, threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """Precision and recall after each ranked prediction."""
    if not gts:
        raise ValueError("average precision is undefined without ground truth")
    m = match_segments(preds, gts, threshold)
    tp = np.array([m.is_tp[i] for i in ranking(preds)], dtype=np.float64)
    cum = np.cumsum(tp)
    precision = cum / np.arange(1, len(tp) + 1) if len(tp) else np.zeros(0)
    return precision, cum / len(gts)


def average_precision(preds: Sequence[ActionSegment], gts: Sequence[ActionSegment], threshold: float) -> float:
    """Sum of precision times recall increment at every true positive (no interpolation)."""
    precision, recall = precision_recall_curve(preds, gts, threshold)
    if not len(precision):
        return 0.0
    steps = np.diff(np.concatenate([[0.0], recall]))
    return float(np.sum(precision * steps))


@dataclass
class EvalReport:
    thresholds: tuple[float, ...]
    tasks: list[str]
    ap: dict[str, list[float]]
    precision: dict[str, float]
    recall: dict[str, float]
    counts: dict[str, tuple[int, int, int]] = field(default_factory=dict)  # tp, fp, fn at pr threshold
    pr_threshold: float = 0.5

    @property
    def map(self) -> list[float]:
        return [float(np.mean([self.ap[t][i] for t in self.tasks])) for i in range(len(self.thresholds))]

    @property
    def average_map(self) -> float:
        return float(np.mean(self.map))

    def map_at(self, threshold: float) -> float:
        return self.map[self.thresholds.index(threshold)]

    def map_table_csv(self, method: str = "TAS") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["Method", *[f"mAP@{t:g}" for t in self.thresholds], "Avg mAP"])
        w.writerow([method, *[f"{v:.3f}" for v in self.map], f"{self.average_map:.3f}"])
        return buf.getvalue()

    def pr_table_csv(self, method: str = "TAS") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["Method", *[f"{t} {k}" for t in self.tasks for k in ("Prec", "Rec")]])
        row = [method]
        for t in self.tasks:
            row += [f"{self.precision[t]:.3f}", f"{self.recall[t]:.3f}"]
        w.writerow(row)
        return buf.getvalue()

    def per_task_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["Task", *[f"AP@{t:g}" for t in self.thresholds], "Prec", "Rec", "TP", "FP", "FN"])
        for t in self.tasks:
            w.writerow([t, *[f"{v:.6f}" for v in self.ap[t]], f"{self.precision[t]:.6f}", f"{self.recall[t]:.6f}", *self.counts[t]])
        return buf.getvalue()

    def format_table(self, method: str = "TAS") -> str:
        head = "".join(f"{'mAP@' + format(t, 'g'):>9}" for t in self.thresholds) + f"{'Avg mAP':>9}"
        row = "".join(f"{v:>9.3f}" for v in self.map) + f"{self.average_map:>9.3f}"
        return f"{'Method':<8}{head}\n{method:<8}{row}\n"


def build_report(
    per_task: Mapping[str, tuple[Sequence[ActionSegment], Sequence[ActionSegment]]],
    thresholds: Sequence[float] = THRESHOLDS,
    pr_threshold: float = 0.5,
) -> EvalReport:
    """``per_task`` maps task code -> (predicted segments, ground-truth segments)."""
    if not per_task:
        raise ValueError("no tasks to evaluate")
    tasks = list(per_task)
    ap, prec, rec, counts = {}, {}, {}, {}
    for t in tasks:
        preds, gts = per_task[t]
        ap[t] = [average_precision(preds, gts, th) for th in thresholds]
        m = match_segments(preds, gts, pr_threshold)
        tp = len(m.pairs)
        fp, fn = len(m.unmatched_pred), len(m.unmatched_gt)
        prec[t] = tp / (tp + fp) if tp + fp else 0.0
        rec[t] = tp / (tp + fn) if tp + fn else 0.0
        counts[t] = (tp, fp, fn)
    return EvalReport(tuple(thresholds), tasks, ap, prec, rec, counts, pr_threshold)
