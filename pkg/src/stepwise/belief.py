"""Belief CSV wire format.

One line per task step per timestamp, no header::

    task_code,task_step_num,step_state,step_state_confidence,timestamp
    M2,1,current,0.900000,12.300000

States are written lowercase and parsed case-insensitively. Confidence and
timestamp are written with six decimals. A header line matching the field
names is tolerated when parsing.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable

FIELDS = ("task_code", "task_step_num", "step_state", "step_state_confidence", "timestamp")

_CODE = re.compile(r"[A-Za-z0-9_.\-]+")
_INT = re.compile(r"[0-9]+")


class StepState(str, Enum):
    UNOBSERVED = "unobserved"
    CURRENT = "current"
    DONE = "done"

    @property
    def rank(self) -> int:
        return _RANK[self]


_RANK = {StepState.UNOBSERVED: 0, StepState.CURRENT: 1, StepState.DONE: 2}


class BeliefFormatError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.message = message


@dataclass(frozen=True)
class BeliefRecord:
    task_code: str
    task_step_num: int
    step_state: StepState
    step_state_confidence: float
    timestamp: float

    def problems(self) -> list[str]:
        out = []
        if not isinstance(self.task_code, str) or not _CODE.fullmatch(self.task_code):
            out.append(f"bad task code {self.task_code!r}")
        if not isinstance(self.task_step_num, int) or isinstance(self.task_step_num, bool) or self.task_step_num < 1:
            out.append(f"step number must be an integer >= 1, got {self.task_step_num!r}")
        if not isinstance(self.step_state, StepState):
            out.append(f"bad step state {self.step_state!r}")
        c = self.step_state_confidence
        if not isinstance(c, (int, float)) or not math.isfinite(c) or not 0.0 <= c <= 1.0:
            out.append(f"confidence must be in [0, 1], got {c!r}")
        ts = self.timestamp
        if not isinstance(ts, (int, float)) or not math.isfinite(ts) or ts < 0:
            out.append(f"timestamp must be finite and >= 0, got {ts!r}")
        return out


def _check_order(records: Iterable[BeliefRecord]):
    """Yield (index, message) for timestamps that go backwards within a (task, step)."""
    last: dict[tuple[str, int], float] = {}
    for i, r in enumerate(records):
        key = (r.task_code, r.task_step_num)
        if key in last and r.timestamp < last[key]:
            yield i, f"timestamp {r.timestamp} precedes {last[key]} for {key[0]} step {key[1]}"
        last[key] = r.timestamp


def format_belief_line(r: BeliefRecord) -> str:
    return f"{r.task_code},{r.task_step_num},{r.step_state.value},{r.step_state_confidence:.6f},{r.timestamp:.6f}\n"


def write_belief(records: Iterable[BeliefRecord]) -> bytes:
    records = list(records)
    for i, r in enumerate(records):
        bad = r.problems()
        if bad:
            raise ValueError(f"record {i}: {'; '.join(bad)}")
    for i, msg in _check_order(records):
        raise ValueError(f"record {i}: {msg}")
    return "".join(format_belief_line(r) for r in records).encode("utf-8")


def _parse_line(text: str, lineno: int) -> BeliefRecord:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != len(FIELDS):
        raise BeliefFormatError(lineno, f"expected {len(FIELDS)} fields, got {len(parts)}")
    code, step, state, conf, ts = parts
    if not _INT.fullmatch(step):
        raise BeliefFormatError(lineno, f"malformed step number {step!r}")
    try:
        state_v = StepState(state.lower())
    except ValueError:
        raise BeliefFormatError(lineno, f"unknown step state {state!r}") from None
    try:
        conf_v = float(conf)
        ts_v = float(ts)
    except ValueError:
        raise BeliefFormatError(lineno, f"malformed number in {conf!r} / {ts!r}") from None
    rec = BeliefRecord(code, int(step), state_v, conf_v, ts_v)
    bad = rec.problems()
    if bad:
        raise BeliefFormatError(lineno, "; ".join(bad))
    return rec


def parse_belief(data: bytes | str) -> list[BeliefRecord]:
    """Parse a belief file. Any malformed input raises BeliefFormatError naming the line."""
    if isinstance(data, str):
        data = data.encode("utf-8", errors="surrogatepass")
    records = []
    seen_content = False
    for lineno, raw in enumerate(data.split(b"\n"), start=1):
        try:
            text = raw.decode("utf-8").rstrip("\r")
        except UnicodeDecodeError:
            raise BeliefFormatError(lineno, "invalid UTF-8") from None
        if not text.strip():
            continue
        if not seen_content:
            seen_content = True
            if tuple(p.strip().lower() for p in text.split(",")) == FIELDS:
                continue
        records.append((lineno, _parse_line(text, lineno)))
    for i, msg in _check_order(r for _, r in records):
        raise BeliefFormatError(records[i][0], msg)
    return [r for _, r in records]


def save_beliefs(records: Iterable[BeliefRecord], path) -> None:
    Path(path).write_bytes(write_belief(records))


def load_beliefs(path) -> list[BeliefRecord]:
    return parse_belief(Path(path).read_bytes())
