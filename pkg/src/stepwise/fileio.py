"""Small on-disk formats: feature binaries, segment CSVs, key=value configs, loss traces."""
from __future__ import annotations

import contextlib
import csv
import io
import os
import shutil
import struct
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .evaluation import ActionSegment
from .tcn import FeatureSequence

# little-endian: uint64 T, uint64 D, float64 frame rate, then T*D float32 row-major
_FEATURE_HEADER = struct.Struct("<QQd")


def features_to_bytes(seq: FeatureSequence) -> bytes:
    T, D = seq.data.shape
    return _FEATURE_HEADER.pack(T, D, seq.frame_rate) + seq.data.astype("<f4").tobytes()


def features_from_bytes(data: bytes) -> FeatureSequence:
    if len(data) < _FEATURE_HEADER.size:
        raise ValueError("feature file truncated before header end")
    T, D, fps = _FEATURE_HEADER.unpack_from(data)
    body = data[_FEATURE_HEADER.size :]
    if len(body) != 4 * T * D:
        raise ValueError(f"feature body has {len(body)} bytes, header implies {4 * T * D}")
    arr = np.frombuffer(body, dtype="<f4").reshape(T, D).astype(np.float64)
    return FeatureSequence(arr, fps)


def save_features(seq: FeatureSequence, path) -> None:
    Path(path).write_bytes(features_to_bytes(seq))


def load_features(path) -> FeatureSequence:
    return features_from_bytes(Path(path).read_bytes())


def format_segments(segments: Iterable) -> str:
    """``step_id,start,stop`` per line; accepts ActionSegment or StepInterval."""
    return "".join(f"{s.step_id},{s.start:.6f},{s.stop:.6f}\n" for s in segments)


def parse_segments(text: str, video: str = "") -> list[ActionSegment]:
    out = []
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or not "".join(row).strip():
            continue
        if lineno == 1 and row[0].strip() == "step_id":
            continue
        if len(row) != 3:
            raise ValueError(f"line {lineno}: expected step_id,start,stop")
        try:
            out.append(ActionSegment(int(row[0]), float(row[1]), float(row[2]), 1.0, video))
        except ValueError as e:
            raise ValueError(f"line {lineno}: {e}") from None
    return out


def load_segments(path, video: str = "") -> list[ActionSegment]:
    return parse_segments(Path(path).read_text(), video)


def read_key_values(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key] = value
    return out


def format_loss_trace(trace: Sequence[float]) -> str:
    return "epoch,mean_loss\n" + "".join(f"{i},{v:.10g}\n" for i, v in enumerate(trace))


@contextlib.contextmanager
def staged_output(out_dir):
    """Yield a staging directory inside ``out_dir``; its files move into ``out_dir`` only on success."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=out_dir))
    try:
        yield stage
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    for p in sorted(stage.rglob("*")):
        rel = p.relative_to(stage)
        if p.is_dir():
            (out_dir / rel).mkdir(parents=True, exist_ok=True)
        else:
            (out_dir / rel).parent.mkdir(parents=True, exist_ok=True)
            os.replace(p, out_dir / rel)
    shutil.rmtree(stage, ignore_errors=True)


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise
