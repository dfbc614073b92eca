"""Acoustic frame containers, context splicing and sliding windows."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_FRAME_PERIOD = 0.010
DEFAULT_FRAME_SIZE = 0.025


@dataclass
class FrameMatrix:
    frames: np.ndarray
    frame_period: float = DEFAULT_FRAME_PERIOD
    frame_size: float = DEFAULT_FRAME_SIZE

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ValueError(f"FrameMatrix needs a non-empty T x F array, got {self.frames.shape}")
        if self.frame_period <= 0:
            raise ValueError("frame_period must be positive")

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def F(self) -> int:
        return self.frames.shape[1]

    def duration(self) -> float:
        return frames_to_seconds(self.T, self.frame_period)


@dataclass
class WindowPlan:
    window_len: int
    hop: int
    spans: list[tuple[int, int]] = field(default_factory=list)

    @property
    def starts(self) -> list[int]:
        return [s for s, _ in self.spans]


def splice_context(x: FrameMatrix | np.ndarray, left: int, right: int) -> np.ndarray:
    """Row t becomes frames t-left .. t+right side by side (edge frames replicated)."""
    frames = x.frames if isinstance(x, FrameMatrix) else np.asarray(x, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise ValueError("splice_context: empty input")
    if left < 0 or right < 0:
        raise ValueError("splice_context: left/right must be >= 0")
    T = frames.shape[0]
    cols = [frames[np.clip(np.arange(T) + k, 0, T - 1)] for k in range(-left, right + 1)]
    return np.concatenate(cols, axis=1)


def slide_windows(T: int, window_len: int = 200, hop: int = 100) -> WindowPlan:
    """Fixed-length windows every ``hop`` frames; the last one is tail-anchored."""
    if T <= 0:
        raise ValueError("slide_windows: T must be positive")
    if not (window_len >= hop >= 1):
        raise ValueError(f"slide_windows: need window_len >= hop >= 1, got {window_len}, {hop}")
    if T < window_len:
        return WindowPlan(window_len, hop, [(0, T)])
    spans = [(s, s + window_len) for s in range(0, T - window_len + 1, hop)]
    if spans[-1][1] != T:
        spans.append((T - window_len, T))
    return WindowPlan(window_len, hop, spans)


def frames_to_seconds(n: int, period: float = DEFAULT_FRAME_PERIOD) -> float:
    if period <= 0:
        raise ValueError("period must be positive")
    return n * period


def seconds_to_frames(t: float, period: float = DEFAULT_FRAME_PERIOD) -> int:
    """Nearest frame index; exact halves go to the later frame."""
    if period <= 0:
        raise ValueError("period must be positive")
    if t < 0:
        raise ValueError(f"negative time {t}")
    # round the ratio first so 0.015/0.010 = 1.4999999... still counts as a tie
    ratio = round(t / period, 9)
    return int(math.floor(ratio + 0.5))


# feature file: magic, version, T, F, frame_period, frame_size, then float64 rows
FEATURE_MAGIC = b"CASEFEAT"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<8sIQQdd")


def write_features(path, x: FrameMatrix) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, x.T, x.F, x.frame_period, x.frame_size))
        fh.write(np.ascontiguousarray(x.frames, dtype="<f8").tobytes())


def read_features(path) -> FrameMatrix:
    data = Path(path).read_bytes()
    magic, version, T, F, period, size = _HEADER.unpack_from(data)
    if magic != FEATURE_MAGIC:
        raise ValueError(f"{path}: not a feature file")
    if version != FEATURE_VERSION:
        raise ValueError(f"{path}: unsupported feature file version {version}")
    frames = np.frombuffer(data, dtype="<f8", count=T * F, offset=_HEADER.size).reshape(T, F)
    return FrameMatrix(frames.astype(np.float64), period, size)
