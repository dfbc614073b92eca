"""Arrays fed to the networks: per-meeting streams, window sets and batches."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..content import LEVELS, AlignmentTrack, UnitInventory, WordTable, frame_unit_ids, level_vectors
from ..features import slide_windows


@dataclass
class MeetingData:
    """One meeting's frames plus per-frame unit ids for whichever levels are known."""
    meeting_id: str
    frames: np.ndarray
    content_ids: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @classmethod
    def from_tracks(cls, meeting_id: str, frames: np.ndarray,
                    tracks: dict[str, AlignmentTrack] | None) -> "MeetingData":
        T = frames.shape[0]
        ids = {lvl: frame_unit_ids(t, T) for lvl, t in (tracks or {}).items()}
        return cls(meeting_id, frames, ids)


class ContentEncoder:
    """Maps per-frame unit ids to concatenated content vectors (phone, character, word order)."""

    def __init__(self, inventories: dict[str, UnitInventory], table: WordTable | None = None):
        self.inventories = inventories
        self.table = table

    def width(self, levels: Sequence[str]) -> int:
        return sum(self.inventories[l].dimension for l in levels)

    def encode(self, ids: dict[str, np.ndarray], levels: Sequence[str]) -> np.ndarray | None:
        if not levels:
            return None
        parts = []
        for level in levels:
            if level not in ids:
                raise ValueError(f"no {level} alignment available")
            parts.append(level_vectors(ids[level], self.inventories[level], self.table))
        return np.concatenate(parts, axis=1)


def canonical_levels(levels: Sequence[str]) -> tuple[str, ...]:
    unknown = set(levels) - set(LEVELS)
    if unknown:
        raise ValueError(f"unknown content levels {sorted(unknown)}")
    return tuple(l for l in LEVELS if l in levels)


@dataclass(frozen=True)
class WindowRef:
    meeting: int  # index into WindowSet.meetings
    start: int
    end: int
    label: int = -1  # speaker index, -1 when unknown
    segment_id: object = None

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass
class WindowSet:
    meetings: list[MeetingData]
    windows: list[WindowRef]
    speakers: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.windows)

    def by_length(self) -> dict[int, list[int]]:
        groups: dict[int, list[int]] = {}
        for i, w in enumerate(self.windows):
            groups.setdefault(w.length, []).append(i)
        return groups


@dataclass
class WindowBatch:
    acoustic: np.ndarray  # (B*T) x F
    content: np.ndarray | None  # (B*T) x D
    T: int
    labels: np.ndarray  # B speaker indices
    phone_ids: np.ndarray | None = None  # (B*T), -1 where uncovered

    @property
    def B(self) -> int:
        return self.acoustic.shape[0] // self.T


def make_batch(ws: WindowSet, indices: Sequence[int], encoder: ContentEncoder | None,
               levels: Sequence[str], need_phones: bool = False) -> WindowBatch:
    refs = [ws.windows[i] for i in indices]
    T = refs[0].length
    if any(r.length != T for r in refs):
        raise ValueError("a batch must hold windows of equal length")
    acoustic = np.concatenate([ws.meetings[r.meeting].frames[r.start:r.end] for r in refs])
    content = None
    if levels:
        ids = {lvl: np.concatenate([ws.meetings[r.meeting].content_ids[lvl][r.start:r.end] for r in refs])
               for lvl in levels}
        content = encoder.encode(ids, levels)
    phones = None
    if need_phones:
        phones = np.concatenate([ws.meetings[r.meeting].content_ids["phone"][r.start:r.end] for r in refs])
    labels = np.array([r.label for r in refs], dtype=np.int64)
    return WindowBatch(acoustic, content, T, labels, phones)


def segment_windows(meetings: Sequence[MeetingData], segments: Sequence[Sequence[tuple]],
                    window_len: int, hop: int, speakers: list[str] | None = None,
                    keep=None) -> WindowSet:
    """Windows over every segment; ``segments[m]`` holds (start, end, speaker-or-None) triples.

    ``keep(m, seg_index)`` can drop segments (held-out splits).
    """
    speakers = list(speakers or [])
    index = {s: i for i, s in enumerate(speakers)}
    windows = []
    for m, segs in enumerate(segments):
        for j, (s, e, spk) in enumerate(segs):
            if keep is not None and not keep(m, j):
                continue
            label = index.get(spk, -1) if spk is not None else -1
            for a, b in slide_windows(e - s, window_len, hop).spans:
                windows.append(WindowRef(m, s + a, s + b, label, j))
    return WindowSet(list(meetings), windows, speakers)
