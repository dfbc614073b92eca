"""Corpus access for the pipeline.

Diarisation code sees a meeting only through :class:`MeetingSource`, whose
reference accessors are recorded in an :class:`AccessAudit`.  Transcripts for
the hypothesis regimes come from :class:`SimulatedAsr`, a separate channel
standing in for a recogniser: it is handed frame spans and returns
error-injected alignments restricted to those spans.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..content import AlignmentTrack, UnitInventory, WordTable, clip_track, inject_errors
from ..models.data import ContentEncoder
from ..synthdata import (CorpusSplit, Lexicon, SynthMeeting, SynthSpec, generate_corpus, load_inventories,
                         load_manifest, read_meeting, split_corpus, write_corpus)

WORD_TABLE_SEED = 0


@dataclass
class Corpus:
    meetings: dict[str, SynthMeeting]
    split: CorpusSplit
    inventories: dict[str, UnitInventory]
    frame_period: float
    lexicon: Lexicon | None = None

    @classmethod
    def synthesize(cls, spec: SynthSpec, held_out_fraction: float = 0.1) -> "Corpus":
        meetings, lexicon = generate_corpus(spec)
        split = split_corpus(meetings, held_out_fraction, spec.seed)
        return cls({m.meeting_id: m for m in meetings}, split, lexicon.inventories(), spec.frame_period, lexicon)

    @classmethod
    def load(cls, directory) -> "Corpus":
        d = Path(directory)
        manifest = load_manifest(d)
        inventories = load_inventories(d)
        roles = manifest["roles"]
        meetings = {mid: read_meeting(d, mid, roles[mid], inventories) for mid in sorted(roles)}
        return cls(meetings, CorpusSplit.from_dict(manifest["splits"]), inventories,
                   float(manifest["spec"]["frame_period"]))

    def write(self, directory, spec: SynthSpec) -> None:
        if self.lexicon is None:
            raise ValueError("corpus has no lexicon to write")
        write_corpus(directory, spec, list(self.meetings.values()), self.lexicon, self.split)

    def role(self, role: str) -> list[SynthMeeting]:
        ids = getattr(self.split, role)
        return [self.meetings[m] for m in ids]

    @property
    def feature_dim(self) -> int:
        return next(iter(self.meetings.values())).features.F

    def encoder(self) -> ContentEncoder:
        return ContentEncoder(self.inventories, WordTable(self.inventories["word"].units, seed=WORD_TABLE_SEED))

    def training_speakers(self) -> list[str]:
        return sorted({s for m in self.role("train") for s in m.speakers})


@dataclass
class AccessAudit:
    """Log of reads of reference data: (meeting id, what)."""
    events: list[tuple[str, str]] = field(default_factory=list)

    def record(self, meeting_id: str, what: str) -> None:
        self.events.append((meeting_id, what))

    def clear(self) -> None:
        self.events.clear()


class MeetingSource:
    """Read-only view of one meeting for the diariser."""

    def __init__(self, meeting: SynthMeeting, audit: AccessAudit | None = None):
        self._meeting = meeting
        self.audit = audit if audit is not None else AccessAudit()

    @property
    def meeting_id(self) -> str:
        return self._meeting.meeting_id

    @property
    def frames(self) -> np.ndarray:
        return self._meeting.features.frames

    @property
    def frame_period(self) -> float:
        return self._meeting.features.frame_period

    def reference_segments(self) -> list[tuple[int, int, str]]:
        self.audit.record(self.meeting_id, "segments")
        return list(self._meeting.segments)

    def reference_alignments(self) -> dict[str, AlignmentTrack]:
        self.audit.record(self.meeting_id, "alignments")
        return dict(self._meeting.alignments)


class SimulatedAsr:
    """Recogniser stand-in: reference transcripts with substitution errors.

    The error draw for a meeting and level depends only on the seed, the
    meeting id and the level, so every system sees the same hypotheses.
    """

    def __init__(self, corpus: Corpus, seed: int = 0):
        self._tracks = {mid: m.alignments for mid, m in corpus.meetings.items()}
        self.inventories = corpus.inventories
        self.seed = seed

    def decode(self, meeting_id: str, spans: Sequence[tuple[int, int]], error_rate: float,
               levels: Sequence[str]) -> dict[str, AlignmentTrack]:
        spans = sorted((int(s), int(e)) for s, e, *_ in spans)
        out = {}
        for level in levels:
            track = clip_track(self._tracks[meeting_id][level], spans)
            seed = [self.seed, zlib.crc32(meeting_id.encode()), zlib.crc32(level.encode())]
            out[level] = inject_errors(track, error_rate, self.inventories[level], seed)
        return out
