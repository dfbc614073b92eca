"""Diarisation of one meeting in each alignment regime.

reference             reference segments, reference alignments
manual-hypothesis     reference segments, recogniser output on those segments
automatic-hypothesis  pass 1: VAD -> CPD -> baseline embeddings -> clustering;
                      pass 2: recogniser output on the pass-1 segments feeds the
                      content-aware embedder, whose embeddings are re-clustered
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..cluster import assign_segments, spectral_cluster
from ..content import AlignmentTrack
from ..models.cpd import Cpd, cpd_score, pick_changes
from ..models.data import ContentEncoder, MeetingData
from ..models.embedder import Embedder, extract_window_dvectors
from ..models.vad import Vad, smooth_speech, vad_classify
from ..scoring import RttmRecord, records_from_segments
from .config import REGIMES
from .corpus import MeetingSource, SimulatedAsr


@dataclass
class SegmentationParams:
    vad_threshold: float = 0.5
    min_speech: int = 20
    min_silence: int = 20
    cpd_threshold: float = 0.5
    min_gap: int = 100


@dataclass
class MeetingEmbeddings:
    """Window embeddings of one meeting over a fixed segment list."""
    meeting_id: str
    segments: list[tuple[int, int]]
    vectors: np.ndarray  # windows x d
    window_segments: list[int]


@dataclass
class Labelling:
    labels: list[int]  # one per segment
    k: int

    def records(self, meeting_id: str, segments: Sequence[tuple[int, int]], period: float) -> list[RttmRecord]:
        triples = [(s, e, f"spk{lab}") for (s, e), lab in zip(segments, self.labels)]
        return records_from_segments(meeting_id, triples, period)


@dataclass
class DiariseOutput:
    meeting_id: str
    regime: str
    segments: list[tuple[int, int]]
    records: list[RttmRecord]
    pass1: list[RttmRecord] | None = None
    k: int = 0
    extra: dict = field(default_factory=dict)


def automatic_segments(frames: np.ndarray, vad: Vad, cpd: Cpd, sp: SegmentationParams) -> list[tuple[int, int]]:
    """Speech runs from the VAD, split at detected speaker changes."""
    post = vad_classify(vad, frames)[:, 1]
    runs = smooth_speech(post, sp.vad_threshold, sp.min_speech, sp.min_silence)
    targets = np.concatenate([np.arange(s, e) for s, e in runs]) if runs else np.zeros(0, dtype=int)
    all_scores = cpd_score(cpd, frames, targets) if runs else np.zeros(0)
    segments, offset = [], 0
    for s, e in runs:
        scores = all_scores[offset:offset + e - s]
        offset += e - s
        cuts = [s + c for c in pick_changes(scores, sp.cpd_threshold, sp.min_gap)
                if sp.min_speech <= c <= e - s - sp.min_speech]
        bounds = [s, *cuts, e]
        segments.extend((a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a)
    return segments


def embed_meeting(model: Embedder, meeting_id: str, frames: np.ndarray, segments: Sequence[tuple],
                  tracks: dict[str, AlignmentTrack] | None, encoder: ContentEncoder | None) -> MeetingEmbeddings:
    spans = [(int(s), int(e)) for s, e, *_ in segments]
    levels = model.cfg.levels
    data = MeetingData.from_tracks(meeting_id, frames, {l: tracks[l] for l in levels} if levels else None)
    embs = extract_window_dvectors(model, data, spans, encoder)
    vectors = np.stack([w.vector for w in embs]) if embs else np.zeros((0, model.cfg.dvector_dim))
    return MeetingEmbeddings(meeting_id, spans, vectors, [w.segment_id for w in embs])


def label_segments(me: MeetingEmbeddings, p: float, k_max: int = 8, seed: int = 0,
                   restarts: int = 10) -> Labelling:
    n = len(me.segments)
    if n == 0:
        return Labelling([], 0)
    if len(me.vectors) == 1:
        return Labelling([0] * n, 1)
    result = spectral_cluster(me.vectors, p=p, k_max=k_max, seed=seed, restarts=restarts)
    assigned = assign_segments(range(n), me.window_segments, me.vectors, result)
    return Labelling([int(assigned.get(j, 0)) for j in range(n)], result.k)


def regime_inputs(source: MeetingSource, regime: str, levels: Sequence[str], asr: SimulatedAsr | None,
                  error_rate: float, segments: Sequence[tuple[int, int]] | None = None):
    """Segments and alignments handed to the embedder for ``regime``.

    For the automatic regime the caller supplies the pass-1 segments and no
    reference data is touched.
    """
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}")
    if regime == "automatic-hypothesis":
        if segments is None:
            raise ValueError("automatic-hypothesis needs pass-1 segments")
        spans = list(segments)
    else:
        spans = [(s, e) for s, e, _ in source.reference_segments()]
    if not levels:
        return spans, None
    if regime == "reference":
        return spans, source.reference_alignments()
    if asr is None:
        raise ValueError(f"regime {regime} needs a recogniser")
    return spans, asr.decode(source.meeting_id, spans, error_rate, levels)


@dataclass
class PreparedMeeting:
    """Everything up to clustering: pass-1 embeddings (automatic regime) and final embeddings."""
    meeting_id: str
    regime: str
    pass1: MeetingEmbeddings | None
    final: MeetingEmbeddings


def prepare_meeting(source: MeetingSource, regime: str, model: Embedder, *, baseline: Embedder | None = None,
                    vad: Vad | None = None, cpd: Cpd | None = None, asr: SimulatedAsr | None = None,
                    encoder: ContentEncoder | None = None, error_rate: float = 0.0,
                    seg_params: SegmentationParams | None = None,
                    segments: Sequence[tuple[int, int]] | None = None) -> PreparedMeeting:
    """Segment (automatic regime) and embed one meeting.

    ``segments`` may pass precomputed automatic segments.
    """
    me1 = None
    if regime == "automatic-hypothesis":
        missing = [n for n, m in (("baseline embedder", baseline), ("VAD", vad), ("CPD", cpd)) if m is None]
        if segments is None and missing:
            raise ValueError(f"regime automatic-hypothesis needs a trained {', '.join(missing)}")
        if baseline is None:
            raise ValueError("regime automatic-hypothesis needs a trained baseline embedder")
        if segments is None:
            segments = automatic_segments(source.frames, vad, cpd, seg_params or SegmentationParams())
        me1 = embed_meeting(baseline, source.meeting_id, source.frames, segments, None, None)
    spans, tracks = regime_inputs(source, regime, model.cfg.levels, asr, error_rate, segments)
    me = embed_meeting(model, source.meeting_id, source.frames, spans, tracks, encoder)
    return PreparedMeeting(source.meeting_id, regime, me1, me)


def finish_meeting(prep: PreparedMeeting, period: float, p: float, p_pass1: float | None = None,
                   k_max: int = 8, seed: int = 0, restarts: int = 10) -> DiariseOutput:
    pass1 = None
    if prep.pass1 is not None:
        lab1 = label_segments(prep.pass1, p if p_pass1 is None else p_pass1, k_max, seed, restarts)
        pass1 = lab1.records(prep.meeting_id, prep.pass1.segments, period)
    lab = label_segments(prep.final, p, k_max, seed, restarts)
    return DiariseOutput(prep.meeting_id, prep.regime, prep.final.segments,
                         lab.records(prep.meeting_id, prep.final.segments, period), pass1, lab.k)


def diarise_meeting(source: MeetingSource, regime: str, model: Embedder, *, p: float = 0.0,
                    p_pass1: float | None = None, k_max: int = 8, seed: int = 0, restarts: int = 10,
                    **kwargs) -> DiariseOutput:
    """Full diarisation of one meeting; returns final (and pass-1) records.

    Keyword arguments other than the clustering ones go to :func:`prepare_meeting`.
    """
    prep = prepare_meeting(source, regime, model, **kwargs)
    return finish_meeting(prep, source.frame_period, p, p_pass1, k_max, seed, restarts)
