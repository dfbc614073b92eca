"""RTTM interchange and diarisation error rate scoring."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass(frozen=True)
class RttmRecord:
    meeting_id: str
    onset: float
    duration: float
    speaker: str

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError(f"RTTM record duration must be > 0, got {self.duration}")
        if self.onset < 0:
            raise ValueError(f"RTTM record onset must be >= 0, got {self.onset}")

    @property
    def offset(self) -> float:
        return self.onset + self.duration


def parse_rttm(text: str) -> list[RttmRecord]:
    records = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith(";;"):
            continue
        f = line.split()
        if len(f) < 8 or f[0] != "SPEAKER":
            raise ValueError(f"RTTM line {lineno}: expected 'SPEAKER <meeting> 1 <onset> <dur> ... <speaker>'")
        try:
            onset, dur = float(f[3]), float(f[4])
        except ValueError:
            raise ValueError(f"RTTM line {lineno}: bad onset/duration") from None
        if dur <= 0 or onset < 0:
            raise ValueError(f"RTTM line {lineno}: onset must be >= 0 and duration > 0")
        records.append(RttmRecord(f[1], onset, dur, f[7]))
    records.sort(key=lambda r: (r.meeting_id, r.onset))
    return records


def emit_rttm(records: Iterable[RttmRecord]) -> str:
    lines = []
    for r in sorted(records, key=lambda r: (r.meeting_id, r.onset)):
        lines.append(f"SPEAKER {r.meeting_id} 1 {r.onset:.3f} {r.duration:.3f} <NA> <NA> {r.speaker} <NA> <NA>\n")
    return "".join(lines)


def _merge(intervals: list[tuple[float, float]]) -> list[tuple[float, float]]:
    out: list[list[float]] = []
    for s, e in sorted(intervals):
        if out and s <= out[-1][1]:
            out[-1][1] = max(out[-1][1], e)
        else:
            out.append([s, e])
    return [(s, e) for s, e in out]


def _by_speaker(records: Iterable[RttmRecord]) -> dict[str, list[tuple[float, float]]]:
    spk: dict[str, list[tuple[float, float]]] = defaultdict(list)
    for r in records:
        spk[r.speaker].append((r.onset, r.offset))
    return {k: _merge(v) for k, v in spk.items()}


def _elementary(ref: dict, hyp: dict, collar: float):
    """Yield (duration, ref speakers, hyp speakers) over the scored timeline."""
    events = []
    for side, table in ((0, ref), (1, hyp)):
        for spk, ivs in table.items():
            for s, e in ivs:
                events.append((s, side, spk, +1))
                events.append((e, side, spk, -1))
    noscore = []
    if collar > 0:
        for ivs in ref.values():
            for s, e in ivs:
                noscore.extend([(s - collar, s + collar), (e - collar, e + collar)])
        noscore = _merge(noscore)
    cuts = sorted({t for t, *_ in events} | {t for iv in noscore for t in iv})
    events.sort(key=lambda ev: ev[0])
    active = ({}, {})
    k = 0
    ns = 0
    for a, b in zip(cuts[:-1], cuts[1:]):
        while k < len(events) and events[k][0] <= a:
            _, side, spk, d = events[k]
            active[side][spk] = active[side].get(spk, 0) + d
            if active[side][spk] == 0:
                del active[side][spk]
            k += 1
        if b <= a:
            continue
        while ns < len(noscore) and noscore[ns][1] <= a:
            ns += 1
        if ns < len(noscore) and noscore[ns][0] <= a and b <= noscore[ns][1]:
            continue
        if active[0] or active[1]:
            yield b - a, tuple(active[0]), tuple(active[1])


def overlap_matrix(ref_records: Sequence[RttmRecord], hyp_records: Sequence[RttmRecord],
                   collar: float = 0.0):
    ref, hyp = _by_speaker(ref_records), _by_speaker(hyp_records)
    ref_names, hyp_names = sorted(ref), sorted(hyp)
    ri = {s: i for i, s in enumerate(ref_names)}
    hi = {s: i for i, s in enumerate(hyp_names)}
    M = np.zeros((len(hyp_names), len(ref_names)))
    for dur, rs, hs in _elementary(ref, hyp, collar):
        for h in hs:
            for r in rs:
                M[hi[h], ri[r]] += dur
    return M, hyp_names, ref_names


def optimal_mapping(ref_records: Sequence[RttmRecord], hyp_records: Sequence[RttmRecord],
                    collar: float = 0.0) -> dict[str, str]:
    """One-to-one hypothesis -> reference speaker map maximising total overlap."""
    M, hyp_names, ref_names = overlap_matrix(ref_records, hyp_records, collar)
    if M.size == 0:
        return {}
    rows, cols = linear_sum_assignment(M, maximize=True)
    return {hyp_names[r]: ref_names[c] for r, c in zip(rows, cols) if M[r, c] > 0}


@dataclass
class DerReport:
    ms: float
    fa: float
    ser: float
    der: float
    scored_time: float
    mapping: dict[str, str] = field(default_factory=dict)
    ms_time: float = 0.0
    fa_time: float = 0.0
    ser_time: float = 0.0

    def as_dict(self) -> dict:
        return {"MS": self.ms, "FA": self.fa, "SER": self.ser, "DER": self.der,
                "scored_time": self.scored_time}


def _report(ms_t: float, fa_t: float, ser_t: float, total: float, mapping: dict) -> DerReport:
    ms, fa, ser = (100.0 * x / total for x in (ms_t, fa_t, ser_t))
    return DerReport(ms, fa, ser, ms + fa + ser, total, mapping, ms_t, fa_t, ser_t)


def compute_der(ref_records: Sequence[RttmRecord], hyp_records: Sequence[RttmRecord],
                collar: float = 0.0) -> DerReport:
    """Time-weighted MS/FA/SER/DER of one meeting (or several, aggregated).

    Percentages are relative to the scored reference speech time.  Regions
    within ``collar`` seconds of a reference boundary are not scored.
    """
    if not ref_records:
        raise ValueError("compute_der: empty reference")
    if collar < 0:
        raise ValueError("compute_der: collar must be >= 0")
    meetings = sorted({r.meeting_id for r in ref_records} | {r.meeting_id for r in hyp_records})
    if len(meetings) > 1:
        parts = []
        for m in meetings:
            ref_m = [r for r in ref_records if r.meeting_id == m]
            if not ref_m:
                raise ValueError(f"compute_der: meeting {m!r} has no reference")
            parts.append(compute_der(ref_m, [r for r in hyp_records if r.meeting_id == m], collar))
        return aggregate_reports(parts)
    mapping = optimal_mapping(ref_records, hyp_records, collar)
    ref, hyp = _by_speaker(ref_records), _by_speaker(hyp_records)
    ms_t = fa_t = ser_t = total = 0.0
    for dur, rs, hs in _elementary(ref, hyp, collar):
        n_ref, n_hyp = len(rs), len(hs)
        mapped = {mapping.get(h) for h in hs}
        correct = sum(1 for r in rs if r in mapped)
        total += dur * n_ref
        ms_t += dur * max(0, n_ref - n_hyp)
        fa_t += dur * max(0, n_hyp - n_ref)
        ser_t += dur * (min(n_ref, n_hyp) - correct)
    if total <= 0:
        raise ValueError("compute_der: no scored reference speech")
    return _report(ms_t, fa_t, ser_t, total, mapping)


def aggregate_reports(reports: Sequence[DerReport]) -> DerReport:
    """Time-weighted combination of per-meeting reports."""
    total = sum(r.scored_time for r in reports)
    return _report(sum(r.ms_time for r in reports), sum(r.fa_time for r in reports),
                   sum(r.ser_time for r in reports), total, {})


COLUMNS = ("MS", "FA", "SER", "DER")


def format_table(rows: dict[str, DerReport]) -> str:
    """Fixed-order text table, one line per meeting (or aggregate)."""
    width = max([len("meeting")] + [len(k) for k in rows])
    out = [f"{'meeting':<{width}}  " + "  ".join(f"{c:>6}" for c in COLUMNS) + "  scored_s"]
    for name, r in rows.items():
        vals = (r.ms, r.fa, r.ser, r.der)
        out.append(f"{name:<{width}}  " + "  ".join(f"{v:6.2f}" for v in vals) + f"  {r.scored_time:.3f}")
    return "\n".join(out) + "\n"


def format_keyvalue(rows: dict[str, DerReport]) -> str:
    out = []
    for name, r in rows.items():
        for key, value in r.as_dict().items():
            out.append(f"{name}.{key} = {value:.6f}")
    return "\n".join(out) + "\n"


def records_from_segments(meeting_id: str, segments, frame_period: float) -> list[RttmRecord]:
    """RTTM records from (start_frame, end_frame, speaker) triples, merging touching same-speaker runs."""
    merged: list[list] = []
    for s, e, spk in sorted(segments):
        if merged and merged[-1][2] == spk and s <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], e)
        else:
            merged.append([s, e, spk])
    return [RttmRecord(meeting_id, round(s * frame_period, 6), round((e - s) * frame_period, 6), spk)
            for s, e, spk in merged if e > s]
