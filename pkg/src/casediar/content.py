"""Content units: inventories, per-frame content vectors, CTM files and error injection."""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .features import DEFAULT_FRAME_PERIOD, seconds_to_frames

LEVELS = ("phone", "character", "word")

PHONES = (
    "AA AE AH AO AW AY B CH D DH EH ER EY F G HH IH IY JH K L M N NG OW OY P R S SH T TH "
    "UH UW V W Y Z ZH AX AXR DX EL EM EN HV IX UX"
).split()
CHARACTERS = list("abcdefghijklmnopqrstuvwxyz") + ["'"]
WORD_DIM = 300


@dataclass(frozen=True)
class UnitInventory:
    level: str
    units: tuple[str, ...]
    dimension: int

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ValueError(f"unknown content level {self.level!r}")
        if len(set(self.units)) != len(self.units):
            raise ValueError(f"{self.level} inventory has duplicate symbols")
        if self.level != "word" and self.dimension != len(self.units):
            raise ValueError(f"{self.level} inventory: dimension {self.dimension} != {len(self.units)} units")

    def __len__(self) -> int:
        return len(self.units)

    def index(self, symbol: str) -> int:
        try:
            return self._lookup[symbol]
        except KeyError:
            raise KeyError(f"symbol {symbol!r} not in {self.level} inventory") from None

    @property
    def _lookup(self) -> dict[str, int]:
        cache = self.__dict__.get("_cache")
        if cache is None:
            cache = {s: i for i, s in enumerate(self.units)}
            object.__setattr__(self, "_cache", cache)
        return cache

    def to_text(self) -> str:
        return "".join(f"{u}\n" for u in self.units)

    @classmethod
    def from_text(cls, level: str, text: str, dimension: int | None = None) -> "UnitInventory":
        units = tuple(line.strip() for line in text.splitlines() if line.strip())
        if dimension is None:
            dimension = WORD_DIM if level == "word" else len(units)
        return cls(level, units, dimension)


def phone_inventory() -> UnitInventory:
    return UnitInventory("phone", tuple(PHONES), len(PHONES))


def character_inventory() -> UnitInventory:
    return UnitInventory("character", tuple(CHARACTERS), len(CHARACTERS))


def word_inventory(words: Iterable[str]) -> UnitInventory:
    return UnitInventory("word", tuple(words), WORD_DIM)


@dataclass(frozen=True)
class AlignmentEntry:
    unit_id: int
    start: int  # inclusive frame
    end: int  # exclusive frame


@dataclass
class AlignmentTrack:
    level: str
    entries: list[AlignmentEntry] = field(default_factory=list)
    source: str = "reference"
    recording: str = ""

    def validate(self, T: int | None = None) -> None:
        prev_end = 0
        for i, e in enumerate(self.entries):
            if e.end <= e.start:
                raise ValueError(f"{self.level} track entry {i}: end {e.end} <= start {e.start}")
            if e.start < prev_end:
                raise ValueError(f"{self.level} track entry {i} overlaps the previous entry")
            if T is not None and e.end > T:
                raise ValueError(f"{self.level} track entry {i} ends at {e.end} > T={T}")
            prev_end = e.end


class WordTable:
    """Fixed pseudo-random word vectors; out-of-vocabulary words map to zeros."""

    def __init__(self, vocabulary: Sequence[str], dim: int = WORD_DIM, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self.vocabulary = tuple(vocabulary)
        self._rows = {w: self._vector(w) for w in self.vocabulary}

    def _vector(self, word: str) -> np.ndarray:
        rng = np.random.default_rng([self.seed, zlib.crc32(word.encode())])
        return rng.standard_normal(self.dim) / np.sqrt(self.dim)

    def __getitem__(self, word: str) -> np.ndarray:
        row = self._rows.get(word)
        return np.zeros(self.dim) if row is None else row

    def matrix(self, inventory: UnitInventory) -> np.ndarray:
        """Rows aligned with the inventory's unit ids."""
        return np.stack([self[w] for w in inventory.units]) if len(inventory) else np.zeros((0, self.dim))


def one_hot(unit_id: int, inv: UnitInventory) -> np.ndarray:
    if not 0 <= unit_id < len(inv.units):
        raise ValueError(f"unit id {unit_id} outside [0, {len(inv.units)}) for {inv.level}")
    v = np.zeros(inv.dimension)
    v[unit_id] = 1.0
    return v


def frame_unit_ids(track: AlignmentTrack, T: int) -> np.ndarray:
    """Unit id active at each frame, -1 where no entry covers the frame."""
    track.validate(T)
    ids = np.full(T, -1, dtype=np.int64)
    for e in track.entries:
        ids[e.start:e.end] = e.unit_id
    return ids


def level_vectors(ids: np.ndarray, inv: UnitInventory, table: WordTable | None = None) -> np.ndarray:
    """Content rows for one level from per-frame unit ids (-1 gives a zero row)."""
    ids = np.asarray(ids)
    if inv.level == "word":
        if table is None:
            raise ValueError("word level needs a WordTable")
        lookup = np.vstack([table.matrix(inv), np.zeros((1, table.dim))])
    else:
        lookup = np.vstack([np.eye(inv.dimension), np.zeros((1, inv.dimension))])
    return lookup[np.where(ids < 0, len(lookup) - 1, ids)]


def expand_alignment(tracks: Sequence[AlignmentTrack], T: int,
                     inventories: dict[str, UnitInventory],
                     table: WordTable | None = None) -> np.ndarray:
    """T x D matrix of per-frame content vectors, levels concatenated in track order."""
    parts = [level_vectors(frame_unit_ids(t, T), inventories[t.level], table) for t in tracks]
    if not parts:
        return np.zeros((T, 0))
    return np.concatenate(parts, axis=1)


def subdivide_span(start: int, end: int, n: int) -> list[tuple[int, int]]:
    """Split [start, end) into n contiguous near-equal parts."""
    if n < 1 or end - start < n:
        raise ValueError(f"cannot split [{start}, {end}) into {n} non-empty parts")
    cuts = [start + (i * (end - start)) // n for i in range(n + 1)]
    return list(zip(cuts[:-1], cuts[1:]))


# ---------------------------------------------------------------------------
# CTM


def _time_decimals(period: float) -> int:
    decimals = 2
    while round(period * 10 ** decimals, 9) % 1:
        decimals += 1
    return decimals


def parse_ctm(text: str, inventory: UnitInventory,
              frame_period: float = DEFAULT_FRAME_PERIOD, source: str = "reference") -> list[AlignmentTrack]:
    """Parse ``<recording> <channel> <start> <dur> <unit>`` lines into one track per recording."""
    tracks: dict[str, AlignmentTrack] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith(";;"):
            continue
        fields = line.split()
        if len(fields) < 5:
            raise ValueError(f"CTM line {lineno}: expected 5 fields, got {len(fields)}")
        rec, _chan, start_s, dur_s, unit = fields[:5]
        try:
            start, dur = float(start_s), float(dur_s)
        except ValueError:
            raise ValueError(f"CTM line {lineno}: bad start/duration {start_s!r} {dur_s!r}") from None
        if dur <= 0:
            raise ValueError(f"CTM line {lineno}: non-positive duration {dur}")
        if start < 0:
            raise ValueError(f"CTM line {lineno}: negative start {start}")
        try:
            unit_id = inventory.index(unit)
        except KeyError as err:
            raise ValueError(f"CTM line {lineno}: {err.args[0]}") from None
        s = seconds_to_frames(start, frame_period)
        e = seconds_to_frames(start + dur, frame_period)
        if e <= s:
            raise ValueError(f"CTM line {lineno}: duration shorter than one frame")
        track = tracks.setdefault(rec, AlignmentTrack(inventory.level, [], source, rec))
        track.entries.append(AlignmentEntry(unit_id, s, e))
    for track in tracks.values():
        track.entries.sort(key=lambda e: e.start)
        track.validate()
    return list(tracks.values())


def emit_ctm(tracks: Sequence[AlignmentTrack], inventory: UnitInventory,
             frame_period: float = DEFAULT_FRAME_PERIOD) -> str:
    d = _time_decimals(frame_period)
    lines = []
    for track in tracks:
        for e in track.entries:
            lines.append(f"{track.recording} 1 {e.start * frame_period:.{d}f} "
                         f"{(e.end - e.start) * frame_period:.{d}f} {inventory.units[e.unit_id]}\n")
    return "".join(lines)


# ---------------------------------------------------------------------------
# simulated recognition errors


def inject_errors(track: AlignmentTrack, unit_error_rate: float, inv: UnitInventory,
                  seed: int) -> AlignmentTrack:
    """Substitute each unit with probability ``unit_error_rate`` by a different random unit."""
    if not 0.0 <= unit_error_rate <= 1.0:
        raise ValueError(f"unit error rate {unit_error_rate} outside [0, 1]")
    k = len(inv.units)
    rng = np.random.default_rng(seed)
    entries = []
    for e in track.entries:
        uid = e.unit_id
        if rng.random() < unit_error_rate and k > 1:
            other = int(rng.integers(k - 1))
            uid = other + 1 if other >= uid else other
        entries.append(replace(e, unit_id=uid))
    return AlignmentTrack(track.level, entries, "hypothesis", track.recording)


def clip_track(track: AlignmentTrack, spans: Sequence[tuple[int, int]]) -> AlignmentTrack:
    """Keep the parts of each entry that fall inside the given sorted frame spans."""
    entries = []
    for e in track.entries:
        for s, t in spans:
            lo, hi = max(s, e.start), min(t, e.end)
            if lo < hi:
                entries.append(AlignmentEntry(e.unit_id, lo, hi))
    return AlignmentTrack(track.level, entries, track.source, track.recording)
