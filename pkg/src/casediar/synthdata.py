"""Seeded synthetic meetings with ground-truth speakers and content alignments.

Each speech frame is ``speaker_mean + content_influence * phone_offset + noise``;
silence frames are noise only.  Speaker turns are filled with lexicon words
whose phones and characters give three mutually consistent alignment tracks.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .content import (AlignmentEntry, AlignmentTrack, UnitInventory, character_inventory,
                      emit_ctm, parse_ctm, phone_inventory, subdivide_span, word_inventory)
from .features import FrameMatrix, read_features, seconds_to_frames, write_features
from .scoring import RttmRecord, emit_rttm, parse_rttm, records_from_segments

log = logging.getLogger(__name__)

ROLES = ("train", "dev", "eval")


@dataclass
class SynthSpec:
    n_speakers: int = 24
    n_test_speakers: int = 8  # held apart for dev/eval; 0 means closed-set
    speakers_per_meeting: int = 4
    n_meetings: int = 12
    n_dev_meetings: int = 2
    n_eval_meetings: int = 2
    duration: float = 120.0
    lexicon_size: int = 100
    phones_per_word: tuple[int, int] = (2, 5)
    phone_frames: tuple[int, int] = (5, 15)
    turn_seconds: tuple[float, float] = (2.0, 8.0)
    silence_ratio: float = 0.1
    speaker_separation: float = 1.0
    content_influence: float = 2.0
    noise_sigma: float = 0.3
    feature_dim: int = 40
    frame_period: float = 0.010
    char_timing: str = "uniform"  # or "phone": character spans copy phone spans
    seed: int = 0

    def __post_init__(self):
        self.phones_per_word = tuple(self.phones_per_word)
        self.phone_frames = tuple(self.phone_frames)
        self.turn_seconds = tuple(self.turn_seconds)
        counts = (self.n_speakers, self.speakers_per_meeting, self.n_meetings, self.lexicon_size,
                  self.feature_dim, self.phones_per_word[0], self.phone_frames[0])
        if min(counts) < 1:
            raise ValueError("SynthSpec counts must be >= 1")
        if not 0.0 <= self.silence_ratio <= 1.0:
            raise ValueError("silence_ratio must lie in [0, 1]")
        if self.speaker_separation < 0 or self.content_influence < 0 or self.noise_sigma < 0:
            raise ValueError("separation, content influence and noise must be >= 0")
        if self.n_meetings - self.n_dev_meetings - self.n_eval_meetings < 1:
            raise ValueError("need at least one training meeting")
        if self.n_test_speakers and self.n_speakers - self.n_test_speakers < 1:
            raise ValueError("no training speakers left after reserving test speakers")
        if self.char_timing not in ("uniform", "phone"):
            raise ValueError(f"unknown char_timing {self.char_timing!r}")

    @property
    def n_train_meetings(self) -> int:
        return self.n_meetings - self.n_dev_meetings - self.n_eval_meetings


@dataclass
class Lexicon:
    words: list[str]
    phones: list[tuple[int, ...]]
    chars: list[tuple[int, ...]]

    def inventories(self) -> dict[str, UnitInventory]:
        return {"phone": phone_inventory(), "character": character_inventory(),
                "word": word_inventory(self.words)}

    def to_text(self) -> str:
        ph = phone_inventory().units
        return "".join(f"{w} {' '.join(ph[p] for p in ps)}\n" for w, ps in zip(self.words, self.phones))


@dataclass
class SynthMeeting:
    meeting_id: str
    role: str
    features: FrameMatrix
    segments: list[tuple[int, int, str]]  # frame spans with speaker ids
    alignments: dict[str, AlignmentTrack]
    reference: list[RttmRecord] = field(default_factory=list)

    @property
    def speakers(self) -> list[str]:
        return sorted({s for _, _, s in self.segments})


def phone_to_char(phone_id: int, n_phones: int = 48) -> int:
    return phone_id * 26 // n_phones


def make_lexicon(spec: SynthSpec) -> Lexicon:
    rng = np.random.default_rng([spec.seed, 1])
    n_ph = len(phone_inventory())
    letters = "abcdefghijklmnopqrstuvwxyz"
    words, phones, chars = [], [], []
    seen = set()
    lo, hi = spec.phones_per_word
    for _ in range(spec.lexicon_size):
        for _attempt in range(1000):
            ps = tuple(int(p) for p in rng.integers(0, n_ph, size=int(rng.integers(lo, hi + 1))))
            cs = tuple(phone_to_char(p, n_ph) for p in ps)
            spelling = "".join(letters[c] for c in cs)
            if spelling not in seen:
                break
        else:
            raise ValueError("could not draw a distinct spelling; enlarge phones_per_word")
        seen.add(spelling)
        words.append(spelling)
        phones.append(ps)
        chars.append(cs)
    return Lexicon(words, phones, chars)


@dataclass
class _World:
    lexicon: Lexicon
    speaker_means: np.ndarray
    phone_offsets: np.ndarray
    train_speakers: list[int]
    test_speakers: list[int]


def _world(spec: SynthSpec) -> _World:
    rng = np.random.default_rng([spec.seed, 2])
    F = spec.feature_dim
    means = rng.normal(0.0, spec.speaker_separation / np.sqrt(2 * F), size=(spec.n_speakers, F))
    offsets = rng.normal(0.0, 1.0 / np.sqrt(F), size=(len(phone_inventory()), F))
    speakers = list(range(spec.n_speakers))
    if spec.n_test_speakers:
        test = speakers[-spec.n_test_speakers:]
        train = speakers[:-spec.n_test_speakers]
    else:
        train = test = speakers
    return _World(make_lexicon(spec), means, offsets, train, test)


def speaker_name(index: int) -> str:
    return f"spk{index:03d}"


def meeting_role(spec: SynthSpec, index: int) -> str:
    if index < spec.n_train_meetings:
        return "train"
    if index < spec.n_train_meetings + spec.n_dev_meetings:
        return "dev"
    return "eval"


def _split_frames(total: int, weights: np.ndarray) -> np.ndarray:
    raw = weights / weights.sum() * total
    out = np.floor(raw).astype(int)
    rest = total - out.sum()
    out[np.argsort(-(raw - out), kind="stable")[:rest]] += 1
    return out


def generate_meeting(spec: SynthSpec, meeting_index: int, world: _World | None = None) -> SynthMeeting:
    if spec.duration < spec.turn_seconds[0]:
        raise ValueError(f"duration {spec.duration}s is shorter than one turn ({spec.turn_seconds[0]}s)")
    world = world or _world(spec)
    role = meeting_role(spec, meeting_index)
    rng = np.random.default_rng([spec.seed, 1000 + meeting_index])
    pool = world.train_speakers if role == "train" else world.test_speakers
    n_spk = min(spec.speakers_per_meeting, len(pool))
    present = sorted(int(s) for s in rng.choice(pool, size=n_spk, replace=False))
    period = spec.frame_period
    total_frames = seconds_to_frames(spec.duration, period)
    speech_target = seconds_to_frames((1.0 - spec.silence_ratio) * spec.duration, period)
    lex = world.lexicon
    lo_ph, hi_ph = spec.phone_frames

    # turns: lists of (word id, phone durations)
    turns: list[tuple[int, list[tuple[int, list[int]]]]] = []
    speech = 0
    prev = None
    while speech < max(speech_target, 1):
        choices = [s for s in present if s != prev] or present
        spk = int(choices[rng.integers(len(choices))])
        target = seconds_to_frames(rng.uniform(*spec.turn_seconds), period)
        words, length = [], 0
        while length < target:
            w = int(rng.integers(len(lex.words)))
            durs = [int(d) for d in rng.integers(lo_ph, hi_ph + 1, size=len(lex.phones[w]))]
            words.append((w, durs))
            length += sum(durs)
        turns.append((spk, words))
        speech += length
        prev = spk

    silence_total = max(0, total_frames - speech) if spec.silence_ratio > 0 else 0
    n_gaps = len(turns) + 1
    use = np.zeros(n_gaps, dtype=bool)
    use[0] = use[-1] = True
    use[1:-1] = rng.random(n_gaps - 2) < 0.5
    weights = np.where(use, rng.uniform(0.5, 1.5, size=n_gaps), 0.0)
    gaps = _split_frames(silence_total, weights) if silence_total else np.zeros(n_gaps, dtype=int)

    T = speech + int(gaps.sum())
    F = spec.feature_dim
    frames = rng.normal(0.0, spec.noise_sigma, size=(T, F)) if spec.noise_sigma > 0 else np.zeros((T, F))
    tracks = {lvl: AlignmentTrack(lvl, [], "reference", "") for lvl in ("phone", "character", "word")}
    segments = []
    t = int(gaps[0])
    for i, (spk, words) in enumerate(turns):
        start = t
        for w, durs in words:
            w_start = t
            phone_spans = []
            for p, d in zip(lex.phones[w], durs):
                frames[t:t + d] += world.speaker_means[spk] + spec.content_influence * world.phone_offsets[p]
                tracks["phone"].entries.append(AlignmentEntry(p, t, t + d))
                phone_spans.append((t, t + d))
                t += d
            tracks["word"].entries.append(AlignmentEntry(w, w_start, t))
            if spec.char_timing == "phone":
                char_spans = phone_spans
            else:
                char_spans = subdivide_span(w_start, t, len(lex.chars[w]))
            for c, (a, b) in zip(lex.chars[w], char_spans):
                tracks["character"].entries.append(AlignmentEntry(c, a, b))
        segments.append((start, t, speaker_name(spk)))
        t += int(gaps[i + 1])
    meeting_id = f"m{meeting_index:03d}"
    for track in tracks.values():
        track.recording = meeting_id
    reference = records_from_segments(meeting_id, segments, period)
    return SynthMeeting(meeting_id, role, FrameMatrix(frames, period), segments, tracks, reference)


def generate_corpus(spec: SynthSpec) -> tuple[list[SynthMeeting], Lexicon]:
    world = _world(spec)
    meetings = [generate_meeting(spec, i, world) for i in range(spec.n_meetings)]
    if spec.n_speakers < 2:
        log.warning("corpus has fewer than 2 speakers; embedder training will be rejected")
    return meetings, world.lexicon


@dataclass
class CorpusSplit:
    train: list[str]
    dev: list[str]
    eval: list[str]
    held_out: list[tuple[str, int]]  # (meeting id, segment index) kept for validation

    def to_dict(self) -> dict:
        return {"train": self.train, "dev": self.dev, "eval": self.eval,
                "held_out": [list(x) for x in self.held_out]}

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusSplit":
        return cls(list(d["train"]), list(d["dev"]), list(d["eval"]),
                   [(m, int(i)) for m, i in d["held_out"]])


def split_corpus(meetings, held_out_fraction: float = 0.1, seed: int = 0) -> CorpusSplit:
    """Meeting roles plus a per-speaker held-out share of training segments."""
    if not 0.0 < held_out_fraction < 1.0:
        raise ValueError("held_out_fraction must lie in (0, 1)")
    by_speaker: dict[str, list[tuple[str, int]]] = {}
    for m in meetings:
        if m.role != "train":
            continue
        for i, (_, _, spk) in enumerate(m.segments):
            by_speaker.setdefault(spk, []).append((m.meeting_id, i))
    rng = np.random.default_rng([seed, 3])
    held = []
    for spk in sorted(by_speaker):
        segs = by_speaker[spk]
        n_out = int(np.floor(held_out_fraction * len(segs) + 0.5))
        if n_out >= len(segs):
            raise ValueError(f"held-out fraction {held_out_fraction} leaves speaker {spk} without training data")
        picks = rng.choice(len(segs), size=n_out, replace=False)
        held.extend(segs[i] for i in sorted(picks))
    ids = {r: [m.meeting_id for m in meetings if m.role == r] for r in ROLES}
    return CorpusSplit(ids["train"], ids["dev"], ids["eval"], sorted(held))


# ---------------------------------------------------------------------------
# corpus directory layout

CTM_SUFFIX = {"phone": "phone.ctm", "character": "char.ctm", "word": "word.ctm"}


def write_corpus(directory, spec: SynthSpec, meetings, lexicon: Lexicon, split: CorpusSplit) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    inv = lexicon.inventories()
    for m in meetings:
        write_features(d / f"{m.meeting_id}.feat", m.features)
        (d / f"{m.meeting_id}.rttm").write_text(emit_rttm(m.reference))
        for level, suffix in CTM_SUFFIX.items():
            (d / f"{m.meeting_id}.{suffix}").write_text(emit_ctm([m.alignments[level]], inv[level], spec.frame_period))
    (d / "phones.txt").write_text(inv["phone"].to_text())
    (d / "chars.txt").write_text(inv["character"].to_text())
    (d / "words.txt").write_text(inv["word"].to_text())
    (d / "lexicon.txt").write_text(lexicon.to_text())
    manifest = {"version": 1, "spec": asdict(spec), "splits": split.to_dict(),
                "roles": {m.meeting_id: m.role for m in meetings}}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_manifest(directory) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no corpus manifest at {path}")
    return json.loads(path.read_text())


def load_inventories(directory) -> dict[str, UnitInventory]:
    d = Path(directory)
    return {"phone": UnitInventory.from_text("phone", (d / "phones.txt").read_text()),
            "character": UnitInventory.from_text("character", (d / "chars.txt").read_text()),
            "word": UnitInventory.from_text("word", (d / "words.txt").read_text())}


def read_reference_segments(path, frame_period: float) -> list[tuple[int, int, str]]:
    recs = parse_rttm(Path(path).read_text())
    return [(seconds_to_frames(r.onset, frame_period), seconds_to_frames(r.offset, frame_period), r.speaker)
            for r in recs]


def read_track(path, inventory: UnitInventory, frame_period: float) -> AlignmentTrack:
    tracks = parse_ctm(Path(path).read_text(), inventory, frame_period)
    if not tracks:
        return AlignmentTrack(inventory.level, [], "reference", Path(path).name.split(".")[0])
    return tracks[0]


def read_meeting(directory, meeting_id: str, role: str = "", inventories=None) -> SynthMeeting:
    d = Path(directory)
    inventories = inventories or load_inventories(d)
    feats = read_features(d / f"{meeting_id}.feat")
    period = feats.frame_period
    segments = read_reference_segments(d / f"{meeting_id}.rttm", period)
    tracks = {lvl: read_track(d / f"{meeting_id}.{suf}", inventories[lvl], period)
              for lvl, suf in CTM_SUFFIX.items()}
    reference = parse_rttm((d / f"{meeting_id}.rttm").read_text())
    return SynthMeeting(meeting_id, role, feats, segments, tracks, reference)
