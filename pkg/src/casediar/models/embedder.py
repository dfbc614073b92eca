"""TDNN window-level d-vector extractor with optional content-aware input.

Per frame the acoustic vector is concatenated with its content vector (the
word slice goes through a learned linear projection first), spliced over a
[-left, +right] context and passed through ReLU layers to a frame d-vector.
A multi-head self-attentive layer pools the frame d-vectors of a window into
the window embedding, which is classified among training speakers with a
cosine (angular softmax) head.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .. import ndiff as nd
from ..content import LEVELS
from .data import ContentEncoder, WindowBatch, WindowSet, canonical_levels, make_batch, segment_windows
from .layers import add_mlp

log = logging.getLogger(__name__)

MODES = ("plain", "multitask", "adversarial")
LEVEL_DIMS = {"phone": 48, "character": 27, "word": 300}


@dataclass
class EmbedderConfig:
    acoustic_dim: int = 40
    levels: tuple[str, ...] = ()
    left: int = 7
    right: int = 7
    hidden: tuple[int, ...] = (256, 256, 256)
    dvector_dim: int = 128
    word_proj: int = 100
    heads: int = 4
    attention_hidden: int = 64
    penalty_weight: float = 1.0
    loss: nd.LossConfig = field(default_factory=nd.LossConfig)
    mode: str = "plain"
    adv_lambda: float = 1.0
    aux_weight: float = 1.0
    n_phones: int = 48
    window_len: int = 200
    hop: int = 100

    def __post_init__(self):
        self.levels = canonical_levels(self.levels)
        self.hidden = tuple(int(h) for h in self.hidden)
        if isinstance(self.loss, dict):
            self.loss = nd.LossConfig(**self.loss)
        if self.dvector_dim < 1 or self.heads < 1:
            raise ValueError("dvector_dim and heads must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"unknown training mode {self.mode!r}")
        if self.adv_lambda < 0:
            raise ValueError("adv_lambda must be >= 0")

    @property
    def content_width(self) -> int:
        return sum(LEVEL_DIMS[l] for l in self.levels)

    @property
    def frame_input_width(self) -> int:
        """Per-frame width after the word projection, before splicing."""
        return self.acoustic_dim + sum(self.word_proj if l == "word" else LEVEL_DIMS[l] for l in self.levels)

    @property
    def spliced_width(self) -> int:
        return self.frame_input_width * (self.left + self.right + 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["levels"] = list(self.levels)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EmbedderConfig":
        return cls(**d)


def init_params(cfg: EmbedderConfig, n_speakers: int, seed: int) -> nd.ParamStore:
    params = nd.ParamStore(seed)
    if "word" in cfg.levels:
        params.add("word_proj.W", LEVEL_DIMS["word"], cfg.word_proj)
    add_mlp(params, "tdnn", [cfg.spliced_width, *cfg.hidden, cfg.dvector_dim])
    params.add("att.W1", cfg.dvector_dim, cfg.attention_hidden)
    params.add("att.b1", 1, cfg.attention_hidden, init="zeros")
    params.add("att.W2", cfg.attention_hidden, cfg.heads)
    params.add("pool.W", cfg.dvector_dim, cfg.dvector_dim)
    params.add("pool.b", 1, cfg.dvector_dim, init="zeros")
    params.add("spk.W", n_speakers, cfg.dvector_dim)
    if cfg.mode != "plain":
        params.add("phone_head.W", cfg.dvector_dim, cfg.n_phones)
        params.add("phone_head.b", 1, cfg.n_phones, init="zeros")
    return params


def frame_dvectors(x, content, cfg: EmbedderConfig, params: nd.ParamStore,
                   group: int | None = None) -> nd.Tensor:
    """Frame-level d-vectors for stacked windows of ``group`` frames each."""
    x = nd.constant(x)
    if x.cols != cfg.acoustic_dim:
        raise ValueError(f"acoustic width {x.cols} != configured {cfg.acoustic_dim}")
    parts = [x]
    if cfg.levels:
        if content is None:
            raise ValueError(f"content levels {list(cfg.levels)} configured but no content given")
        content = nd.constant(content)
        if content.rows != x.rows:
            raise ValueError(f"content has {content.rows} rows but acoustics have {x.rows}")
        if content.cols != cfg.content_width:
            raise ValueError(f"content width {content.cols} != {cfg.content_width} for levels {cfg.levels}")
        col = 0
        for level in cfg.levels:
            width = LEVEL_DIMS[level]
            block = content.value[:, col:col + width]
            if level == "word":
                parts.append(nd.matmul(nd.Tensor(block), params["word_proj.W"]))
            else:
                parts.append(nd.Tensor(block))
            col += width
    h = nd.spliced_affine(parts, params["tdnn.0.W"], params["tdnn.0.b"], cfg.left, cfg.right, group)
    n = len(cfg.hidden) + 1
    for i in range(1, n):
        h = nd.affine(nd.relu(h), params[f"tdnn.{i}.W"], params[f"tdnn.{i}.b"])
    return h


def attention_weights(fd: nd.Tensor, params: nd.ParamStore, group: int | None = None) -> nd.Tensor:
    """(B*T) x H attention; each column of each block sums to one."""
    scores = nd.matmul(nd.tanh(nd.affine(fd, params["att.W1"], params["att.b1"])), params["att.W2"])
    return nd.group_softmax(scores, group)


def attentive_pool(fd: nd.Tensor, params: nd.ParamStore, group: int | None = None):
    """Pool frame d-vectors of each block into one embedding; returns (pooled, penalty, A)."""
    fd = nd.constant(fd)
    A = attention_weights(fd, params, group)
    H = A.cols
    head_mean = nd.matmul(A, nd.Tensor(np.full((H, 1), 1.0 / H)))
    pooled = nd.group_sum(nd.scale_rows(fd, head_mean), group)
    pooled = nd.affine(pooled, params["pool.W"], params["pool.b"])
    return pooled, nd.attention_penalty(A, group), A


class Embedder(nd.ModelGraph):
    def __init__(self, cfg: EmbedderConfig, speakers: Sequence[str], seed: int = 0,
                 params: nd.ParamStore | None = None):
        if len(speakers) < 2:
            raise ValueError("speaker embedder needs at least 2 training speakers")
        self.cfg = cfg
        self.speakers = list(speakers)
        self.seed = seed
        self.params = params or init_params(cfg, len(self.speakers), seed)

    def forward(self, batch: WindowBatch):
        fd = frame_dvectors(batch.acoustic, batch.content, self.cfg, self.params, batch.T)
        emb, penalty, _ = attentive_pool(fd, self.params, batch.T)
        return fd, emb, penalty

    def speaker_logits(self, emb: nd.Tensor) -> nd.Tensor:
        if self.cfg.loss.kind == "angular-softmax":
            return nd.angular_softmax_logits(emb, self.params["spk.W"], self.cfg.loss)
        return nd.matmul(emb, nd.transpose(self.params["spk.W"]))

    def _losses(self, batch: WindowBatch):
        fd, emb, penalty = self.forward(batch)
        main = nd.softmax_cross_entropy(self.speaker_logits(emb), batch.labels)
        if self.cfg.penalty_weight:
            main = nd.add(main, nd.scale(penalty, self.cfg.penalty_weight))
        aux = None
        if self.cfg.mode != "plain":
            if batch.phone_ids is None:
                raise ValueError(f"{self.cfg.mode} training needs frame-level phone labels")
            covered = np.flatnonzero(batch.phone_ids >= 0)
            if covered.size:
                h = nd.take_rows(fd, covered)
                if self.cfg.mode == "adversarial":
                    h = nd.gradient_reverse(h, self.cfg.adv_lambda)
                logits = nd.affine(h, self.params["phone_head.W"], self.params["phone_head.b"])
                aux = nd.scale(nd.softmax_cross_entropy(logits, batch.phone_ids[covered]), self.cfg.aux_weight)
        return main, aux

    def loss(self, batch: WindowBatch) -> nd.Tensor:
        main, aux = self._losses(batch)
        return main if aux is None else nd.add(main, aux)

    def objective(self, batch: WindowBatch, name: str) -> nd.Tensor:
        main, aux = self._losses(batch)
        if aux is None:
            return main
        if self.cfg.mode == "adversarial" and not name.startswith("phone_head."):
            # layers below the reversal descend on main - lambda * aux
            return nd.add(main, nd.scale(aux, -self.cfg.adv_lambda))
        return nd.add(main, aux)

    def embed(self, batch: WindowBatch) -> np.ndarray:
        with nd.no_grad():
            _, emb, _ = self.forward(batch)
        return emb.value

    def state(self) -> dict:
        return {"kind": "embedder", "config": self.cfg.to_dict(), "speakers": self.speakers,
                "seed": self.seed}


@dataclass
class TrainingReport:
    epochs: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"epochs": self.epochs}


def accuracy(model: Embedder, ws: WindowSet, encoder: ContentEncoder | None, batch_size: int = 64) -> float:
    correct = total = 0
    for T, idx in sorted(ws.by_length().items()):
        for start in range(0, len(idx), batch_size):
            batch = make_batch(ws, idx[start:start + batch_size], encoder, model.cfg.levels)
            with nd.no_grad():
                _, emb, _ = model.forward(batch)
                pred = model.speaker_logits(emb).value.argmax(axis=1)
            correct += int((pred == batch.labels).sum())
            total += len(batch.labels)
    return correct / total if total else float("nan")


def train_embedder(train: WindowSet, cfg: EmbedderConfig, epochs: int, seed: int = 0,
                   encoder: ContentEncoder | None = None, held_out: WindowSet | None = None,
                   batch_size: int = 32, lr: float = 1e-3, model: Embedder | None = None,
                   optimizer: nd.Adam | None = None, report: TrainingReport | None = None):
    """Minibatch training; returns (model, optimizer, report).

    Passing back ``model``/``optimizer``/``report`` resumes training and keeps
    counting epochs from where the report stopped.
    """
    if len(train.speakers) < 2:
        raise ValueError("train_embedder needs at least 2 speakers")
    model = model or Embedder(cfg, train.speakers, seed)
    optimizer = optimizer or nd.Adam(lr)
    report = report or TrainingReport()
    need_phones = cfg.mode != "plain"
    start_epoch = len(report.epochs)
    groups = train.by_length()
    for epoch in range(start_epoch, start_epoch + epochs):
        rng = np.random.default_rng([seed, epoch])
        batches = []
        for T in sorted(groups):
            idx = np.asarray(groups[T])[rng.permutation(len(groups[T]))]
            batches.extend(idx[s:s + batch_size] for s in range(0, len(idx), batch_size))
        order = rng.permutation(len(batches))
        losses = []
        for b in order:
            batch = make_batch(train, batches[b], encoder, cfg.levels, need_phones)
            model.params.zero_grad()
            loss = model.loss(batch)
            loss.backward()
            optimizer.step(model.params)
            losses.append(loss.item())
        entry = {"epoch": epoch + 1, "loss": float(np.mean(losses)) if losses else float("nan")}
        if held_out is not None and len(held_out):
            entry["heldout_acc"] = accuracy(model, held_out, encoder)
        report.epochs.append(entry)
        log.info("embedder epoch %d loss %.4f %s", entry["epoch"], entry["loss"],
                 f"acc {entry['heldout_acc']:.3f}" if "heldout_acc" in entry else "")
    return model, optimizer, report


@dataclass
class WindowEmbedding:
    vector: np.ndarray
    span: tuple[int, int]
    segment_id: object
    meeting_id: str


def extract_window_dvectors(model: Embedder, meeting, segments: Sequence[tuple],
                            encoder: ContentEncoder | None = None, batch_size: int = 64) -> list[WindowEmbedding]:
    """Window embeddings for every segment of one meeting.

    ``meeting`` is a MeetingData whose content ids must cover the configured
    levels; ``segments`` are (start, end, ...) frame spans whose position in
    the list is the segment id.
    """
    cfg = model.cfg
    missing = [l for l in cfg.levels if l not in meeting.content_ids]
    if missing:
        raise ValueError(f"CASE embedder needs {missing} alignments for meeting {meeting.meeting_id}")
    ordered = sorted(((s, e) for s, e, *_ in segments))
    for (a0, a1), (b0, _) in zip(ordered[:-1], ordered[1:]):
        if b0 < a1:
            raise ValueError("segments overlap")
    triples = [(s, e, None) for s, e, *_ in segments]
    ws = segment_windows([meeting], [triples], cfg.window_len, cfg.hop)
    vectors: dict[int, np.ndarray] = {}
    for T, idx in sorted(ws.by_length().items()):
        for start in range(0, len(idx), batch_size):
            chunk = idx[start:start + batch_size]
            emb = model.embed(make_batch(ws, chunk, encoder, cfg.levels))
            for i, v in zip(chunk, emb):
                vectors[i] = v
    return [WindowEmbedding(vectors[i], (w.start, w.end), w.segment_id, meeting.meeting_id)
            for i, w in enumerate(ws.windows)]
