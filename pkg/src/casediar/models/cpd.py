"""Speaker change-point detector.

A frame TDNN produces frame d-vectors; one ReLU recurrence reads the
``context`` frames before t, another reads the ``context`` frames from t
onwards in reverse.  Their final states are fused by an elementwise product
and classified as change / no change.  All parts train jointly.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .. import ndiff as nd
from .layers import add_mlp, gather_context, mlp

log = logging.getLogger(__name__)


@dataclass
class CpdConfig:
    acoustic_dim: int = 40
    context: int = 50
    rnn_hidden: int = 128
    tdnn_left: int = 7
    tdnn_right: int = 7
    tdnn_hidden: tuple[int, ...] = (256, 256, 256)
    dvector_dim: int = 128
    label_radius: int = 2
    recurrent_init: float = 0.9

    def __post_init__(self):
        if self.context < 1:
            raise ValueError("CPD context must be >= 1")
        self.tdnn_hidden = tuple(int(h) for h in self.tdnn_hidden)

    @property
    def spliced_width(self) -> int:
        return self.acoustic_dim * (self.tdnn_left + self.tdnn_right + 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tdnn_hidden"] = list(self.tdnn_hidden)
        return d


class Cpd(nd.ModelGraph):
    def __init__(self, cfg: CpdConfig, seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        p = self.params = nd.ParamStore(seed)
        add_mlp(p, "cpd.tdnn", [cfg.spliced_width, *cfg.tdnn_hidden, cfg.dvector_dim])
        for side in ("fwd", "bwd"):
            p.add(f"cpd.{side}.Wx", cfg.dvector_dim, cfg.rnn_hidden)
            p.add(f"cpd.{side}.Wh", cfg.rnn_hidden, cfg.rnn_hidden)
            p[f"cpd.{side}.Wh"].value[...] = cfg.recurrent_init * np.eye(cfg.rnn_hidden)
            p.add(f"cpd.{side}.b", 1, cfg.rnn_hidden, init="zeros")
        p.add("cpd.out.W", cfg.rnn_hidden, 2)
        p.add("cpd.out.b", 1, 2, init="zeros")

    def frame_dvectors(self, spliced) -> nd.Tensor:
        return mlp(self.params, "cpd.tdnn", nd.constant(spliced), len(self.cfg.tdnn_hidden) + 1)

    def _recur(self, side: str, steps: Sequence[nd.Tensor]) -> nd.Tensor:
        p = self.params
        h = None
        for x in steps:
            z = nd.affine(x, p[f"cpd.{side}.Wx"], p[f"cpd.{side}.b"])
            if h is not None:
                z = nd.add(z, nd.matmul(h, p[f"cpd.{side}.Wh"]))
            h = nd.relu(z)
        return h

    def logits_from_steps(self, steps: Sequence[nd.Tensor]) -> nd.Tensor:
        """``steps[j]`` holds frame d-vectors of frame t - context + j for every target t."""
        C = self.cfg.context
        past = self._recur("fwd", steps[:C])
        future = self._recur("bwd", steps[C:][::-1])
        fused = nd.hadamard(past, future)
        return nd.affine(fused, self.params["cpd.out.W"], self.params["cpd.out.b"])

    def step_index(self, targets: np.ndarray, T: int) -> np.ndarray:
        """(2*context) x n frame indices, step-major, clipped to the stream."""
        C = self.cfg.context
        return np.clip(np.arange(-C, C)[:, None] + np.asarray(targets)[None, :], 0, T - 1)

    def loss(self, batch) -> nd.Tensor:
        frames, targets, labels = batch
        idx = self.step_index(targets, frames.shape[0])
        n = len(targets)
        X = gather_context(frames, idx.reshape(-1), self.cfg.tdnn_left, self.cfg.tdnn_right)
        fd = self.frame_dvectors(X)
        steps = [nd.slice_rows(fd, j * n, (j + 1) * n) for j in range(idx.shape[0])]
        return nd.softmax_cross_entropy(self.logits_from_steps(steps), labels)

    def state(self) -> dict:
        return {"kind": "cpd", "config": self.cfg.to_dict(), "seed": self.seed}


def cpd_score(model: Cpd, frames: np.ndarray, targets: np.ndarray | None = None,
              chunk: int = 2048) -> np.ndarray:
    """Change posterior for each target frame (all frames by default)."""
    T = frames.shape[0]
    targets = np.arange(T) if targets is None else np.asarray(targets)
    cfg = model.cfg
    with nd.no_grad():
        fd = np.empty((T, cfg.dvector_dim))
        for s in range(0, T, chunk):
            centers = np.arange(s, min(T, s + chunk))
            fd[centers] = model.frame_dvectors(gather_context(frames, centers, cfg.tdnn_left, cfg.tdnn_right)).value
        out = np.empty(len(targets))
        for s in range(0, len(targets), chunk):
            tg = targets[s:s + chunk]
            idx = model.step_index(tg, T)
            steps = [nd.Tensor(fd[row]) for row in idx]
            out[s:s + chunk] = nd.softmax(model.logits_from_steps(steps).value)[:, 1]
    return out


def pick_changes(scores: np.ndarray, threshold: float = 0.5, min_gap: int = 50) -> list[int]:
    """Local maxima above ``threshold``, strongest first, at least ``min_gap`` frames apart."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold {threshold} outside (0, 1)")
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        return []
    left = np.concatenate([[-np.inf], s[:-1]])
    right = np.concatenate([s[1:], [-np.inf]])
    cand = np.flatnonzero((s > threshold) & (s >= left) & (s >= right))
    order = cand[np.lexsort((cand, -s[cand]))]
    kept: list[int] = []
    for t in order:
        if all(abs(int(t) - k) >= min_gap for k in kept):
            kept.append(int(t))
    return sorted(kept)


def change_labels(T: int, segments: Sequence[tuple]) -> tuple[np.ndarray, np.ndarray]:
    """True change frames (speaker switch with no pause) and all segment edges."""
    segs = sorted(segments)
    changes = [b[0] for a, b in zip(segs[:-1], segs[1:]) if a[1] == b[0] and a[2] != b[2]]
    edges = sorted({s for s, *_ in segs} | {e for _, e, *_ in segs})
    return np.array(changes, dtype=np.int64), np.array(edges, dtype=np.int64)


def train_cpd(streams: Sequence[tuple[np.ndarray, list]], cfg: CpdConfig, epochs: int = 5,
              seed: int = 0, steps_per_epoch: int = 50, batch_size: int = 64, lr: float = 1e-3,
              clip: float = 5.0, model: Cpd | None = None, optimizer: nd.Adam | None = None,
              report: list | None = None):
    """Train on (frames, reference segments) streams with balanced change / non-change targets."""
    model = model or Cpd(cfg, seed)
    optimizer = optimizer or nd.Adam(lr)
    report = report if report is not None else []
    r = cfg.label_radius
    pos, neg = [], []
    for i, (frames, segments) in enumerate(streams):
        T = frames.shape[0]
        changes, _ = change_labels(T, segments)
        near = np.zeros(T, dtype=bool)
        for c in changes:
            near[max(0, c - r - 3):c + r + 3] = True
        speech = np.zeros(T, dtype=bool)
        for s, e, *_ in segments:
            speech[s:e] = True
        for c in changes:
            pos.extend((i, t) for t in range(max(0, c - r), min(T, c + r + 1)))
        neg.extend((i, int(t)) for t in np.flatnonzero(speech & ~near))
    if not pos or not neg:
        raise ValueError("CPD training needs speaker changes and non-change speech frames")
    start = len(report)
    for epoch in range(start, start + epochs):
        rng = np.random.default_rng([seed, epoch, 13])
        losses = []
        for _ in range(steps_per_epoch):
            picks = [pos[j] for j in rng.integers(len(pos), size=batch_size // 2)]
            picks += [neg[j] for j in rng.integers(len(neg), size=batch_size - batch_size // 2)]
            labels = np.array([1] * (batch_size // 2) + [0] * (batch_size - batch_size // 2))
            model.params.zero_grad()
            total = 0.0
            for i in sorted({i for i, _ in picks}):
                sel = [k for k, (j, _) in enumerate(picks) if j == i]
                targets = np.array([picks[k][1] for k in sel])
                loss = model.loss((streams[i][0], targets, labels[sel]))
                nd.scale(loss, len(sel) / batch_size).backward()
                total += loss.item() * len(sel) / batch_size
            _clip_gradients(model.params, clip)
            optimizer.step(model.params)
            losses.append(total)
        report.append({"epoch": epoch + 1, "loss": float(np.mean(losses))})
        log.info("cpd epoch %d loss %.4f", epoch + 1, report[-1]["loss"])
    return model, optimizer, report


def _clip_gradients(params: nd.ParamStore, max_norm: float) -> None:
    if not max_norm:
        return
    norm = np.sqrt(sum(float((params.grad(n) ** 2).sum()) for n in params))
    if norm > max_norm:
        for n in params:
            params[n].grad *= max_norm / norm
