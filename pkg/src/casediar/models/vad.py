"""Frame-level speech / non-speech DNN over a wide spliced input window."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .. import ndiff as nd
from .layers import add_mlp, gather_context, mlp

log = logging.getLogger(__name__)


@dataclass
class VadConfig:
    acoustic_dim: int = 40
    context: int = 27  # frames on each side: 55-frame input
    hidden: tuple[int, ...] = (256,) * 7

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)

    @property
    def input_width(self) -> int:
        return self.acoustic_dim * (2 * self.context + 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


class Vad(nd.ModelGraph):
    def __init__(self, cfg: VadConfig, seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        self.params = nd.ParamStore(seed)
        add_mlp(self.params, "vad", [cfg.input_width, *cfg.hidden, 2])

    def logits(self, spliced) -> nd.Tensor:
        return mlp(self.params, "vad", nd.constant(spliced), len(self.cfg.hidden) + 1)

    def loss(self, batch) -> nd.Tensor:
        spliced, labels = batch
        return nd.softmax_cross_entropy(self.logits(spliced), labels)

    def state(self) -> dict:
        return {"kind": "vad", "config": self.cfg.to_dict(), "seed": self.seed}


def vad_classify(model: Vad, frames: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Per-frame (non-speech, speech) posteriors, shape T x 2."""
    T = frames.shape[0]
    out = np.empty((T, 2))
    c = model.cfg.context
    with nd.no_grad():
        for s in range(0, T, chunk):
            centers = np.arange(s, min(T, s + chunk))
            out[centers] = nd.softmax(model.logits(gather_context(frames, centers, c, c)).value)
    return out


def speech_mask(T: int, segments: Sequence[tuple]) -> np.ndarray:
    mask = np.zeros(T, dtype=bool)
    for s, e, *_ in segments:
        mask[s:e] = True
    return mask


def train_vad(streams: Sequence[tuple[np.ndarray, np.ndarray]], cfg: VadConfig, epochs: int = 5,
              seed: int = 0, frames_per_epoch: int = 20000, batch_size: int = 256,
              lr: float = 1e-3, model: Vad | None = None, optimizer: nd.Adam | None = None,
              report: list | None = None):
    """Train on (frames, speech mask) streams with class-balanced frame sampling."""
    model = model or Vad(cfg, seed)
    optimizer = optimizer or nd.Adam(lr)
    report = report if report is not None else []
    pools = {label: [(i, np.flatnonzero(mask == bool(label))) for i, (_, mask) in enumerate(streams)]
             for label in (0, 1)}
    pools = {k: [(i, idx) for i, idx in v if idx.size] for k, v in pools.items()}
    if not pools[0] or not pools[1]:
        raise ValueError("VAD training needs both speech and non-speech frames")
    c = cfg.context
    start = len(report)
    for epoch in range(start, start + epochs):
        rng = np.random.default_rng([seed, epoch, 11])
        losses = []
        for _ in range(max(1, frames_per_epoch // batch_size)):
            rows, labels = [], []
            for label in (0, 1):
                for _ in range(batch_size // 2):
                    i, idx = pools[label][rng.integers(len(pools[label]))]
                    rows.append((i, int(idx[rng.integers(idx.size)])))
                    labels.append(label)
            X = np.concatenate([gather_context(streams[i][0], np.array([t]), c, c) for i, t in rows])
            model.params.zero_grad()
            loss = model.loss((X, np.array(labels)))
            loss.backward()
            optimizer.step(model.params)
            losses.append(loss.item())
        report.append({"epoch": epoch + 1, "loss": float(np.mean(losses))})
        log.info("vad epoch %d loss %.4f", epoch + 1, report[-1]["loss"])
    return model, optimizer, report


def smooth_speech(posterior: np.ndarray, threshold: float = 0.5, min_speech: int = 20,
                  min_silence: int = 20) -> list[tuple[int, int]]:
    """Speech runs after thresholding, filling short gaps and dropping short runs."""
    mask = posterior >= threshold
    runs = _runs(mask)
    merged: list[list[int]] = []
    for s, e in runs:
        if merged and s - merged[-1][1] < min_silence:
            merged[-1][1] = e
        else:
            merged.append([s, e])
    return [(s, e) for s, e in merged if e - s >= min_speech]


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    padded = np.concatenate([[False], mask, [False]])
    d = np.diff(padded.astype(np.int8))
    return list(zip(np.flatnonzero(d == 1).tolist(), np.flatnonzero(d == -1).tolist()))
