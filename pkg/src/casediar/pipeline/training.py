"""Training stages and model checkpoints."""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .. import ndiff as nd
from ..models.cpd import Cpd, CpdConfig, train_cpd
from ..models.data import MeetingData, WindowSet, segment_windows
from ..models.embedder import Embedder, EmbedderConfig, TrainingReport, train_embedder
from ..models.vad import Vad, VadConfig, speech_mask, train_vad
from .config import RunConfig
from .corpus import Corpus, SimulatedAsr

log = logging.getLogger(__name__)


def training_windows(corpus: Corpus, cfg: EmbedderConfig, error_rate: float = 0.0,
                     seed: int = 0) -> tuple[WindowSet, WindowSet]:
    """Windows over training segments, split into (train, held-out) by the corpus split.

    A nonzero ``error_rate`` trains on alignments passed through the simulated
    recogniser once (a fixed corruption per seed).
    """
    train = corpus.role("train")
    if error_rate > 0 and cfg.levels:
        asr = SimulatedAsr(corpus, seed)
        tracks = [asr.decode(m.meeting_id, [(0, m.features.T)], error_rate, cfg.levels) for m in train]
    else:
        tracks = [m.alignments for m in train]
    data = [MeetingData.from_tracks(m.meeting_id, m.features.frames, t) for m, t in zip(train, tracks)]
    held = set(corpus.split.held_out)
    speakers = corpus.training_speakers()
    segs = [m.segments for m in train]
    ws = segment_windows(data, segs, cfg.window_len, cfg.hop, speakers,
                         keep=lambda i, j: (train[i].meeting_id, j) not in held)
    hs = segment_windows(data, segs, cfg.window_len, cfg.hop, speakers,
                         keep=lambda i, j: (train[i].meeting_id, j) in held)
    return ws, hs


# ---------------------------------------------------------------------------
# checkpoints


def save_model(path, model, optimizer: nd.Adam | None, report) -> None:
    arrays = {f"param/{k}": v for k, v in model.params.state().items()}
    if optimizer is not None:
        arrays.update({f"adam/{k}": v for k, v in optimizer.state().items()})
    epochs = report.epochs if isinstance(report, TrainingReport) else list(report or [])
    meta = {"model": model.state(), "report": epochs,
            "adam": None if optimizer is None else {"lr": optimizer.lr}}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    nd.save_checkpoint(path, arrays, meta)


def load_model(path):
    """Returns (model, optimizer, report) as saved by :func:`save_model`."""
    if not Path(path).exists():
        raise FileNotFoundError(f"checkpoint {path} not found")
    arrays, meta = nd.load_checkpoint(path)
    state = meta["model"]
    kind = state["kind"]
    if kind == "embedder":
        cfg = EmbedderConfig.from_dict(state["config"])
        model = Embedder(cfg, state["speakers"], state["seed"])
        report = TrainingReport(list(meta["report"]))
    elif kind == "vad":
        model = Vad(VadConfig(**state["config"]), state["seed"])
        report = list(meta["report"])
    elif kind == "cpd":
        model = Cpd(CpdConfig(**state["config"]), state["seed"])
        report = list(meta["report"])
    else:
        raise ValueError(f"{path}: unknown model kind {kind!r}")
    model.params.load_state({k[6:]: v for k, v in arrays.items() if k.startswith("param/")})
    optimizer = None
    if meta.get("adam") is not None:
        optimizer = nd.Adam(meta["adam"]["lr"])
        optimizer.load_state({k[5:]: v for k, v in arrays.items() if k.startswith("adam/")})
    return model, optimizer, report


def _resume(path, resume: bool):
    if resume and path is not None and Path(path).exists():
        log.info("resuming from %s", path)
        return load_model(path)
    return None, None, None


# ---------------------------------------------------------------------------
# stages


def train_system(corpus: Corpus, config: RunConfig, system: str, seed: int,
                 checkpoint=None, resume: bool = False, epochs: int | None = None) -> Embedder:
    cfg = config.embedder_config(system, corpus.feature_dim)
    e = config["embedder"]
    ws, hs = training_windows(corpus, cfg, e["train_error_rate"], seed + 7919)
    model, optimizer, report = _resume(checkpoint, resume)
    model, optimizer, report = train_embedder(
        ws, cfg, e["epochs"] if epochs is None else epochs, seed=seed, encoder=corpus.encoder(),
        held_out=hs, batch_size=e["batch_size"], lr=e["lr"], model=model, optimizer=optimizer, report=report)
    if checkpoint is not None:
        save_model(checkpoint, model, optimizer, report)
    return model


def train_vad_stage(corpus: Corpus, config: RunConfig, seed: int, checkpoint=None,
                    resume: bool = False) -> Vad:
    v = config["vad"]
    streams = [(m.features.frames, speech_mask(m.features.T, m.segments)) for m in corpus.role("train")]
    model, optimizer, report = _resume(checkpoint, resume)
    model, optimizer, report = train_vad(
        streams, config.vad_config(corpus.feature_dim), v["epochs"], seed=seed,
        frames_per_epoch=v["frames_per_epoch"], batch_size=v["batch_size"], lr=v["lr"],
        model=model, optimizer=optimizer, report=report)
    if checkpoint is not None:
        save_model(checkpoint, model, optimizer, report)
    return model


def train_cpd_stage(corpus: Corpus, config: RunConfig, seed: int, checkpoint=None,
                    resume: bool = False) -> Cpd:
    c = config["cpd"]
    streams = [(m.features.frames, m.segments) for m in corpus.role("train")]
    model, optimizer, report = _resume(checkpoint, resume)
    model, optimizer, report = train_cpd(
        streams, config.cpd_config(corpus.feature_dim), c["epochs"], seed=seed,
        steps_per_epoch=c["steps_per_epoch"], batch_size=c["batch_size"], lr=c["lr"],
        model=model, optimizer=optimizer, report=report)
    if checkpoint is not None:
        save_model(checkpoint, model, optimizer, report)
    return model


def checkpoint_path(root, name: str) -> Path:
    return Path(root) / "checkpoints" / f"{name}.ckpt"


def report_epochs(report) -> list[dict]:
    return report.epochs if isinstance(report, TrainingReport) else list(report)


def param_digest(model) -> float:
    """Cheap fingerprint of all parameters (used in tests and logs)."""
    return float(sum(np.abs(v).sum() for v in model.params.state().values()))
