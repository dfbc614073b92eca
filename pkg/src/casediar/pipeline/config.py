"""Run configuration: an INI file whose every key has a documented default.

Unknown sections or keys are rejected so that typos fail loudly.  The
defaults describe the desk-scale setup used by the experiment and the
acceptance suite; paper-scale widths can be set per key.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .. import ndiff as nd
from ..models.cpd import CpdConfig
from ..models.embedder import EmbedderConfig
from ..models.vad import VadConfig
from ..synthdata import SynthSpec

REGIMES = ("reference", "manual-hypothesis", "automatic-hypothesis")

# name -> (table label, content levels, training mode)
SYSTEMS = {
    "baseline": ("Baseline dvec.", (), "plain"),
    "multitask": ("Multi-task dvec.", (), "multitask"),
    "adversarial": ("Adversarial dvec.", (), "adversarial"),
    "case-p": ("CASE dvec. (p)", ("phone",), "plain"),
    "case-c": ("CASE dvec. (c)", ("character",), "plain"),
    "case-pc": ("CASE dvec. (p + c)", ("phone", "character"), "plain"),
    "case-w": ("CASE dvec. (w)", ("word",), "plain"),
    "case-wpc": ("CASE dvec. (w + p + c)", ("phone", "character", "word"), "plain"),
}


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in _items(text))


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in _items(text))


def _items(text: str) -> list[str]:
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _bool(text: str) -> bool:
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# section -> key -> (parser, default, description)
SCHEMA: dict[str, dict[str, tuple[Any, str, str]]] = {
    "run": {
        "seed": (int, "0", "base seed; corpus, training and clustering all derive from it"),
        "regime": (str, "automatic-hypothesis", "alignment regime for diarise"),
        "system": (str, "case-pc", "system used by diarise"),
        "error_rate": (float, "0.0", "unit substitution rate of the simulated recogniser"),
        "train_systems": (_items, "baseline,case-pc", "systems trained by the train command"),
        "resume": (_bool, "false", "continue training from existing checkpoints"),
    },
    "corpus": {
        "path": (str, "", "existing corpus directory; empty means <out>/corpus"),
        "n_speakers": (int, "64", "speakers in the population"),
        "n_test_speakers": (int, "16", "speakers reserved for dev/eval meetings"),
        "speakers_per_meeting": (int, "4", "speakers per meeting"),
        "n_meetings": (int, "36", "meetings in total"),
        "n_dev_meetings": (int, "8", "dev meetings"),
        "n_eval_meetings": (int, "8", "eval meetings"),
        "duration": (float, "120", "meeting length in seconds"),
        "lexicon_size": (int, "100", "words in the lexicon"),
        "phones_per_word": (_ints, "2,5", "inclusive range of phones per word"),
        "phone_frames": (_ints, "5,15", "inclusive range of frames per phone"),
        "turn_seconds": (_floats, "2,8", "range of turn lengths in seconds"),
        "silence_ratio": (float, "0.1", "share of meeting time spent in pauses"),
        "speaker_separation": (float, "1.0", "spread of speaker means"),
        "content_influence": (float, "2.0", "scale of phone offsets in the features"),
        "noise_sigma": (float, "0.3", "frame noise"),
        "feature_dim": (int, "16", "acoustic feature width"),
        "char_timing": (str, "uniform", "character timing inside words: uniform | phone"),
        "held_out_fraction": (float, "0.1", "per-speaker share of training segments held out"),
    },
    "embedder": {
        "hidden": (_ints, "64,64,64", "TDNN hidden widths"),
        "dvector_dim": (int, "32", "d-vector width"),
        "left": (int, "7", "left splice context"),
        "right": (int, "7", "right splice context"),
        "word_proj": (int, "20", "word embedding projection width"),
        "heads": (int, "4", "attention heads"),
        "attention_hidden": (int, "16", "attention scorer width"),
        "penalty_weight": (float, "1.0", "attention penalty weight"),
        "loss_scale": (float, "10.0", "angular softmax scale"),
        "adv_lambda": (float, "1.0", "gradient reversal factor"),
        "aux_weight": (float, "1.0", "phone head loss weight"),
        "window_len": (int, "200", "window length in frames"),
        "hop": (int, "100", "window hop in frames"),
        "epochs": (int, "10", "training epochs"),
        "lr": (float, "0.002", "Adam learning rate"),
        "batch_size": (int, "32", "windows per minibatch"),
        "train_error_rate": (float, "0.4", "recogniser error rate applied to training alignments"),
    },
    "vad": {
        "context": (int, "10", "frames of context on each side"),
        "hidden": (_ints, "64,64", "hidden widths"),
        "epochs": (int, "3", "training epochs"),
        "frames_per_epoch": (int, "8192", "sampled frames per epoch"),
        "batch_size": (int, "256", "frames per minibatch"),
        "lr": (float, "0.001", "Adam learning rate"),
        "threshold": (float, "0.5", "speech posterior threshold"),
        "min_speech": (int, "20", "shortest kept speech run in frames"),
        "min_silence": (int, "20", "shortest kept pause in frames"),
    },
    "cpd": {
        "context": (int, "30", "frames read by each recurrence"),
        "rnn_hidden": (int, "32", "recurrent state width"),
        "tdnn_hidden": (_ints, "64,64", "frame TDNN hidden widths"),
        "dvector_dim": (int, "32", "frame d-vector width"),
        "label_radius": (int, "2", "frames around a change labelled positive"),
        "epochs": (int, "4", "training epochs"),
        "steps_per_epoch": (int, "40", "minibatches per epoch"),
        "batch_size": (int, "64", "targets per minibatch"),
        "lr": (float, "0.002", "Adam learning rate"),
        "threshold": (float, "0.5", "change posterior threshold"),
        "min_gap": (int, "150", "frames between accepted changes"),
    },
    "cluster": {
        "p_grid": (_floats, "0,50,70,80,85,90,95,98", "percentiles tried when tuning p on dev"),
        "p": (float, "-1", "fixed percentile; negative means tune on dev"),
        "k_max": (int, "8", "largest cluster count considered"),
        "restarts": (int, "10", "k-means restarts"),
    },
    "experiment": {
        "systems": (_items, ",".join(SYSTEMS), "systems compared"),
        "regimes": (_items, ",".join(REGIMES), "alignment regimes"),
        "error_rates": (_floats, "0,0.2,0.4", "recogniser error rates"),
        "automatic_extra_error": (float, "0.0", "added to the error rate on automatic segments"),
        "n_seeds": (int, "5", "seeds run: seed, seed+1, ..."),
    },
}


@dataclass
class RunConfig:
    values: dict[str, dict[str, Any]] = field(default_factory=dict)
    out: Path = Path("out")

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    def with_overrides(self, **overrides) -> "RunConfig":
        """Copy with ``section__key=value`` overrides (already typed)."""
        values = {s: dict(v) for s, v in self.values.items()}
        for name, value in overrides.items():
            section, key = name.split("__", 1)
            if key not in values.get(section, {}):
                raise KeyError(f"unknown config key [{section}] {key}")
            values[section][key] = value
        cfg = RunConfig(values, self.out)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        run = self.values["run"]
        if run["regime"] not in REGIMES:
            raise ValueError(f"unknown regime {run['regime']!r}; expected one of {', '.join(REGIMES)}")
        for name in [run["system"], *run["train_systems"], *self.values["experiment"]["systems"]]:
            if name not in SYSTEMS:
                raise ValueError(f"unknown system {name!r}; expected one of {', '.join(SYSTEMS)}")
        for r in self.values["experiment"]["regimes"]:
            if r not in REGIMES:
                raise ValueError(f"unknown regime {r!r}")
        for rate in [run["error_rate"], *self.values["experiment"]["error_rates"]]:
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"error rate {rate} outside [0, 1]")
        if self.values["experiment"]["n_seeds"] < 1:
            raise ValueError("n_seeds must be >= 1")

    # -- typed views -------------------------------------------------------

    def synth_spec(self, seed: int | None = None) -> SynthSpec:
        c = dict(self.values["corpus"])
        c.pop("path")
        c.pop("held_out_fraction")
        return SynthSpec(**c, seed=self.seed if seed is None else seed)

    def embedder_config(self, system: str, acoustic_dim: int) -> EmbedderConfig:
        e = self.values["embedder"]
        _, levels, mode = SYSTEMS[system]
        return EmbedderConfig(
            acoustic_dim=acoustic_dim, levels=levels, left=e["left"], right=e["right"],
            hidden=e["hidden"], dvector_dim=e["dvector_dim"], word_proj=e["word_proj"],
            heads=e["heads"], attention_hidden=e["attention_hidden"],
            penalty_weight=e["penalty_weight"], loss=nd.LossConfig(scale=e["loss_scale"]),
            mode=mode, adv_lambda=e["adv_lambda"], aux_weight=e["aux_weight"],
            window_len=e["window_len"], hop=e["hop"])

    def vad_config(self, acoustic_dim: int) -> VadConfig:
        v = self.values["vad"]
        return VadConfig(acoustic_dim=acoustic_dim, context=v["context"], hidden=v["hidden"])

    def cpd_config(self, acoustic_dim: int) -> CpdConfig:
        c = self.values["cpd"]
        return CpdConfig(acoustic_dim=acoustic_dim, context=c["context"], rnn_hidden=c["rnn_hidden"],
                         tdnn_hidden=c["tdnn_hidden"], dvector_dim=c["dvector_dim"],
                         label_radius=c["label_radius"])

    def corpus_dir(self) -> Path:
        path = self.values["corpus"]["path"]
        return Path(path) if path else self.out / "corpus"


def default_text() -> str:
    """The full default configuration as commented INI text."""
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (_, default, doc) in keys.items():
            lines.append(f"# {doc}")
            lines.append(f"{key} = {default}")
        lines.append("")
    return "\n".join(lines)


def parse_config(text: str = "", out: str | Path = "out") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    parser.read_string(text)
    values: dict[str, dict[str, Any]] = {}
    for section, keys in SCHEMA.items():
        given = parser[section] if parser.has_section(section) else {}
        unknown = set(given) - set(keys)
        if unknown:
            raise ValueError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
        values[section] = {}
        for key, (conv, default, _) in keys.items():
            raw = given.get(key, default)
            try:
                values[section][key] = conv(raw)
            except ValueError as exc:
                raise ValueError(f"[{section}] {key} = {raw!r}: {exc}") from None
    extra = set(parser.sections()) - set(SCHEMA)
    if extra:
        raise ValueError(f"unknown section(s): {', '.join(sorted(extra))}")
    cfg = RunConfig(values, Path(out))
    cfg.validate()
    return cfg


def load_config(path: str | Path | None, out: str | Path = "out") -> RunConfig:
    if path is None:
        return parse_config("", out)
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file {p} not found")
    return parse_config(p.read_text(), out)
