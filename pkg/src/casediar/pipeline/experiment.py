"""System comparison across alignment regimes, recogniser error rates and seeds.

Per seed a fresh corpus is synthesised, every system is trained, and each
(system, regime, error rate) cell is diarised on dev and eval.  The clustering
percentile is tuned per cell on dev and then applied to eval.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..scoring import DerReport, aggregate_reports, compute_der, emit_rttm
from .config import REGIMES, SYSTEMS, RunConfig
from .corpus import AccessAudit, Corpus, MeetingSource, SimulatedAsr
from .diarise import (Labelling, SegmentationParams, automatic_segments, embed_meeting, label_segments,
                      regime_inputs)
from .training import train_cpd_stage, train_system, train_vad_stage

log = logging.getLogger(__name__)

SPLITS = ("dev", "eval")
SHORT = {"reference": "ref", "manual-hypothesis": "manual", "automatic-hypothesis": "auto"}


def column_key(regime: str, rate: float) -> str:
    return "reference" if regime == "reference" else f"{regime}@{rate:g}"


def columns(regimes: Sequence[str], rates: Sequence[float]) -> list[tuple[str, float]]:
    out = []
    for regime in REGIMES:
        if regime not in regimes:
            continue
        out.extend([(regime, 0.0)] if regime == "reference" else [(regime, r) for r in rates])
    return out


def seg_params(config: RunConfig) -> SegmentationParams:
    v, c = config["vad"], config["cpd"]
    return SegmentationParams(v["threshold"], v["min_speech"], v["min_silence"], c["threshold"], c["min_gap"])


@dataclass
class _Cell:
    p: float
    reports: dict[str, dict[str, DerReport]]  # split -> meeting -> report
    labellings: dict[str, Labelling]
    segments: dict[str, list[tuple[int, int]]]


def _score_grid(corpus: Corpus, embeddings: dict, p_values: Sequence[float], config: RunConfig,
                seed: int, dev_ids: Sequence[str]):
    """Per p: labellings and reports for every meeting."""
    cl = config["cluster"]
    out = {}
    for p in p_values:
        labs, reps = {}, {}
        for mid, me in embeddings.items():
            lab = label_segments(me, p, cl["k_max"], seed, cl["restarts"])
            labs[mid] = lab
            hyp = lab.records(mid, me.segments, corpus.frame_period)
            reps[mid] = compute_der(corpus.meetings[mid].reference, hyp)
        out[p] = (labs, reps)
    return out


def _tune(grid: dict, dev_ids: Sequence[str]) -> float:
    """p with the lowest time-weighted dev SER (first in grid order on ties)."""
    best, best_ser = None, np.inf
    for p, (_, reps) in grid.items():
        ser = aggregate_reports([reps[m] for m in dev_ids]).ser
        if ser < best_ser - 1e-12:
            best, best_ser = p, ser
    return best


def run_seed(config: RunConfig, seed: int, systems: Sequence[str], regimes: Sequence[str],
             rates: Sequence[float], out_dir: Path | None = None) -> dict:
    """All cells for one seed; returns a JSON-ready dict."""
    cfg_cl = config["cluster"]
    spec = config.synth_spec(seed)
    corpus = Corpus.synthesize(spec, config["corpus"]["held_out_fraction"])
    asr = SimulatedAsr(corpus, seed)
    encoder = corpus.encoder()
    auto = "automatic-hypothesis" in regimes
    trained = list(dict.fromkeys((["baseline"] if auto else []) + list(systems)))
    models = {}
    for name in trained:
        log.info("seed %d: training %s", seed, name)
        models[name] = train_system(corpus, config, name, seed)
    if auto:
        vad = train_vad_stage(corpus, config, seed)
        cpd = train_cpd_stage(corpus, config, seed)
    dev_ids, eval_ids = corpus.split.dev, corpus.split.eval
    test_ids = list(dev_ids) + list(eval_ids)
    p_values = list(cfg_cl["p_grid"]) if cfg_cl["p"] < 0 else [cfg_cl["p"]]
    extra = config["experiment"]["automatic_extra_error"]

    audits = {r: AccessAudit() for r in REGIMES}
    sources = {r: {m: MeetingSource(corpus.meetings[m], audits[r]) for m in test_ids} for r in REGIMES}

    result: dict = {"seed": seed, "cells": {}, "segmentation": {}}
    pass1 = None
    if auto:
        src = sources["automatic-hypothesis"]
        auto_segs = {m: automatic_segments(src[m].frames, vad, cpd, seg_params(config)) for m in test_ids}
        emb1 = {m: embed_meeting(models["baseline"], m, src[m].frames, auto_segs[m], None, None) for m in test_ids}
        grid1 = _score_grid(corpus, emb1, p_values, config, seed, dev_ids)
        p1 = _tune(grid1, dev_ids)
        pass1 = {m: grid1[p1][0][m] for m in test_ids}
        pass1_reports = grid1[p1][1]
        result["segmentation"] = {
            "p_pass1": p1,
            "segments": {m: len(auto_segs[m]) for m in test_ids},
            **{split: _summary([pass1_reports[m] for m in ids])
               for split, ids in (("dev", dev_ids), ("eval", eval_ids))},
        }
        if out_dir is not None:
            _write_rttm(out_dir / "automatic-hypothesis" / "pass1.rttm", corpus, auto_segs, pass1, test_ids)

    pass_gap = 0.0
    for regime, rate in columns(regimes, rates):
        for name in systems:
            model = models[name]
            levels = model.cfg.levels
            eff = min(1.0, rate + extra) if regime == "automatic-hypothesis" else rate
            key = column_key(regime, rate)
            if not levels and regime != "reference" and rate != rates[0]:
                # systems without content inputs do not depend on the error rate
                first = column_key(regime, rates[0])
                result["cells"].setdefault(name, {})[key] = result["cells"][name][first]
                continue
            src = sources[regime]
            emb = {}
            for m in test_ids:
                spans, tracks = regime_inputs(src[m], regime, levels, asr, eff,
                                              auto_segs[m] if regime == "automatic-hypothesis" else None)
                emb[m] = embed_meeting(model, m, src[m].frames, spans, tracks, encoder)
            grid = _score_grid(corpus, emb, p_values, config, seed, dev_ids)
            p = _tune(grid, dev_ids)
            labs, reps = grid[p]
            cell = {"p": p, **{split: _summary([reps[m] for m in ids])
                               for split, ids in (("dev", dev_ids), ("eval", eval_ids))}}
            if regime == "automatic-hypothesis":
                p1reps = pass1_reports
                gap = max(max(abs(reps[m].ms_time - p1reps[m].ms_time), abs(reps[m].fa_time - p1reps[m].fa_time))
                          for m in test_ids)
                cell["pass_msfa_gap"] = gap
                pass_gap = max(pass_gap, gap)
            result["cells"].setdefault(name, {})[key] = cell
            if out_dir is not None:
                segs = {m: emb[m].segments for m in test_ids}
                _write_rttm(out_dir / SHORT[regime] / f"{rate:g}" / f"{name}.rttm", corpus, segs, labs, test_ids)
    result["automatic_reference_reads"] = len(audits["automatic-hypothesis"].events)
    result["pass_msfa_gap"] = pass_gap
    result["models"] = {n: m.params.n_values() for n, m in models.items()}
    return result


def _summary(reports: Sequence[DerReport]) -> dict:
    agg = aggregate_reports(reports)
    return {"ser": agg.ser, "ms": agg.ms, "fa": agg.fa, "der": agg.der}


def _write_rttm(path: Path, corpus: Corpus, segments: dict, labellings: dict, ids: Sequence[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    text = "".join(emit_rttm(labellings[m].records(m, segments[m], corpus.frame_period)) for m in ids)
    path.write_text(text)


# ---------------------------------------------------------------------------
# aggregation and report


def summarise(seed_results: Sequence[dict], systems: Sequence[str], regimes: Sequence[str],
              rates: Sequence[float]) -> dict:
    cols = [column_key(r, e) for r, e in columns(regimes, rates)]
    table: dict = {}
    for name in systems:
        table[name] = {}
        for col in cols:
            entry = {}
            for split in SPLITS:
                vals = [r["cells"][name][col][split]["ser"] for r in seed_results]
                entry[split] = {"mean": float(np.mean(vals)), "std": float(np.std(vals)), "per_seed": vals}
            table[name][col] = entry
    relative = {}
    if "baseline" in systems:
        for name in systems:
            relative[name] = {}
            for col in cols:
                relative[name][col] = {}
                for split in SPLITS:
                    base = table["baseline"][col][split]["mean"]
                    mine = table[name][col][split]["mean"]
                    relative[name][col][split] = 100.0 * (base - mine) / base if base > 0 else 0.0
    seg = {}
    if "automatic-hypothesis" in regimes:
        for split in SPLITS:
            seg[split] = {k: float(np.mean([r["segmentation"][split][k] for r in seed_results]))
                          for k in ("ms", "fa")}
    return {"columns": cols, "ser": table, "relative_reduction": relative, "vad": seg,
            "automatic_reference_reads": int(sum(r["automatic_reference_reads"] for r in seed_results)),
            "pass_msfa_gap": float(max(r["pass_msfa_gap"] for r in seed_results))}


def claim_checks(summary: dict, system: str = "case-pc", split: str = "eval",
                 low: float = 0.0, high: float = 0.4, min_relative: float = 10.0) -> dict:
    """Directional claim and robustness trend for one system in the automatic regime."""
    ser = summary["ser"]
    cols = {float(c.split("@")[1]): c for c in summary["columns"] if c.startswith("automatic-hypothesis@")}
    out = {}
    if high in cols and "baseline" in ser:
        out["high_error_better"] = ser[system][cols[high]][split]["mean"] < ser["baseline"][cols[high]][split]["mean"]
    if low in cols and "baseline" in ser:
        out["low_error_relative"] = summary["relative_reduction"][system][cols[low]][split]
        out["low_error_ok"] = out["low_error_relative"] >= min_relative
    rates = sorted(cols)
    means = [ser[system][cols[r]][split]["mean"] for r in rates]
    out["trend_rates"] = rates
    out["trend_means"] = means
    out["trend_ok"] = all(a <= b for a, b in zip(means[:-1], means[1:]))
    per_seed = [ser[system][cols[r]][split]["per_seed"] for r in rates]
    out["single_seed_violations"] = [i for i in range(len(per_seed[0]))
                                     if any(per_seed[j][i] > per_seed[j + 1][i] for j in range(len(rates) - 1))]
    return out


def format_markdown(summary: dict, systems: Sequence[str], n_seeds: int) -> str:
    lines = [f"# Speaker error rate (%), mean over {n_seeds} seed(s)", ""]
    for regime in REGIMES:
        cols = [c for c in summary["columns"] if c.split("@")[0] == regime]
        if not cols:
            continue
        lines.append(f"## {regime}")
        lines.append("")
        head = ["System"] + [f"{_col_label(c)} {s.capitalize()}" for c in cols for s in SPLITS]
        lines.append("| " + " | ".join(head) + " |")
        lines.append("|" + "---|" * len(head))
        for name in systems:
            vals = [f"{summary['ser'][name][c][s]['mean']:.1f}" for c in cols for s in SPLITS]
            lines.append("| " + " | ".join([SYSTEMS[name][0], *vals]) + " |")
        lines.append("")
    if summary["relative_reduction"]:
        lines.append("## Relative SER reduction against the baseline (%), per split")
        lines.append("")
        cols = summary["columns"]
        head = ["System"] + [f"{_col_label(c)} {s.capitalize()}" for c in cols for s in SPLITS]
        lines.append("| " + " | ".join(head) + " |")
        lines.append("|" + "---|" * len(head))
        for name in systems:
            vals = [f"{summary['relative_reduction'][name][c][s]:.1f}" for c in cols for s in SPLITS]
            lines.append("| " + " | ".join([SYSTEMS[name][0], *vals]) + " |")
        lines.append("")
    if summary["vad"]:
        lines.append("## Automatic segmentation: missed speech and false alarm (%)")
        lines.append("")
        lines.append("| Dev MS | Dev FA | Eval MS | Eval FA |")
        lines.append("|---|---|---|---|")
        v = summary["vad"]
        lines.append(f"| {v['dev']['ms']:.1f} | {v['dev']['fa']:.1f} | {v['eval']['ms']:.1f} | {v['eval']['fa']:.1f} |")
        lines.append("")
    return "\n".join(lines)


def _col_label(col: str) -> str:
    if col == "reference":
        return "Reference"
    regime, rate = col.split("@")
    return f"{'Manual' if regime.startswith('manual') else 'Automatic'} e={rate}"


def run_experiment(config: RunConfig, out: Path | None = None) -> dict:
    exp = config["experiment"]
    systems, regimes, rates = exp["systems"], exp["regimes"], exp["error_rates"]
    seeds = [config.seed + i for i in range(exp["n_seeds"])]
    results = []
    for seed in seeds:
        seed_dir = None if out is None else Path(out) / f"seed{seed}"
        results.append(run_seed(config, seed, systems, regimes, rates, seed_dir))
    summary = summarise(results, systems, regimes, rates)
    report = {"seeds": seeds, "systems": list(systems), "regimes": list(regimes),
              "error_rates": list(rates), "summary": summary, "per_seed": results}
    if "case-pc" in systems and "automatic-hypothesis" in regimes:
        report["claims"] = {split: claim_checks(summary, split=split) for split in SPLITS}
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        (out / "report.md").write_text(format_markdown(summary, systems, len(seeds)))
    return report
