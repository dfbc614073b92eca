"""Command line: ``case-diar synth|train|diarise|score|experiment``.

All artifacts go under ``--out``.  Failures exit with status 1 and a single
``case-diar: error: ...`` line on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .pipeline.config import REGIMES, load_config
from .scoring import aggregate_reports, compute_der, emit_rttm, format_table, parse_rttm

log = logging.getLogger("casediar")


def _config(args):
    cfg = load_config(args.config, args.out)
    overrides = {}
    if args.seed is not None:
        overrides["run__seed"] = args.seed
    if getattr(args, "regime", None) is not None:
        overrides["run__regime"] = args.regime
    if getattr(args, "error_rate", None) is not None:
        overrides["run__error_rate"] = args.error_rate
    if getattr(args, "system", None) is not None:
        overrides["run__system"] = args.system
    if getattr(args, "resume", False):
        overrides["run__resume"] = True
    return cfg.with_overrides(**overrides) if overrides else cfg


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_synth(args) -> int:
    from .pipeline.corpus import Corpus
    cfg = _config(args)
    spec = cfg.synth_spec()
    target = cfg.corpus_dir()
    warnings = []
    if spec.n_speakers < 2:
        warnings.append("corpus has fewer than 2 speakers; embedder training will be rejected")
    try:
        target.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write corpus to {target}: {exc.strerror}") from None
    corpus = Corpus.synthesize(spec, cfg["corpus"]["held_out_fraction"])
    corpus.write(target, spec)
    for w in warnings:
        log.warning(w)
    if warnings:
        (target / "warnings.txt").write_text("".join(w + "\n" for w in warnings))
    print(f"corpus written to {target}: {len(corpus.split.train)} train, {len(corpus.split.dev)} dev, "
          f"{len(corpus.split.eval)} eval meetings")
    return 0


def cmd_train(args) -> int:
    from .pipeline.corpus import Corpus
    from .pipeline.training import (checkpoint_path, load_model, report_epochs, train_cpd_stage,
                                    train_system, train_vad_stage)
    cfg = _config(args)
    corpus = Corpus.load(cfg.corpus_dir())
    seed, resume = cfg.seed, cfg["run"]["resume"]
    stages = [(name, lambda path, n=name: train_system(corpus, cfg, n, seed, path, resume))
              for name in cfg["run"]["train_systems"]]
    stages.append(("vad", lambda path: train_vad_stage(corpus, cfg, seed, path, resume)))
    stages.append(("cpd", lambda path: train_cpd_stage(corpus, cfg, seed, path, resume)))
    for name, fn in stages:
        path = checkpoint_path(cfg.out, name)
        fn(path)
        _, _, report = load_model(path)
        _write_json(path.with_suffix(".json"), {"name": name, "epochs": report_epochs(report)})
        print(f"{name}: {path}")
    return 0


def _load_models(cfg, system: str, regime: str):
    from .pipeline.training import checkpoint_path, load_model
    needs = {system: "embedder"}
    if regime == "automatic-hypothesis":
        needs.update({"baseline": "pass-1 embedder", "vad": "VAD", "cpd": "CPD"})
    models = {}
    for name, role in needs.items():
        path = checkpoint_path(cfg.out, name)
        if not path.exists():
            raise FileNotFoundError(f"regime {regime} needs the {role} checkpoint {path}; run 'train' first")
        models[name] = load_model(path)[0]
    return models


def cmd_diarise(args) -> int:
    from .pipeline.corpus import AccessAudit, Corpus, MeetingSource, SimulatedAsr
    from .pipeline.diarise import finish_meeting, prepare_meeting
    from .pipeline.experiment import seg_params
    cfg = _config(args)
    run, cl = cfg["run"], cfg["cluster"]
    regime, system, rate, seed = run["regime"], run["system"], run["error_rate"], cfg.seed
    models = _load_models(cfg, system, regime)
    corpus = Corpus.load(cfg.corpus_dir())
    roles = [r.strip() for r in args.meetings.split(",") if r.strip()]
    ids = [m for r in roles for m in getattr(corpus.split, r)]
    dev_ids = list(corpus.split.dev)
    audit = AccessAudit()
    asr = SimulatedAsr(corpus, seed)
    encoder = corpus.encoder()
    kwargs = dict(baseline=models.get("baseline"), vad=models.get("vad"), cpd=models.get("cpd"),
                  asr=asr, encoder=encoder, error_rate=rate, seg_params=seg_params(cfg))
    prepared = {m: prepare_meeting(MeetingSource(corpus.meetings[m], audit), regime, models[system], **kwargs)
                for m in dict.fromkeys(ids + (dev_ids if cl["p"] < 0 else []))}
    period = corpus.frame_period
    if cl["p"] < 0:
        p, p1 = _tune_p(corpus, prepared, dev_ids, cl, seed)
    else:
        p = p1 = cl["p"]
    target = cfg.out / "diarise" / regime / system
    reports = {}
    for m in ids:
        res = finish_meeting(prepared[m], period, p, p1, cl["k_max"], seed, cl["restarts"])
        target.mkdir(parents=True, exist_ok=True)
        (target / f"{m}.rttm").write_text(emit_rttm(res.records))
        if res.pass1 is not None:
            (target / "pass1").mkdir(exist_ok=True)
            (target / "pass1" / f"{m}.rttm").write_text(emit_rttm(res.pass1))
        reports[m] = compute_der(corpus.meetings[m].reference, res.records).as_dict()
    _write_json(target / "report.json", {"regime": regime, "system": system, "error_rate": rate,
                                         "p": p, "p_pass1": p1 if regime == "automatic-hypothesis" else None,
                                         "meetings": reports})
    print(f"{len(ids)} meeting(s) diarised into {target} (p={p:g})")
    return 0


def _tune_p(corpus, prepared, dev_ids, cl, seed):
    from .pipeline.diarise import label_segments

    def best(pick):
        scores = []
        for p in cl["p_grid"]:
            reps = []
            for m in dev_ids:
                me = pick(prepared[m])
                lab = label_segments(me, p, cl["k_max"], seed, cl["restarts"])
                hyp = lab.records(m, me.segments, corpus.frame_period)
                reps.append(compute_der(corpus.meetings[m].reference, hyp))
            scores.append((aggregate_reports(reps).ser, p))
        return min(scores, key=lambda t: (t[0], cl["p_grid"].index(t[1])))[1]

    p = best(lambda pm: pm.final)
    p1 = best(lambda pm: pm.pass1) if prepared[dev_ids[0]].pass1 is not None else p
    return p, p1


def _read_rttm_set(path: Path) -> dict:
    files = sorted(path.glob("*.rttm")) if path.is_dir() else [path]
    if not files:
        raise FileNotFoundError(f"no RTTM files under {path}")
    out: dict = {}
    for f in files:
        for r in parse_rttm(f.read_text()):
            out.setdefault(r.meeting_id, []).append(r)
    return out


def cmd_score(args) -> int:
    if not args.ref or not args.hyp:
        raise ValueError("score needs --ref and --hyp")
    ref = _read_rttm_set(Path(args.ref))
    hyp = _read_rttm_set(Path(args.hyp))
    unmatched = sorted(set(hyp) - set(ref))
    if unmatched:
        raise ValueError(f"hypothesis meeting(s) without reference: {', '.join(unmatched)}")
    rows = {m: compute_der(ref[m], hyp[m], collar=args.collar) for m in sorted(hyp)}
    rows["ALL"] = aggregate_reports(list(rows.values()))
    table = format_table(rows)
    print(table, end="" if table.endswith("\n") else "\n")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "score.txt").write_text(table if table.endswith("\n") else table + "\n")
        _write_json(out / "score.json", {m: r.as_dict() for m, r in rows.items()})
    return 0


def cmd_experiment(args) -> int:
    from .pipeline.experiment import run_experiment
    cfg = _config(args)
    out = cfg.out / "experiment"
    report = run_experiment(cfg, out)
    print((out / "report.md").read_text(), end="")
    claims = report.get("claims")
    if claims:
        print(json.dumps(claims, indent=2, sort_keys=True))
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "diarise": cmd_diarise, "score": cmd_score,
            "experiment": cmd_experiment}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="case-diar", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="INI configuration file (defaults when omitted)")
    parser.add_argument("--seed", type=int, help="override [run] seed")
    parser.add_argument("--regime", choices=REGIMES, help="override [run] regime")
    parser.add_argument("--error-rate", type=float, help="override [run] error_rate")
    parser.add_argument("--system", help="override [run] system")
    parser.add_argument("--out", default="out", help="output directory (default: out)")
    parser.add_argument("--meetings", default="dev,eval", help="diarise: comma list of splits")
    parser.add_argument("--resume", action="store_true", help="train: continue from checkpoints")
    parser.add_argument("--ref", help="score: reference RTTM file or directory")
    parser.add_argument("--hyp", help="score: hypothesis RTTM file or directory")
    parser.add_argument("--collar", type=float, default=0.0, help="score: collar in seconds")
    parser.add_argument("--verbose", "-v", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:  # one-line diagnostic, no traceback
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"case-diar: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
