import json
import os
from pathlib import Path

import pytest

from casediar.cli import main
from casediar.pipeline.config import SYSTEMS, parse_config
from casediar.pipeline.corpus import AccessAudit, Corpus, MeetingSource, SimulatedAsr
from casediar.pipeline.diarise import diarise_meeting, regime_inputs
from casediar.pipeline.experiment import run_experiment
from casediar.pipeline.training import checkpoint_path, load_model, report_epochs
from casediar.scoring import RttmRecord, compute_der, emit_rttm, parse_rttm

from tinyconfig import TINY_INI


def run_cli(*argv) -> int:
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    ini = root / "tiny.ini"
    ini.write_text(TINY_INI)
    out = root / "out"
    assert run_cli("synth", "--config", ini, "--out", out) == 0
    assert run_cli("train", "--config", ini, "--out", out) == 0
    return ini, out


def test_config_defaults_and_errors():
    cfg = parse_config("")
    assert cfg["cluster"]["k_max"] == 8 and cfg["run"]["regime"] == "automatic-hypothesis"
    with pytest.raises(ValueError, match="bogus"):
        parse_config("[run]\nbogus = 1\n")
    with pytest.raises(ValueError, match="regime"):
        parse_config("[run]\nregime = telepathy\n")


# -- synth ------------------------------------------------------------------------------------

def test_synth_manifest_lists_splits_and_is_repeatable(workspace, tmp_path):
    ini, out = workspace
    manifest = json.loads((out / "corpus" / "manifest.json").read_text())
    assert set(manifest["splits"]) >= {"train", "dev", "eval"}
    assert manifest["splits"]["dev"] and manifest["splits"]["eval"]
    assert run_cli("synth", "--config", ini, "--out", tmp_path) == 0
    again = tmp_path / "corpus"
    for f in sorted((out / "corpus").iterdir()):
        assert (again / f.name).read_bytes() == f.read_bytes(), f.name


def test_synth_single_speaker_warns(tmp_path):
    ini = tmp_path / "one.ini"
    ini.write_text(TINY_INI.replace("n_speakers = 6", "n_speakers = 1"))
    assert run_cli("synth", "--config", ini, "--out", tmp_path / "o") == 0
    assert "fewer than 2 speakers" in (tmp_path / "o" / "corpus" / "warnings.txt").read_text()
    assert run_cli("train", "--config", ini, "--out", tmp_path / "o") == 1


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
def test_synth_unwritable_path(tmp_path, capsys):
    locked = tmp_path / "locked"
    locked.mkdir(mode=0o500)
    assert run_cli("synth", "--out", locked / "x") == 1
    assert "case-diar: error:" in capsys.readouterr().err


def test_synth_path_under_a_file_is_rejected(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert run_cli("synth", "--config", "/dev/null", "--out", blocker / "x") == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("case-diar: error:")


# -- train ------------------------------------------------------------------------------------

def test_train_writes_one_checkpoint_per_system(workspace):
    _, out = workspace
    for name in ("baseline", "case-pc", "vad", "cpd"):
        assert checkpoint_path(out, name).exists()
    summary = json.loads((out / "checkpoints" / "case-pc.json").read_text())
    assert [e["epoch"] for e in summary["epochs"]] == [1, 2]


def test_train_deterministic_and_resume_continues(workspace, tmp_path):
    ini, out = workspace
    other = tmp_path / "o"
    assert run_cli("synth", "--config", ini, "--out", other) == 0
    assert run_cli("train", "--config", ini, "--out", other) == 0
    for name in ("baseline", "case-pc", "vad", "cpd"):
        assert checkpoint_path(other, name).read_bytes() == checkpoint_path(out, name).read_bytes()
    assert run_cli("train", "--config", ini, "--out", other, "--resume") == 0
    _, _, report = load_model(checkpoint_path(other, "baseline"))
    assert [e["epoch"] for e in report_epochs(report)] == [1, 2, 3, 4]


# -- diarise ----------------------------------------------------------------------------------

def test_diarise_missing_checkpoint_names_dependency(workspace, tmp_path, capsys):
    ini, out = workspace
    assert run_cli("diarise", "--config", ini, "--out", tmp_path, "--system", "baseline") == 1
    err = capsys.readouterr().err
    assert "automatic-hypothesis" in err and "embedder" in err


def test_diarise_automatic_two_passes(workspace):
    ini, out = workspace
    assert run_cli("diarise", "--config", ini, "--out", out) == 0
    d = out / "diarise" / "automatic-hypothesis" / "case-pc"
    corpus = Corpus.load(out / "corpus")
    for mid in corpus.split.dev + corpus.split.eval:
        final = parse_rttm((d / f"{mid}.rttm").read_text())
        first = parse_rttm((d / "pass1" / f"{mid}.rttm").read_text())
        assert len({r.speaker for r in final}) >= 1
        ordered = sorted(final, key=lambda r: r.onset)
        assert all(a.offset <= b.onset + 1e-9 for a, b in zip(ordered[:-1], ordered[1:]))
        assert sum(r.duration for r in final) == pytest.approx(sum(r.duration for r in first), abs=1e-6)
        ref = corpus.meetings[mid].reference
        a, b = compute_der(ref, first), compute_der(ref, final)
        assert a.ms_time == pytest.approx(b.ms_time, abs=1e-9)
        assert a.fa_time == pytest.approx(b.fa_time, abs=1e-9)


def test_diarise_reference_regime_and_repeatability(workspace, tmp_path):
    ini, out = workspace
    args = ("diarise", "--config", ini, "--regime", "reference", "--seed", "0")
    assert run_cli(*args, "--out", out) == 0
    d = out / "diarise" / "reference" / "case-pc"
    snapshot = {f.name: f.read_bytes() for f in d.iterdir() if f.is_file()}
    assert run_cli(*args, "--out", out) == 0
    assert {f.name: f.read_bytes() for f in d.iterdir() if f.is_file()} == snapshot


def test_reference_regime_zero_rate_alignments_are_ground_truth(workspace):
    _, out = workspace
    corpus = Corpus.load(out / "corpus")
    mid = corpus.split.dev[0]
    src = MeetingSource(corpus.meetings[mid])
    asr = SimulatedAsr(corpus, 0)
    _, ref_tracks = regime_inputs(src, "reference", ("phone", "character"), asr, 0.0)
    _, man_tracks = regime_inputs(src, "manual-hypothesis", ("phone", "character"), asr, 0.0)
    for lvl in ("phone", "character"):
        truth = corpus.meetings[mid].alignments[lvl].entries
        assert ref_tracks[lvl].entries == truth
        assert man_tracks[lvl].entries == truth


def test_automatic_regime_never_reads_reference(workspace):
    _, out = workspace
    corpus = Corpus.load(out / "corpus")
    models = {n: load_model(checkpoint_path(out, n))[0] for n in ("baseline", "case-pc", "vad", "cpd")}
    audit = AccessAudit()
    for mid in corpus.split.dev + corpus.split.eval:
        diarise_meeting(MeetingSource(corpus.meetings[mid], audit), "automatic-hypothesis", models["case-pc"],
                        p=50, baseline=models["baseline"], vad=models["vad"], cpd=models["cpd"],
                        asr=SimulatedAsr(corpus, 0), encoder=corpus.encoder(), error_rate=0.4)
    assert audit.events == []
    diarise_meeting(MeetingSource(corpus.meetings[mid], audit), "reference", models["baseline"], p=50)
    assert audit.events == [(mid, "segments")]


# -- score ------------------------------------------------------------------------------------

def _write(path: Path, records):
    path.write_text(emit_rttm(records))
    return path


def test_score_identity_hand_case_and_weighting(tmp_path, capsys):
    ref = _write(tmp_path / "ref.rttm", [RttmRecord("m1", 0, 10, "spk1"), RttmRecord("m1", 10, 10, "spk2"),
                                         RttmRecord("m2", 0, 20, "a")])
    assert run_cli("score", "--ref", ref, "--hyp", ref, "--out", tmp_path / "id") == 0
    rows = capsys.readouterr().out.splitlines()
    assert rows[-1].split()[1:5] == ["0.00"] * 4
    hyp = _write(tmp_path / "hyp.rttm", [RttmRecord("m1", 0, 12, "A"), RttmRecord("m1", 12, 8, "B"),
                                         RttmRecord("m2", 0, 20, "x")])
    assert run_cli("score", "--ref", ref, "--hyp", hyp, "--out", tmp_path / "s") == 0
    table = json.loads((tmp_path / "s" / "score.json").read_text())
    assert table["m1"]["SER"] == pytest.approx(10.0)
    assert table["ALL"]["SER"] == pytest.approx(5.0)


def test_score_aggregate_of_equal_meetings(tmp_path):
    ref = _write(tmp_path / "r.rttm", [RttmRecord("a", 0, 10, "s"), RttmRecord("b", 0, 10, "s")])
    hyp = _write(tmp_path / "h.rttm", [RttmRecord("a", 0, 9, "s"), RttmRecord("b", 0, 8, "s")])
    assert run_cli("score", "--ref", ref, "--hyp", hyp, "--out", tmp_path / "s") == 0
    rows = json.loads((tmp_path / "s" / "score.json").read_text())
    assert (rows["a"]["DER"], rows["b"]["DER"], rows["ALL"]["DER"]) == pytest.approx((10.0, 20.0, 15.0))


def test_score_unmatched_meeting_rejected(tmp_path, capsys):
    ref = _write(tmp_path / "r.rttm", [RttmRecord("a", 0, 10, "s")])
    hyp = _write(tmp_path / "h.rttm", [RttmRecord("zz", 0, 10, "s")])
    assert run_cli("score", "--ref", ref, "--hyp", hyp) == 1
    assert "zz" in capsys.readouterr().err


# -- experiment -------------------------------------------------------------------------------

def test_experiment_full_row_set_and_injection_identity(tmp_path):
    cfg = parse_config(TINY_INI.replace("systems = baseline,case-pc", "systems = " + ",".join(SYSTEMS)))
    report = run_experiment(cfg, tmp_path)
    ser = report["summary"]["ser"]
    assert list(ser) == list(SYSTEMS) and len(ser) == 8
    md = (tmp_path / "report.md").read_text()
    for regime in ("reference", "manual-hypothesis", "automatic-hypothesis"):
        assert f"## {regime}" in md
    for label, *_ in SYSTEMS.values():
        assert md.count(f"| {label} |") >= 3
    for name in ("case-p", "case-c", "case-pc", "case-w", "case-wpc"):
        assert ser[name]["manual-hypothesis@0"] == ser[name]["reference"]
    assert report["summary"]["automatic_reference_reads"] == 0
    assert report["summary"]["pass_msfa_gap"] < 1e-9


def test_experiment_command_bitwise_repeatable(tmp_path):
    ini = tmp_path / "tiny.ini"
    ini.write_text(TINY_INI)
    files = []
    for run in ("a", "b"):
        assert run_cli("experiment", "--config", ini, "--out", tmp_path / run) == 0
        root = tmp_path / run / "experiment"
        files.append({str(f.relative_to(root)): f.read_bytes() for f in sorted(root.rglob("*")) if f.is_file()})
    assert files[0] == files[1]
    assert any(k.endswith(".rttm") for k in files[0]) and "report.json" in files[0]
