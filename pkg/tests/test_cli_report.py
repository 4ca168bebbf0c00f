import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from dkd import models as M
from dkd.checkpoint import checkpoint_from_encoder, load, save
from dkd.cli import main
from dkd.corpus import generate_corpus, write_corpus
from dkd.errors import DataError
from dkd.report import emit_report
from dkd.svg import heatmap, line_chart, scatter_chart


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    corpus = generate_corpus(seed=4, n_speakers=2, n_contents=2, n_intents=2,
                             utterances_per_cell=2, duration_s=0.5,
                             out_dir=root / "corpus")
    teacher = M.build(M.desk_teacher_config(num_layers=3), seed=0).freeze()
    save(checkpoint_from_encoder(teacher), root / "teacher.dkd")
    cfg = {
        "teacher_ckpt": str(root / "teacher.dkd"),
        "corpus": str(root / "corpus"),
        "train": {"total_updates": 4, "batch_size": 4, "eval_every": 2},
    }
    (root / "distill.json").write_text(json.dumps(cfg))
    return root


def test_gen_corpus_writes_store(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n_speakers": 2, "n_contents": 1, "n_intents": 1,
                               "utterances_per_cell": 1, "duration_s": 0.5}))
    assert run_cli("gen-corpus", "--seed", "5", "--config", str(cfg),
                   "--out", str(tmp_path / "corpus")) == 0
    assert (tmp_path / "corpus" / "manifest.jsonl").exists()
    assert (tmp_path / "corpus" / "audio.f32").exists()


def test_gen_corpus_deterministic(tmp_path):
    for sub in ("a", "b"):
        assert run_cli("gen-corpus", "--seed", "5", "--out", str(tmp_path / sub)) == 0
    assert (tmp_path / "a" / "audio.f32").read_bytes() == (tmp_path / "b" / "audio.f32").read_bytes()
    assert (tmp_path / "a" / "manifest.jsonl").read_bytes() == \
           (tmp_path / "b" / "manifest.jsonl").read_bytes()


def test_distill_cli_writes_outputs(workdir, tmp_path):
    out = tmp_path / "run"
    code = run_cli("distill", "--seed", "3", "--config", str(workdir / "distill.json"),
                   "--out", str(out), "--layers", "1,3", "--lambda", "1.0")
    assert code == 0
    assert (out / "student.dkd").exists()
    assert (out / "train_log.csv").exists()
    ck = load(out / "student.dkd")
    assert ck.distill_spec.predicted_layers == (1, 3)


def test_distill_cli_rejects_layer_zero(workdir, tmp_path, capsys):
    code = run_cli("distill", "--seed", "3", "--config", str(workdir / "distill.json"),
                   "--out", str(tmp_path / "x"), "--layers", "0")
    assert code == 1
    assert "error" in capsys.readouterr().err.lower()


def test_unknown_flag_exits_1():
    proc = subprocess.run([sys.executable, "-m", "dkd.cli", "distill", "--bogus-flag"],
                          capture_output=True, text=True)
    assert proc.returncode == 1
    assert "usage" in proc.stderr.lower()


def test_no_cos_flag_zeroes_cosine(workdir, tmp_path):
    out = tmp_path / "nocos"
    code = run_cli("distill", "--seed", "3", "--config", str(workdir / "distill.json"),
                   "--out", str(out), "--layers", "1,3", "--no-cos")
    assert code == 0
    lines = (out / "train_log.csv").read_text().splitlines()
    header = lines[0].split(",")
    cos_cols = [i for i, c in enumerate(header) if c.startswith("loss_cos_")]
    for ln in lines[1:]:
        cells = ln.split(",")
        assert all(float(cells[i]) == 0.0 for i in cos_cols)


def test_strip_heads_cli(workdir, tmp_path):
    out = tmp_path / "run"
    run_cli("distill", "--seed", "3", "--config", str(workdir / "distill.json"),
            "--out", str(out), "--layers", "1,3")
    code = run_cli("strip-heads", "--in", str(out / "student.dkd"), "--out", str(tmp_path / "s"))
    assert code == 0
    stripped = load(tmp_path / "s" / "student_stripped.dkd")
    assert stripped.encoder_config.head_spec is None


def test_probe_cli(workdir, tmp_path):
    out = tmp_path / "run"
    run_cli("distill", "--seed", "3", "--config", str(workdir / "distill.json"),
            "--out", str(out), "--layers", "1,3")
    cfg = tmp_path / "probe.json"
    cfg.write_text(json.dumps({"corpus": str(workdir / "corpus"), "task": "speaker",
                               "steps": 5}))
    code = run_cli("probe", "--in", str(out / "student.dkd"), "--config", str(cfg),
                   "--out", str(tmp_path / "probe"))
    assert code == 0
    lines = (tmp_path / "probe" / "probe.csv").read_text().splitlines()
    assert lines[0] == "task,accuracy,steps,seed"
    assert lines[1].startswith("speaker,")
    entry = (tmp_path / "probe" / "profile_entry.csv").read_text().splitlines()
    assert entry[0] == "model,params_millions"


def test_size_vs_accuracy_from_probe_runs(workdir, tmp_path):
    out = tmp_path / "run"
    run_cli("distill", "--seed", "3", "--config", str(workdir / "distill.json"),
            "--out", str(out), "--layers", "1,3")
    cfg = tmp_path / "probe.json"
    cfg.write_text(json.dumps({"corpus": str(workdir / "corpus"), "task": "speaker",
                               "steps": 5}))
    panel = tmp_path / "panel"
    run_cli("probe", "--in", str(out / "student.dkd"), "--config", str(cfg),
            "--out", str(panel / "student"))
    run_cli("probe", "--in", str(workdir / "teacher.dkd"), "--config", str(cfg),
            "--out", str(panel / "teacher"))
    code = run_cli("report", "--in", str(panel), "--fig", "size-vs-accuracy",
                   "--out", str(tmp_path / "figs"))
    assert code == 0
    svg = (tmp_path / "figs" / "size_vs_accuracy.svg").read_text()
    assert "circle" in svg and "student" in svg and "teacher" in svg


def test_analyze_layers_cli(workdir, tmp_path):
    out = tmp_path / "run"
    run_cli("distill", "--seed", "3", "--config", str(workdir / "distill.json"),
            "--out", str(out), "--layers", "1,3")
    cfg = tmp_path / "an.json"
    cfg.write_text(json.dumps({"corpus": str(workdir / "corpus"), "steps": 5,
                               "tasks": ["speaker"]}))
    code = run_cli("analyze-layers", "--in", str(out / "student.dkd"), "--config", str(cfg),
                   "--out", str(tmp_path / "an"))
    assert code == 0
    lines = (tmp_path / "an" / "layer_weights.csv").read_text().splitlines()
    assert lines[0] == "task,representation,importance"
    assert (tmp_path / "an" / "layer_weights.svg").exists()


def test_analyze_layers_headless_exits_2(workdir, tmp_path):
    cfg = tmp_path / "an.json"
    cfg.write_text(json.dumps({"corpus": str(workdir / "corpus"), "steps": 5}))
    code = run_cli("analyze-layers", "--in", str(workdir / "teacher.dkd"),
                   "--config", str(cfg), "--out", str(tmp_path / "an2"))
    assert code == 2


def test_profile_cli(workdir, tmp_path):
    cfg = tmp_path / "prof.json"
    cfg.write_text(json.dumps({"corpus": str(workdir / "corpus"), "runs": 1,
                               "models": [{"name": "teacher",
                                           "ckpt": str(workdir / "teacher.dkd")}]}))
    code = run_cli("profile", "--config", str(cfg), "--out", str(tmp_path / "prof"))
    assert code == 0
    assert (tmp_path / "prof" / "profile.csv").exists()
    assert "Inf. time seconds" in (tmp_path / "prof" / "profile_table.txt").read_text()


def test_grad_check_cli(tmp_path):
    code = run_cli("grad-check", "--seed", "1", "--out", str(tmp_path / "gc"))
    assert code == 0
    lines = (tmp_path / "gc" / "gradcheck.csv").read_text().splitlines()
    assert lines[0] == "op,max_rel_err,mean_rel_err,ok"
    assert all(ln.endswith(",1") for ln in lines[1:])


def test_report_missing_inputs_listed(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    code = run_cli("report", "--in", str(tmp_path / "empty"), "--fig", "loss",
                   "--out", str(tmp_path / "figs"))
    assert code == 2
    assert "train_log.csv" in capsys.readouterr().err


def test_report_loss_figure(workdir, tmp_path):
    out = tmp_path / "run"
    run_cli("distill", "--seed", "3", "--config", str(workdir / "distill.json"),
            "--out", str(out), "--layers", "1,3")
    code = run_cli("report", "--in", str(out), "--fig", "loss", "--out", str(tmp_path / "figs"))
    assert code == 0
    svg = (tmp_path / "figs" / "loss_curves.svg").read_text()
    assert svg.startswith("<svg") and "polyline" in svg


def test_report_deterministic_bytes(workdir, tmp_path):
    out = tmp_path / "run"
    run_cli("distill", "--seed", "3", "--config", str(workdir / "distill.json"),
            "--out", str(out), "--layers", "1,3")
    a = tmp_path / "f1"
    b = tmp_path / "f2"
    emit_report(out, a, figures=["loss"])
    emit_report(out, b, figures=["loss"])
    assert (a / "loss_curves.svg").read_bytes() == (b / "loss_curves.svg").read_bytes()


def test_svg_builders_deterministic():
    pts = [("m1", 1.0, 0.5), ("m2", 2.0, 0.8)]
    assert scatter_chart(pts, "t", "x", "y") == scatter_chart(pts, "t", "x", "y")
    series = [("a", [0, 1, 2], [1.0, 0.5, 0.25])]
    assert line_chart(series, "t", "x", "y") == line_chart(series, "t", "x", "y")
    m = [[0.1, 0.9], [0.5, 0.5]]
    out = heatmap(m, ["r1", "r2"], ["c1", "c2"], "t")
    assert out == heatmap(m, ["r1", "r2"], ["c1", "c2"], "t")
    assert "0.900" in out
