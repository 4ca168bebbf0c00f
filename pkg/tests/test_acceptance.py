"""Acceptance suite: one test per numbered criterion, at stated tolerances.

Heavy artifacts (the 1024-utterance corpus and the full 2000-step desk
distillation) are session fixtures shared by several criteria.  Each test
prints one CRITERION line; run with ``-rA`` to see them all in the summary.
"""

import csv
import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from dkd import models as M, tensor as tz
from dkd.checkpoint import checkpoint_from_encoder, encoder_from_checkpoint, load, save
from dkd.cli import main as cli_main
from dkd.corpus import generate_corpus
from dkd.distill import (DistillSpec, SUM_OVER_TIME, distill_loss, init_student_from_teacher,
                         strip_heads)
from dkd.errors import FormatError, IntegrityError
from dkd.gradcheck import grad_check, run_primitive_checks
from dkd.probe import ProbeTask, train_probe
from dkd.profiling import format_table, profile
from dkd.report import run_layer_sweep
from dkd.tensor import Tensor
from dkd.training import TrainConfig, lr_at, run_distillation

GOLDEN = Path(__file__).parent / "data" / "golden.dkd"

# pre-declared seeds for every stochastic ingredient of the suite
CORPUS_SEED = 42
TEACHER_SEED = 0
TRAIN_SEED = 11
RANDOM_BASELINE_SEED = 777
PROBE_SEED = 3


def _report(n: int, ok: bool, detail: str):
    print(f"CRITERION {n:2d} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"criterion {n}: {detail}"


@pytest.fixture(scope="session")
def desk_corpus():
    return generate_corpus(seed=CORPUS_SEED, n_speakers=8, n_contents=8, n_intents=4,
                           utterances_per_cell=4, duration_s=1.0)


@pytest.fixture(scope="session")
def desk_run(desk_corpus):
    """Criterion-5 configuration: frozen-random 6-layer teacher, 2000 steps."""
    teacher = M.build(M.desk_teacher_config(num_layers=6), seed=TEACHER_SEED).freeze()
    teacher_ckpt = checkpoint_from_encoder(teacher)
    spec = DistillSpec(predicted_layers=(2, 4, 6), lam=1.0)
    cfg = TrainConfig(total_updates=2000, batch_size=8, peak_lr=2e-4, warmup_fraction=0.07,
                      seed=TRAIN_SEED, eval_every=500)
    student_ckpt, log = run_distillation(teacher_ckpt, M.desk_student_config((2, 4, 6)),
                                         spec, cfg, desk_corpus)
    return teacher_ckpt, student_ckpt, log


def test_criterion_01_parameter_arithmetic():
    cases = [
        ("teacher", M.hubert_base_config(), 94.68e6),
        ("student", M.distilled_base_config(None), 23.49e6),
        ("student+3heads", M.distilled_base_config((4, 8, 12)), 27.03e6),
        ("student+1head", M.distilled_base_config((12,)), 24.67e6),
    ]
    errs = {name: abs(M.count_params(cfg) - ref) / ref for name, cfg, ref in cases}
    delta = (M.count_params(M.distilled_base_config((12,)))
             - M.count_params(M.distilled_base_config(None)))
    ok = all(e <= 0.02 for e in errs.values()) and delta == 1_181_184
    _report(1, ok, f"count_params rel errs {({k: round(v, 4) for k, v in errs.items()})}, "
                   f"per-head delta {delta}")


def test_criterion_02_loss_unit_values():
    spec = DistillSpec(predicted_layers=(1,), lam=1.0, loss_reduction=SUM_OVER_TIME)
    h = Tensor([[0.4, -1.2, 2.0]])
    same = distill_loss({1: h}, {1: h}, spec).total.item()
    a, b = Tensor([[1.0, 0.0]]), Tensor([[0.0, 1.0]])
    orth = distill_loss({1: a}, {1: b}, spec).total.item()
    lam0 = distill_loss({1: a}, {1: b},
                        DistillSpec(predicted_layers=(1,), lam=0.0,
                                    loss_reduction=SUM_OVER_TIME)).total.item()
    rng = np.random.default_rng(0)
    x = rng.normal(size=(6, 5)).astype(np.float32)
    y = rng.normal(size=(6, 5)).astype(np.float32)
    pure = distill_loss({1: Tensor(x)}, {1: Tensor(y)},
                        DistillSpec(predicted_layers=(1,), lam=0.0)).total.item()
    manual = float(np.abs(x - y).sum(axis=1).mean() / 5)
    ok = (abs(same - 0.313262) <= 1e-6 and abs(orth - 1.693147) <= 1e-6
          and abs(lam0 - 1.0) <= 1e-6 and abs(pure - manual) <= 1e-6)
    _report(2, ok, f"identical {same:.7f} (ref 0.313262), orthogonal {orth:.7f} "
                   f"(ref 1.693147), lambda=0 pure-l1 {lam0:.7f} / {pure:.7f}")


def test_criterion_03_gradient_fidelity():
    results = run_primitive_checks(seed=PROBE_SEED)
    with tz.use_dtype("float64"):
        rng = np.random.default_rng(1)
        worst_loss = 0.0
        for shape in [(4, 8), (2, 5), (7, 3)]:
            teach = Tensor(rng.normal(size=shape))
            spec = DistillSpec(predicted_layers=(1,), lam=1.0)

            def f(x, teach=teach, spec=spec):
                return distill_loss({1: x}, {1: teach}, spec).total

            worst_loss = max(worst_loss, grad_check(f, rng.normal(size=shape), 1e-5).max_rel_err)
    worst_prim = max(r.max_rel_err for r in results.values())
    ok = all(r.ok(1e-5) for r in results.values()) and worst_loss <= 1e-5
    _report(3, ok, f"{len(results)} primitives worst {worst_prim:.2e}, "
                   f"full loss worst {worst_loss:.2e} (tol 1e-5)")


def test_criterion_04_lr_schedule():
    cfg = TrainConfig(total_updates=200_000, batch_size=24, peak_lr=2e-4, warmup_fraction=0.07)
    points = {0: 0.0, 14_000: 2e-4, 107_000: 1e-4, 200_000: 0.0}
    errs = {s: abs(lr_at(s, cfg) - v) for s, v in points.items()}
    ok = all(e <= 1e-12 for e in errs.values())
    _report(4, ok, f"lr errors {({k: f'{v:.1e}' for k, v in errs.items()})} (tol 1e-12)")


def test_criterion_05_desk_distillation(desk_run):
    _teacher, _student, log = desk_run
    first, last = log.records[0].loss_total, log.records[-1].loss_total
    ev_first = log.evals[0].head_cosine
    ev_last = log.evals[-1].head_cosine
    increased = all(ev_last[l] > ev_first[l] for l in ev_first)
    ok = (last <= 0.5 * first) and increased
    _report(5, ok, f"loss {first:.4f} -> {last:.4f} (ratio {last / first:.3f} <= 0.5); "
                   f"held-out head cosine {({k: round(v, 3) for k, v in ev_first.items()})} -> "
                   f"{({k: round(v, 3) for k, v in ev_last.items()})}")


def test_criterion_06_representation_direction(desk_corpus, desk_run):
    # Faithful to the stated criterion: the criterion-5 student (teacher is
    # frozen-random) against a same-config random-init student, identical
    # probe budget.  The control clause passes; the >= 5.0-point clause does
    # not hold for a knowledge-free random teacher: see the decisions ledger
    # for the measured analysis (random-init upstreams retain more raw
    # speaker detail than a student regressed onto random targets).
    _teacher, student_ckpt, _log = desk_run
    stripped = strip_heads(student_ckpt)
    random_student = checkpoint_from_encoder(
        M.build(stripped.encoder_config, seed=RANDOM_BASELINE_SEED).freeze())
    task = ProbeTask(kind="speaker", arity=8)
    dist = train_probe(stripped, task, desk_corpus, steps=1000, seed=PROBE_SEED)
    rand = train_probe(random_student, task, desk_corpus, steps=1000, seed=PROBE_SEED)
    ctrl = train_probe(stripped, task, desk_corpus, steps=1000, seed=PROBE_SEED,
                       shuffled_labels=True)
    gap = (dist.accuracy - rand.accuracy) * 100
    control_ok = abs(ctrl.accuracy - 1.0 / 8) * 100 <= 5.0
    ok = gap >= 5.0 and control_ok
    _report(6, ok, f"distilled {dist.accuracy:.3f} vs random-init {rand.accuracy:.3f} "
                   f"(gap {gap:+.1f} points, need >= +5.0); "
                   f"shuffled-label control {ctrl.accuracy:.3f} vs chance 0.125 "
                   f"({'ok' if control_ok else 'out of band'})")


def test_criterion_07_head_stripping(desk_corpus, desk_run):
    _teacher, student_ckpt, _log = desk_run
    stripped = strip_heads(student_ckpt)
    wave = desk_corpus.wave(0)
    before = [fm.frames.data for fm in
              M.forward_all_layers(encoder_from_checkpoint(student_ckpt), wave)[0]]
    after = [fm.frames.data for fm in
             M.forward_all_layers(encoder_from_checkpoint(stripped), wave)[0]]
    bitwise = all(np.array_equal(x, y) for x, y in zip(before, after))
    drop = student_ckpt.param_count() - stripped.param_count()
    expected = 3 * 2 * (64 * 64 + 64)
    with pytest.warns(UserWarning):
        second = strip_heads(stripped)
    idempotent = (second.param_count() == stripped.param_count()
                  and all(np.array_equal(second.tensors[k], stripped.tensors[k])
                          for k in stripped.tensors))
    ok = bitwise and drop == expected and idempotent
    _report(7, ok, f"backbone bitwise {bitwise}, param drop {drop} == {expected}, "
                   f"second call no-op {idempotent}")


def test_criterion_08_ablation_toggles(desk_run, tmp_path):
    teacher_ckpt, _student, _log = desk_run
    teacher = encoder_from_checkpoint(teacher_ckpt, frozen=True)
    student = init_student_from_teacher(teacher, M.desk_student_config((2, 4, 6)),
                                        seed=TRAIN_SEED)
    copies = all(
        np.array_equal(student.parameters[f"layer.{i}.{leaf}"].data,
                       teacher.parameters[f"layer.{i}.{leaf}"].data)
        for i in (0, 1)
        for leaf in ("attn.q.weight", "attn.k.weight", "attn.v.weight", "attn.out.weight",
                     "attn_ln.gamma", "ffn.fc1.weight", "ffn.fc2.weight", "ffn_ln.gamma"))

    # --no-cos through the CLI: every logged cosine term exactly zero
    corpus_dir = tmp_path / "corpus"
    generate_corpus(seed=5, n_speakers=2, n_contents=2, n_intents=2, utterances_per_cell=2,
                    duration_s=0.5, out_dir=corpus_dir)
    tdir = tmp_path / "teach"
    save(teacher_ckpt, tdir / "teacher.dkd")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"teacher_ckpt": str(tdir / "teacher.dkd"),
                               "corpus": str(corpus_dir),
                               "train": {"total_updates": 5, "batch_size": 4}}))
    out = tmp_path / "nocos"
    code = cli_main(["distill", "--seed", "3", "--config", str(cfg), "--out", str(out),
                     "--layers", "2,4,6", "--no-cos"])
    rows = list(csv.reader(open(out / "train_log.csv")))
    cos_cols = [i for i, c in enumerate(rows[0]) if c.startswith("loss_cos_")]
    zeroed = all(float(r[i]) == 0.0 for r in rows[1:] for i in cos_cols)
    ok = copies and code == 0 and zeroed
    _report(8, ok, f"teacher-init layers 1-2 bitwise {copies}; "
                   f"--no-cos logged cosine all zero {zeroed} ({len(rows) - 1} records)")


def _run_pipeline(root: Path, tag: str) -> dict:
    out = root / tag
    corpus_cfg = root / "corpus_cfg.json"
    corpus_cfg.write_text(json.dumps({"n_speakers": 4, "n_contents": 4, "n_intents": 2,
                                      "utterances_per_cell": 2, "duration_s": 0.5}))
    assert cli_main(["gen-corpus", "--seed", "21", "--config", str(corpus_cfg),
                     "--out", str(out / "corpus")]) == 0
    distill_cfg = root / f"distill_cfg_{tag}.json"
    distill_cfg.write_text(json.dumps({
        "corpus": str(out / "corpus"),
        "teacher": M.desk_teacher_config(num_layers=6).to_dict(),
        "teacher_seed": TEACHER_SEED,
        "train": {"total_updates": 120, "batch_size": 8, "eval_every": 60},
    }))
    assert cli_main(["distill", "--seed", str(TRAIN_SEED), "--config", str(distill_cfg),
                     "--out", str(out / "distill"), "--layers", "2,4,6",
                     "--lambda", "1.0"]) == 0
    assert cli_main(["strip-heads", "--in", str(out / "distill" / "student.dkd"),
                     "--out", str(out / "strip")]) == 0
    probe_cfg = root / f"probe_cfg_{tag}.json"
    probe_cfg.write_text(json.dumps({"corpus": str(out / "corpus"), "task": "speaker",
                                     "steps": 200}))
    assert cli_main(["probe", "--in", str(out / "strip" / "student_stripped.dkd"),
                     "--config", str(probe_cfg), "--out", str(out / "probe"),
                     "--seed", str(PROBE_SEED)]) == 0
    return {
        "manifest": (out / "corpus" / "manifest.jsonl").read_bytes(),
        "audio": (out / "corpus" / "audio.f32").read_bytes(),
        "teacher": (out / "distill" / "teacher.dkd").read_bytes(),
        "student": (out / "distill" / "student.dkd").read_bytes(),
        "stripped": (out / "strip" / "student_stripped.dkd").read_bytes(),
        "train_log": (out / "distill" / "train_log.csv").read_text(),
        "train_eval": (out / "distill" / "train_eval.csv").read_bytes(),
        "probe": (out / "probe" / "probe.csv").read_bytes(),
    }


def _drop_wall(csv_text: str) -> bytes:
    rows = [r.split(",")[:-1] for r in csv_text.splitlines()]
    assert rows[0][-1] == "loss_cos_6" and "wall_ms" not in rows[0]
    return "\n".join(",".join(r) for r in rows).encode()


def test_criterion_09_end_to_end_determinism(tmp_path):
    a = _run_pipeline(tmp_path, "a")
    b = _run_pipeline(tmp_path, "b")
    same = {k: a[k] == b[k] for k in a if k not in ("train_log",)}
    # wall_ms is wall-clock and excluded from the comparison (see ledger)
    same["train_log_minus_wall"] = _drop_wall(a["train_log"]) == _drop_wall(b["train_log"])
    ok = all(same.values())
    _report(9, ok, f"bitwise-identical outputs: {same}")


def test_criterion_10_profiler_protocol(desk_corpus):
    flop_ratio = (M.count_flops(M.desk_teacher_config(), 16000)
                  / M.count_flops(M.desk_student_config(None), 16000))
    teacher = checkpoint_from_encoder(M.build(M.desk_teacher_config(), seed=TEACHER_SEED).freeze())
    student = checkpoint_from_encoder(M.build(M.desk_student_config(None), seed=1).freeze())
    sub = generate_corpus(seed=CORPUS_SEED, n_speakers=4, n_contents=2, n_intents=2,
                          utterances_per_cell=2, duration_s=1.0)
    reports = profile([("teacher", teacher), ("student", student)], sub, runs=3, batch=1)
    table = format_table(reports)
    header_ok = table.splitlines()[0].split("  ")[0].strip() == "Model" and \
        "# param. Millions" in table and "Inf. time seconds" in table
    speedup = reports[1].speedup
    runs_ok = all(len(r.run_seconds) == 3 for r in reports)
    ok = flop_ratio > 1.5 and speedup > 1.0 and header_ok and runs_ok
    _report(10, ok, f"analytic FLOP ratio {flop_ratio:.2f} (> 1.5), measured speedup "
                    f"{speedup:.2f}x over 3 runs at batch 1, size/time table columns {header_ok}")


def test_criterion_11_layer_sweep(tmp_path):
    corpus = generate_corpus(seed=7, n_speakers=4, n_contents=4, n_intents=2,
                             utterances_per_cell=2, duration_s=0.5)
    teacher = checkpoint_from_encoder(
        M.build(M.desk_teacher_config(num_layers=12), seed=TEACHER_SEED).freeze())
    base = M.EncoderConfig(conv_layers=M.desk_teacher_config().conv_layers, post_conv_dim=64,
                           num_transformer_layers=2, attention_heads=4, ffn_dim=512,
                           pos_conv=(16, 4), head_spec=(4, 8, 12))
    cfg = TrainConfig(total_updates=150, batch_size=8, seed=TRAIN_SEED, eval_every=150)
    table = run_layer_sweep(teacher, base, corpus, tmp_path / "sweep", cfg,
                            probe_steps=250)
    rows = list(csv.reader(open(table)))
    layer_col = [r[0] for r in rows[1:]]
    expect = ["4", "8", "12", "4, 8", "4, 12", "8, 12", "4, 8, 12"]
    accs_ok = all(0.0 <= float(x) <= 1.0 for r in rows[1:] for x in r[2:])
    ok = sorted(layer_col) == sorted(expect) and len(rows) == 8 and accs_ok
    _report(11, ok, f"seven layer sets completed; table rows {layer_col}; "
                    f"per-set probe accuracies reported: {accs_ok}")


def test_probe_example_teacher_dominance(desk_corpus, desk_run):
    # module-level example, not a numbered criterion: the teacher upstream
    # stays within 10 points of the distilled student on every task
    teacher_ckpt, student_ckpt, _log = desk_run
    stripped = strip_heads(student_ckpt)
    from dkd.probe import extract_features
    pooled_t = extract_features(encoder_from_checkpoint(teacher_ckpt), desk_corpus)[0]
    pooled_s = extract_features(encoder_from_checkpoint(stripped), desk_corpus)[0]
    for kind in ("speaker", "content", "intent"):
        task = ProbeTask(kind=kind, arity=desk_corpus.label_arity(kind))
        t_acc = train_probe(teacher_ckpt, task, desk_corpus, steps=1000, seed=PROBE_SEED,
                            pooled=pooled_t).accuracy
        s_acc = train_probe(stripped, task, desk_corpus, steps=1000, seed=PROBE_SEED,
                            pooled=pooled_s).accuracy
        print(f"teacher-dominance example [{kind}]: teacher {t_acc:.3f} vs distilled {s_acc:.3f}")
        assert t_acc >= s_acc - 0.10


def test_criterion_12_serialization(tmp_path):
    ck = load(GOLDEN)
    resaved = save(ck, tmp_path / "golden_resave.dkd").read_bytes()
    roundtrip = resaved == GOLDEN.read_bytes()
    raw = bytearray(GOLDEN.read_bytes())
    raw[:4] = b"XXXX"
    (tmp_path / "badmagic.dkd").write_bytes(bytes(raw))
    try:
        load(tmp_path / "badmagic.dkd")
        magic_ok = False
    except FormatError:
        magic_ok = True
    (tmp_path / "trunc.dkd").write_bytes(GOLDEN.read_bytes()[:-8])
    try:
        load(tmp_path / "trunc.dkd")
        trunc_ok = False
    except IntegrityError as e:
        trunc_ok = "tensor" in str(e)
    ok = roundtrip and magic_ok and trunc_ok
    _report(12, ok, f"golden re-save bytewise {roundtrip}, bad magic -> FormatError "
                    f"{magic_ok}, truncation -> IntegrityError naming tensor {trunc_ok}")
