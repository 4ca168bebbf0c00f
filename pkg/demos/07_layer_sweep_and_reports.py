"""Predicted-layer-set sweep plus the report figures.

Distills one student per layer set of a 12-layer teacher (teacher features
are cached across runs), probes each, and emits the comparison table.
Then renders the size-vs-accuracy scatter from probe run directories.
Takes a few minutes.
"""

import csv
from pathlib import Path

from dkd import models as M
from dkd.checkpoint import checkpoint_from_encoder
from dkd.corpus import generate_corpus
from dkd.probe import ProbeTask, train_probe
from dkd.report import SWEEP_LAYER_SETS, emit_report, run_layer_sweep, write_probe_csv
from dkd.training import TrainConfig

out = Path("runs/demo_sweep")
corpus = generate_corpus(seed=7, n_speakers=4, n_contents=4, n_intents=2,
                         utterances_per_cell=2, duration_s=0.5)
teacher = checkpoint_from_encoder(
    M.build(M.desk_teacher_config(num_layers=12), seed=0).freeze())
student = M.EncoderConfig(conv_layers=M.desk_teacher_config().conv_layers, post_conv_dim=64,
                          num_transformer_layers=2, attention_heads=4, ffn_dim=512,
                          pos_conv=(16, 4), head_spec=(4, 8, 12))

table = run_layer_sweep(teacher, student, corpus, out,
                        TrainConfig(total_updates=100, batch_size=8, seed=11, eval_every=100),
                        layer_sets=SWEEP_LAYER_SETS, probe_steps=200)
print("sweep comparison table:")
for row in csv.reader(open(table)):
    print("  " + " | ".join(f"{c:>12s}" for c in row))

# size-vs-accuracy scatter over two differently sized upstreams
for name, ck in [("teacher-12L", teacher),
                 ("student-2L", checkpoint_from_encoder(
                     M.build(student.without_heads(), seed=5).freeze()))]:
    sub = out / "size_panel" / name
    sub.mkdir(parents=True, exist_ok=True)
    task = ProbeTask(kind="speaker", arity=corpus.label_arity("speaker"))
    res = train_probe(ck, task, corpus, steps=200, seed=3)
    write_probe_csv(sub / "probe.csv", [res])
    (sub / "profile_entry.csv").write_text(
        f"model,params_millions\n{name},{ck.param_count() / 1e6!r}\n")
    print(f"{name}: {ck.param_count() / 1e6:.2f}M params, speaker acc {res.accuracy:.3f}")
emit_report(out / "size_panel", out, figures=["size-vs-accuracy"])
print(f"wrote {table} and {out}/size_vs_accuracy.svg")
