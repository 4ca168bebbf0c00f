"""Frozen-upstream probing and the layer-weight analysis.

Trains softmax summary weights + an affine classifier on each synthetic
factor, then reports each representation's normalized importance
(summary weight x mean l2 norm).  Takes a few minutes.
"""

from pathlib import Path

from dkd import models as M
from dkd.checkpoint import checkpoint_from_encoder
from dkd.corpus import generate_corpus
from dkd.distill import DistillSpec
from dkd.probe import ProbeTask, analyze_layer_weights, train_probe
from dkd.report import emit_report, write_layer_weights_csv
from dkd.training import TrainConfig, run_distillation

out = Path("runs/demo_probe")
corpus = generate_corpus(seed=42, n_speakers=4, n_contents=4, n_intents=2,
                         utterances_per_cell=4, duration_s=0.5)

# distill a student that predicts every teacher layer and keeps its heads,
# the protocol used for the layer-weight analysis
teacher = checkpoint_from_encoder(M.build(M.desk_teacher_config(num_layers=6), seed=0).freeze())
layers = tuple(range(1, 7))
student_cfg = M.desk_student_config(layers)
ckpt, _log = run_distillation(teacher, student_cfg, DistillSpec(predicted_layers=layers),
                              TrainConfig(total_updates=200, batch_size=8, seed=11,
                                          eval_every=200), corpus)

# plain probes on two factors
for kind in ("speaker", "intent"):
    task = ProbeTask(kind=kind, arity=corpus.label_arity(kind))
    res = train_probe(ckpt, task, corpus, steps=500, seed=3)
    print(f"{kind:8s} probe accuracy {res.accuracy:.3f} "
          f"(chance {1 / task.arity:.3f}, test n={res.n_test})")

# per-representation importance, one row per (task, representation)
tasks = [ProbeTask(kind=k, arity=corpus.label_arity(k)) for k in ("speaker", "content")]
imps = analyze_layer_weights(ckpt, tasks, corpus, steps=500, seed=3)
for li in imps:
    top = sorted(zip(li.labels, li.importance), key=lambda t: -t[1])[:3]
    row = ", ".join(f"{n}={v:.3f}" for n, v in top)
    print(f"{li.task.kind:8s} top representations: {row}")
write_layer_weights_csv(out / "layer_weights.csv", imps)
emit_report(out, out, figures=["layer-weights"])
print(f"wrote {out}/layer_weights.csv and layer_weights.svg")
