"""Size and speed accounting in the reference table layout.

Full-corpus feature extraction at batch size one, averaged over three
runs, with parameter and analytic MAC ratios against the teacher.
"""

from dkd import models as M
from dkd.checkpoint import checkpoint_from_encoder
from dkd.corpus import generate_corpus
from dkd.profiling import format_table, profile

corpus = generate_corpus(seed=3, n_speakers=4, n_contents=2, n_intents=2,
                         utterances_per_cell=2, duration_s=1.0)
models = [
    ("teacher-6L", checkpoint_from_encoder(M.build(M.desk_teacher_config(), seed=0).freeze())),
    ("student-2L", checkpoint_from_encoder(M.build(M.desk_student_config(None), seed=1).freeze())),
]
reports = profile(models, corpus, runs=3, batch=1)
print(format_table(reports))
for r in reports:
    times = ", ".join(f"{t:.2f}s" for t in r.run_seconds)
    print(f"{r.name}: per-run [{times}]  flop ratio {r.flop_ratio:.2f}  threads {r.threads}")
