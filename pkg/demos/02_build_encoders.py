"""Encoders: configs, deterministic builds, per-layer outputs, accounting.

The full-scale recipes reproduce the reference parameter arithmetic; the
desk recipes are the laptop-sized versions used everywhere else.
"""

import numpy as np

from dkd import models as M

# the reference size classes fall out of the analytic count
for name, cfg in [("teacher (12L)", M.hubert_base_config()),
                  ("student (2L, no heads)", M.distilled_base_config(None)),
                  ("student + 3 heads", M.distilled_base_config((4, 8, 12))),
                  ("student + 1 head", M.distilled_base_config((12,)))]:
    print(f"{name:26s} {M.count_params(cfg) / 1e6:7.2f}M")
print("per-head delta:", M.count_params(M.distilled_base_config((12,)))
      - M.count_params(M.distilled_base_config(None)), "scalars")

# a desk-scale student exposing every layer plus its prediction heads
cfg = M.desk_student_config((2, 4, 6))
enc = M.build(cfg, seed=1)
wave = np.sin(np.arange(16000) * (2 * np.pi * 220 / 16000)).astype(np.float32)
layers, heads = M.forward_all_layers(enc, wave)
print("frames per layer:", layers[0].frames.data.shape,
      "| layers returned:", [fm.layer_index for fm in layers],
      "| heads:", sorted(heads))

# builds are bitwise deterministic in (config, seed)
enc2 = M.build(cfg, seed=1)
same = all(np.array_equal(enc.parameters[k].data, enc2.parameters[k].data)
           for k in enc.parameters)
print("same-seed rebuild bitwise identical:", same)

# MAC accounting, by term
for t_in in (16000, 160000):
    d = M.count_flops_detailed(M.desk_teacher_config(), t_in)
    print(f"T_in={t_in:7d}: total {sum(d.values()) / 1e6:8.1f}M MACs; "
          f"attention scores {d['attention_scores'] / 1e6:6.1f}M (quadratic in frames)")
ratio = M.count_flops(M.desk_teacher_config(), 16000) / M.count_flops(
    M.desk_student_config(None), 16000)
print(f"desk teacher/student FLOP ratio at 1 s: {ratio:.2f}")
