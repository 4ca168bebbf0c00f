"""The bit-exact checkpoint format.

Canonical save (sorted tensors, 64-byte aligned float32 payload behind a
JSON header) makes load-then-save the identity on bytes, and head
stripping an exact, idempotent surgery.
"""

import json
from pathlib import Path

from dkd import models as M
from dkd.checkpoint import checkpoint_from_encoder, load, save
from dkd.distill import DistillSpec, strip_heads

out = Path("runs/demo_ckpt")
enc = M.build(M.desk_student_config((2, 4, 6)), seed=5)
ck = checkpoint_from_encoder(enc, distill_spec=DistillSpec(predicted_layers=(2, 4, 6)))

p1 = save(ck, out / "student.dkd")
raw = p1.read_bytes()
head_len = int.from_bytes(raw[4:12], "little")
header = json.loads(raw[12:12 + head_len])
print("magic:", raw[:4], "| header bytes:", head_len, "| tensors:", len(header["tensors"]))
first = sorted(header["tensors"])[0]
print("first tensor:", first, header["tensors"][first])

p2 = save(load(p1), out / "student_resaved.dkd")
print("load -> save reproduces bytes:", p1.read_bytes() == p2.read_bytes())

stripped = strip_heads(ck)
print(f"strip heads: {ck.param_count():,} -> {stripped.param_count():,} scalars "
      f"(delta {ck.param_count() - stripped.param_count():,})")
save(stripped, out / "student_stripped.dkd")
print("sizes on disk:", p1.stat().st_size, "->", (out / "student_stripped.dkd").stat().st_size)
