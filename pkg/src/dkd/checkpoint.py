"""Bit-exact named-tensor checkpoint files.

Layout:

    bytes 0..3    magic ``DKD1``
    bytes 4..11   header length H, unsigned 64-bit little-endian
    bytes 12..    header: canonical UTF-8 JSON (sorted keys, no spaces)
    ...           zero padding to the next 64-byte boundary
    payload       tensor buffers, float32 little-endian, each starting on a
                  64-byte boundary relative to the payload start

The header carries the format version, the encoder config, the distill
spec, a train-config digest, a free-form ``extra`` object, and the tensor
index (name -> dtype, shape, offset, length).  Saving is canonical (tensors
sorted by name, packed in order), so load followed by save reproduces a
conforming file byte for byte.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, TYPE_CHECKING

import numpy as np

from .errors import FormatError, IntegrityError, VersionError
from .models import Encoder, EncoderConfig
from .tensor import Tensor

if TYPE_CHECKING:  # pragma: no cover
    from .distill import DistillSpec

MAGIC = b"DKD1"
FORMAT_VERSION = 1
_ALIGN = 64


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def digest_config(obj: dict) -> str:
    return hashlib.sha256(canonical_json(obj)).hexdigest()


@dataclass
class Checkpoint:
    encoder_config: EncoderConfig
    tensors: Dict[str, np.ndarray]
    distill_spec: Optional["DistillSpec"] = None
    train_config_digest: Optional[str] = None
    extra: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def param_count(self) -> int:
        return sum(int(a.size) for a in self.tensors.values())

    def payload_digest(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.tensors):
            h.update(name.encode("utf-8"))
            h.update(np.ascontiguousarray(self.tensors[name], dtype="<f4").tobytes())
        return h.hexdigest()


def checkpoint_from_encoder(enc: Encoder, distill_spec=None, train_config_digest=None,
                            extra: Optional[dict] = None) -> Checkpoint:
    tensors = {name: np.ascontiguousarray(p.data, dtype=np.float32)
               for name, p in enc.parameters.items()}
    return Checkpoint(encoder_config=enc.config, tensors=tensors, distill_spec=distill_spec,
                      train_config_digest=train_config_digest, extra=dict(extra or {}))


def encoder_from_checkpoint(ckpt: Checkpoint, frozen: bool = True) -> Encoder:
    params = {name: Tensor(arr, requires_grad=not frozen) for name, arr in ckpt.tensors.items()}
    enc = Encoder(config=ckpt.encoder_config, parameters=params, frozen=frozen)
    return enc


def validate_external_shapes(named_shapes: Dict[str, tuple], config: EncoderConfig) -> list:
    """Converter stub: check an external name -> shape map against a config.

    Importing checkpoints from other training frameworks is out of scope;
    this only reports what would block a conversion (missing tensors,
    unexpected tensors, shape mismatches).  An empty list means the shapes
    are compatible.
    """
    from .models import _param_shapes

    expected = _param_shapes(config)
    problems = []
    for name, shape in expected.items():
        if name not in named_shapes:
            problems.append(f"missing tensor {name} {shape}")
        elif tuple(named_shapes[name]) != shape:
            problems.append(f"shape mismatch for {name}: "
                            f"expected {shape}, got {tuple(named_shapes[name])}")
    for name in named_shapes:
        if name not in expected:
            problems.append(f"unexpected tensor {name}")
    return problems


def _pad(n: int) -> int:
    return (-n) % _ALIGN


def save(ckpt: Checkpoint, path) -> Path:
    """Write a checkpoint in canonical form (identical input -> identical bytes)."""
    path = Path(path)
    index = {}
    offset = 0
    buffers = []
    for name in sorted(ckpt.tensors):
        arr = np.ascontiguousarray(ckpt.tensors[name], dtype="<f4")
        raw = arr.tobytes()
        index[name] = {"dtype": "f32", "shape": list(arr.shape),
                       "offset": offset, "length": len(raw)}
        buffers.append(raw)
        step = len(raw) + _pad(len(raw))
        buffers.append(b"\x00" * _pad(len(raw)))
        offset += step
    header = {
        "version": ckpt.version,
        "encoder_config": ckpt.encoder_config.to_dict(),
        "distill_spec": ckpt.distill_spec.to_dict() if ckpt.distill_spec is not None else None,
        "train_config_digest": ckpt.train_config_digest,
        "extra": ckpt.extra,
        "tensors": index,
    }
    head = canonical_json(header)
    prefix_len = len(MAGIC) + 8 + len(head)
    blob = MAGIC + len(head).to_bytes(8, "little") + head + b"\x00" * _pad(prefix_len)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(blob)
        for b in buffers:
            f.write(b)
    return path


def load(path) -> Checkpoint:
    """Read and validate a checkpoint file."""
    from .distill import DistillSpec  # local import to avoid a cycle

    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < len(MAGIC) + 8 or raw[:4] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint file (bad magic {raw[:4]!r})")
    head_len = int.from_bytes(raw[4:12], "little")
    head_end = 12 + head_len
    if head_end > len(raw):
        raise IntegrityError(f"{path}: header of {head_len} bytes exceeds the file")
    try:
        header = json.loads(raw[12:head_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise IntegrityError(f"{path}: header is not valid JSON ({e})") from None
    version = header.get("version")
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: unsupported format version {version!r}")

    payload_start = head_end + _pad(head_end)
    payload = raw[payload_start:]
    index = header["tensors"]
    spans = []
    tensors: Dict[str, np.ndarray] = {}
    for name in sorted(index):
        meta = index[name]
        if meta["dtype"] != "f32":
            raise VersionError(f"{path}: tensor {name} has unsupported dtype {meta['dtype']!r}")
        off, length = int(meta["offset"]), int(meta["length"])
        if off % _ALIGN:
            raise IntegrityError(f"{path}: tensor {name} offset {off} is not 64-byte aligned")
        if off + length > len(payload):
            raise IntegrityError(
                f"{path}: tensor {name} [{off}:{off + length}] runs past the payload "
                f"({len(payload)} bytes)")
        shape = tuple(int(s) for s in meta["shape"])
        if int(np.prod(shape)) * 4 != length:
            raise IntegrityError(f"{path}: tensor {name} shape {shape} does not match {length} bytes")
        spans.append((off, off + length, name))
        arr = np.frombuffer(payload, dtype="<f4", count=length // 4, offset=off).reshape(shape)
        tensors[name] = np.array(arr, copy=True)
    spans.sort()
    for (s0, e0, n0), (s1, _e1, n1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise IntegrityError(f"{path}: tensors {n0} and {n1} overlap in the payload")

    return Checkpoint(
        version=version,
        encoder_config=EncoderConfig.from_dict(header["encoder_config"]),
        distill_spec=DistillSpec.from_dict(header["distill_spec"])
        if header.get("distill_spec") is not None else None,
        train_config_digest=header.get("train_config_digest"),
        extra=header.get("extra") or {},
        tensors=tensors,
    )
