"""Distillation training loop: Adam, linear warmup/decay, deterministic batching.

The teacher is frozen, so its target features for the predicted layers are
computed once per utterance and cached; when the student keeps the teacher's
conv front-end frozen, the front-end output is cached the same way.  A step
then runs only the trainable tail (projection, positional conv, transformer
blocks, heads) forward and backward.
"""

from __future__ import annotations

import csv
import hashlib
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import tensor as tz
from .checkpoint import Checkpoint, checkpoint_from_encoder, digest_config, encoder_from_checkpoint
from .corpus import Corpus, batch_iter, substream_seed, uniforms
from .distill import (DistillSpec, distill_loss, init_student_from_teacher,
                      mean_head_cosine)
from .errors import DataError, NumericsError, ParameterError, ConfigError
from .models import Encoder, EncoderConfig, build, conv_frontend, encode_batch
from .tensor import Tensor


@dataclass(frozen=True)
class TrainConfig:
    total_updates: int = 200_000
    batch_size: int = 24
    peak_lr: float = 2e-4
    warmup_fraction: float = 0.07
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-6
    eval_every: int = 500
    grad_clip: Optional[float] = 1.0

    def __post_init__(self):
        if self.total_updates < 1:
            raise ConfigError(f"total_updates must be >= 1, got {self.total_updates}")
        if not (0.0 < self.warmup_fraction < 1.0):
            raise ConfigError(f"warmup_fraction must be in (0, 1), got {self.warmup_fraction}")
        if self.peak_lr <= 0:
            raise ConfigError(f"peak_lr must be positive, got {self.peak_lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return digest_config(self.to_dict())


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Piecewise-linear rate: 0 -> peak over the warmup span, then peak -> 0."""
    if not (0 <= step <= cfg.total_updates):
        raise ParameterError(f"step {step} outside [0, {cfg.total_updates}]")
    w = int(np.floor(cfg.warmup_fraction * cfg.total_updates + 0.5))  # round half up
    if w > 0 and step <= w:
        return cfg.peak_lr * step / w
    return cfg.peak_lr * (cfg.total_updates - step) / (cfg.total_updates - w)


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: Dict[str, Tensor], grads: Dict[str, np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.98,
              eps: float = 1e-6) -> Tuple[Dict[str, Tensor], AdamState]:
    """One bias-corrected Adam update, in place on the parameter tensors."""
    for name in grads:
        if not np.all(np.isfinite(grads[name])):
            raise NumericsError(f"non-finite gradient for parameter {name!r} at Adam step {state.step + 1}")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name in sorted(grads):
        g = grads[name]
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        mhat = m / c1
        vhat = v / c2
        p.data = p.data - lr * mhat / (np.sqrt(vhat) + eps)
    return params, state


def clip_global_norm(grads: Dict[str, np.ndarray], max_norm: float) -> Tuple[Dict[str, np.ndarray], float]:
    total = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values())))
    if total > max_norm and total > 0:
        scale = max_norm / total
        grads = {k: g * np.asarray(scale, dtype=g.dtype) for k, g in grads.items()}
    return grads, total


@dataclass
class StepRecord:
    step: int
    lr: float
    loss_total: float
    l1: Dict[int, float]
    cos: Dict[int, float]  # lambda-weighted contribution, 0.0 when lambda == 0
    wall_ms: float


@dataclass
class EvalRecord:
    step: int
    head_cosine: Dict[int, float]


@dataclass
class TrainLog:
    layers: Tuple[int, ...]
    records: List[StepRecord] = field(default_factory=list)
    evals: List[EvalRecord] = field(default_factory=list)

    def digest(self) -> str:
        h = hashlib.sha256()
        for r in self.records:
            h.update(repr((r.step, r.lr, r.loss_total, sorted(r.l1.items()),
                           sorted(r.cos.items()))).encode())
        return h.hexdigest()


def export_csv(log: TrainLog, path, include_wall: bool = True) -> Path:
    """Write the step records; wall_ms is the one non-deterministic column."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = (["step", "lr", "loss_total"]
            + [f"loss_l1_{l}" for l in log.layers] + [f"loss_cos_{l}" for l in log.layers]
            + (["wall_ms"] if include_wall else []))
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(cols)
        for r in log.records:
            row = ([r.step, repr(r.lr), repr(r.loss_total)]
                   + [repr(r.l1[l]) for l in log.layers] + [repr(r.cos[l]) for l in log.layers]
                   + ([f"{r.wall_ms:.3f}"] if include_wall else []))
            w.writerow(row)
    return path


def export_eval_csv(log: TrainLog, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step"] + [f"eval_cos_{l}" for l in log.layers])
        for r in log.evals:
            w.writerow([r.step] + [repr(r.head_cosine[l]) for l in log.layers])
    return path


class _FeatureCache:
    """Per-utterance forward results of a frozen encoder (or front-end)."""

    def __init__(self):
        self.store: Dict[int, object] = {}

    def get(self, utt_id, compute):
        if utt_id not in self.store:
            self.store[utt_id] = compute()
        return self.store[utt_id]


def teacher_targets(teacher: Encoder, corpus: Corpus, layers: Tuple[int, ...],
                    cache: Optional[Dict[int, Dict[int, np.ndarray]]] = None,
                    chunk: int = 32) -> Dict[int, Dict[int, np.ndarray]]:
    """Frozen-teacher features for every utterance at the requested layers.

    Utterances are grouped by frame count and encoded in stacked chunks; an
    optional cross-run ``cache`` keeps every layer seen so far per utterance.
    """
    out: Dict[int, Dict[int, np.ndarray]] = {}
    pending: Dict[int, List[Tuple[int, Tensor]]] = {}
    for u in corpus.utterances:
        if cache is not None and u.id in cache and all(l in cache[u.id] for l in layers):
            out[u.id] = {l: cache[u.id][l] for l in layers}
            continue
        conv = conv_frontend(teacher, corpus.wave(u.id))
        pending.setdefault(conv.data.shape[1], []).append((u.id, conv))

    def flush(group: List[Tuple[int, Tensor]], t: int):
        maps, _heads = encode_batch(teacher, [c for _uid, c in group])
        for pos, (uid, _c) in enumerate(group):
            feats = {l: maps[l].data[pos * t:(pos + 1) * t] for l in range(len(maps))}
            out[uid] = {l: feats[l] for l in layers}
            if cache is not None:
                cache.setdefault(uid, {}).update(feats)

    for t, group in pending.items():
        for lo in range(0, len(group), chunk):
            flush(group[lo:lo + chunk], t)
    return out


def run_distillation(teacher_ckpt: Checkpoint, student_config: EncoderConfig,
                     spec: DistillSpec, train_cfg: TrainConfig, corpus: Corpus,
                     teacher_init: bool = True, freeze_frontend: bool = True,
                     teacher_cache: Optional[Dict[int, Dict[int, np.ndarray]]] = None,
                     ) -> Tuple[Checkpoint, TrainLog]:
    """Train a student to regress the teacher's predicted layers.

    Deterministic for fixed (seed, configs, corpus): batch order, parameter
    init, and arithmetic are all seeded.  The teacher never changes; its
    byte digest is asserted unchanged at the end of the run.

    Without ``teacher_init`` the student is freshly seeded and its front-end
    trains (there is no teacher copy worth freezing).
    """
    if student_config.head_spec is None:
        raise ConfigError("student_config must declare head_spec for distillation")
    if set(student_config.head_spec) != set(spec.predicted_layers):
        raise ConfigError(f"head_spec {student_config.head_spec} does not match "
                          f"predicted layers {spec.predicted_layers}")
    teacher = encoder_from_checkpoint(teacher_ckpt, frozen=True)
    if max(spec.predicted_layers) > teacher.config.num_transformer_layers:
        raise ConfigError(f"spec {spec.predicted_layers} exceeds teacher depth "
                          f"{teacher.config.num_transformer_layers}")
    teacher_digest = teacher.param_bytes_digest()

    if teacher_init:
        student = init_student_from_teacher(teacher, student_config, seed=train_cfg.seed,
                                            freeze_frontend=freeze_frontend)
    else:
        student = build(student_config, seed=train_cfg.seed)
    frontend_frozen = teacher_init and freeze_frontend

    targets = teacher_targets(teacher, corpus, spec.predicted_layers, cache=teacher_cache)

    # held-out batch for the cosine progress eval, excluded from training
    n_held = min(train_cfg.batch_size, max(1, len(corpus) // 8))
    perm = uniforms(substream_seed(train_cfg.seed, "held-out", 0), len(corpus))
    held_ids = [u.id for u, _ in sorted(zip(corpus.utterances, perm), key=lambda t: t[1])][:n_held]

    frontend_cache = _FeatureCache()

    def batch_forward(ids, waves):
        convs = []
        for uid, wave in zip(ids, waves):
            if frontend_frozen:
                convs.append(frontend_cache.get(uid, lambda w=wave: conv_frontend(student, w).detach()))
            else:
                convs.append(conv_frontend(student, wave))
        # batches are bucketed by length; right-crop any residual mismatch
        t_min = min(c.data.shape[1] for c in convs)
        convs = [c if c.data.shape[1] == t_min else tz.slice_axis(c, 1, 0, t_min)
                 for c in convs]
        return encode_batch(student, convs), t_min

    def stacked_targets(ids, t_min) -> Dict[int, Tensor]:
        return {l: Tensor(np.concatenate([targets[uid][l][:t_min] for uid in ids], axis=0))
                for l in spec.predicted_layers}

    def eval_heads(step: int) -> EvalRecord:
        (_maps, heads), t_min = batch_forward(held_ids, [corpus.wave(i) for i in held_ids])
        cos = mean_head_cosine(heads, stacked_targets(held_ids, t_min), spec.predicted_layers)
        return EvalRecord(step=step, head_cosine=cos)

    log = TrainLog(layers=spec.predicted_layers)
    state = AdamState()
    trainable = student.trainable()
    batches = batch_iter(corpus, train_cfg.batch_size, seed=train_cfg.seed, repeat=True,
                         exclude=set(held_ids), bucket_by_length=True)
    for step in range(1, train_cfg.total_updates + 1):
        t0 = time.perf_counter()
        try:
            batch = next(batches)
        except StopIteration:
            raise DataError(f"corpus exhausted at step {step} with repeat disabled") from None

        (_maps, heads), t_min = batch_forward(batch.ids, batch.waves)
        lb = distill_loss(heads, stacked_targets(batch.ids, t_min), spec)
        loss = lb.total
        l1_acc = {l: float(lb.l1_terms[l].data) for l in spec.predicted_layers}
        cos_acc = {l: spec.lam * float(lb.cos_terms[l].data) if spec.lam != 0.0 else 0.0
                   for l in spec.predicted_layers}
        loss_val = loss.item()
        if not np.isfinite(loss_val):
            raise NumericsError(
                f"non-finite loss at step {step}: total={loss_val}, per-layer l1={l1_acc}, "
                f"lr={lr_at(step, train_cfg)}, batch={batch.ids}")

        for p in trainable.values():
            p.zero_grad()
        tz.backward(loss)
        grads = {name: (p.grad if p.grad is not None else np.zeros_like(p.data))
                 for name, p in trainable.items()}
        if train_cfg.grad_clip is not None:
            grads, _norm = clip_global_norm(grads, train_cfg.grad_clip)
        lr = lr_at(step, train_cfg)
        adam_step(trainable, grads, state, lr, train_cfg.adam_beta1, train_cfg.adam_beta2,
                  train_cfg.adam_eps)

        log.records.append(StepRecord(
            step=step, lr=lr, loss_total=loss_val, l1=l1_acc, cos=cos_acc,
            wall_ms=(time.perf_counter() - t0) * 1e3))
        if step == 1 or step == train_cfg.total_updates or (
                train_cfg.eval_every and step % train_cfg.eval_every == 0):
            log.evals.append(eval_heads(step))

    if teacher.param_bytes_digest() != teacher_digest:
        raise NumericsError("teacher parameters changed during distillation")

    ckpt = checkpoint_from_encoder(
        student, distill_spec=spec, train_config_digest=train_cfg.digest(),
        extra={"train_config": train_cfg.to_dict(), "log_digest": log.digest(),
               "teacher_init": teacher_init, "frontend_frozen": frontend_frozen})
    return ckpt, log
