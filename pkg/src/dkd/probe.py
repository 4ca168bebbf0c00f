"""Frozen-upstream probing and layer-importance analysis.

A probe freezes the upstream encoder, summarizes all of its exposed
representations (layer outputs, plus head outputs when the checkpoint kept
them) with a trainable softmax-weighted sum, mean-pools over frames, and
trains a single affine classifier on one synthetic label factor.  The
upstream parameter bytes are hashed before and after every run.

Because pooling is linear, the weighted sum of per-representation pooled
vectors equals pooling after :func:`weighted_sum`; probe training uses the
pooled form so each utterance's features are a (k, D) constant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as tz
from .checkpoint import Checkpoint, encoder_from_checkpoint
from .corpus import Corpus, substream_seed, uniforms
from .errors import DataError, ParameterError, ProtocolError, ShapeError
from .models import Encoder, FeatureMap, conv_frontend, encode_batch
from .tensor import Tensor
from .training import AdamState, adam_step


@dataclass
class SummaryWeights:
    """Trainable logits, one per summarized representation."""

    logits: Tensor

    def softmax(self) -> np.ndarray:
        z = self.logits.data.reshape(-1)
        e = np.exp(z - z.max())
        return e / e.sum()


@dataclass(frozen=True)
class ProbeTask:
    kind: str  # speaker | content | intent
    arity: int
    pooling: str = "mean"
    classifier: str = "affine"

    def __post_init__(self):
        if self.kind not in ("speaker", "content", "intent"):
            raise ParameterError(f"unknown probe task kind {self.kind!r}")
        if self.arity < 2:
            raise ParameterError(f"label arity must be >= 2, got {self.arity}")


def weighted_sum(features: Sequence[FeatureMap], weights: SummaryWeights) -> FeatureMap:
    """Softmax(logits)-weighted combination of equal-shape feature maps."""
    maps = list(features)
    if not maps:
        raise ShapeError("weighted_sum of zero feature maps")
    logits = weights.logits
    if logits.data.ndim != 1:
        raise ShapeError(f"summary logits must be 1-D, got shape {logits.data.shape}")
    if logits.data.size != len(maps):
        raise ShapeError(f"{logits.data.size} weights for {len(maps)} feature maps")
    shape = maps[0].frames.data.shape
    for m in maps[1:]:
        if m.frames.data.shape != shape:
            raise ShapeError(f"feature maps disagree: {shape} vs {m.frames.data.shape}")
    w = tz.softmax(logits)
    out = None
    for i, m in enumerate(maps):
        term = tz.mul(m.frames, tz.slice_axis(w, 0, i, i + 1))
        out = term if out is None else tz.add(out, term)
    return FeatureMap(frames=out, layer_index=None)


@dataclass
class ProbeResult:
    task: ProbeTask
    accuracy: float
    weights: SummaryWeights
    representation_labels: List[str]
    steps: int
    seed: int
    n_train: int
    n_test: int


def representation_labels(ckpt: Checkpoint) -> List[str]:
    """Names of the summarized maps: feat, layer<i>.., hid, then head<l>.."""
    n = ckpt.encoder_config.num_transformer_layers
    labels = ["feat"] + [f"layer{i}" for i in range(1, n)] + ["hid"]
    if ckpt.encoder_config.head_spec is not None:
        labels += [f"head{l}" for l in sorted(ckpt.encoder_config.head_spec)]
    return labels


def extract_features(enc: Encoder, corpus: Corpus, chunk: int = 32
                     ) -> Tuple[np.ndarray, np.ndarray]:
    """Corpus-wide probe features from a frozen encoder.

    Returns ``pooled`` (N, k, D), the mean-over-frames vector of every
    representation per utterance, and ``norms`` (k,), the mean per-frame l2
    norm of each representation over the corpus.
    """
    pooled: Dict[int, np.ndarray] = {}
    norm_rows: Dict[int, np.ndarray] = {}
    pending: Dict[int, List[Tuple[int, Tensor]]] = {}
    for u in corpus.utterances:
        conv = conv_frontend(enc, corpus.wave(u.id))
        pending.setdefault(conv.data.shape[1], []).append((u.id, conv))
    for t, group in pending.items():
        for lo in range(0, len(group), chunk):
            part = group[lo:lo + chunk]
            maps, heads = encode_batch(enc, [c for _uid, c in part])
            reps = maps + [heads[l] for l in sorted(heads)]
            for pos, (uid, _c) in enumerate(part):
                rows = [r.data[pos * t:(pos + 1) * t] for r in reps]
                pooled[uid] = np.stack([r.mean(axis=0) for r in rows])
                norm_rows[uid] = np.array([np.linalg.norm(r, axis=1).mean() for r in rows])
    pooled_arr = np.stack([pooled[u.id] for u in corpus.utterances])
    norms = np.stack([norm_rows[u.id] for u in corpus.utterances]).mean(axis=0)
    return pooled_arr, norms


def split_ids(corpus: Corpus, test_fraction: float = 0.2) -> Tuple[List[int], List[int]]:
    """Deterministic train/test split by utterance id hash (seed-independent)."""
    train, test = [], []
    for u in corpus.utterances:
        frac = uniforms(substream_seed(0xD15C0, "probe-split", u.id), 1)[0]
        (test if frac < test_fraction else train).append(u.id)
    return train, test


def _one_hot(labels: np.ndarray, arity: int) -> np.ndarray:
    out = np.zeros((len(labels), arity), dtype=np.float32)
    out[np.arange(len(labels)), labels] = 1.0
    return out


def train_probe(upstream: Checkpoint, task: ProbeTask, corpus: Corpus, steps: int = 1000,
                seed: int = 0, lr: float = 1e-3, batch_size: int = 32,
                shuffled_labels: bool = False,
                pooled: Optional[np.ndarray] = None) -> ProbeResult:
    """Train summary weights + affine classifier on frozen upstream features.

    ``shuffled_labels`` permutes the labels deterministically (control run).
    ``pooled`` short-circuits feature extraction with a precomputed (N, k, D)
    array so several probes can share one extraction pass.
    """
    enc = encoder_from_checkpoint(upstream, frozen=True)
    digest_before = enc.param_bytes_digest()
    labels_all = np.array([corpus.label(u.id, task.kind) for u in corpus.utterances])
    if labels_all.max() >= task.arity:
        raise DataError(f"corpus labels for {task.kind} exceed task arity {task.arity}")
    if shuffled_labels:
        order = np.argsort(uniforms(substream_seed(seed, "label-shuffle", 0), len(labels_all)))
        labels_all = labels_all[order]

    feats = extract_features(enc, corpus)[0] if pooled is None else pooled
    n, k, d = feats.shape
    train_ids, test_ids = split_ids(corpus)
    id_pos = {u.id: i for i, u in enumerate(corpus.utterances)}

    # standardize per (representation, dim) on train-split statistics; the raw
    # pooled vectors carry a large common mean that swamps the classifier
    tr_rows = feats[[id_pos[i] for i in train_ids]]
    mu = tr_rows.mean(axis=0)
    sd = tr_rows.std(axis=0) + 1e-6
    feats = ((feats - mu) / sd).astype(np.float32)

    logits = Tensor(np.zeros((1, k)), requires_grad=True)
    w_cls = Tensor(
        np.random.Generator(np.random.PCG64(substream_seed(seed, "probe-cls", 0)))
        .normal(0.0, 1.0 / np.sqrt(d), size=(d, task.arity)), requires_grad=True)
    b_cls = Tensor(np.zeros(task.arity), requires_grad=True)
    params = {"logits": logits, "w": w_cls, "b": b_cls}
    state = AdamState()

    for step in range(steps):
        u = uniforms(substream_seed(seed, "probe-batch", step), batch_size)
        picks = [train_ids[int(x * len(train_ids)) % len(train_ids)] for x in u]
        rows = []
        for uid in picks:
            pooled_u = Tensor(feats[id_pos[uid]])  # (k, D) constant
            rows.append(tz.matmul(tz.softmax(logits), pooled_u))  # (1, D)
        x = tz.concat(rows, axis=0) if len(rows) > 1 else rows[0]
        z = tz.add(tz.matmul(x, w_cls), b_cls)
        onehot = _one_hot(np.array([labels_all[id_pos[i]] for i in picks]), task.arity)
        ce = tz.mul(tz.sum_(tz.mul(tz.log(tz.softmax(z)), Tensor(onehot))), -1.0 / len(picks))
        for p in params.values():
            p.zero_grad()
        tz.backward(ce)
        adam_step(params, {name: p.grad for name, p in params.items()}, state, lr)

    result_weights = SummaryWeights(logits=Tensor(logits.data.reshape(-1)))
    w = result_weights.softmax()
    pooled_test = feats[[id_pos[i] for i in test_ids]]  # (n_test, k, D)
    summaries = np.tensordot(pooled_test, w.astype(feats.dtype), axes=(1, 0))
    preds = np.argmax(summaries @ w_cls.data + b_cls.data, axis=1)
    truth = np.array([labels_all[id_pos[i]] for i in test_ids])
    acc = float((preds == truth).mean())

    if enc.param_bytes_digest() != digest_before:
        raise ProtocolError("probe training modified the upstream parameters")
    return ProbeResult(task=task, accuracy=acc, weights=result_weights,
                       representation_labels=representation_labels(upstream),
                       steps=steps, seed=seed, n_train=len(train_ids), n_test=len(test_ids))


@dataclass
class LayerImportance:
    task: ProbeTask
    labels: List[str]
    importance: np.ndarray  # normalized to sum to 1
    accuracy: float


def analyze_layer_weights(upstream_with_heads: Checkpoint, tasks: Sequence[ProbeTask],
                          corpus: Corpus, steps: int = 1000, seed: int = 0,
                          norm_mode: str = "multiply") -> List[LayerImportance]:
    """Per-task importance of every representation of a heads-retaining model.

    Importance combines the learned softmax weight with the representation's
    mean l2 norm (``multiply``, the default, or ``divide``), renormalized to
    sum to one.
    """
    if upstream_with_heads.encoder_config.head_spec is None:
        raise ProtocolError(
            "layer-weight analysis needs prediction heads; re-run distillation with "
            "an all-layers head spec (or skip strip-heads) to produce one")
    if norm_mode not in ("multiply", "divide"):
        raise ParameterError(f"norm_mode must be multiply|divide, got {norm_mode!r}")
    enc = encoder_from_checkpoint(upstream_with_heads, frozen=True)
    pooled, norms = extract_features(enc, corpus)
    labels = representation_labels(upstream_with_heads)

    out = []
    for task in tasks:
        res = train_probe(upstream_with_heads, task, corpus, steps=steps, seed=seed, pooled=pooled)
        w = res.weights.softmax()
        imp = w * norms if norm_mode == "multiply" else w / norms
        imp = imp / imp.sum()
        out.append(LayerImportance(task=task, labels=labels, importance=imp,
                                   accuracy=res.accuracy))
    return out
