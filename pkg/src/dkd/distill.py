"""Multi-task layer-wise distillation: loss, init transfer, head stripping.

The training objective matches each student prediction head against one
frozen teacher layer.  Per layer ``l`` and frame ``t`` the contribution is

    (1/D) * ||h_t - hhat_t||_1  -  lambda * log(sigmoid(cos(h_t, hhat_t)))

reduced over frames (sum, or mean as the training default) and summed over
the predicted layers.  Teacher features take no gradient; everything flows
into the student heads and backbone.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Optional, Tuple, Union

import numpy as np

from . import tensor as tz
from .checkpoint import Checkpoint
from .errors import IncompatibilityError, ShapeError, SpecError
from .models import Encoder, EncoderConfig, FeatureMap, init_param, _param_shapes
from .tensor import Tensor

SUM_OVER_TIME = "sum_over_time"
MEAN_OVER_TIME = "mean_over_time"


@dataclass(frozen=True)
class DistillSpec:
    predicted_layers: Tuple[int, ...] = (4, 8, 12)
    lam: float = 1.0
    loss_reduction: str = MEAN_OVER_TIME

    def __post_init__(self):
        if not self.predicted_layers:
            raise SpecError("predicted_layers must not be empty")
        if len(set(self.predicted_layers)) != len(self.predicted_layers):
            raise SpecError(f"predicted_layers must be distinct, got {self.predicted_layers}")
        if min(self.predicted_layers) < 1:
            raise SpecError(f"predicted layer indices start at 1, got {self.predicted_layers}")
        if self.lam < 0:
            raise SpecError(f"lambda must be >= 0, got {self.lam}")
        if self.loss_reduction not in (SUM_OVER_TIME, MEAN_OVER_TIME):
            raise SpecError(f"unknown loss_reduction {self.loss_reduction!r}")
        object.__setattr__(self, "predicted_layers", tuple(sorted(int(l) for l in self.predicted_layers)))

    def to_dict(self) -> dict:
        return {"predicted_layers": list(self.predicted_layers), "lambda": self.lam,
                "loss_reduction": self.loss_reduction}

    @classmethod
    def from_dict(cls, d: dict) -> "DistillSpec":
        return cls(predicted_layers=tuple(d["predicted_layers"]), lam=float(d["lambda"]),
                   loss_reduction=d["loss_reduction"])


def validate_layer_set(layers: Iterable[int], teacher_layers: int,
                       lam: float = 1.0, loss_reduction: str = MEAN_OVER_TIME) -> DistillSpec:
    """Check a predicted-layer set against the teacher depth."""
    layer_tuple = tuple(int(l) for l in layers)
    spec = DistillSpec(predicted_layers=layer_tuple, lam=lam, loss_reduction=loss_reduction)
    if max(spec.predicted_layers) > teacher_layers:
        raise SpecError(
            f"predicted layers {spec.predicted_layers} exceed the teacher depth {teacher_layers}")
    return spec


@dataclass
class LossBreakdown:
    """Per-layer terms of the distillation objective.

    ``cos_terms`` hold the unweighted -log(sigmoid(cos)) reduction; ``total``
    is sum over layers of l1 + lambda * cos.
    """

    l1_terms: Dict[int, Tensor] = field(default_factory=dict)
    cos_terms: Dict[int, Tensor] = field(default_factory=dict)
    total: Optional[Tensor] = None


def _frames(x: Union[FeatureMap, Tensor]) -> Tensor:
    return x.frames if isinstance(x, FeatureMap) else x


def distill_loss(student_heads: Mapping[int, Union[FeatureMap, Tensor]],
                 teacher_layers: Mapping[int, Union[FeatureMap, Tensor]],
                 spec: DistillSpec) -> LossBreakdown:
    """Differentiable total of the per-layer l1 + log-sigmoid-cosine objective."""
    reduce = tz.mean if spec.loss_reduction == MEAN_OVER_TIME else tz.sum_
    out = LossBreakdown()
    total = None
    for l in spec.predicted_layers:
        if l not in student_heads or l not in teacher_layers:
            raise SpecError(f"layer {l} missing from inputs "
                            f"(student has {sorted(student_heads)}, teacher has {sorted(teacher_layers)})")
        h = _frames(student_heads[l])
        hhat = _frames(teacher_layers[l])
        if h.data.shape != hhat.data.shape:
            raise ShapeError(f"layer {l}: student {h.data.shape} vs teacher {hhat.data.shape}")
        d = h.data.shape[1]
        l1 = reduce(tz.mul(tz.l1_distance(h, hhat), 1.0 / d))
        cos = reduce(tz.mul(tz.log(tz.sigmoid(tz.cosine_similarity(h, hhat))), -1.0))
        out.l1_terms[l] = l1
        out.cos_terms[l] = cos
        layer_total = tz.add(l1, tz.mul(cos, spec.lam)) if spec.lam != 0.0 else l1
        total = layer_total if total is None else tz.add(total, layer_total)
    out.total = total
    return out


def mean_head_cosine(student_heads: Mapping[int, Union[FeatureMap, Tensor]],
                     teacher_layers: Mapping[int, Union[FeatureMap, Tensor]],
                     layers: Iterable[int]) -> Dict[int, float]:
    """Plain (non-differentiable) per-head mean cosine similarity."""
    out = {}
    for l in layers:
        c = tz.cosine_similarity(_frames(student_heads[l]).detach(),
                                 _frames(teacher_layers[l]).detach())
        out[l] = float(c.data.mean())
    return out


# teacher-to-student transfer ---------------------------------------------------

FRONTEND_PREFIXES = ("conv.",)
_SHARED_PREFIXES = ("conv.", "pre_proj.", "proj.", "pos_conv.", "encoder.ln")


def init_student_from_teacher(teacher: Encoder, student_config: EncoderConfig,
                              seed: int, freeze_frontend: bool = True) -> Encoder:
    """Copy the teacher's front-end and first k transformer layers into a student.

    Heads and any layers beyond the teacher copy get fresh seeded values.
    The conv front-end is frozen by default since it starts as an exact
    teacher copy; pass ``freeze_frontend=False`` to let it train.
    """
    t_cfg = teacher.config
    s_cfg = student_config
    if s_cfg.num_transformer_layers > t_cfg.num_transformer_layers:
        raise IncompatibilityError(
            f"student has {s_cfg.num_transformer_layers} transformer layers, "
            f"teacher only {t_cfg.num_transformer_layers}")

    copied: Dict[str, np.ndarray] = {}
    mismatched = []
    student_shapes = _param_shapes(s_cfg)
    copy_prefixes = _SHARED_PREFIXES + tuple(
        f"layer.{i}." for i in range(s_cfg.num_transformer_layers))
    for name, shape in student_shapes.items():
        if not name.startswith(copy_prefixes):
            continue
        src = teacher.parameters.get(name)
        if src is None or src.data.shape != shape:
            mismatched.append(f"{name}: student {shape} vs teacher "
                              f"{None if src is None else src.data.shape}")
            continue
        copied[name] = src.data
    if mismatched:
        raise IncompatibilityError("teacher/student parameter mismatch: " + "; ".join(mismatched))

    params: Dict[str, Tensor] = {}
    for name, shape in student_shapes.items():
        if name in copied:
            params[name] = Tensor(np.array(copied[name], copy=True), requires_grad=True)
        else:
            params[name] = Tensor(init_param(seed, name, shape), requires_grad=True)
    student = Encoder(config=s_cfg, parameters=params, frozen=False)
    if freeze_frontend:
        for name, p in params.items():
            if name.startswith(FRONTEND_PREFIXES):
                p.requires_grad = False
    return student


def strip_heads(ckpt: Checkpoint) -> Checkpoint:
    """Remove prediction-head tensors; every remaining byte stays identical."""
    head_names = [n for n in ckpt.tensors if n.startswith("head.")]
    if ckpt.encoder_config.head_spec is None and not head_names:
        warnings.warn("checkpoint has no prediction heads; strip_heads is a no-op", stacklevel=2)
        return ckpt
    tensors = {n: a for n, a in ckpt.tensors.items() if not n.startswith("head.")}
    return Checkpoint(
        version=ckpt.version,
        encoder_config=ckpt.encoder_config.without_heads(),
        distill_spec=ckpt.distill_spec,
        train_config_digest=ckpt.train_config_digest,
        extra=dict(ckpt.extra),
        tensors=tensors,
    )
