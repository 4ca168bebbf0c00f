"""Conv + transformer speech encoders built from the autodiff primitives.

An encoder is a waveform front-end (strided conv stack, group-norm after the
first conv, gelu, no conv biases) followed by a projection to the model
width, a grouped positional convolution, and a stack of post-norm
transformer blocks.  ``forward_all_layers`` exposes the output of every
block so both distillation targets and probing features come from one code
path.  Optional prediction heads (affine -> gelu -> affine, one per
predicted layer index) hang off the final block output.

Layer output convention: index 0 is the projected front-end output; index
``l >= 1`` is the output of transformer block ``l`` after its final
residual + normalization.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as tz
from .errors import ConfigError, LengthError, ShapeError
from .tensor import Tensor


@dataclass(frozen=True)
class EncoderConfig:
    conv_layers: Tuple[Tuple[int, int, int], ...]  # (out_channels, kernel, stride)
    post_conv_dim: int
    num_transformer_layers: int = 2
    attention_heads: int = 8
    ffn_dim: int = 256
    pos_conv: Tuple[int, int] = (16, 4)  # (kernel, groups)
    head_spec: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "conv_layers", tuple(tuple(c) for c in self.conv_layers))
        if self.head_spec is not None:
            object.__setattr__(self, "head_spec", tuple(int(h) for h in self.head_spec))
        self.validate()

    def validate(self):
        if not self.conv_layers:
            raise ConfigError("conv_layers must not be empty")
        for c, k, s in self.conv_layers:
            if min(c, k, s) < 1:
                raise ConfigError(f"conv layer values must be >= 1, got {(c, k, s)}")
        if self.post_conv_dim < 1 or self.num_transformer_layers < 1 or self.ffn_dim < 1:
            raise ConfigError("dimensions and layer counts must be >= 1")
        if self.attention_heads < 1 or self.post_conv_dim % self.attention_heads:
            raise ConfigError(
                f"post_conv_dim {self.post_conv_dim} not divisible by attention_heads {self.attention_heads}")
        pk, pg = self.pos_conv
        if pk < 1 or pg < 1 or self.post_conv_dim % pg:
            raise ConfigError(f"pos_conv (kernel={pk}, groups={pg}) invalid for width {self.post_conv_dim}")
        if self.head_spec is not None:
            if len(self.head_spec) == 0:
                raise ConfigError("head_spec, when present, must not be empty")
            if len(set(self.head_spec)) != len(self.head_spec):
                raise ConfigError(f"head_spec indices must be distinct, got {self.head_spec}")
            if min(self.head_spec) < 1:
                raise ConfigError(f"head_spec indices must be >= 1, got {self.head_spec}")

    def to_dict(self) -> dict:
        return {
            "conv_layers": [list(c) for c in self.conv_layers],
            "post_conv_dim": self.post_conv_dim,
            "num_transformer_layers": self.num_transformer_layers,
            "attention_heads": self.attention_heads,
            "ffn_dim": self.ffn_dim,
            "pos_conv": list(self.pos_conv),
            "head_spec": list(self.head_spec) if self.head_spec is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(
            conv_layers=tuple(tuple(c) for c in d["conv_layers"]),
            post_conv_dim=int(d["post_conv_dim"]),
            num_transformer_layers=int(d["num_transformer_layers"]),
            attention_heads=int(d["attention_heads"]),
            ffn_dim=int(d["ffn_dim"]),
            pos_conv=tuple(d["pos_conv"]),
            head_spec=tuple(d["head_spec"]) if d.get("head_spec") is not None else None,
        )

    def without_heads(self) -> "EncoderConfig":
        return replace(self, head_spec=None)


@dataclass
class FeatureMap:
    """One layer's T x D frame sequence.  ``layer_index`` None marks derived maps."""

    frames: Tensor
    layer_index: Optional[int]

    def __post_init__(self):
        if self.frames.data.ndim != 2 or self.frames.data.shape[0] < 1:
            raise ConfigError(f"FeatureMap needs a (T, D) tensor with T >= 1, got {self.frames.data.shape}")
        if self.layer_index is not None and self.layer_index < 0:
            raise ConfigError(f"layer_index must be >= 0, got {self.layer_index}")


@dataclass
class Encoder:
    config: EncoderConfig
    parameters: Dict[str, Tensor]
    frozen: bool = False

    def freeze(self) -> "Encoder":
        self.frozen = True
        for p in self.parameters.values():
            p.requires_grad = False
        return self

    def trainable(self) -> Dict[str, Tensor]:
        return {k: v for k, v in self.parameters.items() if v.requires_grad}

    def param_bytes_digest(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.parameters):
            h.update(name.encode("utf-8"))
            h.update(np.ascontiguousarray(self.parameters[name].data).tobytes())
        return h.hexdigest()


# reference recipes -----------------------------------------------------------

_BASE_FRONTEND = ((512, 10, 5), (512, 3, 2), (512, 3, 2), (512, 3, 2),
                  (512, 3, 2), (512, 2, 2), (512, 2, 2))
_DESK_FRONTEND = ((32, 10, 5), (32, 3, 2), (32, 3, 2), (32, 3, 2),
                  (32, 3, 2), (32, 2, 2), (32, 2, 2))


def hubert_base_config() -> EncoderConfig:
    """Full-scale 12-layer teacher recipe (95M-parameter class)."""
    return EncoderConfig(conv_layers=_BASE_FRONTEND, post_conv_dim=768,
                         num_transformer_layers=12, attention_heads=12,
                         ffn_dim=3072, pos_conv=(128, 16))


def distilled_base_config(head_spec: Optional[Sequence[int]] = (4, 8, 12)) -> EncoderConfig:
    """Two-layer student sharing the full-scale front-end."""
    return EncoderConfig(conv_layers=_BASE_FRONTEND, post_conv_dim=768,
                         num_transformer_layers=2, attention_heads=12,
                         ffn_dim=3072, pos_conv=(128, 16),
                         head_spec=tuple(head_spec) if head_spec is not None else None)


def desk_teacher_config(num_layers: int = 6) -> EncoderConfig:
    """Small teacher for laptop-scale experiments (same 320x frame rate)."""
    return EncoderConfig(conv_layers=_DESK_FRONTEND, post_conv_dim=64,
                         num_transformer_layers=num_layers, attention_heads=4,
                         ffn_dim=512, pos_conv=(16, 4))


def desk_student_config(head_spec: Optional[Sequence[int]] = (2, 4, 6)) -> EncoderConfig:
    return EncoderConfig(conv_layers=_DESK_FRONTEND, post_conv_dim=64,
                         num_transformer_layers=2, attention_heads=4,
                         ffn_dim=512, pos_conv=(16, 4),
                         head_spec=tuple(head_spec) if head_spec is not None else None)


# construction ----------------------------------------------------------------

def _param_shapes(config: EncoderConfig) -> Dict[str, tuple]:
    d = config.post_conv_dim
    shapes: Dict[str, tuple] = {}
    c_prev = 1
    for i, (c, k, _s) in enumerate(config.conv_layers):
        shapes[f"conv.{i}.weight"] = (c, c_prev, k)
        if i == 0:
            shapes["conv.0.gn.gamma"] = (c,)
            shapes["conv.0.gn.beta"] = (c,)
        c_prev = c
    shapes["pre_proj.ln.gamma"] = (c_prev,)
    shapes["pre_proj.ln.beta"] = (c_prev,)
    shapes["proj.weight"] = (c_prev, d)
    shapes["proj.bias"] = (d,)
    pk, pg = config.pos_conv
    shapes["pos_conv.weight"] = (d, d // pg, pk)
    shapes["pos_conv.bias"] = (d,)
    shapes["encoder.ln.gamma"] = (d,)
    shapes["encoder.ln.beta"] = (d,)
    for i in range(config.num_transformer_layers):
        for proj in ("q", "k", "v", "out"):
            shapes[f"layer.{i}.attn.{proj}.weight"] = (d, d)
            shapes[f"layer.{i}.attn.{proj}.bias"] = (d,)
        shapes[f"layer.{i}.attn_ln.gamma"] = (d,)
        shapes[f"layer.{i}.attn_ln.beta"] = (d,)
        shapes[f"layer.{i}.ffn.fc1.weight"] = (d, config.ffn_dim)
        shapes[f"layer.{i}.ffn.fc1.bias"] = (config.ffn_dim,)
        shapes[f"layer.{i}.ffn.fc2.weight"] = (config.ffn_dim, d)
        shapes[f"layer.{i}.ffn.fc2.bias"] = (d,)
        shapes[f"layer.{i}.ffn_ln.gamma"] = (d,)
        shapes[f"layer.{i}.ffn_ln.beta"] = (d,)
    if config.head_spec is not None:
        for l in config.head_spec:
            shapes[f"head.{l}.fc1.weight"] = (d, d)
            shapes[f"head.{l}.fc1.bias"] = (d,)
            shapes[f"head.{l}.fc2.weight"] = (d, d)
            shapes[f"head.{l}.fc2.bias"] = (d,)
    return shapes


def _param_seed(seed: int, name: str) -> int:
    digest = hashlib.blake2b(f"{seed}:{name}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def init_param(seed: int, name: str, shape: tuple) -> np.ndarray:
    """Deterministic initial value for one named parameter (float64 draw)."""
    leaf = name.rsplit(".", 1)[-1]
    if leaf in ("bias", "beta"):
        return np.zeros(shape)
    if leaf == "gamma":
        return np.ones(shape)
    rng = np.random.Generator(np.random.PCG64(_param_seed(seed, name)))
    fan_in = int(np.prod(shape[:-1])) if len(shape) > 1 else shape[0]
    if name.startswith("conv.") or name.startswith("pos_conv."):
        fan_in = int(np.prod(shape[1:]))  # (out, in, k) layout
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)


def build(config: EncoderConfig, seed: int) -> Encoder:
    """Materialize an encoder; identical (config, seed) gives identical bits."""
    config.validate()
    params = {name: Tensor(init_param(seed, name, shape), requires_grad=True)
              for name, shape in _param_shapes(config).items()}
    return Encoder(config=config, parameters=params, frozen=False)


# forward ---------------------------------------------------------------------

def receptive_field(config: EncoderConfig) -> int:
    rf = 1
    for _c, k, s in reversed(config.conv_layers):
        rf = (rf - 1) * s + k
    return rf


def frame_count(config: EncoderConfig, n_samples: int) -> int:
    t = n_samples
    for _c, k, s in config.conv_layers:
        t = (t - k) // s + 1
    return t


def conv_frontend(enc: Encoder, wave) -> Tensor:
    """Strided conv stack over a 1-D waveform -> (C, T) features."""
    data = wave.data if isinstance(wave, Tensor) else np.asarray(wave)
    if data.ndim != 1:
        raise LengthError(f"expected a 1-D waveform, got shape {data.shape}")
    if data.shape[0] < receptive_field(enc.config):
        raise LengthError(
            f"waveform of {data.shape[0]} samples is shorter than the receptive field "
            f"{receptive_field(enc.config)}")
    p = enc.parameters
    x = wave if isinstance(wave, Tensor) else Tensor(data)
    x = tz.Tensor(x.data.reshape(1, -1)) if x.data.ndim == 1 else x
    for i, (_c, _k, s) in enumerate(enc.config.conv_layers):
        x = tz.conv1d(x, p[f"conv.{i}.weight"], s)
        if i == 0:
            x = tz.group_norm(x, x.data.shape[0], p["conv.0.gn.gamma"], p["conv.0.gn.beta"])
        x = tz.gelu(x)
    return x


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return tz.add(tz.matmul(x, w), b)


def _attention(x: Tensor, spans, p: Dict[str, Tensor], prefix: str, n_heads: int) -> Tensor:
    """Self-attention over stacked rows; each (lo, hi) span attends within itself."""
    d = x.data.shape[1]
    dh = d // n_heads
    q = _linear(x, p[f"{prefix}.q.weight"], p[f"{prefix}.q.bias"])
    k = _linear(x, p[f"{prefix}.k.weight"], p[f"{prefix}.k.bias"])
    v = _linear(x, p[f"{prefix}.v.weight"], p[f"{prefix}.v.bias"])
    outs = []
    for lo, hi in spans:
        qu = tz.slice_axis(q, 0, lo, hi) if len(spans) > 1 else q
        ku = tz.slice_axis(k, 0, lo, hi) if len(spans) > 1 else k
        vu = tz.slice_axis(v, 0, lo, hi) if len(spans) > 1 else v
        heads = []
        for h in range(n_heads):
            c0, c1 = h * dh, (h + 1) * dh
            qh = tz.slice_axis(qu, 1, c0, c1)
            kh = tz.slice_axis(ku, 1, c0, c1)
            vh = tz.slice_axis(vu, 1, c0, c1)
            scores = tz.mul(tz.matmul(qh, tz.transpose(kh)), 1.0 / np.sqrt(dh))
            heads.append(tz.matmul(tz.softmax(scores), vh))
        outs.append(heads[0] if n_heads == 1 else tz.concat(heads, axis=1))
    o = outs[0] if len(outs) == 1 else tz.concat(outs, axis=0)
    return _linear(o, p[f"{prefix}.out.weight"], p[f"{prefix}.out.bias"])


def _pos_conv(x: Tensor, enc: Encoder) -> Tensor:
    """Grouped positional conv with same-length output (explicit zero pad)."""
    pk, pg = enc.config.pos_conv
    t = x.data.shape[0]
    xt = tz.transpose(x)  # (D, T)
    left = pk // 2
    right = pk - 1 - left
    parts = []
    if left:
        parts.append(Tensor(np.zeros((xt.data.shape[0], left), dtype=xt.data.dtype)))
    parts.append(xt)
    if right:
        parts.append(Tensor(np.zeros((xt.data.shape[0], right), dtype=xt.data.dtype)))
    padded = tz.concat(parts, axis=1) if len(parts) > 1 else xt
    c = tz.conv1d(padded, enc.parameters["pos_conv.weight"], 1, groups=pg)
    cb = tz.add(tz.transpose(c), enc.parameters["pos_conv.bias"])  # (T, D)
    if cb.data.shape[0] != t:
        raise ConfigError(f"pos_conv produced {cb.data.shape[0]} frames for {t} input frames")
    return tz.gelu(cb)


def encode_batch(enc: Encoder, conv_outs: Sequence[Tensor]) -> Tuple[List[Tensor], Dict[int, Tensor]]:
    """Stacked forward over same-length utterances.

    Rows of every returned tensor are the concatenated frames of the batch;
    attention and the positional conv respect utterance boundaries.  Layer
    list and head dict follow the single-utterance conventions.
    """
    p = enc.parameters
    cfg = enc.config
    ts = [c.data.shape[1] for c in conv_outs]
    if len(set(ts)) != 1:
        raise ShapeError(f"encode_batch needs equal frame counts, got {ts}")
    t = ts[0]
    spans = [(u * t, (u + 1) * t) for u in range(len(conv_outs))]

    xs = [tz.transpose(c) for c in conv_outs]  # (T, C) each
    x = xs[0] if len(xs) == 1 else tz.concat(xs, axis=0)
    x = tz.layer_norm(x, p["pre_proj.ln.gamma"], p["pre_proj.ln.beta"])
    x = _linear(x, p["proj.weight"], p["proj.bias"])  # (B*T, D)
    layers = [x]

    if len(spans) == 1:
        pos = _pos_conv(x, enc)
    else:
        parts = [_pos_conv(tz.slice_axis(x, 0, lo, hi), enc) for lo, hi in spans]
        pos = tz.concat(parts, axis=0)
    x = tz.add(x, pos)
    x = tz.layer_norm(x, p["encoder.ln.gamma"], p["encoder.ln.beta"])
    for i in range(cfg.num_transformer_layers):
        a = _attention(x, spans, p, f"layer.{i}.attn", cfg.attention_heads)
        x = tz.layer_norm(tz.add(x, a), p[f"layer.{i}.attn_ln.gamma"], p[f"layer.{i}.attn_ln.beta"])
        f1 = tz.gelu(_linear(x, p[f"layer.{i}.ffn.fc1.weight"], p[f"layer.{i}.ffn.fc1.bias"]))
        f2 = _linear(f1, p[f"layer.{i}.ffn.fc2.weight"], p[f"layer.{i}.ffn.fc2.bias"])
        x = tz.layer_norm(tz.add(x, f2), p[f"layer.{i}.ffn_ln.gamma"], p[f"layer.{i}.ffn_ln.beta"])
        layers.append(x)

    heads: Dict[int, Tensor] = {}
    if cfg.head_spec is not None:
        shared = layers[-1]
        for l in cfg.head_spec:
            h = tz.gelu(_linear(shared, p[f"head.{l}.fc1.weight"], p[f"head.{l}.fc1.bias"]))
            heads[l] = _linear(h, p[f"head.{l}.fc2.weight"], p[f"head.{l}.fc2.bias"])
    return layers, heads


def encode_from_features(enc: Encoder, conv_out: Tensor) -> Tuple[List[FeatureMap], Dict[int, Tensor]]:
    """Projection + positional conv + transformer stack over (C, T) features."""
    layers, heads = encode_batch(enc, [conv_out])
    return [FeatureMap(frames=x, layer_index=i) for i, x in enumerate(layers)], heads


def forward_all_layers(enc: Encoder, wave) -> Tuple[List[FeatureMap], Dict[int, Tensor]]:
    """Run the full encoder; returns every layer output plus head predictions."""
    return encode_from_features(enc, conv_frontend(enc, wave))


# accounting ------------------------------------------------------------------

def count_params_detailed(config: EncoderConfig) -> Dict[str, int]:
    """Exact trainable-scalar counts broken down by sub-component."""
    shapes = _param_shapes(config)
    groups = {"frontend": 0, "projection": 0, "pos_conv": 0, "transformer": 0, "heads": 0}
    for name, shape in shapes.items():
        n = int(np.prod(shape))
        if name.startswith("conv."):
            groups["frontend"] += n
        elif name.startswith(("pre_proj.", "proj.")):
            groups["projection"] += n
        elif name.startswith("pos_conv."):
            groups["pos_conv"] += n
        elif name.startswith(("layer.", "encoder.ln")):
            groups["transformer"] += n
        else:
            groups["heads"] += n
    return groups


def count_params(config: EncoderConfig) -> int:
    return sum(count_params_detailed(config).values())


def count_flops_detailed(config: EncoderConfig, t_in: int) -> Dict[str, int]:
    """Forward multiply-accumulate counts by term for a ``t_in``-sample input.

    Only matmul/conv MACs are counted; normalizations and activations are
    omitted.  The attention term is quadratic in the frame count.
    """
    if t_in < receptive_field(config):
        raise LengthError(f"t_in {t_in} below receptive field {receptive_field(config)}")
    d = config.post_conv_dim
    terms = {"frontend": 0, "projection": 0, "pos_conv": 0,
             "attention_proj": 0, "attention_scores": 0, "ffn": 0, "heads": 0}
    t = t_in
    c_prev = 1
    for c, k, s in config.conv_layers:
        t = (t - k) // s + 1
        terms["frontend"] += t * c * c_prev * k
        c_prev = c
    terms["projection"] = t * c_prev * d
    pk, pg = config.pos_conv
    terms["pos_conv"] = t * d * (d // pg) * pk
    n = config.num_transformer_layers
    terms["attention_proj"] = n * 4 * t * d * d
    terms["attention_scores"] = n * 2 * t * t * d
    terms["ffn"] = n * 2 * t * d * config.ffn_dim
    if config.head_spec is not None:
        terms["heads"] = len(config.head_spec) * 2 * t * d * d
    return terms


def count_flops(config: EncoderConfig, t_in: int) -> int:
    return sum(count_flops_detailed(config, t_in).values())
