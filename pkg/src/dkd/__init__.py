"""Layer-wise multi-task knowledge distillation for transformer speech encoders.

A self-contained numpy/scipy implementation: tensor autodiff, HuBERT-style
conv + transformer encoders, the l1 + log-sigmoid-cosine distillation
objective with detachable prediction heads, a deterministic synthetic
speech corpus, frozen-upstream probing, and size/speed profiling.
"""

from . import tensor
from .checkpoint import (Checkpoint, checkpoint_from_encoder, encoder_from_checkpoint, load,
                         save, validate_external_shapes)
from .corpus import Corpus, CorpusManifest, Utterance, batch_iter, generate_corpus, load_corpus
from .distill import (DistillSpec, LossBreakdown, distill_loss, init_student_from_teacher,
                      strip_heads, validate_layer_set)
from .errors import (ConfigError, DataError, FormatError, IncompatibilityError, IntegrityError,
                     LengthError, NumericsError, ParameterError, ProtocolError, ShapeError,
                     SpecError, VersionError)
from .gradcheck import GradCheckReport, grad_check, run_primitive_checks
from .models import (Encoder, EncoderConfig, FeatureMap, build, count_flops,
                     count_flops_detailed, count_params, count_params_detailed,
                     desk_student_config, desk_teacher_config, distilled_base_config,
                     forward_all_layers, hubert_base_config)
from .probe import (LayerImportance, ProbeResult, ProbeTask, SummaryWeights,
                    analyze_layer_weights, train_probe, weighted_sum)
from .profiling import ProfileReport, format_table, profile
from .report import emit_report, run_layer_sweep
from .tensor import Tensor, backward, use_dtype
from .training import TrainConfig, TrainLog, adam_step, export_csv, lr_at, run_distillation

__version__ = "0.1.0"
