"""Character-level sequence transduction with a small feature-invariant
pre-LN transformer: tensors with reverse-mode autodiff, the full training
recipe, greedy decoding, the metric suite and a CLI."""

__version__ = "0.1.0"

from .autodiff import (
    Tensor,
    ShapeError,
    backward,
    cross_entropy_label_smoothed,
    dropout_apply,
    layer_norm,
    matmul,
    no_grad,
    softmax,
)
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .data import (
    Batch,
    EditRule,
    Example,
    ParseError,
    Vocabulary,
    build_vocab,
    default_rule_table,
    gen_synthetic_inflection,
    make_batches,
    read_inflection_tsv,
    read_pair_tsv,
)
from .decoding import decode_examples, decode_sources, greedy_decode
from .estimator import CharTransducer, coerce_examples
from .featenc import (
    EncodedSource,
    SourceBatch,
    SourceToken,
    TokenType,
    build_source,
    embed_source,
    sinusoidal_pe,
)
from .metrics import (
    MetricsReport,
    Prediction,
    edit_distance,
    error_length_histogram,
    evaluate,
    format_report,
)
from .model import TransducerModel
from .optim import AdamState, MissingGradientError, adam_step, zero_grads
from .training import (
    NonFiniteLossError,
    SweepReport,
    TrainConfig,
    TrainResult,
    lr_schedule,
    resume_training,
    sweep_batch_size,
    train,
)
from .transformer import (
    TransformerConfig,
    count_parameters,
    decoder_forward,
    encoder_forward,
    init_parameters,
    multi_head_attention,
    parameter_breakdown,
)

__all__ = [
    "__version__",
    "Tensor", "ShapeError", "backward", "no_grad",
    "matmul", "softmax", "layer_norm", "dropout_apply", "cross_entropy_label_smoothed",
    "AdamState", "adam_step", "zero_grads", "MissingGradientError",
    "TokenType", "SourceToken", "EncodedSource", "SourceBatch",
    "build_source", "embed_source", "sinusoidal_pe",
    "TransformerConfig", "init_parameters", "count_parameters", "parameter_breakdown",
    "multi_head_attention", "encoder_forward", "decoder_forward",
    "Example", "Vocabulary", "Batch", "ParseError",
    "read_inflection_tsv", "read_pair_tsv", "build_vocab", "make_batches",
    "EditRule", "default_rule_table", "gen_synthetic_inflection",
    "TransducerModel",
    "greedy_decode", "decode_sources", "decode_examples",
    "Prediction", "MetricsReport", "edit_distance", "evaluate",
    "error_length_histogram", "format_report",
    "Checkpoint", "CheckpointError", "save_checkpoint", "load_checkpoint",
    "TrainConfig", "TrainResult", "NonFiniteLossError", "lr_schedule",
    "train", "resume_training", "sweep_batch_size", "SweepReport",
    "CharTransducer", "coerce_examples",
]
