"""Scikit-learn compatible wrapper around the transducer.

``CharTransducer`` exposes the usual estimator surface (``fit``,
``predict``, ``score``, ``get_params``/``set_params``, ``clone``
compatibility) so the model slots into pipelines, grid searches and
cross-validation as any other estimator would.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .data import RNG_SPLIT, Example, build_vocab, derived_rng
from .decoding import decode_examples
from .metrics import MetricsReport, evaluate
from .model import TransducerModel
from .training import TrainConfig, train
from .transformer import TransformerConfig

__all__ = ["CharTransducer", "coerce_examples"]


def _as_symbols(value, what: str) -> list[str]:
    if isinstance(value, str):
        return list(value)
    if isinstance(value, (list, tuple)) and all(isinstance(s, str) for s in value):
        return list(value)
    raise ValueError(f"{what} must be a string or a sequence of symbol strings, got {value!r}")


def coerce_examples(X, y=None) -> list[Example]:
    """Normalize estimator inputs to Examples.

    Accepted item forms for X: an Example, a plain source string (or
    symbol list), or a ``(source, features)`` pair. y supplies the
    targets, one string or symbol list per item, and must be omitted
    when X already holds Examples.
    """
    items = list(X)
    if not items:
        raise ValueError("X must contain at least one item")
    if all(isinstance(x, Example) for x in items):
        if y is not None:
            raise ValueError("y must be None when X already contains Examples")
        return items
    if y is None:
        targets = [[] for _ in items]
    else:
        targets = [_as_symbols(t, "each y item") for t in y]
        if len(targets) != len(items):
            raise ValueError(f"X has {len(items)} items but y has {len(targets)}")
    examples = []
    for x, tgt in zip(items, targets):
        if isinstance(x, tuple) and len(x) == 2:
            source, features = x
            feats = [str(f) for f in features]
        else:
            source, feats = x, []
        examples.append(Example(_as_symbols(source, "each X item"), feats, tgt))
    return examples


class CharTransducer(BaseEstimator):
    """Character-level sequence-to-sequence transducer.

    A small pre-layer-norm encoder-decoder transformer trained with Adam
    under an inverse-square-root warmup schedule; the checkpoint with the
    best dev accuracy is kept. Feature bundles attached to the inputs are
    encoded order-invariantly (shared position 0 plus a type embedding)
    unless ``encoder_mode='vanilla'``.

    Parameters mirror the training recipe; see ``TrainConfig`` and
    ``TransformerConfig``. ``validation_fraction`` carves a dev split out
    of the fit data when none is passed explicitly.
    """

    def __init__(self, num_layers: int = 4, num_heads: int = 4, d_model: int = 256,
                 d_ff: int = 1024, max_positions: int = 1024,
                 dropout_rate: float = 0.3, encoder_mode: str = "feature_invariant",
                 peak_lr: float = 0.001, warmup_steps: int = 4000,
                 total_steps: int = 20000, eval_every: int = 400,
                 batch_size: int = 400, label_smoothing: float = 0.1,
                 adam_beta2: float = 0.98, seed: int = 0,
                 validation_fraction: float = 0.1, verbose: bool = False):
        self.num_layers = num_layers
        self.num_heads = num_heads
        self.d_model = d_model
        self.d_ff = d_ff
        self.max_positions = max_positions
        self.dropout_rate = dropout_rate
        self.encoder_mode = encoder_mode
        self.peak_lr = peak_lr
        self.warmup_steps = warmup_steps
        self.total_steps = total_steps
        self.eval_every = eval_every
        self.batch_size = batch_size
        self.label_smoothing = label_smoothing
        self.adam_beta2 = adam_beta2
        self.seed = seed
        self.validation_fraction = validation_fraction
        self.verbose = verbose

    def _configs(self) -> tuple[TransformerConfig, TrainConfig]:
        model_config = TransformerConfig(
            num_layers=self.num_layers, num_heads=self.num_heads,
            d_model=self.d_model, d_ff=self.d_ff,
            dropout_rate=self.dropout_rate, max_positions=self.max_positions)
        train_config = TrainConfig(
            peak_lr=self.peak_lr, warmup_steps=self.warmup_steps,
            total_steps=self.total_steps, eval_every=self.eval_every,
            batch_size=self.batch_size, label_smoothing=self.label_smoothing,
            adam_beta2=self.adam_beta2, dropout_rate=self.dropout_rate,
            seed=self.seed, encoder_mode=self.encoder_mode)
        return model_config, train_config

    def fit(self, X, y=None, dev=None) -> "CharTransducer":
        """Train on (X, y); ``dev`` may be (X_dev, y_dev) or a list of
        Examples, otherwise ``validation_fraction`` of the data is held
        out (deterministically, from the seed)."""
        examples = coerce_examples(X, y)
        if any(not e.target_chars for e in examples):
            raise ValueError("every training item needs a non-empty target")
        if dev is not None:
            dev_examples = coerce_examples(*dev) if isinstance(dev, tuple) else coerce_examples(dev)
            train_examples = examples
        else:
            if not 0.0 < self.validation_fraction < 1.0:
                raise ValueError("validation_fraction must be in (0, 1) when dev is not given")
            order = derived_rng(self.seed, RNG_SPLIT).permutation(len(examples))
            n_dev = max(1, int(round(self.validation_fraction * len(examples))))
            if n_dev >= len(examples):
                raise ValueError("validation_fraction leaves no training data")
            dev_examples = [examples[i] for i in order[:n_dev]]
            train_examples = [examples[i] for i in order[n_dev:]]

        model_config, train_config = self._configs()
        self.src_vocab_, self.tgt_vocab_ = build_vocab(train_examples)
        model = TransducerModel.init(model_config, self.src_vocab_, self.tgt_vocab_,
                                     seed=self.seed, encoder_mode=self.encoder_mode)
        log = print if self.verbose else None
        result = train(model, train_examples, dev_examples, train_config, log=log)
        self.model_ = result.best.to_model()
        self.history_ = result.history
        self.best_step_ = result.best_step
        self.best_dev_acc_ = result.best_dev_acc
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("this CharTransducer is not fitted; call fit first")

    def predict(self, X) -> list[str]:
        """Greedy-decode each input; multi-character output symbols are
        joined with spaces, plain characters without."""
        self._check_fitted()
        examples = coerce_examples(X)
        preds = decode_examples(self.model_, examples)
        out = []
        for p in preds:
            sep = " " if any(len(s) > 1 for s in p.predicted) else ""
            out.append(sep.join(p.predicted))
        return out

    def score(self, X, y=None) -> float:
        """Exact-match accuracy."""
        self._check_fitted()
        examples = coerce_examples(X, y)
        preds = decode_examples(self.model_, examples)
        return sum(p.correct for p in preds) / len(preds)

    def report(self, X, y=None, unit: str = "characters") -> MetricsReport:
        """Full metric suite on labeled data."""
        self._check_fitted()
        examples = coerce_examples(X, y)
        return evaluate(decode_examples(self.model_, examples), unit=unit)
