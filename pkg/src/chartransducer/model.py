"""Bundle of architecture config, learned parameters and vocabularies."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Tensor, cross_entropy_label_smoothed, reshape
from .data import PAD, Batch, Vocabulary, derived_rng, RNG_INIT
from .transformer import (
    TransformerConfig,
    decoder_forward,
    encoder_forward,
    init_parameters,
)

__all__ = ["TransducerModel"]


@dataclass
class TransducerModel:
    config: TransformerConfig
    params: dict[str, Tensor]
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    encoder_mode: str = "feature_invariant"

    @classmethod
    def init(cls, config: TransformerConfig, src_vocab: Vocabulary,
             tgt_vocab: Vocabulary, seed: int = 0,
             encoder_mode: str = "feature_invariant") -> "TransducerModel":
        """Fresh model with vocab sizes taken from the vocabularies and
        parameters drawn from the seed-derived init stream."""
        if config.src_vocab_size is None:
            config = replace(config, src_vocab_size=len(src_vocab))
        if config.tgt_vocab_size is None:
            config = replace(config, tgt_vocab_size=len(tgt_vocab))
        if config.src_vocab_size != len(src_vocab) or config.tgt_vocab_size != len(tgt_vocab):
            raise ValueError("config vocab sizes disagree with the vocabularies")
        params = init_parameters(config, derived_rng(seed, RNG_INIT))
        return cls(config, params, src_vocab, tgt_vocab, encoder_mode)

    def encode(self, src, training: bool = False,
               rng: np.random.Generator | None = None) -> Tensor:
        return encoder_forward(src, self.params, self.config, training=training,
                               rng=rng, mode=self.encoder_mode)

    def logits(self, batch: Batch, training: bool = False,
               rng: np.random.Generator | None = None,
               ablate_cross_attention: bool = False) -> Tensor:
        enc = self.encode(batch.src, training=training, rng=rng)
        return decoder_forward(batch.tgt_in, enc, batch.src.mask, batch.tgt_mask,
                               self.params, self.config, training=training, rng=rng,
                               ablate_cross_attention=ablate_cross_attention)

    def loss(self, batch: Batch, label_smoothing: float = 0.0,
             training: bool = False,
             rng: np.random.Generator | None = None) -> Tensor:
        """Label-smoothed cross entropy over non-padding target positions."""
        logits = self.logits(batch, training=training, rng=rng)
        b, t, v = logits.shape
        flat = reshape(logits, (b * t, v))
        return cross_entropy_label_smoothed(flat, batch.tgt_out.reshape(-1),
                                            epsilon=label_smoothing,
                                            ignore_index=PAD)
