"""Feature-invariant source encoding.

Some transductions are guided by a bundle of feature symbols whose order
carries no meaning (e.g. V;PST;PTCP selecting a past participle). Giving
features ordinary positions makes the relative distance between a
character and each feature depend on where that feature happens to sit
in the bundle. The remedy implemented here: every feature token gets
position 0, characters are numbered 1..n, and a learned type embedding
marks each token as FEATURE or CHARACTER. The model output then cannot
depend on the order of the features.

A ``vanilla`` encoding mode is kept for comparison: consecutive
positions 0..n-1 over the whole token sequence and no type embedding.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from enum import IntEnum
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .autodiff import Tensor, dropout_apply, embedding

if TYPE_CHECKING:
    from .transformer import TransformerConfig

__all__ = [
    "TokenType",
    "SourceToken",
    "EncodedSource",
    "SourceBatch",
    "ENCODER_MODES",
    "build_source",
    "pad_sources",
    "sinusoidal_pe",
    "sinusoid_table",
    "embed_source",
]

ENCODER_MODES = ("feature_invariant", "vanilla")


class TokenType(IntEnum):
    FEATURE = 0
    CHARACTER = 1


@dataclass(frozen=True)
class SourceToken:
    symbol_id: int
    token_type: TokenType
    position_index: int


@dataclass
class EncodedSource:
    """Typed source tokens: features pinned to position 0, characters 1..n.

    Features sit contiguously at one end of the sequence (prepended by
    default); character positions are gap-free ascending.
    """

    tokens: list[SourceToken]

    def __post_init__(self):
        next_char_pos = 1
        for tok in self.tokens:
            if tok.token_type == TokenType.FEATURE:
                if tok.position_index != 0:
                    raise ValueError("feature tokens must carry position 0")
            else:
                if tok.position_index != next_char_pos:
                    raise ValueError(
                        f"character positions must be consecutive from 1, got {tok.position_index}"
                    )
                next_char_pos += 1
        types = [t.token_type for t in self.tokens]
        if TokenType.CHARACTER in types and TokenType.FEATURE in types:
            first_char = types.index(TokenType.CHARACTER)
            last_char = len(types) - 1 - types[::-1].index(TokenType.CHARACTER)
            if TokenType.FEATURE in types[first_char:last_char + 1]:
                raise ValueError("feature tokens must be contiguous at one end")

    @property
    def length(self) -> int:
        return len(self.tokens)

    @property
    def char_count(self) -> int:
        return sum(1 for t in self.tokens if t.token_type == TokenType.CHARACTER)


def build_source(features: Sequence[str], characters: Sequence[str], vocab,
                 allow_unk: bool = False, features_last: bool = False) -> EncodedSource:
    """Map feature strings and character symbols to typed, positioned tokens.

    Features keep the order given (it does not matter downstream) at
    position 0; characters get positions 1..n in surface order. Unknown
    symbols raise unless ``allow_unk``, in which case they map to UNK
    (evaluation-time behavior). ``features_last`` postpends the feature
    block instead of prepending it (ablation switch; invariance holds
    either way).
    """
    feats = [SourceToken(vocab.index(f, allow_unk=allow_unk), TokenType.FEATURE, 0)
             for f in features]
    chars = [SourceToken(vocab.index(c, allow_unk=allow_unk), TokenType.CHARACTER, i + 1)
             for i, c in enumerate(characters)]
    tokens = chars + feats if features_last else feats + chars
    return EncodedSource(tokens)


@dataclass
class SourceBatch:
    """Padded index/type/position matrices for a batch of encoded sources.

    ``mask`` is True exactly on real tokens. Padding cells hold PAD ids,
    CHARACTER type and position 0; they are excluded from attention and
    never influence real positions.
    """

    ids: np.ndarray        # [batch, src_len] int64
    types: np.ndarray      # [batch, src_len] int64
    positions: np.ndarray  # [batch, src_len] int64
    mask: np.ndarray       # [batch, src_len] bool


def pad_sources(sources: Sequence[EncodedSource], pad_id: int = 0) -> SourceBatch:
    if not sources:
        raise ValueError("cannot batch zero sources")
    b = len(sources)
    s = max(src.length for src in sources)
    ids = np.full((b, s), pad_id, dtype=np.int64)
    types = np.full((b, s), int(TokenType.CHARACTER), dtype=np.int64)
    positions = np.zeros((b, s), dtype=np.int64)
    mask = np.zeros((b, s), dtype=bool)
    for i, src in enumerate(sources):
        for j, tok in enumerate(src.tokens):
            ids[i, j] = tok.symbol_id
            types[i, j] = int(tok.token_type)
            positions[i, j] = tok.position_index
        mask[i, :src.length] = True
    return SourceBatch(ids, types, positions, mask)


def sinusoidal_pe(position: int, d_model: int) -> np.ndarray:
    """Fixed position features: element 2i is sin(p / 10000^(2i/d)),
    element 2i+1 is cos of the same angle."""
    if position < 0:
        raise ValueError("position must be non-negative")
    return sinusoid_table(position + 1, d_model)[position].copy()


@functools.lru_cache(maxsize=8)
def _cached_table(n_positions: int, d_model: int) -> np.ndarray:
    pos = np.arange(n_positions, dtype=np.float64)[:, None]
    i2 = np.arange(0, d_model, 2, dtype=np.float64)
    angles = pos / np.power(10000.0, i2 / d_model)
    table = np.zeros((n_positions, d_model), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles[:, : d_model // 2])
    table.setflags(write=False)
    return table


def sinusoid_table(n_positions: int, d_model: int) -> np.ndarray:
    """Rows 0..n_positions-1 of the sinusoidal position table."""
    # round the cached size up so nearby lengths share one table
    cached = _cached_table(max(64, 1 << (n_positions - 1).bit_length()), d_model)
    return cached[:n_positions]


def embed_source(src: SourceBatch, params, config: "TransformerConfig",
                 training: bool = False, rng: np.random.Generator | None = None,
                 mode: str = "feature_invariant") -> Tensor:
    """Sum of scaled symbol embedding, sinusoidal position and (in
    feature-invariant mode) type embedding, followed by embedding dropout.

    In vanilla mode positions are the raw sequence indices 0..n-1 and no
    type embedding is added.
    """
    if mode not in ENCODER_MODES:
        raise ValueError(f"unknown encoder mode {mode!r}")
    d = config.d_model
    if mode == "vanilla":
        positions = np.broadcast_to(np.arange(src.ids.shape[1], dtype=np.int64),
                                    src.ids.shape)
    else:
        positions = src.positions
    max_pos = int(positions.max()) if positions.size else 0
    if max_pos >= config.max_positions:
        raise ValueError(
            f"source position {max_pos} exceeds max_positions {config.max_positions}"
        )
    emb = embedding(params["src_embed.weight"], src.ids) * float(np.sqrt(d))
    if mode == "feature_invariant":
        emb = emb + embedding(params["type_embed.weight"], src.types)
    pe = sinusoid_table(max_pos + 1, d)[positions]
    emb = emb + Tensor(pe)
    return dropout_apply(emb, config.dropout_rate, training, rng)
