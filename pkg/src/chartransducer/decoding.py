"""Greedy left-to-right decoding."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .autodiff import no_grad
from .data import BOS, EOS, PAD, Example, encode_sources
from .featenc import EncodedSource, pad_sources
from .metrics import Prediction
from .model import TransducerModel
from .transformer import decoder_forward

__all__ = [
    "default_max_len",
    "greedy_decode",
    "decode_sources",
    "decode_examples",
]


def default_max_len(source_char_count: int) -> int:
    """Decode-length cap: generous for every task, guarantees termination."""
    return max(30, 2 * source_char_count + 5)


def _decode_padded(model: TransducerModel, sources: Sequence[EncodedSource],
                   collect_logits: bool = False):
    """Greedy decode of a padded batch; argmax ties go to the lowest index
    (numpy argmax returns the first maximum).

    Returns (list of id sequences without BOS/EOS, per-step logits list
    [batch, vocab] when requested).
    """
    src = pad_sources(sources)
    caps = [default_max_len(s.char_count) for s in sources]
    b = len(sources)
    with no_grad():
        enc = model.encode(src, training=False)
        prefix = np.full((b, 1), BOS, dtype=np.int64)
        outputs: list[list[int]] = [[] for _ in range(b)]
        alive = np.ones(b, dtype=bool)
        step_logits: list[np.ndarray] = []
        while alive.any():
            tgt_mask = prefix != PAD
            logits = decoder_forward(prefix, enc, src.mask, tgt_mask,
                                     model.params, model.config,
                                     training=False).data[:, -1, :]
            if collect_logits:
                step_logits.append(logits.copy())
            nxt = logits.argmax(axis=1)
            col = np.full(b, PAD, dtype=np.int64)
            for i in range(b):
                if not alive[i]:
                    continue
                sym = int(nxt[i])
                col[i] = sym
                if sym == EOS:
                    alive[i] = False
                else:
                    outputs[i].append(sym)
                    if len(outputs[i]) >= caps[i]:
                        alive[i] = False
            prefix = np.concatenate([prefix, col[:, None]], axis=1)
    return outputs, step_logits


def greedy_decode(model: TransducerModel, source: EncodedSource,
                  ) -> list[str]:
    """Decode one source: start at BOS, append the argmax symbol, stop at
    EOS or the length cap. The returned symbols exclude BOS/EOS."""
    ids, _ = _decode_padded(model, [source])
    return [model.tgt_vocab.symbol(i) for i in ids[0]]


def decode_sources(model: TransducerModel, sources: Sequence[EncodedSource],
                   batch_size: int = 128, collect_logits: bool = False):
    """Batched greedy decode; returns symbol sequences (and, optionally,
    the per-row step logits for invariance checks)."""
    outputs: list[list[str]] = []
    all_logits: list[list[np.ndarray]] = []
    for start in range(0, len(sources), batch_size):
        chunk = sources[start:start + batch_size]
        ids, step_logits = _decode_padded(model, chunk, collect_logits=collect_logits)
        outputs.extend([[model.tgt_vocab.symbol(i) for i in row] for row in ids])
        if collect_logits:
            # per-row trace: logits for every step the row was still alive
            for r in range(len(chunk)):
                n_steps = min(len(ids[r]) + 1, len(step_logits))
                all_logits.append([sl[r] for sl in step_logits[:n_steps]])
    if collect_logits:
        return outputs, all_logits
    return outputs


def decode_examples(model: TransducerModel, examples: Sequence[Example],
                    batch_size: int = 128) -> list[Prediction]:
    """Decode examples (unknown symbols map to UNK) and pair each output
    with its gold target."""
    sources = encode_sources(examples, model.src_vocab, allow_unk=True)
    outputs = decode_sources(model, sources, batch_size=batch_size)
    return [Prediction(source=e, predicted=out, gold=list(e.target_chars))
            for e, out in zip(examples, outputs)]
