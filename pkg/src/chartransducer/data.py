"""Dataset ingestion, vocabularies, batching and a synthetic task generator.

Two file formats cover the four transduction tasks:

* inflection TSV: ``lemma<TAB>target<TAB>feat1;feat2;...`` - lemma and
  target split into unicode code points, the feature bundle on ';'.
* pair TSV: ``source<TAB>target`` - both sides split into code points;
  for grapheme-to-phoneme data the target column is space-separated
  phoneme symbols, each an atomic target-vocabulary symbol.

Files are UTF-8 without a header line.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .featenc import EncodedSource, SourceBatch, build_source, pad_sources

__all__ = [
    "Example",
    "Vocabulary",
    "Batch",
    "ParseError",
    "read_inflection_tsv",
    "read_pair_tsv",
    "write_inflection_tsv",
    "write_pair_tsv",
    "build_vocab",
    "encode_batch",
    "make_batches",
    "shuffle_rng",
    "EditRule",
    "default_rule_table",
    "apply_rule",
    "gen_synthetic_inflection",
    "write_synthetic_splits",
]

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")

# spawn-key domains for deterministic, resumable rng derivation
RNG_INIT, RNG_SHUFFLE, RNG_DROPOUT, RNG_DATA, RNG_SPLIT = 0, 1, 2, 3, 4


def derived_rng(seed: int, domain: int, counter: int = 0) -> np.random.Generator:
    """Generator derived from (seed, domain, counter); stateless and
    reproducible, so any point of a run can be reconstructed."""
    ss = np.random.SeedSequence(seed, spawn_key=(domain, counter))
    return np.random.Generator(np.random.PCG64(ss))


def shuffle_rng(seed: int, epoch: int) -> np.random.Generator:
    return derived_rng(seed, RNG_SHUFFLE, epoch)


class ParseError(ValueError):
    """Malformed dataset line; message carries the path and line number."""


@dataclass
class Example:
    """One transduction item: source symbols, optional feature bundle,
    target symbols. Non-feature-guided tasks carry an empty bundle."""

    source_chars: list[str]
    features: list[str] = field(default_factory=list)
    target_chars: list[str] = field(default_factory=list)

    def source_text(self) -> str:
        text = _join_symbols(self.source_chars)
        if self.features:
            text += "#" + ";".join(self.features)
        return text


def _join_symbols(symbols: Sequence[str]) -> str:
    if any(len(s) > 1 for s in symbols):
        return " ".join(symbols)
    return "".join(symbols)


class Vocabulary:
    """Bidirectional symbol <-> index map with fixed reserved entries
    (0=PAD, 1=BOS, 2=EOS, 3=UNK). Indices follow first-occurrence order."""

    PAD, BOS, EOS, UNK = PAD, BOS, EOS, UNK

    def __init__(self, symbols: Iterable[str] = ()):
        self._symbols: list[str] = list(RESERVED)
        self._index: dict[str, int] = {s: i for i, s in enumerate(RESERVED)}
        for s in symbols:
            self.add(s)

    def add(self, symbol: str) -> int:
        idx = self._index.get(symbol)
        if idx is None:
            idx = len(self._symbols)
            self._symbols.append(symbol)
            self._index[symbol] = idx
        return idx

    def index(self, symbol: str, allow_unk: bool = False) -> int:
        idx = self._index.get(symbol)
        if idx is None:
            if allow_unk:
                return UNK
            raise KeyError(f"symbol {symbol!r} not in vocabulary")
        return idx

    def symbol(self, index: int) -> str:
        return self._symbols[index]

    def encode(self, symbols: Sequence[str], allow_unk: bool = False) -> list[int]:
        return [self.index(s, allow_unk=allow_unk) for s in symbols]

    def __len__(self) -> int:
        return len(self._symbols)

    def __contains__(self, symbol: str) -> bool:
        return symbol in self._index

    @property
    def non_reserved(self) -> list[str]:
        return self._symbols[len(RESERVED):]


def _read_lines(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return fh.read().splitlines()


def read_inflection_tsv(path) -> list[Example]:
    """Parse lemma / target / feature-bundle rows into Examples."""
    examples = []
    for lineno, line in enumerate(_read_lines(path), start=1):
        if not line:
            continue
        cols = line.split("\t")
        if len(cols) != 3:
            raise ParseError(f"{path}:{lineno}: expected 3 tab-separated columns, got {len(cols)}")
        lemma, target, bundle = cols
        if not lemma or not target or not bundle:
            raise ParseError(f"{path}:{lineno}: empty field")
        examples.append(Example(list(lemma), bundle.split(";"), list(target)))
    return examples


def read_pair_tsv(path, phoneme_targets: bool = False) -> list[Example]:
    """Parse source / target rows into feature-less Examples.

    With ``phoneme_targets`` the target column splits on spaces into
    atomic phoneme symbols instead of code points.
    """
    examples = []
    for lineno, line in enumerate(_read_lines(path), start=1):
        if not line:
            continue
        cols = line.split("\t")
        if len(cols) != 2:
            raise ParseError(f"{path}:{lineno}: expected 2 tab-separated columns, got {len(cols)}")
        source, target = cols
        if not source or not target:
            raise ParseError(f"{path}:{lineno}: empty field")
        tgt = target.split(" ") if phoneme_targets else list(target)
        examples.append(Example(list(source), [], tgt))
    return examples


def write_inflection_tsv(examples: Sequence[Example], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in examples:
            if not e.features:
                raise ValueError("inflection format requires a non-empty feature bundle")
            if not e.source_chars or not e.target_chars:
                raise ValueError("inflection format requires non-empty source and target")
            fh.write(f"{''.join(e.source_chars)}\t{''.join(e.target_chars)}\t{';'.join(e.features)}\n")


def write_pair_tsv(examples: Sequence[Example], path, phoneme_targets: bool = False) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in examples:
            if e.features:
                raise ValueError("pair format cannot carry features")
            tgt = " ".join(e.target_chars) if phoneme_targets else "".join(e.target_chars)
            fh.write(f"{''.join(e.source_chars)}\t{tgt}\n")


def build_vocab(examples: Sequence[Example]) -> tuple[Vocabulary, Vocabulary]:
    """Source and target vocabularies in first-occurrence order; feature
    strings enter the source vocabulary as atomic symbols."""
    if not examples:
        raise ValueError("cannot build a vocabulary from zero examples")
    src, tgt = Vocabulary(), Vocabulary()
    for e in examples:
        for f in e.features:
            src.add(f)
        for c in e.source_chars:
            src.add(c)
        for c in e.target_chars:
            tgt.add(c)
    return src, tgt


@dataclass
class Batch:
    """Padded model-ready arrays for a list of examples.

    ``tgt_in`` is the BOS-prefixed decoder input, ``tgt_out`` the
    EOS-suffixed teacher sequence; ``tgt_mask`` is True on real target
    positions (EOS included).
    """

    src: SourceBatch
    tgt_in: np.ndarray   # [batch, tgt_len] int64
    tgt_out: np.ndarray  # [batch, tgt_len] int64
    tgt_mask: np.ndarray  # [batch, tgt_len] bool
    examples: list[Example]

    def __len__(self) -> int:
        return len(self.examples)

    def source_ids(self, i: int) -> list[int]:
        return [int(x) for x in self.src.ids[i][self.src.mask[i]]]

    def target_ids(self, i: int) -> list[int]:
        out = self.tgt_out[i][self.tgt_mask[i]]
        return [int(x) for x in out[:-1]]  # strip EOS


def encode_sources(examples: Sequence[Example], src_vocab: Vocabulary,
                   allow_unk: bool = False) -> list[EncodedSource]:
    return [build_source(e.features, e.source_chars, src_vocab, allow_unk=allow_unk)
            for e in examples]


def encode_batch(examples: Sequence[Example], src_vocab: Vocabulary,
                 tgt_vocab: Vocabulary, allow_unk: bool = False) -> Batch:
    if not examples:
        raise ValueError("cannot encode an empty batch")
    src = pad_sources(encode_sources(examples, src_vocab, allow_unk=allow_unk))
    tgt_seqs = [tgt_vocab.encode(e.target_chars, allow_unk=allow_unk) for e in examples]
    b = len(examples)
    t = max(len(s) for s in tgt_seqs) + 1  # +1 for BOS / EOS
    tgt_in = np.full((b, t), PAD, dtype=np.int64)
    tgt_out = np.full((b, t), PAD, dtype=np.int64)
    tgt_mask = np.zeros((b, t), dtype=bool)
    for i, seq in enumerate(tgt_seqs):
        n = len(seq)
        tgt_in[i, 0] = BOS
        tgt_in[i, 1:n + 1] = seq
        tgt_out[i, :n] = seq
        tgt_out[i, n] = EOS
        tgt_mask[i, :n + 1] = True
    return Batch(src, tgt_in, tgt_out, tgt_mask, list(examples))


def make_batches(examples: Sequence[Example], src_vocab: Vocabulary,
                 tgt_vocab: Vocabulary, batch_size: int, seed: int = 0,
                 shuffle: bool = True, epoch: int = 0,
                 allow_unk: bool = False) -> list[Batch]:
    """One epoch of batches: a deterministic per-epoch shuffle (epoch index
    folded into the seed) followed by consecutive chunks of ``batch_size``
    examples; the last chunk may be smaller."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if not examples:
        raise ValueError("cannot batch an empty dataset")
    order = np.arange(len(examples))
    if shuffle:
        order = shuffle_rng(seed, epoch).permutation(len(examples))
    batches = []
    for start in range(0, len(examples), batch_size):
        chunk = [examples[i] for i in order[start:start + batch_size]]
        batches.append(encode_batch(chunk, src_vocab, tgt_vocab, allow_unk=allow_unk))
    return batches


# ---------------------------------------------------------------------------
# synthetic inflection task
# ---------------------------------------------------------------------------

VOWELS = set("aeiou")


@dataclass(frozen=True)
class EditRule:
    """Deterministic string edit keyed by a feature bundle."""

    kind: str  # "suffix" | "prefix" | "copy"
    affix: str = ""
    double_final: bool = False

    def __post_init__(self):
        if self.kind not in ("suffix", "prefix", "copy"):
            raise ValueError(f"unknown rule kind {self.kind!r}")


def default_rule_table() -> dict[tuple[str, ...], EditRule]:
    return {
        ("V", "PST"): EditRule("suffix", "ed", double_final=True),
        ("V", "PRS", "PTCP"): EditRule("suffix", "ing", double_final=True),
        ("V", "PRS", "3SG"): EditRule("suffix", "s"),
        ("V", "NFIN"): EditRule("copy"),
    }


def _ends_cvc(lemma: str) -> bool:
    # final consonant after a single vowel ("stop" doubles, "smear" does not)
    if len(lemma) < 3:
        return False
    a, b, c = lemma[-3], lemma[-2], lemma[-1]
    return c not in VOWELS and b in VOWELS and a not in VOWELS


def apply_rule(lemma: str, rule: EditRule) -> str:
    if rule.kind == "copy":
        return lemma
    if rule.kind == "prefix":
        return rule.affix + lemma
    stem = lemma + lemma[-1] if rule.double_final and _ends_cvc(lemma) else lemma
    return stem + rule.affix


def gen_synthetic_inflection(num_examples: int, alphabet_size: int = 26,
                             rule_table: dict[tuple[str, ...], EditRule] | None = None,
                             seed: int = 0,
                             ) -> tuple[list[Example], list[Example], list[Example]]:
    """Random lemmata with uniformly sampled feature bundles and
    rule-derived targets, split 8/1/1 into train/dev/test with disjoint
    lemmata."""
    if rule_table is None:
        rule_table = default_rule_table()
    if not rule_table:
        raise ValueError("rule table must not be empty")
    if not 1 <= alphabet_size <= 26:
        raise ValueError("alphabet_size must be in 1..26")
    letters = "abcdefghijklmnopqrstuvwxyz"[:alphabet_size]
    bundles = list(rule_table.keys())
    rng = derived_rng(seed, RNG_DATA)
    seen: set[str] = set()
    examples = []
    while len(examples) < num_examples:
        length = int(rng.integers(3, 9))
        lemma = "".join(letters[int(i)] for i in rng.integers(0, len(letters), size=length))
        if lemma in seen:
            continue
        seen.add(lemma)
        bundle = bundles[int(rng.integers(len(bundles)))]
        target = apply_rule(lemma, rule_table[bundle])
        examples.append(Example(list(lemma), list(bundle), list(target)))
    n_train = (8 * num_examples) // 10
    n_dev = num_examples // 10
    return (examples[:n_train],
            examples[n_train:n_train + n_dev],
            examples[n_train + n_dev:])


def write_synthetic_splits(splits, out_dir) -> list[str]:
    """Write train/dev/test TSVs in the inflection format; returns paths."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for name, examples in zip(("train", "dev", "test"), splits):
        path = os.path.join(out_dir, f"{name}.tsv")
        write_inflection_tsv(examples, path)
        paths.append(path)
    return paths
