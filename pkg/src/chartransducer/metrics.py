"""Sequence evaluation: exact-match accuracy, edit distance, error rates
and the error-by-output-length histogram.

Conventions: Dist averages Levenshtein distance over all items. WER is
the fraction of items not matched exactly. PER divides the summed edit
distance by the total gold symbol count (corpus level). CER_i averages
length-normalized edit distance over the incorrect items only, and is 0
when everything is correct.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

__all__ = [
    "Prediction",
    "MetricsReport",
    "edit_distance",
    "evaluate",
    "error_length_histogram",
    "format_report",
    "report_lines",
    "write_predictions",
    "read_predictions",
]


@dataclass
class Prediction:
    """A decoded item next to its gold target. ``source`` may be an
    Example or a plain display string."""

    source: object
    predicted: list[str]
    gold: list[str]

    @property
    def correct(self) -> bool:
        return self.predicted == self.gold

    def source_text(self) -> str:
        if hasattr(self.source, "source_text"):
            return self.source.source_text()
        return str(self.source)


@dataclass
class MetricsReport:
    acc: float
    mean_dist: float
    wer: float
    per: float
    cer_i: float
    by_length: dict[tuple[int, int], int] = field(default_factory=dict)
    unit: str = "characters"
    num_items: int = 0


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Levenshtein distance with unit insert/delete/substitute costs."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, sa in enumerate(a, start=1):
        cur = [i]
        for j, sb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1,
                           cur[j - 1] + 1,
                           prev[j - 1] + (sa != sb)))
        prev = cur
    return prev[-1]


def evaluate(predictions: Sequence[Prediction], unit: str = "characters") -> MetricsReport:
    """Aggregate the metric suite over a non-empty prediction list."""
    if not predictions:
        raise ValueError("cannot evaluate zero predictions")
    n = len(predictions)
    dists = [edit_distance(p.predicted, p.gold) for p in predictions]
    n_correct = sum(1 for p in predictions if p.correct)
    total_gold = sum(len(p.gold) for p in predictions)
    incorrect = [(p, d) for p, d in zip(predictions, dists) if not p.correct]
    if incorrect:
        cer_i = sum(d / max(1, len(p.gold)) for p, d in incorrect) / len(incorrect)
    else:
        cer_i = 0.0
    return MetricsReport(
        acc=n_correct / n,
        mean_dist=sum(dists) / n,
        wer=(n - n_correct) / n,
        per=sum(dists) / total_gold if total_gold else float(sum(dists) > 0),
        cer_i=cer_i,
        by_length=error_length_histogram(predictions, bin_width=1),
        unit=unit,
        num_items=n,
    )


def error_length_histogram(predictions: Sequence[Prediction],
                           bin_width: int = 1) -> dict[tuple[int, int], int]:
    """Count incorrect predictions per gold-length bin. Bins are 1-based:
    width 5 gives [1-5], [6-10], ..."""
    if bin_width < 1:
        raise ValueError("bin_width must be >= 1")
    hist: dict[tuple[int, int], int] = {}
    for p in predictions:
        if p.correct:
            continue
        length = max(1, len(p.gold))
        lo = ((length - 1) // bin_width) * bin_width + 1
        key = (lo, lo + bin_width - 1)
        hist[key] = hist.get(key, 0) + 1
    return dict(sorted(hist.items()))


def report_lines(report: MetricsReport) -> list[str]:
    """Machine-readable key=value lines."""
    lines = [
        f"items={report.num_items}",
        f"unit={report.unit}",
        f"acc={report.acc:.12g}",
        f"dist={report.mean_dist:.12g}",
        f"wer={report.wer:.12g}",
        f"per={report.per:.12g}",
        f"cer_i={report.cer_i:.12g}",
    ]
    for (lo, hi), count in report.by_length.items():
        lines.append(f"errors_len_{lo}_{hi}={count}")
    return lines


def format_report(report: MetricsReport) -> str:
    """Aligned plain-text rendering."""
    rows = [
        ("items", f"{report.num_items}"),
        ("ACC", f"{report.acc:.4f}"),
        ("Dist", f"{report.mean_dist:.4f}"),
        ("WER", f"{report.wer:.4f}"),
        ("PER", f"{report.per:.4f}"),
        ("CER_i", f"{report.cer_i:.4f}"),
    ]
    width = max(len(k) for k, _ in rows)
    out = [f"{k:<{width}}  {v}" for k, v in rows]
    if report.by_length:
        out.append("")
        out.append("errors by gold length:")
        for (lo, hi), count in report.by_length.items():
            label = f"{lo}" if lo == hi else f"{lo}-{hi}"
            out.append(f"  {label:>7}  {count}")
    return "\n".join(out)


def _join(symbols: Sequence[str]) -> str:
    return " ".join(symbols) if any(len(s) > 1 for s in symbols) else "".join(symbols)


def write_predictions(predictions: Sequence[Prediction], path) -> None:
    """``source<TAB>gold<TAB>predicted`` rows, UTF-8."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in predictions:
            fh.write(f"{p.source_text()}\t{_join(p.gold)}\t{_join(p.predicted)}\n")


def read_predictions(path, unit: str = "characters") -> list[Prediction]:
    """Read a predictions file; ``unit='phonemes'`` splits gold/predicted
    on spaces, otherwise into code points."""
    preds = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh.read().splitlines(), start=1):
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 columns, got {len(cols)}")
            source, gold, predicted = cols
            if unit == "phonemes":
                g = gold.split(" ") if gold else []
                pr = predicted.split(" ") if predicted else []
            else:
                g, pr = list(gold), list(predicted)
            preds.append(Prediction(source=source, predicted=pr, gold=g))
    return preds
