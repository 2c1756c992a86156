"""Training recipe: Adam with inverse-square-root warmup scheduling, a
fixed update budget, periodic checkpointing and dev-accuracy model
selection, plus the batch-size / encoder-mode sweep harness.

Determinism: every random stream (init, per-epoch shuffles, per-step
dropout) is derived from (seed, domain, counter), so a fixed seed gives
bit-identical checkpoints, and resuming from a checkpoint reproduces an
uninterrupted run exactly.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .checkpoint import Checkpoint, save_checkpoint
from .data import Example, RNG_DROPOUT, derived_rng, make_batches
from .decoding import decode_examples
from .featenc import ENCODER_MODES
from .model import TransducerModel
from .optim import AdamState, adam_step, zero_grads
from .transformer import TransformerConfig

__all__ = [
    "TrainConfig",
    "TrainResult",
    "NonFiniteLossError",
    "lr_schedule",
    "train",
    "resume_training",
    "dev_accuracy",
    "SweepRow",
    "SweepReport",
    "sweep_batch_size",
]


@dataclass
class TrainConfig:
    """Recipe knobs. Defaults follow the main setup: peak learning rate
    0.001 with 4k warmup steps, 20k updates, a checkpoint every 400
    updates (50 in total), batch 400 examples, label smoothing 0.1,
    Adam beta2 0.98."""

    peak_lr: float = 0.001
    warmup_steps: int = 4000
    total_steps: int = 20000
    eval_every: int = 400
    batch_size: int = 400
    label_smoothing: float = 0.1
    adam_beta2: float = 0.98
    dropout_rate: float = 0.3
    seed: int = 0
    encoder_mode: str = "feature_invariant"

    def __post_init__(self):
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.total_steps % self.eval_every != 0:
            raise ValueError(
                f"eval_every ({self.eval_every}) must divide total_steps ({self.total_steps})"
            )
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.warmup_steps < 1:
            raise ValueError("warmup_steps must be >= 1")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must be in [0, 1)")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.encoder_mode not in ENCODER_MODES:
            raise ValueError(f"encoder_mode must be one of {ENCODER_MODES}")

    @property
    def num_checkpoints(self) -> int:
        return self.total_steps // self.eval_every


def lr_schedule(step: int, peak_lr: float = 0.001, warmup_steps: int = 4000) -> float:
    """peak_lr * min(step/warmup, sqrt(warmup/step)): linear warmup to the
    peak at ``warmup_steps``, inverse-square-root decay afterwards."""
    if step < 1:
        raise ValueError("schedule steps are 1-based")
    return peak_lr * min(step / warmup_steps, math.sqrt(warmup_steps / step))


class NonFiniteLossError(RuntimeError):
    """Training aborted on a NaN/inf loss; carries diagnostics."""

    def __init__(self, step: int, lr: float, batch_index: int, value: float):
        super().__init__(
            f"non-finite loss {value} at step {step} (lr {lr:.3g}, batch {batch_index})"
        )
        self.step = step
        self.lr = lr
        self.batch_index = batch_index
        self.value = value


@dataclass
class TrainResult:
    best: Checkpoint
    final: Checkpoint
    history: list[tuple[int, float]]
    losses: list[float] = field(default_factory=list)
    checkpoint_paths: list[str] = field(default_factory=list)

    @property
    def best_step(self) -> int:
        return self.best.step

    @property
    def best_dev_acc(self) -> float:
        return max((a for _, a in self.history), default=float("nan"))


def dev_accuracy(model: TransducerModel, dev_examples: Sequence[Example],
                 batch_size: int = 256) -> float:
    """Exact-match accuracy of greedy decoding on the dev set."""
    preds = decode_examples(model, dev_examples, batch_size=batch_size)
    return sum(p.correct for p in preds) / len(preds)


def _snapshot(model: TransducerModel, config: TrainConfig, step: int,
              adam: AdamState, history: list[tuple[int, float]]) -> Checkpoint:
    return Checkpoint(
        config=model.config,
        train_config=config,
        step=step,
        params={k: p.data.copy() for k, p in model.params.items()},
        adam=adam.copy(),
        src_symbols=model.src_vocab.non_reserved,
        tgt_symbols=model.tgt_vocab.non_reserved,
        dev_history=list(history),
    )


def train(model: TransducerModel, train_examples: Sequence[Example],
          dev_examples: Sequence[Example], config: TrainConfig,
          out_dir: str | None = None,
          log: Callable[[str], None] | None = None) -> TrainResult:
    """Run exactly ``config.total_steps`` optimizer updates, checkpointing
    and measuring dev accuracy every ``config.eval_every`` steps.

    Returns the checkpoint with the highest dev accuracy (ties broken
    toward the earliest step) along with the final state and history.
    With ``total_steps == 0`` the initialized model comes back with an
    empty history.
    """
    if not train_examples:
        raise ValueError("training needs a non-empty train set")
    if config.total_steps > 0 and not dev_examples:
        raise ValueError("training needs a non-empty dev set for model selection")
    adam = AdamState.init(model.params, beta2=config.adam_beta2)
    return _training_loop(model, train_examples, dev_examples, config,
                          adam=adam, start_step=0, history=[], out_dir=out_dir, log=log)


def resume_training(checkpoint: Checkpoint, train_examples: Sequence[Example],
                    dev_examples: Sequence[Example],
                    total_steps: int | None = None, out_dir: str | None = None,
                    log: Callable[[str], None] | None = None) -> TrainResult:
    """Continue an interrupted run from a checkpoint. The result at any
    later step is bit-identical to a run that was never interrupted."""
    config = checkpoint.train_config
    if total_steps is not None:
        config = replace(config, total_steps=total_steps)
    model = checkpoint.to_model()
    return _training_loop(model, train_examples, dev_examples, config,
                          adam=checkpoint.adam.copy(), start_step=checkpoint.step,
                          history=list(checkpoint.dev_history), out_dir=out_dir, log=log,
                          start_checkpoint=checkpoint)


def _training_loop(model: TransducerModel, train_examples, dev_examples,
                   config: TrainConfig, adam: AdamState, start_step: int,
                   history: list[tuple[int, float]], out_dir: str | None,
                   log: Callable[[str], None] | None,
                   start_checkpoint: Checkpoint | None = None) -> TrainResult:
    if config.dropout_rate != model.config.dropout_rate:
        model.config = replace(model.config, dropout_rate=config.dropout_rate)
    model.encoder_mode = config.encoder_mode

    ckpt_dir = None
    history_path = None
    if out_dir is not None:
        ckpt_dir = os.path.join(out_dir, "checkpoints")
        os.makedirs(ckpt_dir, exist_ok=True)
        history_path = os.path.join(out_dir, "history.tsv")
        if start_step == 0 and os.path.exists(history_path):
            os.remove(history_path)

    batches_per_epoch = math.ceil(len(train_examples) / config.batch_size)
    cached_epoch = -1
    batches = None
    losses: list[float] = []
    paths: list[str] = []

    best: Checkpoint | None = None
    best_acc = -1.0
    best_step = -1
    # honor history carried over from the pre-resume segment
    for s, a in history:
        if a > best_acc:
            best_acc, best_step = a, s

    final = _snapshot(model, config, start_step, adam, history)
    if config.total_steps == 0 or start_step >= config.total_steps:
        return TrainResult(best=best if best is not None else final, final=final,
                           history=list(history), losses=losses, checkpoint_paths=paths)

    for step in range(start_step + 1, config.total_steps + 1):
        epoch, index = divmod(step - 1, batches_per_epoch)
        if epoch != cached_epoch:
            batches = make_batches(train_examples, model.src_vocab, model.tgt_vocab,
                                   config.batch_size, seed=config.seed, shuffle=True,
                                   epoch=epoch)
            cached_epoch = epoch
        batch = batches[index]
        rng = derived_rng(config.seed, RNG_DROPOUT, step)
        lr = lr_schedule(step, config.peak_lr, config.warmup_steps)
        loss = model.loss(batch, label_smoothing=config.label_smoothing,
                          training=True, rng=rng)
        value = loss.item()
        if not math.isfinite(value):
            raise NonFiniteLossError(step, lr, index, value)
        losses.append(value)
        zero_grads(model.params)
        loss.backward()
        for p in model.params.values():
            if p.grad is None:  # vanilla mode leaves the type embedding unused
                p.grad = np.zeros_like(p.data)
        adam_step(model.params, adam, lr)

        if step % config.eval_every == 0:
            acc = dev_accuracy(model, dev_examples)
            history.append((step, acc))
            ck = _snapshot(model, config, step, adam, history)
            if acc > best_acc:
                best_acc, best_step, best = acc, step, ck
            final = ck
            if ckpt_dir is not None:
                path = os.path.join(ckpt_dir, f"step-{step:06d}.ckpt")
                save_checkpoint(ck, path)
                paths.append(path)
                with open(history_path, "a", encoding="utf-8") as fh:
                    fh.write(f"{step}\t{acc:.6f}\n")
            if log is not None:
                log(f"step {step:>6}  lr {lr:.6f}  loss {value:.4f}  dev_acc {acc:.4f}")

    if best is None:
        # the best eval predates this resume segment; recover it from the
        # resume point or the checkpoint dir, else fall back to the final state
        if best_step < 0:
            best = final
        elif start_checkpoint is not None and start_checkpoint.step == best_step:
            best = replace(start_checkpoint, dev_history=list(history))
        else:
            best = _load_best(ckpt_dir, best_step, final)
    if out_dir is not None:
        save_checkpoint(best, os.path.join(out_dir, "best.ckpt"))
    return TrainResult(best=best, final=final, history=list(history),
                       losses=losses, checkpoint_paths=paths)


def _load_best(ckpt_dir: str | None, best_step: int, fallback: Checkpoint) -> Checkpoint:
    from .checkpoint import load_checkpoint

    if ckpt_dir is not None:
        path = os.path.join(ckpt_dir, f"step-{best_step:06d}.ckpt")
        if os.path.exists(path):
            return load_checkpoint(path)
    return fallback


@dataclass
class SweepRow:
    batch_size: int
    encoder_mode: str
    dev_acc: float
    best_step: int


@dataclass
class SweepReport:
    rows: list[SweepRow]
    total_steps: int
    flags: list[str] = field(default_factory=list)

    def format(self) -> str:
        out = [f"{'batch':>6}  {'mode':<18}  {'dev_acc':>8}  {'best_step':>9}"]
        for r in self.rows:
            out.append(f"{r.batch_size:>6}  {r.encoder_mode:<18}  {r.dev_acc:>8.4f}  {r.best_step:>9}")
        for flag in self.flags:
            out.append(f"note: {flag}")
        return "\n".join(out)


def sweep_batch_size(model_config: TransformerConfig,
                     train_examples: Sequence[Example],
                     dev_examples: Sequence[Example],
                     sizes: Sequence[int], base: TrainConfig,
                     modes: Sequence[str] | None = None,
                     log: Callable[[str], None] | None = None) -> SweepReport:
    """Train once per (batch size, encoder mode) with an identical seed and
    update budget; report dev accuracy per cell. Accuracy that fails to
    increase with batch size is flagged in the report, never an error."""
    if not sizes:
        raise ValueError("sweep needs at least one batch size")
    from .data import build_vocab

    modes = list(modes) if modes else [base.encoder_mode]
    src_vocab, tgt_vocab = build_vocab(train_examples)
    rows: list[SweepRow] = []
    for mode in modes:
        for size in sizes:
            config = replace(base, batch_size=size, encoder_mode=mode)
            model = TransducerModel.init(model_config, src_vocab, tgt_vocab,
                                         seed=config.seed, encoder_mode=mode)
            result = train(model, train_examples, dev_examples, config, log=None)
            row = SweepRow(size, mode, result.best_dev_acc, result.best_step)
            rows.append(row)
            if log is not None:
                log(f"batch {size:>4}  {mode:<18}  dev_acc {row.dev_acc:.4f}")
    flags = []
    for mode in modes:
        series = [(r.batch_size, r.dev_acc) for r in rows if r.encoder_mode == mode]
        series.sort()
        for (s1, a1), (s2, a2) in zip(series, series[1:]):
            if a2 < a1:
                flags.append(
                    f"{mode}: dev accuracy dropped from {a1:.4f} (batch {s1}) "
                    f"to {a2:.4f} (batch {s2})"
                )
    return SweepReport(rows=rows, total_steps=base.total_steps, flags=flags)
