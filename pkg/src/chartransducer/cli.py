"""Command line entry points: train, predict, evaluate, sweep, gen-data.

Exit codes: 0 success, 1 data/checkpoint errors, 2 usage errors (click),
3 training aborted on a non-finite loss. Commands are non-interactive
and consult flags only, never environment variables.

A JSON config file (``--config``) may set any flag by its field name;
values given on the command line win over the file.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from dataclasses import asdict

import click

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint
from .data import (
    EditRule,
    ParseError,
    build_vocab,
    gen_synthetic_inflection,
    read_inflection_tsv,
    read_pair_tsv,
    write_synthetic_splits,
)
from .decoding import decode_examples
from .metrics import evaluate, format_report, read_predictions, report_lines, write_predictions
from .model import TransducerModel
from .training import (
    NonFiniteLossError,
    TrainConfig,
    sweep_batch_size,
    train,
)
from .transformer import TransformerConfig

TASKS = ("inflection", "g2p", "transliteration", "normalization")

_MODEL_FIELDS = ("num_layers", "num_heads", "d_model", "d_ff", "max_positions")
_TRAIN_FIELDS = ("peak_lr", "warmup_steps", "total_steps", "eval_every", "batch_size",
                 "label_smoothing", "adam_beta2", "dropout_rate", "seed", "encoder_mode")


def _read_task(path: str, task: str):
    if task == "inflection":
        return read_inflection_tsv(path)
    return read_pair_tsv(path, phoneme_targets=(task == "g2p"))


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _resolve(ctx: click.Context, config_file: str | None, names) -> dict:
    """defaults < config file < explicitly passed flags."""
    file_values = {}
    if config_file:
        with open(config_file, encoding="utf-8") as fh:
            file_values = json.load(fh)
        unknown = set(file_values) - set(names)
        if unknown:
            raise click.UsageError(f"unknown config keys: {sorted(unknown)}")
    resolved = {}
    for name in names:
        source = ctx.get_parameter_source(name)
        if source == click.core.ParameterSource.COMMANDLINE:
            resolved[name] = ctx.params[name]
        elif name in file_values:
            resolved[name] = file_values[name]
        else:
            resolved[name] = ctx.params[name]
    return resolved


def _data_errors(fn):
    import functools

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except NonFiniteLossError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(3)
        except (ParseError, CheckpointError, FileNotFoundError, KeyError, ValueError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)

    return wrapper


def _model_options(fn):
    fn = click.option("--num-layers", default=4, show_default=True)(fn)
    fn = click.option("--num-heads", default=4, show_default=True)(fn)
    fn = click.option("--d-model", default=256, show_default=True)(fn)
    fn = click.option("--d-ff", default=1024, show_default=True)(fn)
    fn = click.option("--max-positions", default=1024, show_default=True)(fn)
    return fn


def _train_options(fn):
    fn = click.option("--peak-lr", default=0.001, show_default=True)(fn)
    fn = click.option("--warmup-steps", default=4000, show_default=True)(fn)
    fn = click.option("--total-steps", "--steps", "total_steps", default=20000, show_default=True)(fn)
    fn = click.option("--eval-every", default=400, show_default=True)(fn)
    fn = click.option("--batch-size", default=400, show_default=True)(fn)
    fn = click.option("--label-smoothing", default=0.1, show_default=True)(fn)
    fn = click.option("--adam-beta2", default=0.98, show_default=True)(fn)
    fn = click.option("--dropout-rate", "--dropout", "dropout_rate", default=0.3, show_default=True)(fn)
    fn = click.option("--seed", default=0, show_default=True)(fn)
    fn = click.option("--encoder-mode", "--encoder", "encoder_mode",
                      type=click.Choice(["feature_invariant", "vanilla"]),
                      default="feature_invariant", show_default=True)(fn)
    return fn


@click.group()
@click.version_option(version=__version__)
def main():
    """Character-level transformer transducer."""


@main.command("train")
@click.option("--train", "train_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--dev", "dev_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--task", type=click.Choice(TASKS), default="inflection", show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False),
              help="JSON file presetting any flag; command line overrides.")
@_model_options
@_train_options
@click.pass_context
@_data_errors
def cmd_train(ctx, train_path, dev_path, task, out_dir, config_file, **_):
    """Train a model and keep the checkpoint with the best dev accuracy."""
    values = _resolve(ctx, config_file, _MODEL_FIELDS + _TRAIN_FIELDS)
    model_config = TransformerConfig(
        dropout_rate=values["dropout_rate"],
        **{k: values[k] for k in _MODEL_FIELDS})
    train_config = TrainConfig(**{k: values[k] for k in _TRAIN_FIELDS})

    train_examples = _read_task(train_path, task)
    dev_examples = _read_task(dev_path, task)
    src_vocab, tgt_vocab = build_vocab(train_examples)
    model = TransducerModel.init(model_config, src_vocab, tgt_vocab,
                                 seed=train_config.seed,
                                 encoder_mode=train_config.encoder_mode)

    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "build": {"package": "chartransducer", "version": __version__},
        "task": task,
        "model_config": asdict(model.config),
        "train_config": asdict(train_config),
        "datasets": {
            "train": {"path": os.path.abspath(train_path), "sha256": _sha256(train_path)},
            "dev": {"path": os.path.abspath(dev_path), "sha256": _sha256(dev_path)},
        },
        "layout": {"checkpoints": "checkpoints/", "history": "history.tsv",
                   "best": "best.ckpt", "manifest": "manifest.json"},
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")

    if train_config.total_steps == 0:
        from .checkpoint import save_checkpoint
        from .optim import AdamState
        from .training import _snapshot

        ck = _snapshot(model, train_config, 0,
                       AdamState.init(model.params, beta2=train_config.adam_beta2), [])
        save_checkpoint(ck, os.path.join(out_dir, "best.ckpt"))
        click.echo("wrote initialized checkpoint (0 steps)")
        return

    result = train(model, train_examples, dev_examples, train_config,
                   out_dir=out_dir, log=click.echo)
    click.echo(f"best dev_acc {result.best_dev_acc:.4f} at step {result.best_step}")


@main.command("predict")
@click.option("--checkpoint", "ckpt_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--task", type=click.Choice(TASKS), default="inflection", show_default=True)
@click.option("--out", "out_path", default="predictions.tsv", show_default=True)
@click.option("--batch-size", default=128, show_default=True)
@_data_errors
def cmd_predict(ckpt_path, input_path, task, out_path, batch_size):
    """Greedy-decode a dataset and write source/gold/predicted rows."""
    model = load_checkpoint(ckpt_path).to_model()
    examples = _read_task(input_path, task)
    preds = decode_examples(model, examples, batch_size=batch_size)
    write_predictions(preds, out_path)
    click.echo(f"wrote {len(preds)} predictions to {out_path}")


@main.command("evaluate")
@click.option("--predictions", "pred_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--checkpoint", "ckpt_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--input", "input_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--task", type=click.Choice(TASKS), default="inflection", show_default=True)
@click.option("--unit", "--metrics", "unit", type=click.Choice(["characters", "phonemes"]),
              default="characters", show_default=True)
@click.option("--out", "out_path", default=None,
              help="Write the report (aligned text plus key=value lines) here.")
@_data_errors
def cmd_evaluate(pred_path, ckpt_path, input_path, task, unit, out_path):
    """Score a predictions file, or decode a dataset with a checkpoint."""
    if pred_path:
        preds = read_predictions(pred_path, unit=unit)
    elif ckpt_path and input_path:
        model = load_checkpoint(ckpt_path).to_model()
        preds = decode_examples(model, _read_task(input_path, task))
    else:
        raise click.UsageError("pass --predictions, or --checkpoint with --input")
    report = evaluate(preds, unit=unit)
    text = format_report(report) + "\n\n" + "\n".join(report_lines(report)) + "\n"
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    click.echo(text, nl=False)


@main.command("sweep")
@click.option("--train", "train_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--dev", "dev_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--task", type=click.Choice(TASKS), default="inflection", show_default=True)
@click.option("--batch-sizes", default="20,128,400", show_default=True,
              help="Comma-separated example counts per update.")
@click.option("--modes", default=None,
              help="Comma-separated encoder modes to compare (e.g. vanilla,feature_invariant).")
@click.option("--out", "out_dir", default=None, type=click.Path(file_okay=False))
@_model_options
@_train_options
@click.pass_context
@_data_errors
def cmd_sweep(ctx, train_path, dev_path, task, batch_sizes, modes, out_dir, **_):
    """Train once per batch size (and encoder mode) under a fixed update
    budget; report dev accuracy per cell."""
    values = _resolve(ctx, None, _MODEL_FIELDS + _TRAIN_FIELDS)
    model_config = TransformerConfig(
        dropout_rate=values["dropout_rate"],
        **{k: values[k] for k in _MODEL_FIELDS})
    base = TrainConfig(**{k: values[k] for k in _TRAIN_FIELDS})
    try:
        sizes = [int(s) for s in batch_sizes.split(",") if s]
    except ValueError:
        raise click.UsageError(f"--batch-sizes must be comma-separated ints, got {batch_sizes!r}")
    mode_list = [m.strip() for m in modes.split(",")] if modes else None

    train_examples = _read_task(train_path, task)
    dev_examples = _read_task(dev_path, task)
    report = sweep_batch_size(model_config, train_examples, dev_examples, sizes,
                              base, modes=mode_list, log=click.echo)
    click.echo(report.format())
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "sweep.tsv"), "w", encoding="utf-8") as fh:
            fh.write("batch_size\tencoder_mode\tdev_acc\tbest_step\n")
            for r in report.rows:
                fh.write(f"{r.batch_size}\t{r.encoder_mode}\t{r.dev_acc:.6f}\t{r.best_step}\n")


@main.command("gen-data")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--num", "num_examples", default=2500, show_default=True)
@click.option("--alphabet-size", default=26, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--rules", "rules_path", type=click.Path(exists=True, dir_okay=False),
              help="JSON rule table: {\"V;PST\": {\"kind\": \"suffix\", \"affix\": \"ed\", "
                   "\"double_final\": true}, ...}")
@_data_errors
def cmd_gen_data(out_dir, num_examples, alphabet_size, seed, rules_path):
    """Write synthetic inflection train/dev/test splits (deterministic per seed)."""
    table = None
    if rules_path:
        with open(rules_path, encoding="utf-8") as fh:
            raw = json.load(fh)
        table = {tuple(bundle.split(";")): EditRule(**spec) for bundle, spec in raw.items()}
    splits = gen_synthetic_inflection(num_examples, alphabet_size,
                                      rule_table=table, seed=seed)
    paths = write_synthetic_splits(splits, out_dir)
    for path, split in zip(paths, splits):
        click.echo(f"wrote {len(split)} examples to {path}")


if __name__ == "__main__":
    main()
