import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chartransducer.checkpoint import load_checkpoint
from chartransducer.data import build_vocab, gen_synthetic_inflection
from chartransducer.model import TransducerModel
from chartransducer.training import (
    NonFiniteLossError,
    TrainConfig,
    dev_accuracy,
    lr_schedule,
    resume_training,
    sweep_batch_size,
    train,
)

from conftest import tiny_config


class TestSchedule:
    def test_pinned_values(self):
        assert lr_schedule(1000) == 0.00025
        assert lr_schedule(4000) == 0.001
        assert lr_schedule(16000) == 0.0005

    def test_continuous_at_warmup(self):
        w = 4000
        left = lr_schedule(w, 0.001, w)
        right = 0.001 * math.sqrt(w / w)
        assert left == right == 0.001

    @settings(max_examples=40)
    @given(st.integers(2, 50_000))
    def test_monotone_up_then_down(self, step):
        w = 4000
        prev = lr_schedule(step - 1, 0.001, w) if step > 1 else 0.0
        cur = lr_schedule(step, 0.001, w)
        if step <= w:
            assert cur > prev
        else:
            assert cur < lr_schedule(step - 1, 0.001, w)

    def test_step_must_be_positive(self):
        with pytest.raises(ValueError):
            lr_schedule(0)


class TestConfigValidation:
    def test_eval_every_must_divide(self):
        with pytest.raises(ValueError):
            TrainConfig(total_steps=1000, eval_every=300)

    def test_checkpoint_count(self):
        assert TrainConfig().num_checkpoints == 50
        assert TrainConfig(total_steps=2000, eval_every=400).num_checkpoints == 5

    def test_mode_checked(self):
        with pytest.raises(ValueError):
            TrainConfig(encoder_mode="fancy")


@pytest.fixture(scope="module")
def small_task():
    train_ex, dev_ex, _ = gen_synthetic_inflection(80, 8, seed=13)
    src_vocab, tgt_vocab = build_vocab(train_ex)
    return train_ex, dev_ex, src_vocab, tgt_vocab


def small_train_config(**overrides):
    defaults = dict(total_steps=60, eval_every=20, batch_size=16, warmup_steps=30,
                    dropout_rate=0.1, label_smoothing=0.1, seed=21)
    defaults.update(overrides)
    return TrainConfig(**defaults)


def fresh_model(small_task, seed=21, **cfg):
    train_ex, dev_ex, src_vocab, tgt_vocab = small_task
    model = TransducerModel.init(tiny_config(num_layers=1, dropout_rate=0.1, **cfg),
                                 src_vocab, tgt_vocab, seed=seed)
    return model, train_ex, dev_ex


class TestTrainLoop:
    def test_checkpoint_count_and_history(self, small_task, tmp_path):
        model, train_ex, dev_ex = fresh_model(small_task)
        config = small_train_config()
        result = train(model, train_ex, dev_ex, config, out_dir=str(tmp_path))
        assert len(result.history) == config.num_checkpoints == 3
        assert [s for s, _ in result.history] == [20, 40, 60]
        assert len(result.checkpoint_paths) == 3
        assert len(result.losses) == 60
        assert (tmp_path / "best.ckpt").exists()
        assert (tmp_path / "history.tsv").read_text().count("\n") == 3

    def test_zero_steps_returns_initialized(self, small_task):
        model, train_ex, dev_ex = fresh_model(small_task)
        before = {k: p.data.copy() for k, p in model.params.items()}
        result = train(model, train_ex, dev_ex, small_train_config(total_steps=0))
        assert result.history == []
        assert result.best.step == 0
        for k, v in before.items():
            np.testing.assert_array_equal(result.best.params[k], v)

    def test_loss_decreases_over_first_steps(self, small_task):
        model, train_ex, dev_ex = fresh_model(small_task)
        config = small_train_config(total_steps=50, eval_every=50, batch_size=16)
        result = train(model, train_ex[:16], dev_ex[:4], config)
        assert result.losses[-1] < result.losses[0]

    def test_same_seed_identical(self, small_task):
        results = []
        for _ in range(2):
            model, train_ex, dev_ex = fresh_model(small_task)
            results.append(train(model, train_ex, dev_ex, small_train_config()))
        a, b = results
        assert a.history == b.history
        assert a.best_step == b.best_step
        assert a.losses == b.losses
        for k in a.final.params:
            np.testing.assert_array_equal(a.final.params[k], b.final.params[k])

    def test_selection_prefers_earliest_max(self, small_task, monkeypatch):
        model, train_ex, dev_ex = fresh_model(small_task)
        accs = iter([0.25, 0.5, 0.5])
        monkeypatch.setattr("chartransducer.training.dev_accuracy",
                            lambda *a, **k: next(accs))
        result = train(model, train_ex, dev_ex, small_train_config())
        assert result.best_step == 40  # first of the tied 0.5 scores

    def test_non_finite_loss_aborts_with_diagnostics(self, small_task):
        model, train_ex, dev_ex = fresh_model(small_task)
        bad = model.params["out_proj.bias"]
        bad.data = bad.data + np.nan
        with pytest.raises(NonFiniteLossError) as err:
            train(model, train_ex, dev_ex, small_train_config())
        assert err.value.step == 1
        assert err.value.batch_index == 0
        assert err.value.lr == pytest.approx(lr_schedule(1, 0.001, 30))

    def test_dropout_rate_override_applied(self, small_task):
        model, train_ex, dev_ex = fresh_model(small_task)
        config = small_train_config(total_steps=20, eval_every=20, dropout_rate=0.0)
        train(model, train_ex, dev_ex, config)
        assert model.config.dropout_rate == 0.0


class TestResume:
    def test_resume_matches_unbroken_run(self, small_task, tmp_path):
        config = small_train_config()
        model_a, train_ex, dev_ex = fresh_model(small_task)
        full = train(model_a, train_ex, dev_ex, config, out_dir=str(tmp_path / "a"))

        from dataclasses import replace

        model_b, _, _ = fresh_model(small_task)
        half = train(model_b, train_ex, dev_ex, replace(config, total_steps=40),
                     out_dir=str(tmp_path / "b"))
        ck = load_checkpoint(str(tmp_path / "b" / "checkpoints" / "step-000040.ckpt"))
        resumed = resume_training(ck, train_ex, dev_ex, total_steps=60)

        for k in full.final.params:
            np.testing.assert_array_equal(full.final.params[k], resumed.final.params[k])
        assert resumed.history == full.history

    def test_resume_keeps_earlier_best(self, small_task, monkeypatch):
        model, train_ex, dev_ex = fresh_model(small_task)
        accs = iter([0.9, 0.1, 0.1])
        monkeypatch.setattr("chartransducer.training.dev_accuracy",
                            lambda *a, **k: next(accs))
        first = train(model, train_ex, dev_ex, small_train_config(total_steps=20))
        resumed = resume_training(first.final, train_ex, dev_ex, total_steps=60)
        assert resumed.best_step == 20


class TestDevAccuracy:
    def test_perfect_model_scores_one(self, small_task):
        # an oracle is unnecessary: feed predictions equal to gold
        train_ex, dev_ex, src_vocab, tgt_vocab = small_task
        model, _, _ = fresh_model(small_task)
        same = [e for e in dev_ex]
        from chartransducer.decoding import decode_examples

        preds = decode_examples(model, same[:5])
        acc = sum(p.correct for p in preds) / len(preds)
        assert acc == dev_accuracy(model, same[:5])


class TestSweep:
    def test_single_size_single_row(self, small_task):
        train_ex, dev_ex, src_vocab, tgt_vocab = small_task
        report = sweep_batch_size(tiny_config(num_layers=1, dropout_rate=0.1),
                                  train_ex, dev_ex, [8],
                                  small_train_config(total_steps=20, eval_every=20))
        assert len(report.rows) == 1
        assert report.rows[0].batch_size == 8
        assert "batch" in report.format()

    def test_mode_pairing(self, small_task):
        train_ex, dev_ex, src_vocab, tgt_vocab = small_task
        report = sweep_batch_size(tiny_config(num_layers=1, dropout_rate=0.1),
                                  train_ex, dev_ex, [8, 16],
                                  small_train_config(total_steps=20, eval_every=20),
                                  modes=["vanilla", "feature_invariant"])
        assert len(report.rows) == 4
        assert {r.encoder_mode for r in report.rows} == {"vanilla", "feature_invariant"}

    def test_empty_sizes_rejected(self, small_task):
        train_ex, dev_ex, *_ = small_task
        with pytest.raises(ValueError):
            sweep_batch_size(tiny_config(), train_ex, dev_ex, [], small_train_config())

    def test_invariant_mode_beats_vanilla_on_permuted_dev(self):
        # dev set whose feature orders are shuffled relative to training:
        # the order-invariant encoder cannot notice, vanilla cannot cope
        from chartransducer.data import Example

        train_ex, dev_ex, _ = gen_synthetic_inflection(400, 10, seed=51)
        rng = np.random.default_rng(3)
        permuted_dev = []
        for e in dev_ex:
            feats = list(e.features)
            while feats == list(e.features):
                feats = [e.features[i] for i in rng.permutation(len(e.features))]
            permuted_dev.append(Example(e.source_chars, feats, e.target_chars))
        src_vocab, tgt_vocab = build_vocab(train_ex)
        accs = {}
        for mode in ("feature_invariant", "vanilla"):
            cfg = tiny_config(num_layers=2, d_model=32, num_heads=4, d_ff=64,
                              dropout_rate=0.1)
            model = TransducerModel.init(cfg, src_vocab, tgt_vocab, seed=2,
                                         encoder_mode=mode)
            config = TrainConfig(total_steps=600, eval_every=600, batch_size=64,
                                 warmup_steps=200, dropout_rate=0.1, seed=2,
                                 encoder_mode=mode)
            result = train(model, train_ex, permuted_dev, config)
            accs[mode] = result.best_dev_acc
        assert accs["feature_invariant"] > accs["vanilla"], accs
