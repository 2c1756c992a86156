"""Acceptance suite: one test per exit criterion, each printing a
pass/fail line (run with -s or -v to see them).

The heavyweight cases (desk-scale learning, the batch-size sweep, the
recipe-shape run) use architectures sized for CPU budgets; the recipe
knobs under test keep their stated values.
"""

import itertools
import time

import numpy as np

from chartransducer.checkpoint import load_checkpoint
from chartransducer.data import (
    Example,
    build_vocab,
    encode_batch,
    encode_sources,
    gen_synthetic_inflection,
)
from chartransducer.decoding import decode_sources
from chartransducer.metrics import Prediction, edit_distance, evaluate
from chartransducer.model import TransducerModel
from chartransducer.training import (
    TrainConfig,
    lr_schedule,
    resume_training,
    sweep_batch_size,
    train,
)
from chartransducer.transformer import TransformerConfig, count_parameters


def ok(n, msg):
    print(f"[acceptance] criterion {n}: PASS ({msg})")


# ---------------------------------------------------------------------------
# 1. parameter count
# ---------------------------------------------------------------------------


def test_criterion_01_parameter_count():
    t0 = time.perf_counter()
    examples = [Example(list("ab"), ["F"], list("ba"))]
    src_vocab, tgt_vocab = build_vocab(examples)
    model = TransducerModel.init(TransformerConfig(), src_vocab, tgt_vocab, seed=0)
    n = count_parameters(model.params, "layer-stack")
    elapsed = time.perf_counter() - t0
    assert n == 7_372_800
    assert elapsed < 1.0
    ok(1, f"layer-stack parameters = {n:,} in {elapsed:.2f}s")


# ---------------------------------------------------------------------------
# 2. gradient correctness, every parameter of a tiny model
# ---------------------------------------------------------------------------


def test_criterion_02_full_finite_difference_check():
    t0 = time.perf_counter()
    # vocab of exactly 10 entries each side: 4 reserved + 6 symbols
    examples = [
        Example(list("abc"), ["F1", "F2"], list("bcda")),
        Example(list("ba"), ["F2"], list("ab")),
    ]
    src_vocab, tgt_vocab = build_vocab(
        examples + [Example(list("d"), ["F1"], list("cd"))])
    assert len(src_vocab) == 10 and len(tgt_vocab) == 8
    cfg = TransformerConfig(num_layers=1, num_heads=2, d_model=8, d_ff=16,
                            dropout_rate=0.0, max_positions=32)
    model = TransducerModel.init(cfg, src_vocab, tgt_vocab, seed=2)
    batch = encode_batch(examples, src_vocab, tgt_vocab)
    assert batch.src.ids.shape == (2, 5) and batch.tgt_in.shape == (2, 5)

    loss = model.loss(batch, label_smoothing=0.1)
    loss.backward()

    h = 1e-5
    worst = 0.0
    worst_name = None
    total = 0
    for name, p in model.params.items():
        flat = p.data.reshape(-1)
        gflat = p.grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = model.loss(batch, label_smoothing=0.1).item()
            flat[i] = orig - h
            down = model.loss(batch, label_smoothing=0.1).item()
            flat[i] = orig
            fd = (up - down) / (2 * h)
            an = gflat[i]
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-6)
            total += 1
            if rel > worst:
                worst, worst_name = rel, name
    elapsed = time.perf_counter() - t0
    assert worst < 1e-4, f"worst relative error {worst:.3g} at {worst_name}"
    assert elapsed < 60.0
    ok(2, f"{total} parameters checked, max rel err {worst:.2e} in {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 3. feature-order invariance on a randomly initialized default model
# ---------------------------------------------------------------------------


def permute_features(example, rng):
    feats = list(example.features)
    assert len(feats) >= 2
    while True:
        perm = [feats[i] for i in rng.permutation(len(feats))]
        if perm != feats:
            return Example(example.source_chars, perm, example.target_chars)


def test_criterion_03_feature_order_invariance():
    t0 = time.perf_counter()
    train_ex, _, _ = gen_synthetic_inflection(300, 26, seed=17)
    examples = train_ex[:200]
    src_vocab, tgt_vocab = build_vocab(train_ex)
    model = TransducerModel.init(TransformerConfig(), src_vocab, tgt_vocab, seed=123)

    rng = np.random.default_rng(99)
    permuted = [permute_features(e, rng) for e in examples]

    def decode(mode, items):
        model.encoder_mode = mode
        sources = encode_sources(items, src_vocab)
        return decode_sources(model, sources, batch_size=100, collect_logits=True)

    out_a, logits_a = decode("feature_invariant", examples)
    out_b, logits_b = decode("feature_invariant", permuted)
    assert out_a == out_b, "greedy outputs changed under feature permutation"
    max_diff = 0.0
    for ta, tb in zip(logits_a, logits_b):
        assert len(ta) == len(tb)
        for a, b in zip(ta, tb):
            max_diff = max(max_diff, float(np.abs(a - b).max()))
    assert max_diff < 1e-9, f"logit drift {max_diff:.3g}"

    # vanilla fails the same test (exact output AND logits within 1e-9)
    van_a, vlog_a = decode("vanilla", examples)
    van_b, vlog_b = decode("vanilla", permuted)
    failed = 0
    strings_changed = 0
    for a, b, ta, tb in zip(van_a, van_b, vlog_a, vlog_b):
        if a != b:
            failed += 1
            strings_changed += 1
            continue
        drift = max(float(np.abs(x - y).max()) for x, y in zip(ta, tb))
        if drift > 1e-9:
            failed += 1
    assert failed >= 100, f"vanilla mode failed on only {failed}/200 permutations"
    elapsed = time.perf_counter() - t0
    assert elapsed < 300.0
    ok(3, f"invariant outputs identical (logit drift {max_diff:.1e}); vanilla failed "
          f"on {failed}/200 ({strings_changed} with different strings); {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 4. scheduler values
# ---------------------------------------------------------------------------


def test_criterion_04_schedule_values():
    assert lr_schedule(1000, 0.001, 4000) == 0.00025
    assert lr_schedule(4000, 0.001, 4000) == 0.001
    assert lr_schedule(16000, 0.001, 4000) == 0.0005
    ok(4, "lr(1000)=0.00025, lr(4000)=0.001, lr(16000)=0.0005 exactly")


# ---------------------------------------------------------------------------
# 5. recipe shape: 20k updates, 50 checkpoints, eval every 400
# ---------------------------------------------------------------------------


def test_criterion_05_recipe_shape(tmp_path):
    t0 = time.perf_counter()
    train_ex, dev_ex, _ = gen_synthetic_inflection(50, 6, seed=23)
    src_vocab, tgt_vocab = build_vocab(train_ex)
    cfg = TransformerConfig(num_layers=1, num_heads=2, d_model=8, d_ff=16,
                            dropout_rate=0.3, max_positions=64)
    model = TransducerModel.init(cfg, src_vocab, tgt_vocab, seed=0)
    config = TrainConfig()  # the stated recipe: 20k steps, eval every 400
    assert config.num_checkpoints == 50
    result = train(model, train_ex, dev_ex[:5], config, out_dir=str(tmp_path))
    assert len(result.losses) == 20_000
    assert [s for s, _ in result.history] == list(range(400, 20_001, 400))
    assert len(result.history) == 50
    assert len(result.checkpoint_paths) == 50
    accs = [a for _, a in result.history]
    best = max(accs)
    assert result.best_dev_acc == best
    assert result.best_step == result.history[accs.index(best)][0]
    elapsed = time.perf_counter() - t0
    ok(5, f"20,000 updates, 50 checkpoints, evals on the 400 grid; {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 6. desk-scale learning on the synthetic inflection task
# ---------------------------------------------------------------------------


def test_criterion_06_desk_scale_learning():
    t0 = time.perf_counter()
    train_ex, dev_ex, _ = gen_synthetic_inflection(2500, 26, seed=7)
    assert len(train_ex) == 2000 and len(dev_ex) == 250
    src_vocab, tgt_vocab = build_vocab(train_ex)
    cfg = TransformerConfig(num_layers=3, num_heads=8, d_model=64, d_ff=256,
                            dropout_rate=0.1)
    model = TransducerModel.init(cfg, src_vocab, tgt_vocab, seed=0)
    config = TrainConfig(total_steps=3000, eval_every=150, batch_size=128,
                         warmup_steps=600, peak_lr=0.001, dropout_rate=0.1,
                         label_smoothing=0.1, adam_beta2=0.98, seed=0,
                         encoder_mode="feature_invariant")
    result = train(model, train_ex, dev_ex, config)
    elapsed = time.perf_counter() - t0
    assert result.best_dev_acc >= 0.99, f"best dev acc {result.best_dev_acc:.4f}"
    assert result.best_step <= 3000
    assert elapsed < 1200.0
    ok(6, f"dev ACC {result.best_dev_acc:.4f} at step {result.best_step} "
          f"in {elapsed / 60:.1f} min")


# ---------------------------------------------------------------------------
# 7. batch-size trend (reported, not asserted)
# ---------------------------------------------------------------------------


def test_criterion_07_batch_size_sweep():
    t0 = time.perf_counter()
    train_ex, dev_ex, _ = gen_synthetic_inflection(1250, 26, seed=31)
    cfg = TransformerConfig(num_layers=1, num_heads=2, d_model=32, d_ff=128,
                            dropout_rate=0.1)
    base = TrainConfig(total_steps=3000, eval_every=1500, batch_size=128,
                       warmup_steps=400, dropout_rate=0.1, seed=0)
    report = sweep_batch_size(cfg, train_ex, dev_ex, [20, 128, 400], base)
    assert len(report.rows) == 3
    assert [r.batch_size for r in report.rows] == [20, 128, 400]
    assert report.total_steps == 3000
    print(report.format())
    accs = {r.batch_size: r.dev_acc for r in report.rows}
    trend = " <= ".join(f"{accs[s]:.3f}@{s}" for s in (20, 128, 400))
    note = "monotone" if not report.flags else f"flagged: {report.flags}"
    elapsed = time.perf_counter() - t0
    ok(7, f"sweep reported ({trend}; {note}) in {elapsed / 60:.1f} min")


# ---------------------------------------------------------------------------
# 8. edit-distance oracle
# ---------------------------------------------------------------------------


def brute_levenshtein(a, b):
    if not a:
        return len(b)
    if not b:
        return len(a)
    if a[0] == b[0]:
        return brute_levenshtein(a[1:], b[1:])
    return 1 + min(brute_levenshtein(a[1:], b),
                   brute_levenshtein(a, b[1:]),
                   brute_levenshtein(a[1:], b[1:]))


def test_criterion_08_edit_distance_oracle():
    t0 = time.perf_counter()
    seqs = [tuple()]
    for n in range(1, 5):
        seqs += list(itertools.product("abc", repeat=n))
    checked = 0
    for a in seqs:
        for b in seqs:
            assert edit_distance(a, b) == brute_levenshtein(a, b)
            checked += 1
    rng = np.random.default_rng(5)
    alphabet = "wxyz"
    for _ in range(1000):
        a = tuple(rng.choice(list(alphabet), size=rng.integers(0, 7)))
        b = tuple(rng.choice(list(alphabet), size=rng.integers(0, 7)))
        assert edit_distance(a, b) == brute_levenshtein(a, b)
        checked += 1
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    ok(8, f"{checked} pairs agree with the exhaustive-recursion oracle in {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 9. determinism and resume
# ---------------------------------------------------------------------------


def test_criterion_09_determinism_and_resume(tmp_path):
    t0 = time.perf_counter()
    train_ex, dev_ex, _ = gen_synthetic_inflection(100, 8, seed=41)
    src_vocab, tgt_vocab = build_vocab(train_ex)
    cfg = TransformerConfig(num_layers=1, num_heads=2, d_model=16, d_ff=32,
                            dropout_rate=0.1, max_positions=64)
    config = TrainConfig(total_steps=2000, eval_every=200, batch_size=16,
                         warmup_steps=200, dropout_rate=0.1, seed=13)

    def run(out):
        model = TransducerModel.init(cfg, src_vocab, tgt_vocab, seed=13)
        return train(model, train_ex, dev_ex, config, out_dir=str(out))

    res_a = run(tmp_path / "a")
    res_b = run(tmp_path / "b")

    # checkpoint 5 (step 1000) bit-identical across same-seed runs
    ck_a = load_checkpoint(tmp_path / "a" / "checkpoints" / "step-001000.ckpt")
    ck_b = load_checkpoint(tmp_path / "b" / "checkpoints" / "step-001000.ckpt")
    for name in ck_a.params:
        np.testing.assert_array_equal(ck_a.params[name], ck_b.params[name])
    bytes_a = (tmp_path / "a" / "checkpoints" / "step-001000.ckpt").read_bytes()
    bytes_b = (tmp_path / "b" / "checkpoints" / "step-001000.ckpt").read_bytes()
    assert bytes_a == bytes_b

    # resume at step 1000 reproduces the unbroken run at step 2000
    resumed = resume_training(ck_a, train_ex, dev_ex, total_steps=2000)
    for name in res_a.final.params:
        np.testing.assert_array_equal(res_a.final.params[name],
                                      resumed.final.params[name])
    assert resumed.history == res_a.history
    elapsed = time.perf_counter() - t0
    ok(9, f"checkpoint 5 byte-identical; resume matches unbroken run; {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 10. metric formulas on hand-computed fixtures
# ---------------------------------------------------------------------------


def test_criterion_10_metric_fixtures():
    tol = 1e-12

    def p(gold, predicted):
        return Prediction(source=gold, predicted=list(predicted), gold=list(gold))

    # all predictions exactly correct
    r = evaluate([p("smeared", "smeared"), p("cats", "cats"), p("ab", "ab")])
    for value, expected in [(r.acc, 1.0), (r.mean_dist, 0.0), (r.wer, 0.0),
                            (r.per, 0.0), (r.cer_i, 0.0)]:
        assert abs(value - expected) <= tol

    # single deletion: pred "smeard" vs gold "smeared" (length 7)
    r = evaluate([p("smeared", "smeard")])
    for value, expected in [(r.acc, 0.0), (r.mean_dist, 1.0), (r.wer, 1.0),
                            (r.per, 1 / 7), (r.cer_i, 1 / 7)]:
        assert abs(value - expected) <= tol

    # one exact item plus one at distance 2 with gold length 4
    r = evaluate([p("abcd", "abcd"), p("wxyz", "wxAB")])
    for value, expected in [(r.acc, 0.5), (r.mean_dist, 1.0), (r.wer, 0.5),
                            (r.per, 2 / 8), (r.cer_i, 0.5)]:
        assert abs(value - expected) <= tol

    ok(10, "three-item fixtures match ACC/Dist/WER/PER/CER_i to 1e-12")
