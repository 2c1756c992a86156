import math

import numpy as np
import pytest

from chartransducer.data import Vocabulary
from chartransducer.featenc import (
    EncodedSource,
    SourceToken,
    TokenType,
    build_source,
    embed_source,
    pad_sources,
    sinusoid_table,
    sinusoidal_pe,
)
from chartransducer.model import TransducerModel

from conftest import tiny_config


@pytest.fixture()
def vocab():
    v = Vocabulary()
    for s in ["V", "PST", "PTCP", "s", "m", "e", "a", "r", "b"]:
        v.add(s)
    return v


class TestBuildSource:
    def test_feature_bundle_positions(self, vocab):
        # inflecting with bundle V;PST;PTCP: features share position 0,
        # characters count 1..5
        src = build_source(["V", "PST", "PTCP"], list("smear"), vocab)
        assert [t.position_index for t in src.tokens] == [0, 0, 0, 1, 2, 3, 4, 5]
        assert [t.token_type for t in src.tokens] == [TokenType.FEATURE] * 3 + [TokenType.CHARACTER] * 5

    def test_no_features(self, vocab):
        src = build_source([], ["a", "b"], vocab)
        assert [t.position_index for t in src.tokens] == [1, 2]

    def test_features_only(self, vocab):
        src = build_source(["V", "PST"], [], vocab)
        assert [t.position_index for t in src.tokens] == [0, 0]

    def test_unknown_symbol_raises_in_training(self, vocab):
        with pytest.raises(KeyError):
            build_source([], ["z"], vocab)

    def test_unknown_symbol_maps_to_unk_in_eval(self, vocab):
        src = build_source([], ["z"], vocab, allow_unk=True)
        assert src.tokens[0].symbol_id == Vocabulary.UNK

    def test_features_last_flag(self, vocab):
        src = build_source(["V"], ["a", "b"], vocab, features_last=True)
        assert [t.token_type for t in src.tokens] == [TokenType.CHARACTER] * 2 + [TokenType.FEATURE]
        assert [t.position_index for t in src.tokens] == [1, 2, 0]

    def test_relative_distance_consistency(self, vocab):
        # distance from any character to any feature equals the
        # character's own index, no matter how many features there are
        for bundle in (["V"], ["V", "PST"], ["V", "PST", "PTCP"]):
            src = build_source(bundle, list("smear"), vocab)
            feats = [t for t in src.tokens if t.token_type == TokenType.FEATURE]
            chars = [t for t in src.tokens if t.token_type == TokenType.CHARACTER]
            for c in chars:
                assert all(c.position_index - f.position_index == c.position_index for f in feats)


class TestEncodedSourceInvariants:
    def test_feature_position_must_be_zero(self):
        with pytest.raises(ValueError):
            EncodedSource([SourceToken(4, TokenType.FEATURE, 1)])

    def test_character_positions_must_be_consecutive(self):
        with pytest.raises(ValueError):
            EncodedSource([SourceToken(4, TokenType.CHARACTER, 2)])

    def test_interleaved_features_rejected(self):
        with pytest.raises(ValueError):
            EncodedSource([
                SourceToken(4, TokenType.CHARACTER, 1),
                SourceToken(5, TokenType.FEATURE, 0),
                SourceToken(6, TokenType.CHARACTER, 2),
            ])


class TestSinusoidalPe:
    def test_position_zero(self):
        pe = sinusoidal_pe(0, 8)
        np.testing.assert_array_equal(pe[0::2], np.zeros(4))
        np.testing.assert_array_equal(pe[1::2], np.ones(4))

    def test_position_one_first_entry(self):
        assert sinusoidal_pe(1, 8)[0] == pytest.approx(math.sin(1.0), rel=1e-12)

    def test_formula_at_arbitrary_slot(self):
        d = 16
        pe = sinusoidal_pe(37, d)
        for i in range(d // 2):
            angle = 37 / 10000 ** (2 * i / d)
            assert pe[2 * i] == pytest.approx(math.sin(angle), rel=1e-12)
            assert pe[2 * i + 1] == pytest.approx(math.cos(angle), rel=1e-12)

    def test_bounded(self):
        table = sinusoid_table(500, 32)
        assert (table >= -1).all() and (table <= 1).all()


class TestEmbedSource:
    def embed(self, model, src, mode):
        batch = pad_sources([src])
        return embed_source(batch, model.params, model.config, training=False, mode=mode)

    def test_features_differ_only_by_symbol_embedding(self, vocab, synth_vocabs):
        src_vocab, tgt_vocab = synth_vocabs
        model = TransducerModel.init(tiny_config(), src_vocab, tgt_vocab, seed=1)
        feats = src_vocab.non_reserved[:2]
        src = build_source(feats, ["a"], src_vocab)
        out = self.embed(model, src, "feature_invariant").data[0]
        d = model.config.d_model
        emb = model.params["src_embed.weight"].data
        ids = [src_vocab.index(f) for f in feats]
        delta_expected = (emb[ids[0]] - emb[ids[1]]) * math.sqrt(d)
        np.testing.assert_allclose(out[0] - out[1], delta_expected, atol=1e-12)

    def test_vanilla_positions_consecutive_without_type(self, synth_vocabs):
        src_vocab, tgt_vocab = synth_vocabs
        model = TransducerModel.init(tiny_config(), src_vocab, tgt_vocab, seed=1)
        feats = src_vocab.non_reserved[:2]
        src = build_source(feats, ["a", "b"], src_vocab)
        batch = pad_sources([src])
        d = model.config.d_model
        emb = model.params["src_embed.weight"].data
        pe = sinusoid_table(4, d)
        expected = emb[batch.ids[0]] * math.sqrt(d) + pe[np.arange(4)]
        out = self.embed(model, src, "vanilla").data[0]
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_zero_type_embedding_leaves_position_difference(self, synth_vocabs):
        # with type weights zeroed the two modes differ only in which
        # position row each token receives
        src_vocab, tgt_vocab = synth_vocabs
        model = TransducerModel.init(tiny_config(), src_vocab, tgt_vocab, seed=2)
        model.params["type_embed.weight"].data = np.zeros_like(
            model.params["type_embed.weight"].data)
        feats = src_vocab.non_reserved[:2]
        src = build_source(feats, ["a", "b"], src_vocab)
        d = model.config.d_model
        inv = self.embed(model, src, "feature_invariant").data[0]
        van = self.embed(model, src, "vanilla").data[0]
        pe = sinusoid_table(4, d)
        np.testing.assert_allclose(inv - van, pe[[0, 0, 1, 2]] - pe[[0, 1, 2, 3]], atol=1e-12)

    def test_position_overflow_rejected(self, synth_vocabs):
        src_vocab, tgt_vocab = synth_vocabs
        model = TransducerModel.init(tiny_config(max_positions=4), src_vocab, tgt_vocab, seed=1)
        src = build_source([], list("abba"), src_vocab)
        with pytest.raises(ValueError, match="max_positions"):
            self.embed(model, src, "feature_invariant")


class TestPadSources:
    def test_mask_marks_real_tokens(self, vocab):
        a = build_source(["V"], ["a"], vocab)
        b = build_source(["V", "PST"], ["a", "b"], vocab)
        batch = pad_sources([a, b])
        assert batch.ids.shape == (2, 4)
        np.testing.assert_array_equal(batch.mask, [[True, True, False, False]] * 1 + [[True] * 4])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            pad_sources([])
