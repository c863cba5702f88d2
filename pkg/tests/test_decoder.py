import numpy as np
import pytest

from graphmt.data import BOS_ID, EOS_ID
from graphmt.decoder import (DecoderConfig, beam_decode, decode_states,
                             default_max_len, generate_distribution,
                             greedy_decode, init_decoder_params, output_logits)
from graphmt.encoder import EncoderOutput
from graphmt.errors import ConfigError, DataError
from graphmt.tensor import Tensor

import oracles
from conftest import figure1_graph, tiny_configs, tiny_model


def seeded_decoder(seed=0, vocab=11, attend="textual", layers=2):
    _, cfg = tiny_configs(attend=attend, dec_layers=layers)
    params = init_decoder_params(cfg, vocab, np.random.default_rng(seed))
    return cfg, params


def fake_encoder_output(rng, n_text=3, n_vis=2, d=8):
    return EncoderOutput(h_x=Tensor(rng.standard_normal((n_text, d))),
                         h_o=Tensor(rng.standard_normal((n_vis, d))))


class TestDecodeStates:
    def test_causality_is_exact(self, rng):
        cfg, params = seeded_decoder()
        enc_out = fake_encoder_output(rng)
        prefix = [BOS_ID, 4, 5, 6, 7]
        base = decode_states(prefix, enc_out, params, cfg).data
        for k in range(1, len(prefix)):
            changed = list(prefix)
            changed[k] = 9
            out = decode_states(changed, enc_out, params, cfg).data
            np.testing.assert_array_equal(out[:k], base[:k])
            assert np.abs(out[k:] - base[k:]).max() > 0

    def test_textual_mode_ignores_visual_states(self, rng):
        cfg, params = seeded_decoder()
        h_x = rng.standard_normal((3, 8))
        out_a = decode_states([BOS_ID, 4], EncoderOutput(
            Tensor(h_x), Tensor(rng.standard_normal((2, 8)))), params, cfg).data
        out_b = decode_states([BOS_ID, 4], EncoderOutput(
            Tensor(h_x), Tensor(rng.standard_normal((2, 8)))), params, cfg).data
        np.testing.assert_array_equal(out_a, out_b)

    def test_visual_mode_ignores_textual_states(self, rng):
        cfg, params = seeded_decoder(attend="visual")
        h_o = rng.standard_normal((2, 8))
        out_a = decode_states([BOS_ID, 4], EncoderOutput(
            Tensor(rng.standard_normal((3, 8))), Tensor(h_o)), params, cfg).data
        out_b = decode_states([BOS_ID, 4], EncoderOutput(
            Tensor(rng.standard_normal((5, 8))), Tensor(h_o)), params, cfg).data
        np.testing.assert_array_equal(out_a, out_b)

    def test_visual_mode_rejects_empty_visual(self, rng):
        cfg, params = seeded_decoder(attend="visual")
        enc_out = EncoderOutput(Tensor(rng.standard_normal((3, 8))),
                                Tensor(np.zeros((0, 8))))
        with pytest.raises(DataError):
            decode_states([BOS_ID], enc_out, params, cfg)

    def test_both_mode_sums_contexts(self, rng):
        cfg, params = seeded_decoder(attend="both")
        enc_out = fake_encoder_output(rng)
        got = decode_states([BOS_ID, 4, 5], enc_out, params, cfg).data
        want = oracles.decoder_stack([BOS_ID, 4, 5], enc_out.h_x.data,
                                     enc_out.h_o.data, params, cfg.n_heads,
                                     attend_mode="both")
        assert np.abs(got - want).max() < 1e-10

    def test_matches_straight_line_oracle(self, rng):
        cfg, params = seeded_decoder(seed=3)
        enc_out = fake_encoder_output(rng, n_text=3)
        got = decode_states([BOS_ID, 5], enc_out, params, cfg).data
        want = oracles.decoder_stack([BOS_ID, 5], enc_out.h_x.data,
                                     enc_out.h_o.data, params, cfg.n_heads)
        assert np.abs(got - want).max() < 1e-10

    def test_empty_prefix_rejected(self, rng):
        cfg, params = seeded_decoder()
        with pytest.raises(DataError):
            decode_states([], fake_encoder_output(rng), params, cfg)


class TestGenerator:
    def test_zero_weights_give_uniform(self, rng):
        cfg, params = seeded_decoder()
        params.gen_w.data[...] = 0.0
        params.gen_b.data[...] = 0.0
        dist = generate_distribution(Tensor(rng.standard_normal(8)), params).data
        np.testing.assert_allclose(dist, np.full(11, 1 / 11), atol=1e-15)

    def test_large_bias_saturates(self, rng):
        cfg, params = seeded_decoder()
        params.gen_b.data[5] = 50.0
        dist = generate_distribution(Tensor(np.zeros(8)), params).data
        assert dist[5] > 1 - 1e-12

    def test_matches_direct_formula(self, rng):
        cfg, params = seeded_decoder(seed=4)
        s = rng.standard_normal(8)
        dist = generate_distribution(Tensor(s), params).data
        logits = params.gen_w.data @ s + params.gen_b.data
        e = np.exp(logits - logits.max())
        np.testing.assert_allclose(dist, e / e.sum(), rtol=1e-12)
        assert abs(dist.sum() - 1.0) < 1e-9

    def test_distribution_property(self, rng):
        for seed in range(100):
            cfg, params = seeded_decoder(seed=seed, layers=1)
            dist = generate_distribution(
                Tensor(np.random.default_rng(seed).standard_normal((3, 8))),
                params).data
            assert (dist >= 0).all()
            np.testing.assert_allclose(dist.sum(axis=-1), 1.0, atol=1e-9)


class TestGreedy:
    def test_forced_eos_gives_empty_translation(self, rng):
        cfg, params = seeded_decoder()
        params.gen_b.data[...] = 0.0
        params.gen_b.data[EOS_ID] = 50.0
        assert greedy_decode(fake_encoder_output(rng), params, cfg, max_len=10) == []

    def test_deterministic(self, rng):
        cfg, params = seeded_decoder(seed=5)
        enc_out = fake_encoder_output(rng)
        assert greedy_decode(enc_out, params, cfg, 8) == \
            greedy_decode(enc_out, params, cfg, 8)

    def test_matches_step_by_step_argmax(self, rng):
        cfg, params = seeded_decoder(seed=6)
        enc_out = fake_encoder_output(rng, n_text=5)
        got = greedy_decode(enc_out, params, cfg, max_len=6)

        prefix = [BOS_ID]
        want = []
        for _ in range(6):
            nxt = int(np.argmax(oracles.next_token_logprobs(prefix, enc_out,
                                                            params, cfg)))
            if nxt == EOS_ID:
                break
            want.append(nxt)
            prefix.append(nxt)
        assert got == want

    def test_max_len_validation(self, rng):
        cfg, params = seeded_decoder()
        with pytest.raises(ConfigError):
            greedy_decode(fake_encoder_output(rng), params, cfg, max_len=0)


class TestBeam:
    def test_beam_one_equals_greedy_on_100_models(self):
        for seed in range(100):
            cfg, params = seeded_decoder(seed=seed, vocab=9, layers=1)
            enc_out = fake_encoder_output(np.random.default_rng(seed), n_text=3)
            greedy = greedy_decode(enc_out, params, cfg, max_len=5)
            beam = beam_decode(enc_out, params, cfg, beam_size=1, max_len=5)
            assert beam == greedy, f"seed {seed}: {beam} != {greedy}"

    def test_huge_beam_matches_exhaustive_enumeration(self, rng):
        vocab, max_len = 5, 3
        cfg, params = seeded_decoder(seed=7, vocab=vocab, layers=1)
        enc_out = fake_encoder_output(rng, n_text=3)
        got = beam_decode(enc_out, params, cfg, beam_size=vocab ** max_len,
                          max_len=max_len)
        want, _ = oracles.enumerate_best_sequence(enc_out, params, cfg, max_len)
        assert got == want

    def test_beam_score_at_least_greedy(self, rng):
        for seed in range(20):
            cfg, params = seeded_decoder(seed=seed, vocab=9, layers=1)
            enc_out = fake_encoder_output(np.random.default_rng(seed + 50), n_text=3)

            def normalized_score(tokens, max_len):
                # sequences shorter than max_len terminated via EOS; score it too
                steps = list(tokens) + ([EOS_ID] if len(tokens) < max_len else [])
                prefix = [BOS_ID]
                score = 0.0
                for tok in steps:
                    logp = oracles.next_token_logprobs(prefix, enc_out, params, cfg)
                    score += logp[tok]
                    prefix.append(tok)
                return score / len(steps)

            greedy = greedy_decode(enc_out, params, cfg, max_len=4)
            beam = beam_decode(enc_out, params, cfg, beam_size=4, max_len=4)
            if greedy == beam:
                continue
            assert normalized_score(beam, 4) >= normalized_score(greedy, 4) - 1e-12

    def test_beam_size_validation(self, rng):
        cfg, params = seeded_decoder()
        with pytest.raises(ConfigError):
            beam_decode(fake_encoder_output(rng), params, cfg, beam_size=0, max_len=3)


class TestEndToEnd:
    def test_translate_uses_default_max_len(self):
        model = tiny_model()
        graph = figure1_graph()
        out = model.translate(graph)
        assert len(out) <= default_max_len(graph.n_text)

    def test_full_model_logprob_row_is_distribution(self, rng):
        model = tiny_model(seed=2)
        enc_out = model.encode(figure1_graph())
        states = decode_states([BOS_ID, 4], enc_out, model.dec_params,
                               model.dec_config)
        probs = generate_distribution(states, model.dec_params).data
        np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-9)
