import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from soundreel import layers
from soundreel.encoder import (
    AttentionResult,
    EncoderDims,
    TemporalState,
    attention_fwd,
    build_frame_conditions,
    encode_audio,
    encode_segments,
    encode_temporal,
    encoder_forward,
    extract_segment_features,
    init_encoder_params,
    load_encoder,
    map_to_condition_space,
    save_encoder,
    temporal_attention,
)
from soundreel.audio import Waveform

from conftest import TINY_DIMS

RNG = np.random.default_rng(0)


def tiny_params(seed=1):
    return init_encoder_params(TINY_DIMS, seed=seed, sos_token=RNG.standard_normal(8), text_seed=0)


class TestFeatureExtractor:
    def test_zero_segments_share_bias_path_output(self):
        from soundreel.encoder import conv_stack_fwd

        params = tiny_params()
        f1 = extract_segment_features(np.zeros((8, 8)), params)
        f2 = extract_segment_features(np.zeros((8, 8)), params)
        np.testing.assert_array_equal(f1, f2)
        # in a batch alongside nonzero segments the result must not change:
        # instance norm has no batch coupling
        segs = np.stack([np.zeros((8, 8)), RNG.standard_normal((8, 8)), np.zeros((8, 8))])
        feats0 = extract_segment_features(segs[0], params)
        batch_feats, _ = conv_stack_fwd(params, segs[:, None])
        np.testing.assert_allclose(batch_feats[0], feats0, atol=1e-12)
        np.testing.assert_allclose(batch_feats[2], feats0, atol=1e-12)

    def test_position_independence(self):
        params = tiny_params()
        seg = RNG.standard_normal((8, 8))
        direct = extract_segment_features(seg, params)
        for position in range(3):
            stack = RNG.standard_normal((3, 8, 8))
            stack[position] = seg
            from soundreel.encoder import conv_stack_fwd

            feats, _ = conv_stack_fwd(params, stack[:, None])
            np.testing.assert_allclose(feats[position], direct, atol=1e-12)

    def test_finite_and_correct_dim(self):
        params = tiny_params()
        f = extract_segment_features(RNG.standard_normal((8, 8)), params)
        assert f.shape == (TINY_DIMS.d_feat,)
        assert np.all(np.isfinite(f))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="2-D"):
            extract_segment_features(np.zeros((2, 8, 8)), tiny_params())


class TestTemporalEncoder:
    def test_empty_input_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            encode_temporal([], tiny_params())

    def test_single_step_matches_hand_cell(self):
        params = tiny_params()
        x = RNG.standard_normal(TINY_DIMS.d_feat)
        t = params.tensors
        a = x @ t["lstm_wx"] + t["lstm_b"]
        h = TINY_DIMS.d_emb

        def sig(v):
            return 1.0 / (1.0 + np.exp(-v))

        i, f, g, o = sig(a[:h]), sig(a[h : 2 * h]), np.tanh(a[2 * h : 3 * h]), sig(a[3 * h :])
        c = i * g
        want = o * np.tanh(c)
        got = encode_temporal([x], params)
        np.testing.assert_allclose(got[0].s, want, atol=1e-12)
        np.testing.assert_allclose(got[0].cell, c, atol=1e-12)

    def test_prefix_property(self):
        params = tiny_params()
        feats = [RNG.standard_normal(TINY_DIMS.d_feat) for _ in range(5)]
        full = encode_temporal(feats, params)
        for n in (1, 3):
            prefix = encode_temporal(feats[:n], params)
            for a, b in zip(prefix, full[:n]):
                np.testing.assert_array_equal(a.s, b.s)

    def test_zero_weights_analytic_step(self):
        params = tiny_params()
        h = TINY_DIMS.d_emb
        for key in ("lstm_wx", "lstm_wh"):
            params.tensors[key] = np.zeros_like(params.tensors[key])
        b = np.concatenate(
            [0.3 * np.ones(h), 0.1 * np.ones(h), -0.2 * np.ones(h), 0.5 * np.ones(h)]
        )
        params.tensors["lstm_b"] = b

        def sig(v):
            return 1.0 / (1.0 + np.exp(-v))

        c1 = sig(0.3) * np.tanh(-0.2)
        h1 = sig(0.5) * np.tanh(c1)
        c2 = sig(0.1) * c1 + sig(0.3) * np.tanh(-0.2)
        h2 = sig(0.5) * np.tanh(c2)
        got = encode_temporal([np.zeros(TINY_DIMS.d_feat)] * 2, params)
        np.testing.assert_allclose(got[0].s, h1, atol=1e-12)
        np.testing.assert_allclose(got[1].s, h2, atol=1e-12)


class TestTemporalAttention:
    def test_identical_states_give_uniform_weights(self):
        params = tiny_params()
        s = RNG.standard_normal(TINY_DIMS.d_emb)
        states = [TemporalState(s=s.copy(), cell=np.zeros_like(s)) for _ in range(4)]
        res = temporal_attention(states, params)
        np.testing.assert_allclose(res.alpha, 0.25, atol=1e-12)
        np.testing.assert_allclose(res.o_a, s, atol=1e-12)

    def test_singleton(self):
        params = tiny_params()
        s = RNG.standard_normal(TINY_DIMS.d_emb)
        res = temporal_attention([TemporalState(s=s, cell=np.zeros_like(s))], params)
        np.testing.assert_array_equal(res.alpha, [1.0])
        np.testing.assert_allclose(res.o_a, s, atol=1e-15)

    def test_dominant_projection_wins(self):
        # a logit 10 above the others must take >0.99 of the mass (3 segments),
        # and alpha must equal the softmax of the projection-head outputs
        params = tiny_params()
        t = params.tensors
        states = np.stack([RNG.standard_normal(TINY_DIMS.d_emb) for _ in range(3)])
        alpha, o_a, _ = attention_fwd(params, states[None])
        pre = np.tanh(states @ t["proj_w1"] + t["proj_b1"])
        logits = (pre @ t["proj_w2"] + t["proj_b2"])[:, 0]
        want = np.exp(logits - logits.max())
        want /= want.sum()
        np.testing.assert_allclose(alpha[0], want, atol=1e-12)
        crafted = np.array([0.0, 0.0, 10.0])
        soft = np.exp(crafted - crafted.max())
        soft /= soft.sum()
        assert soft[2] > 0.99

    @given(st.integers(1, 7), st.integers(0, 1000))
    @settings(max_examples=50, deadline=None)
    def test_simplex_and_weighted_sum_identity(self, n_seg, seed):
        rng = np.random.default_rng(seed)
        params = tiny_params()
        s_seq = rng.standard_normal((2, n_seg, TINY_DIMS.d_emb)) * 3.0
        alpha, o_a, _ = attention_fwd(params, s_seq)
        assert np.all(alpha >= 0.0)
        np.testing.assert_allclose(alpha.sum(axis=1), 1.0, atol=1e-6)
        np.testing.assert_array_equal(o_a, np.einsum("bn,bnh->bh", alpha, s_seq))


class TestFrameConditions:
    def setup_method(self):
        rng = np.random.default_rng(5)
        self.states = [
            TemporalState(s=rng.standard_normal(6), cell=np.zeros(6)) for _ in range(4)
        ]
        logits = rng.standard_normal(4)
        self.alpha = np.exp(logits) / np.exp(logits).sum()

    def test_k_zero_is_bit_exact_identity(self):
        conds = build_frame_conditions(self.states, self.alpha, k=0.0)
        for fc, st_ in zip(conds, self.states):
            assert np.array_equal(fc.c, st_.s)

    def test_k_one_mean_identity(self):
        conds = build_frame_conditions(self.states, self.alpha, k=1.0)
        mean_c = np.mean([fc.c for fc in conds], axis=0)
        o_a = np.einsum("n,nh->h", self.alpha, np.stack([s.s for s in self.states]))
        np.testing.assert_allclose(mean_c, o_a, rtol=1e-12)

    def test_uniform_alpha_k_one_returns_states(self):
        alpha = np.full(4, 0.25)
        conds = build_frame_conditions(self.states, alpha, k=1.0)
        for fc, st_ in zip(conds, self.states):
            np.testing.assert_allclose(fc.c, st_.s, atol=1e-15)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="same length"):
            build_frame_conditions(self.states, self.alpha[:2], k=1.0)


class TestMappingHead:
    def test_inference_deterministic(self):
        params = tiny_params()
        o_a = RNG.standard_normal(TINY_DIMS.d_emb)
        a = map_to_condition_space(o_a, params)
        b = map_to_condition_space(o_a, params)
        np.testing.assert_array_equal(a.tokens, b.tokens)

    def test_token_count_contract(self):
        params = tiny_params()
        mc = map_to_condition_space(RNG.standard_normal(TINY_DIMS.d_emb), params)
        assert mc.tokens.shape == (TINY_DIMS.l_tokens - 1, TINY_DIMS.d_tok)
        assert mc.full_sequence().shape == (TINY_DIMS.l_tokens, TINY_DIMS.d_tok)
        np.testing.assert_array_equal(mc.full_sequence()[0], params.sos_token)

    def test_dropout_active_only_in_training(self):
        dims = EncoderDims(
            n_mels=8, channels=(2, 3, 4), d_emb=8, h_proj=4, l_tokens=3, d_tok=8, h_map=6,
            dropout=0.5,
        )
        params = init_encoder_params(dims, seed=2, sos_token=np.zeros(8), text_seed=0)
        segs = RNG.standard_normal((1, 3, 8, 8))
        outs1, _ = encoder_forward(params, segs, train=False)
        outs2, _ = encoder_forward(params, segs, train=False)
        np.testing.assert_array_equal(outs1.mapped, outs2.mapped)
        rng_a = np.random.default_rng(0)
        rng_b = np.random.default_rng(1)
        outs3, _ = encoder_forward(params, segs, train=True, dropout_rng=rng_a)
        outs4, _ = encoder_forward(params, segs, train=True, dropout_rng=rng_b)
        assert not np.array_equal(outs3.mapped, outs4.mapped)


class TestEndToEnd:
    def make_wave(self, seed=0):
        rng = np.random.default_rng(seed)
        return Waveform(rng.uniform(-0.5, 0.5, size=8000), 16000, class_label=1)

    def test_encode_audio_deterministic(self):
        params = tiny_params()
        wave = self.make_wave()
        a1, c1, m1 = encode_audio(wave, 4, params, n_fft=256, hop=128)
        a2, c2, m2 = encode_audio(wave, 4, params, n_fft=256, hop=128)
        np.testing.assert_array_equal(a1.alpha, a2.alpha)
        np.testing.assert_array_equal(a1.o_a, a2.o_a)
        for x, y in zip(c1, c2):
            np.testing.assert_array_equal(x.c, y.c)
        np.testing.assert_array_equal(m1.tokens, m2.tokens)

    def test_silence_produces_finite_outputs(self):
        params = tiny_params()
        wave = Waveform(np.zeros(8000), 16000)
        attn, conds, mapped = encode_audio(wave, 4, params, n_fft=256, hop=128)
        assert np.all(np.isfinite(attn.o_a))
        assert np.all(np.isfinite(attn.alpha))
        assert all(np.all(np.isfinite(fc.c)) for fc in conds)
        assert np.all(np.isfinite(mapped.tokens))

    def test_checkpoint_round_trip(self, tmp_path):
        params = tiny_params(seed=9)
        save_encoder(params, tmp_path / "enc.npz")
        back = load_encoder(tmp_path / "enc.npz")
        assert back.dims == params.dims
        assert back.text_seed == params.text_seed
        assert set(back.tensors) == set(params.tensors)
        for k in params.tensors:
            np.testing.assert_array_equal(back.tensors[k], params.tensors[k])
        np.testing.assert_array_equal(back.sos_token, params.sos_token)
