import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from soundreel.denoisers import init_denoiser_points, make_predictor
from soundreel.diffusion import NoiseSchedule, make_step_noises, sample
from soundreel.guidance import (
    GuidanceConfig,
    MomentumState,
    audio_guidance_term,
    compute_psi,
    guided_eps,
    make_cfg_fn,
    make_guided_fn,
    momentum_update,
    percentile_mask_scale,
    percentile_mask_scale_batched,
    support_size,
    write_trace,
)

RNG = np.random.default_rng(0)


def nearest_rank_oracle(values, lambda_pct):
    """Brute-force threshold: value with exactly floor(lambda*D) entries below it."""
    mags = np.sort(np.abs(values).ravel())
    k = min(int(np.floor(lambda_pct * mags.size)), mags.size - 1)
    return mags[k]


class TestPsi:
    def test_equal_estimates_give_zero(self):
        e = RNG.standard_normal((4, 4))
        np.testing.assert_array_equal(compute_psi(e, e.copy()), np.zeros_like(e))

    def test_zero_uncond_passthrough(self):
        e = RNG.standard_normal(8)
        np.testing.assert_array_equal(compute_psi(e, np.zeros(8)), e)

    def test_matches_elementwise_subtraction(self):
        a = RNG.standard_normal((3, 5))
        b = RNG.standard_normal((3, 5))
        want = np.array([[a[i, j] - b[i, j] for j in range(5)] for i in range(3)])
        np.testing.assert_array_equal(compute_psi(a, b), want)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            compute_psi(np.zeros(3), np.zeros(4))


class TestPercentileMask:
    def test_fixed_vector_oracle(self):
        psi = np.arange(1.0, 11.0)
        eta = nearest_rank_oracle(psi, 0.8)
        assert eta == 9.0
        out = percentile_mask_scale(psi, sigma_c=2.0, lambda_pct=0.8)
        np.testing.assert_array_equal(out[:8], np.zeros(8))
        np.testing.assert_array_equal(out[8:], [18.0, 20.0])

    def test_zero_percentile_keeps_everything(self):
        psi = RNG.standard_normal((3, 4))
        out = percentile_mask_scale(psi, sigma_c=1.5, lambda_pct=0.0)
        np.testing.assert_allclose(out, 1.5 * psi, atol=1e-15)

    @given(st.integers(0, 500), st.floats(0.05, 0.95), st.floats(0.1, 10.0))
    @settings(max_examples=80, deadline=None)
    def test_positive_scaling_invariance(self, seed, lam, scale):
        rng = np.random.default_rng(seed)
        psi = rng.standard_normal(40)
        a = percentile_mask_scale(psi, 2.0, lam)
        b = percentile_mask_scale(scale * psi, 2.0, lam)
        np.testing.assert_allclose(b, scale * a, rtol=1e-10)
        np.testing.assert_array_equal(b != 0, a != 0)

    def test_support_size_law(self):
        for seed in range(200):
            rng = np.random.default_rng(seed)
            d = int(rng.integers(5, 200))
            lam = float(rng.uniform(0.0, 0.99))
            psi = rng.standard_normal(d)
            out = percentile_mask_scale(psi, 1.0, lam)
            want = int(np.ceil((1.0 - lam) * d))
            assert abs(support_size(out) - want) <= 1

    def test_constant_mode_literal_value(self):
        psi = np.array([-5.0, 1.0, 2.0, 3.0])
        out = percentile_mask_scale(psi, sigma_c=2.5, lambda_pct=0.5, mode="constant")
        np.testing.assert_array_equal(out, [2.5, 0.0, 0.0, 2.5])

    def test_batched_variant_matches_per_row(self):
        psi = RNG.standard_normal((6, 17))
        got = percentile_mask_scale_batched(psi, 2.0, 0.7)
        want = np.stack([percentile_mask_scale(row, 2.0, 0.7) for row in psi])
        np.testing.assert_array_equal(got, want)

    def test_empty_psi_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            percentile_mask_scale(np.zeros(0), 1.0, 0.5)


class TestMomentum:
    def test_zero_beta_copies_current(self):
        cur = RNG.standard_normal(5)
        st2 = momentum_update(MomentumState(), cur, beta_m=0.0)
        np.testing.assert_array_equal(st2.phi, cur)

    def test_fixed_point(self):
        phi = RNG.standard_normal(5)
        st2 = momentum_update(MomentumState(phi=phi.copy()), phi, beta_m=0.4)
        np.testing.assert_allclose(st2.phi, phi, atol=1e-15)

    def test_geometric_series_closed_form(self):
        v = RNG.standard_normal(6)
        beta = 0.6
        state = MomentumState()
        for k in range(1, 8):
            state = momentum_update(state, v, beta)
            np.testing.assert_allclose(state.phi, (1 - beta**k) * v, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            momentum_update(MomentumState(phi=np.zeros(3)), np.zeros(4), 0.5)


def const_predictor(table):
    """Predictor returning a fixed tensor per condition key (by id)."""

    def fn(z, t, cond):
        return table[id(cond)]

    return fn


class TestAudioGuidanceTerm:
    def setup_method(self):
        self.cfg = GuidanceConfig(delta=10, sigma_c=2.0, lambda_pct=0.5, sigma_m=1.0, beta_m=0.5)
        self.c_n = np.ones(3)
        self.null = np.zeros(3)
        self.z = np.zeros(6)

    def test_zero_scales_give_zero_term(self):
        cfg = GuidanceConfig(delta=10, sigma_c=0.0, sigma_m=0.0)
        eps_a = RNG.standard_normal(6)
        eps_u = RNG.standard_normal(6)
        pred = const_predictor({id(self.c_n): eps_a, id(self.null): eps_u})
        lam, _ = audio_guidance_term(self.z, 5, self.c_n, self.null, pred, cfg, MomentumState())
        np.testing.assert_array_equal(lam, np.zeros(6))

    def test_no_momentum_reduces_to_masked_psi(self):
        cfg = GuidanceConfig(delta=10, sigma_c=2.0, lambda_pct=0.5, sigma_m=0.0)
        eps_a = RNG.standard_normal(6)
        eps_u = RNG.standard_normal(6)
        pred = const_predictor({id(self.c_n): eps_a, id(self.null): eps_u})
        lam, _ = audio_guidance_term(self.z, 5, self.c_n, self.null, pred, cfg, MomentumState())
        want = percentile_mask_scale(eps_a - eps_u, 2.0, 0.5)
        np.testing.assert_array_equal(lam, want)

    def test_momentum_unrolls_by_hand(self):
        eps_a = RNG.standard_normal(6)
        eps_u = RNG.standard_normal(6)
        pred = const_predictor({id(self.c_n): eps_a, id(self.null): eps_u})
        masked = percentile_mask_scale(eps_a - eps_u, 2.0, 0.5)
        state = MomentumState()
        lam1, state = audio_guidance_term(self.z, 5, self.c_n, self.null, pred, self.cfg, state)
        np.testing.assert_allclose(lam1, masked, atol=1e-15)
        lam2, state = audio_guidance_term(self.z, 4, self.c_n, self.null, pred, self.cfg, state)
        np.testing.assert_allclose(lam2, masked + 0.5 * masked, atol=1e-14)

    def test_gated_after_delta(self):
        pred = const_predictor({id(self.c_n): np.zeros(6), id(self.null): np.zeros(6)})
        with pytest.raises(ValueError, match="gated"):
            audio_guidance_term(self.z, 11, self.c_n, self.null, pred, self.cfg, MomentumState())


class TestGuidedEps:
    def setup_method(self):
        self.params = init_denoiser_points(seed=3, d_cond=8, hidden=16, d_time=8)
        self.pred = make_predictor(self.params)
        self.c_p = RNG.standard_normal(8)
        self.c_n = RNG.standard_normal(8)
        self.null = self.params.null_condition()
        self.z = RNG.standard_normal((4, 2))

    def test_g_one_audio_off_is_exactly_conditional(self):
        cfg = GuidanceConfig(delta=10, g=1.0, sigma_c=0.0, sigma_m=0.0)
        eps, _ = guided_eps(self.z, 5, self.c_p, self.c_n, self.null, self.pred, cfg, MomentumState())
        np.testing.assert_array_equal(eps, self.pred(self.z, 5, self.c_p))

    def test_g_zero_after_delta_is_exactly_unconditional(self):
        cfg = GuidanceConfig(delta=3, g=0.0, sigma_c=5.0)
        eps, _ = guided_eps(self.z, 7, self.c_p, self.c_n, self.null, self.pred, cfg, MomentumState())
        np.testing.assert_array_equal(eps, self.pred(self.z, 7, self.null))

    def test_matching_audio_and_null_estimates_leave_pure_momentum(self):
        # c_n == null condition: psi == 0, so the audio term is zero on step one
        cfg = GuidanceConfig(delta=10, g=2.0, sigma_c=5.0, sigma_m=0.5)
        eps, _ = guided_eps(self.z, 5, self.c_p, self.null, self.null, self.pred, cfg, MomentumState())
        eps_u = self.pred(self.z, 5, self.null)
        eps_p = self.pred(self.z, 5, self.c_p)
        np.testing.assert_allclose(eps, eps_u + 2.0 * (eps_p - eps_u), atol=1e-14)

    def test_audio_predictor_never_called_above_delta(self):
        cfg = GuidanceConfig(delta=20, g=3.0, sigma_c=5.0)
        schedule = NoiseSchedule.linear(50)
        audio_calls = []
        per_step_calls = {}

        def counting(z, t, cond):
            per_step_calls[t] = per_step_calls.get(t, 0) + 1
            if cond is self.c_n:
                audio_calls.append(t)
            return self.pred(z, t, cond)

        fn = make_guided_fn(counting, self.c_p, self.c_n, self.null, cfg)
        sample(self.z, fn, schedule, rng=np.random.default_rng(0))
        assert audio_calls and max(audio_calls) <= 20
        assert all(t <= 20 for t in audio_calls)
        assert max(per_step_calls.values()) <= 3
        assert all(per_step_calls[t] == 2 for t in range(21, 51))

    def test_trajectory_bit_identical_with_audio_disabled(self):
        cfg = GuidanceConfig(delta=30, g=3.0, sigma_c=0.0, sigma_m=0.0)
        schedule = NoiseSchedule.linear(40)
        z_T = RNG.standard_normal((4, 2))
        noises = make_step_noises(np.random.default_rng(9), 40, (4, 2))
        guided = make_guided_fn(self.pred, self.c_p, self.c_n, self.null, cfg)
        cfg_only = make_cfg_fn(self.pred, self.c_p, self.null, g=3.0)
        a = sample(z_T, guided, schedule, noises=noises)
        b = sample(z_T, cfg_only, schedule, noises=noises)
        np.testing.assert_array_equal(a, b)

    def test_momentum_state_fresh_per_guided_fn(self):
        cfg = GuidanceConfig(delta=40, g=1.0, sigma_c=5.0, sigma_m=1.0, beta_m=0.5)
        schedule = NoiseSchedule.linear(40)
        z_T = RNG.standard_normal((4, 2))
        noises = make_step_noises(np.random.default_rng(2), 40, (4, 2))
        runs = []
        for _ in range(2):
            fn = make_guided_fn(self.pred, self.c_p, self.c_n, self.null, cfg)
            runs.append(sample(z_T, fn, schedule, noises=noises))
        np.testing.assert_array_equal(runs[0], runs[1])

    def test_trace_records_guided_steps(self, tmp_path):
        cfg = GuidanceConfig(delta=5, g=2.0, sigma_c=3.0)
        schedule = NoiseSchedule.linear(12)
        trace = []
        fn = make_guided_fn(self.pred, self.c_p, self.c_n, self.null, cfg, trace=trace)
        sample(RNG.standard_normal((2, 2)), fn, schedule, rng=np.random.default_rng(0))
        assert [row["t"] for row in trace] == [5, 4, 3, 2, 1]
        assert all(set(r) == {"t", "psi_norm", "support_size", "lambda_norm"} for r in trace)
        write_trace(trace, tmp_path / "tr.csv")
        header = (tmp_path / "tr.csv").read_text().splitlines()[0]
        assert header == "t,psi_norm,support_size,lambda_norm"


class TestConfigValidation:
    def test_default_for_midpoints(self):
        cfg = GuidanceConfig.default_for(100)
        assert cfg.delta == 88
        assert cfg.sigma_c == 5.0
        assert cfg.lambda_pct == 0.9

    def test_range_checks(self):
        with pytest.raises(ValueError, match="delta"):
            GuidanceConfig(delta=0).validate()
        with pytest.raises(ValueError, match="delta"):
            GuidanceConfig(delta=101).validate(100)
        with pytest.raises(ValueError, match="lambda_pct"):
            GuidanceConfig(delta=5, lambda_pct=1.0).validate()
        with pytest.raises(ValueError, match="sigma_m"):
            GuidanceConfig(delta=5, sigma_m=1.5).validate()
        with pytest.raises(ValueError, match="mask_value_mode"):
            GuidanceConfig(delta=5, mask_value_mode="weird").validate()

    def test_round_trip_dict(self):
        cfg = GuidanceConfig.default_for(100, sigma_c=2.5)
        np.testing.assert_equal(GuidanceConfig.from_dict(cfg.to_dict()), cfg)
