import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from soundreel.audio import Waveform
from soundreel.denoisers import init_denoiser_image, init_denoiser_points
from soundreel.diffusion import NoiseSchedule
from soundreel.encoder import init_encoder_params
from soundreel.guidance import GuidanceConfig
from soundreel.text import sos_token
from soundreel.video import (
    FrameSequence,
    VideoRequest,
    build_manifest,
    frame_consistency_report,
    frame_rms,
    generate_initial_frame,
    generate_video,
    interpolate_conditions,
    slerp,
    write_frames,
    write_manifest,
)

from conftest import TINY_DIMS

RNG = np.random.default_rng(0)


class TestSlerp:
    def test_endpoints_bit_exact(self):
        a = RNG.standard_normal(8)
        b = RNG.standard_normal(8)
        np.testing.assert_array_equal(slerp(a, b, 0.0), a)
        np.testing.assert_array_equal(slerp(a, b, 1.0), b)

    def test_orthonormal_midpoint(self):
        a = np.zeros(4)
        a[0] = 1.0
        b = np.zeros(4)
        b[1] = 1.0
        mid = slerp(a, b, 0.5)
        np.testing.assert_allclose(mid, (a + b) / np.sqrt(2.0), atol=1e-6)
        assert abs(np.linalg.norm(mid) - 1.0) < 1e-6

    def test_identical_vectors_return_input_for_any_t(self):
        a = RNG.standard_normal(6)
        for t in np.random.default_rng(1).uniform(0, 1, size=100):
            np.testing.assert_allclose(slerp(a, a.copy(), float(t)), a, atol=1e-12)

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError, match="nonzero"):
            slerp(np.zeros(3), np.ones(3), 0.5)

    @given(st.integers(0, 300), st.floats(0.0, 1.0))
    @settings(max_examples=60, deadline=None)
    def test_unit_inputs_stay_unit(self, seed, t):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal(8)
        b = rng.standard_normal(8)
        a /= np.linalg.norm(a)
        b /= np.linalg.norm(b)
        out = slerp(a, b, float(t))
        assert abs(np.linalg.norm(out) - 1.0) < 1e-6


class TestInterpolation:
    def test_k_zero_identity(self):
        conds = [RNG.standard_normal(4) for _ in range(3)]
        out = interpolate_conditions(conds, 0)
        assert len(out) == 3
        for a, b in zip(out, conds):
            np.testing.assert_array_equal(a, b)

    def test_two_conditions_one_interpolant(self):
        a, b = RNG.standard_normal(4), RNG.standard_normal(4)
        out = interpolate_conditions([a, b], 1)
        assert len(out) == 3
        np.testing.assert_array_equal(out[0], a)
        np.testing.assert_array_equal(out[2], b)
        np.testing.assert_allclose(out[1], slerp(a, b, 0.5), atol=1e-14)

    def test_originals_at_expected_indices(self):
        conds = [RNG.standard_normal(4) for _ in range(3)]
        out = interpolate_conditions(conds, 2)
        assert len(out) == 7
        for i, c in zip((0, 3, 6), conds):
            np.testing.assert_array_equal(out[i], c)

    @given(st.integers(1, 6), st.integers(0, 4))
    @settings(max_examples=40, deadline=None)
    def test_frame_count_law(self, n, k):
        rng = np.random.default_rng(n * 10 + k)
        conds = [rng.standard_normal(3) + 0.1 for _ in range(n)]
        out = interpolate_conditions(conds, k)
        assert len(out) == n + (n - 1) * k


def make_models(substrate="points2d"):
    enc = init_encoder_params(TINY_DIMS, seed=1, sos_token=sos_token(0, 8), text_seed=0)
    if substrate == "points2d":
        den = init_denoiser_points(seed=2, d_cond=TINY_DIMS.d_emb, hidden=16, d_time=8, text_seed=0)
    else:
        den = init_denoiser_image(
            seed=2, d_cond=TINY_DIMS.d_emb, channels=4, n_tokens=2, d_time=8, size=8, text_seed=0
        )
    schedule = NoiseSchedule.linear(12)
    return enc, den, schedule


def make_request(**overrides):
    rng = np.random.default_rng(3)
    wave = Waveform(rng.uniform(-0.5, 0.5, size=8000), 16000, class_label=1)
    defaults = dict(
        prompt_label=1,
        audio=wave,
        guidance=GuidanceConfig.default_for(12),
        n_segments=4,
        interp_k=1,
        seed=5,
    )
    defaults.update(overrides)
    return VideoRequest(**defaults)


class TestGenerateVideo:
    def test_frame_count_and_shared_noise(self):
        enc, den, schedule = make_models()
        req = make_request(n_segments=5, interp_k=1)
        seq = generate_video(req, enc, den, schedule, n_fft=256, hop=128)
        assert len(seq.frames) == 9
        assert len(seq.conditions) == 9
        assert seq.z_T.shape == (2,)

    def test_deterministic_per_request(self):
        enc, den, schedule = make_models()
        req = make_request()
        s1 = generate_video(req, enc, den, schedule, n_fft=256, hop=128)
        s2 = generate_video(req, enc, den, schedule, n_fft=256, hop=128)
        np.testing.assert_array_equal(s1.z_T, s2.z_T)
        for a, b in zip(s1.frames, s2.frames):
            np.testing.assert_array_equal(a, b)

    def test_reduction_law_all_frames_equal_initial(self):
        enc, den, schedule = make_models()
        req = make_request(guidance=GuidanceConfig.default_for(12, sigma_c=0.0, sigma_m=0.0))
        seq = generate_video(req, enc, den, schedule, n_fft=256, hop=128)
        for f in seq.frames:
            np.testing.assert_array_equal(f, seq.initial_frame)

    def test_audio_term_changes_frames(self):
        enc, den, schedule = make_models()
        req = make_request(guidance=GuidanceConfig.default_for(12, sigma_c=8.0, lambda_pct=0.0))
        seq = generate_video(req, enc, den, schedule, n_fft=256, hop=128)
        assert any(not np.array_equal(f, seq.initial_frame) for f in seq.frames)

    def test_different_envelopes_differ(self):
        # same class, different clips: conditions differ so trajectories differ
        enc, den, schedule = make_models()
        rng = np.random.default_rng(8)
        w1 = Waveform(rng.uniform(-0.5, 0.5, 8000) * np.linspace(0.1, 1.0, 8000), 16000, 1)
        w2 = Waveform(rng.uniform(-0.5, 0.5, 8000) * np.linspace(1.0, 0.1, 8000), 16000, 1)
        g = GuidanceConfig.default_for(12, sigma_c=8.0, lambda_pct=0.0)
        s1 = generate_video(make_request(audio=w1, guidance=g), enc, den, schedule, n_fft=256, hop=128)
        s2 = generate_video(make_request(audio=w2, guidance=g), enc, den, schedule, n_fft=256, hop=128)
        np.testing.assert_array_equal(s1.z_T, s2.z_T)
        assert any(not np.array_equal(a, b) for a, b in zip(s1.frames, s2.frames))

    def test_text_seed_mismatch_rejected(self):
        enc, den, schedule = make_models()
        den.text_seed = 99
        with pytest.raises(ValueError, match="text embedding"):
            generate_video(make_request(), enc, den, schedule, n_fft=256, hop=128)

    def test_parallel_jobs_match_serial(self):
        enc, den, schedule = make_models()
        req = make_request(n_segments=3, interp_k=0)
        serial = generate_video(req, enc, den, schedule, n_fft=256, hop=128, jobs=1)
        parallel = generate_video(req, enc, den, schedule, n_fft=256, hop=128, jobs=2)
        for a, b in zip(serial.frames, parallel.frames):
            np.testing.assert_array_equal(a, b)


class TestInitialFrame:
    def test_same_seed_identical(self):
        _, den, schedule = make_models()
        c_p = RNG.standard_normal(TINY_DIMS.d_emb)
        g = GuidanceConfig.default_for(12)
        f1, z1 = generate_initial_frame(c_p, g, seed=4, denoiser=den, schedule=schedule)
        f2, z2 = generate_initial_frame(c_p, g, seed=4, denoiser=den, schedule=schedule)
        np.testing.assert_array_equal(f1, f2)
        np.testing.assert_array_equal(z1, z2)

    def test_audio_scales_irrelevant_to_initial_frame(self):
        _, den, schedule = make_models()
        c_p = RNG.standard_normal(TINY_DIMS.d_emb)
        f1, _ = generate_initial_frame(
            c_p, GuidanceConfig.default_for(12, sigma_c=0.0), 4, den, schedule
        )
        f2, _ = generate_initial_frame(
            c_p, GuidanceConfig.default_for(12, sigma_c=8.0, sigma_m=1.0), 4, den, schedule
        )
        np.testing.assert_array_equal(f1, f2)


class TestConsistencyReport:
    def test_constant_sequence_all_zero(self):
        f = RNG.standard_normal((1, 8, 8))
        rep = frame_consistency_report([f.copy() for _ in range(4)])
        assert rep == {
            "mean_adjacent_distance": 0.0,
            "max_adjacent_distance": 0.0,
            "anchor_distance": 0.0,
        }

    def test_two_frames_anchor_equals_adjacent(self):
        a, b = RNG.standard_normal(4), RNG.standard_normal(4)
        rep = frame_consistency_report([a, b])
        assert rep["anchor_distance"] == rep["mean_adjacent_distance"] == frame_rms(a, b)

    def test_too_few_frames_rejected(self):
        with pytest.raises(ValueError, match="at least 2"):
            frame_consistency_report([np.zeros(3)])


class TestDiskOutput:
    def test_points_frames_written(self, tmp_path):
        enc, den, schedule = make_models()
        req = make_request(n_segments=3, interp_k=0)
        seq = generate_video(req, enc, den, schedule, n_fft=256, hop=128)
        write_frames(seq, tmp_path, den.substrate)
        assert sorted(p.name for p in tmp_path.glob("frame_*.npy")) == [
            f"frame_{i:04d}.npy" for i in range(3)
        ]
        assert (tmp_path / "initial.npy").exists()
        assert not list(tmp_path.glob("*.png"))  # points substrate: tensors only

    def test_image_frames_include_pngs(self, tmp_path):
        enc, den, schedule = make_models("image16")
        req = make_request(n_segments=3, interp_k=0)
        seq = generate_video(req, enc, den, schedule, n_fft=256, hop=128)
        write_frames(seq, tmp_path, den.substrate)
        pngs = sorted(p.name for p in tmp_path.glob("frame_*.png"))
        assert pngs == [f"frame_{i:04d}.png" for i in range(3)]
        from PIL import Image

        img = Image.open(tmp_path / "frame_0000.png")
        assert img.mode == "L" and img.size == (8, 8)

    def test_manifest_contents(self, tmp_path):
        enc, den, schedule = make_models()
        req = make_request(n_segments=3, interp_k=1)
        seq = generate_video(req, enc, den, schedule, n_fft=256, hop=128)
        manifest = build_manifest(seq, req, den.substrate)
        assert manifest["n_frames"] == 5
        assert len(manifest["condition_norms"]) == 5
        assert manifest["guidance"]["sigma_c"] == req.guidance.sigma_c
        write_manifest(manifest, tmp_path / "m.json")
        import json

        back = json.loads((tmp_path / "m.json").read_text())
        assert back["seed"] == req.seed
        assert "consistency" in back
