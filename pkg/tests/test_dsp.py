import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fcse.audio_io import AudioClip
from fcse.dsp import (
    FrameBatch,
    FramingConfig,
    NormStats,
    compute_norm_stats,
    frame_count,
    frame_for_inference,
    frame_signal,
    hann_window,
    mix_at_snr,
    overlap_add,
)
from fcse.errors import DegenerateInputError, InconsistencyError, RateMismatchError, TooShortError

from oracles import power_db

CFG = FramingConfig()


def clip(x, rate=16000):
    return AudioClip(np.asarray(x, dtype=float), rate)


class TestMixing:
    def test_equal_power_zero_db_scale_is_one(self):
        c = clip([1.0, -1.0, 1.0, -1.0])
        n = clip([-1.0, 1.0, 1.0, -1.0])
        mix, scale = mix_at_snr(c, n, 0.0)
        assert scale == pytest.approx(1.0, abs=1e-15)
        np.testing.assert_allclose(mix.samples, [0.0, 0.0, 2.0, -2.0])

    def test_equal_power_five_db_scale(self):
        c = clip([1.0, -1.0] * 8)
        n = clip([-1.0, 1.0] * 8)
        _, scale = mix_at_snr(c, n, 5.0)
        # sqrt(1 / 10**0.5) = 10**-0.25
        assert scale == pytest.approx(0.5623413251903491, rel=1e-12)

    @pytest.mark.parametrize("snr", [-5.0, 0.0, 5.0, 17.3])
    def test_measured_snr(self, rng, snr):
        c = clip(rng.standard_normal(5000) * 0.2)
        n = clip(rng.uniform(-1, 1, 7000))
        mix, scale = mix_at_snr(c, n, snr)
        assert abs(power_db(c.samples, mix.samples - c.samples) - snr) < 1e-9

    def test_noise_truncated_from_start(self):
        c = clip(np.ones(4))
        n = clip([1.0, 1.0, 1.0, 1.0, 9.0, 9.0])
        mix, scale = mix_at_snr(c, n, 0.0)
        np.testing.assert_allclose(mix.samples, 2.0)

    def test_seeded_offset_is_reproducible(self, rng):
        c = clip(rng.standard_normal(100))
        n = clip(rng.standard_normal(1000))
        a, _ = mix_at_snr(c, n, 3.0, seed=7)
        b, _ = mix_at_snr(c, n, 3.0, seed=7)
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_infinite_snr_means_no_noise(self, rng):
        c = clip(rng.standard_normal(100))
        mix, scale = mix_at_snr(c, clip(rng.standard_normal(100)), math.inf)
        assert scale == 0.0
        np.testing.assert_array_equal(mix.samples, c.samples)

    @pytest.mark.parametrize("which", ["clean", "noise"])
    def test_zero_power_is_degenerate(self, which):
        zeros, ones = clip(np.zeros(10)), clip(np.ones(10))
        args = (zeros, ones) if which == "clean" else (ones, zeros)
        with pytest.raises(DegenerateInputError):
            mix_at_snr(*args, 0.0)

    def test_errors(self):
        with pytest.raises(InconsistencyError):
            mix_at_snr(clip(np.ones(10)), clip(np.ones(5)), 0.0)
        with pytest.raises(RateMismatchError):
            mix_at_snr(clip(np.ones(10)), clip(np.ones(10), 8000), 0.0)


class TestHann:
    def test_endpoints(self):
        w = hann_window(320)
        assert w[0] == 0.0
        assert w[160] == 1.0

    @pytest.mark.parametrize("n", [2, 4, 16, 320, 1024])
    def test_cola_half_hop(self, n):
        w = hann_window(n)
        np.testing.assert_allclose(w + np.roll(w, n // 2), 1.0, atol=1e-15)

    @pytest.mark.parametrize("n", [0, 3, 321])
    def test_rejects_odd(self, n):
        with pytest.raises(ValueError):
            hann_window(n)


class TestFraming:
    def test_one_second_gives_99_frames(self, white_clip):
        batch = frame_signal(white_clip, CFG, NormStats(0.0, 1.0))
        assert batch.frames.shape == (99, 320)
        assert batch.normalized

    @settings(max_examples=100, deadline=None)
    @given(st.integers(320, 5000), st.sampled_from([(16, 8), (320, 160), (64, 32)]))
    def test_frame_count_formula(self, n, lens):
        cfg = FramingConfig(lens[0], lens[1], 16000)
        if n < cfg.frame_len:
            return
        batch = frame_signal(clip(np.zeros(n)), cfg, NormStats(0.0, 1.0))
        assert len(batch) == (n - cfg.frame_len) // cfg.hop + 1 == frame_count(n, cfg)

    def test_constant_at_mean_is_zero_at_window_start(self):
        stats = NormStats(0.0, 0.5)
        batch = frame_signal(clip(np.zeros(1000)), CFG, stats)
        assert np.all(batch.frames[:, 0] == 0.0)

    def test_window_then_normalize(self, rng):
        x = rng.standard_normal(320)
        stats = NormStats(0.1, 2.0)
        batch = frame_signal(clip(x), CFG, stats)
        np.testing.assert_allclose(batch.frames[0], (x * hann_window(320) - 0.1) / 2.0)

    def test_too_short(self):
        with pytest.raises(TooShortError):
            frame_signal(clip(np.zeros(319)), CFG, NormStats(0.0, 1.0))

    def test_rate_mismatch(self):
        with pytest.raises(RateMismatchError):
            frame_signal(clip(np.zeros(400), 8000), CFG, NormStats(0.0, 1.0))

    def test_config_invariants(self):
        with pytest.raises(ValueError):
            FramingConfig(320, 100)
        with pytest.raises(ValueError):
            FramingConfig(321, 160)
        assert FramingConfig.from_ms(20, 16000) == CFG


class TestStats:
    def test_zero_variance(self):
        with pytest.raises(DegenerateInputError):
            compute_norm_stats(clip([1, 1, 1, 1]))

    def test_symmetric(self):
        s = compute_norm_stats(clip([1, -1, 1, -1]))
        assert (s.mean, s.std) == (0.0, 1.0)

    def test_matches_extended_precision_two_pass(self, rng):
        x = rng.standard_normal(20000) * 0.3 + 0.01
        s = compute_norm_stats(clip(x))
        mean = math.fsum(x) / len(x)
        std = math.sqrt(math.fsum((v - mean) ** 2 for v in x) / len(x))
        assert abs(s.mean - mean) < 1e-12
        assert abs(s.std - std) < 1e-12

    def test_invalid_stats(self):
        with pytest.raises(DegenerateInputError):
            NormStats(0.0, 0.0)
        with pytest.raises(DegenerateInputError):
            NormStats(math.nan, 1.0)


class TestOverlapAdd:
    def test_pair_of_frames_reconstructs_30ms(self, rng):
        stats = NormStats(0.0, 1.0)
        batch = frame_signal(clip(rng.standard_normal(480)), CFG, stats)
        assert len(batch) == 2
        assert len(overlap_add(batch, stats, trim=False)) == 480
        assert len(overlap_add(batch, stats)) == 160

    def test_constant_frames(self):
        stats = NormStats(0.02, 0.3)
        c = 1.7
        batch = FrameBatch(np.full((2, 320), c), CFG)
        out = overlap_add(batch, stats, trim=False).samples
        # denormalized frames are constant; the doubled overlap shows up in the middle hop
        np.testing.assert_allclose(out[160:320], 2 * (c * 0.3 + 0.02))

    def test_round_trip_interior(self, white_clip):
        stats = compute_norm_stats(white_clip)
        batch = frame_signal(white_clip, CFG, stats)
        out = overlap_add(batch, stats).samples
        ref = white_clip.samples[160:160 + len(out)]
        assert len(out) == (len(batch) - 1) * 160
        assert np.max(np.abs(out - ref)) <= 1e-6 * np.max(np.abs(ref))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.integers(480, 4000), st.floats(-0.5, 0.5), st.floats(0.01, 3))
    def test_round_trip_property(self, seed, n, mean, std):
        x = np.random.default_rng(seed).standard_normal(n)
        stats = NormStats(mean, std)
        out = overlap_add(frame_signal(clip(x), CFG, stats), stats).samples
        ref = x[160:160 + len(out)]
        assert np.max(np.abs(out - ref)) <= 1e-6 * max(1.0, np.max(np.abs(ref)))

    def test_requires_two_normalized_frames(self):
        stats = NormStats(0.0, 1.0)
        with pytest.raises(TooShortError):
            overlap_add(FrameBatch(np.zeros((1, 320)), CFG), stats)
        with pytest.raises(InconsistencyError):
            overlap_add(FrameBatch(np.zeros((2, 320)), CFG, normalized=False), stats)

    def test_frame_shape_mismatch(self):
        with pytest.raises(InconsistencyError):
            FrameBatch(np.zeros((2, 100)), CFG)


class TestInferenceFraming:
    @pytest.mark.parametrize("n", [320, 321, 479, 480, 1000, 16000, 16001])
    def test_padding_and_length(self, rng, n):
        stats = NormStats(0.0, 1.0)
        x = rng.standard_normal(n)
        batch = frame_for_inference(clip(x), CFG, stats)
        assert batch.n_samples == n
        assert len(batch) >= 2
        out = overlap_add(batch, stats).samples[: n - 320]
        np.testing.assert_allclose(out, x[160:n - 160], atol=1e-12)
