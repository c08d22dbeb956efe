import math

import numpy as np
import pytest

from fcse.audio_io import AudioClip, write_wav
from fcse.dsp import FramingConfig, NormStats, compute_norm_stats
from fcse.errors import CheckpointError, InputError, RateMismatchError, TooShortError
from fcse.nn import build_model, stack_spec
from fcse.pipeline import (
    Checkpoint,
    decode_checkpoint,
    denoise,
    encode_checkpoint,
    fnv1a_64,
    load_checkpoint,
    load_clips,
    load_manifest,
    parse_manifest,
    prepare_pairs_from_clips,
    save_checkpoint,
)

CFG = FramingConfig()


def identity_checkpoint(kernel_len=9, stats=NormStats(0.0, 1.0)):
    model = build_model(stack_spec(CFG.frame_len, [], kernel_len), seed=0)
    w = model.params[0]["weight"]
    w[:] = 0.0
    w[0, 0, (kernel_len - 1) // 2] = 1.0
    model.params[0]["bias"][:] = 0.0
    return Checkpoint(model, stats, CFG)


@pytest.mark.parametrize("data, expected", [
    (b"", 0xCBF29CE484222325),
    (b"a", 0xAF63DC4C8601EC8C),
    (b"foobar", 0x85944171F73967E8),
])
def test_fnv1a_reference_vectors(data, expected):
    assert fnv1a_64(data) == expected


class TestCheckpoint:
    def test_round_trip_is_byte_identical(self, tmp_path):
        model = build_model(stack_spec(320, [(4, 16), (4, 8)], 8), seed=7)
        p1, p2 = tmp_path / "a.fcse", tmp_path / "b.fcse"
        save_checkpoint(model, NormStats(0.01, 0.2), CFG, p1, snr_db=5.0, seed=7)
        ckpt = load_checkpoint(p1)
        save_checkpoint(ckpt.model, ckpt.stats, ckpt.framing, p2, snr_db=ckpt.snr_db, seed=ckpt.seed)
        assert p1.read_bytes() == p2.read_bytes()
        assert ckpt.stats == NormStats(0.01, 0.2) and ckpt.snr_db == 5.0 and ckpt.seed == 7
        assert ckpt.model.equal_params(model)

    def test_nan_snr_tag_survives(self):
        model = build_model(stack_spec(320, [(2, 4)], 4), seed=0)
        ckpt = decode_checkpoint(encode_checkpoint(Checkpoint(model, NormStats(0.0, 1.0), CFG)))
        assert math.isnan(ckpt.snr_db)

    @pytest.mark.parametrize("where", ["payload", "header", "hash"])
    def test_corruption_detected(self, where):
        model = build_model(stack_spec(320, [(4, 16)], 8), seed=1)
        data = bytearray(encode_checkpoint(Checkpoint(model, NormStats(0.0, 1.0), CFG)))
        pos = {"payload": len(data) - 40, "header": 9, "hash": len(data) - 1}[where]
        data[pos] ^= 0x01
        with pytest.raises(CheckpointError):
            decode_checkpoint(bytes(data))

    def test_bad_magic_and_truncation(self):
        model = build_model(stack_spec(320, [(2, 4)], 4), seed=0)
        data = encode_checkpoint(Checkpoint(model, NormStats(0.0, 1.0), CFG))
        with pytest.raises(CheckpointError, match="magic"):
            decode_checkpoint(b"RIFF" + data[4:])
        with pytest.raises(CheckpointError):
            decode_checkpoint(data[:-20])
        with pytest.raises(CheckpointError):
            load_checkpoint("/nonexistent/model.fcse")

    def test_failed_save_leaves_nothing(self, tmp_path):
        model = build_model(stack_spec(320, [(2, 4)], 4), seed=0)
        with pytest.raises(OSError):
            save_checkpoint(model, NormStats(0.0, 1.0), CFG, tmp_path / "missing" / "m.fcse")
        assert list(tmp_path.iterdir()) == []


class TestManifest:
    def test_parse(self):
        m = parse_manifest("# demo\nclean = a.wav, b.wav\nnoise = n.wav\nsnr_db = -5\nrole = val\nnoise_seed = 3\n", "/data")
        assert m.clean == ["a.wav", "b.wav"] and m.noise == ["n.wav"]
        assert m.snr_db == -5.0 and m.role == "val" and m.noise_seed == 3
        assert m.resolve("a.wav") == "/data/a.wav"

    def test_inf_snr_accepted(self):
        assert parse_manifest("clean = a\nnoise = b\nsnr_db = inf").snr_db == math.inf

    @pytest.mark.parametrize("text", [
        "clean = a.wav",
        "clean = a\nnoise = b\ncolour = red",
        "clean = a\nnoise = b\nsnr_db = loud",
        "clean = a\nnoise = b\nrole = dev",
        "clean a.wav",
        "clean = a\nnoise = b\nsnr_db = nan",
    ])
    def test_rejects(self, text):
        with pytest.raises(InputError):
            parse_manifest(text)

    def test_missing_file(self, tmp_path):
        (tmp_path / "m.txt").write_text("clean = nope.wav\nnoise = nope.wav\n")
        with pytest.raises(InputError, match="missing"):
            load_manifest(tmp_path / "m.txt")

    def test_load_clips_resolves_and_resamples(self, tmp_path, rng):
        write_wav(AudioClip(0.1 * rng.standard_normal(3200), 32000), tmp_path / "c.wav")
        write_wav(AudioClip(0.1 * rng.standard_normal(1600), 16000), tmp_path / "n.wav")
        (tmp_path / "m.txt").write_text("clean = c.wav, c.wav\nnoise = n.wav\n")
        clean, noise = load_clips(load_manifest(tmp_path / "m.txt"), 16000)
        assert clean.sample_rate_hz == noise.sample_rate_hz == 16000
        assert len(clean) == 3200 and len(noise) == 1600


class TestPreparePairs:
    def test_sixty_seconds_frame_count_follows_formula(self, rng):
        clean = AudioClip(0.1 * rng.standard_normal(960000), 16000)
        noise = AudioClip(0.1 * rng.standard_normal(960000), 16000)
        noisy, target = prepare_pairs_from_clips(clean, noise, 5.0, CFG, compute_norm_stats(clean))
        assert len(noisy) == len(target) == (960000 - 320) // 160 + 1 == 5999

    def test_infinite_snr_gives_clean_frames(self, rng):
        clean = AudioClip(0.1 * rng.standard_normal(8000), 16000)
        noise = AudioClip(rng.standard_normal(8000), 16000)
        noisy, target = prepare_pairs_from_clips(clean, noise, math.inf, CFG, NormStats(0.0, 0.1))
        np.testing.assert_array_equal(noisy.frames, target.frames)


class TestDenoise:
    @pytest.mark.parametrize("n", [481, 640, 16000, 16077])
    def test_identity_model_returns_interior(self, rng, n):
        x = 0.2 * rng.standard_normal(n)
        out = denoise(identity_checkpoint(stats=NormStats(0.003, 0.07)), AudioClip(x, 16000))
        assert len(out) == n - 2 * CFG.hop
        ref = x[CFG.hop:n - CFG.hop]
        assert np.max(np.abs(out.samples - ref)) <= 1e-5 * np.max(np.abs(ref))

    def test_single_frame_input_trims_to_nothing(self):
        assert len(denoise(identity_checkpoint(), AudioClip(np.ones(320) * 0.1, 16000))) == 0

    def test_output_is_twenty_ms_shorter(self, rng):
        out = denoise(identity_checkpoint(), AudioClip(rng.standard_normal(32000) * 0.1, 16000))
        assert out.duration_s == pytest.approx(2.0 - 0.020)

    def test_deterministic_and_finite(self, rng):
        model = build_model(stack_spec(320, [(4, 16)], 8), seed=3)
        ckpt = Checkpoint(model, NormStats(0.0, 0.1), CFG)
        clip = AudioClip(0.1 * rng.standard_normal(5000), 16000)
        a, b = denoise(ckpt, clip), denoise(ckpt, clip)
        np.testing.assert_array_equal(a.samples, b.samples)
        assert np.all(np.isfinite(a.samples))

    def test_errors(self):
        ckpt = identity_checkpoint()
        with pytest.raises(RateMismatchError):
            denoise(ckpt, AudioClip(np.zeros(1000), 8000))
        with pytest.raises(TooShortError):
            denoise(ckpt, AudioClip(np.zeros(319), 16000))
