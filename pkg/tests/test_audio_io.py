import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fcse.audio_io import (
    AudioClip,
    anti_alias_taps,
    decimate,
    encode_wav,
    read_wav,
    resample_to,
    to_mono,
    write_wav,
)
from fcse.errors import FormatError, UnsupportedFormatError, UnsupportedRateError


def raw_wav(pcm: bytes, channels=1, rate=16000, bits=16, fmt_tag=1, extra_chunks=b""):
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", fmt_tag, channels, rate, rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + extra_chunks
    body += b"data" + struct.pack("<I", len(pcm)) + pcm
    return b"RIFF" + struct.pack("<I", len(body)) + body


def test_read_scaling_endpoints(tmp_path):
    path = tmp_path / "a.wav"
    path.write_bytes(raw_wav(np.array([0, -32768], "<i2").tobytes()))
    clip = read_wav(path)
    assert clip.samples.tolist() == [0.0, -1.0]
    assert clip.sample_rate_hz == 16000


def test_read_one_second_length(tmp_path):
    path = tmp_path / "a.wav"
    path.write_bytes(raw_wav(np.zeros(16000, "<i2").tobytes()))
    clip = read_wav(path)
    assert len(clip) == 16000 and clip.sample_rate_hz == 16000


def test_read_stereo_is_averaged(tmp_path):
    path = tmp_path / "s.wav"
    path.write_bytes(raw_wav(np.array([16384, -16384], "<i2").tobytes(), channels=2))
    clip = read_wav(path)
    assert clip.samples.tolist() == [0.0]


def test_unknown_chunks_are_skipped(tmp_path):
    junk = b"LIST" + struct.pack("<I", 5) + b"abcde" + b"\x00"  # odd size, padded
    path = tmp_path / "j.wav"
    path.write_bytes(raw_wav(np.array([100, 200], "<i2").tobytes(), extra_chunks=junk))
    np.testing.assert_array_equal(read_wav(path).samples, np.array([100, 200]) / 32768)


@pytest.mark.parametrize(
    "kwargs, exc",
    [
        (dict(bits=24), UnsupportedFormatError),
        (dict(bits=8), UnsupportedFormatError),
        (dict(fmt_tag=3), UnsupportedFormatError),
        (dict(channels=3), UnsupportedFormatError),
    ],
)
def test_unsupported_encodings(tmp_path, kwargs, exc):
    path = tmp_path / "u.wav"
    path.write_bytes(raw_wav(b"\x00" * 12, **kwargs))
    with pytest.raises(exc):
        read_wav(path)


@pytest.mark.parametrize("data", [b"", b"RIFX\x00\x00\x00\x00WAVE", b"RIFF\x04\x00\x00\x00WAVE"])
def test_malformed_headers(tmp_path, data):
    path = tmp_path / "m.wav"
    path.write_bytes(data)
    with pytest.raises(FormatError):
        read_wav(path)


@pytest.mark.parametrize(
    "channels, expected",
    [
        ([[1.0, 0.0]], [0.5]),
        ([[0.2, 0.6], [-0.2, 0.2]], [0.4, 0.0]),
    ],
)
def test_to_mono_mean(channels, expected):
    clip = to_mono(AudioClip(np.array(channels), 16000))
    np.testing.assert_allclose(clip.samples, expected, atol=1e-15)


def test_to_mono_identity_and_idempotent():
    mono = AudioClip(np.array([0.3, 0.4]), 16000)
    assert to_mono(mono) is mono
    stereo = AudioClip(np.array([[0.1, 0.3], [0.5, -0.5]]), 8000)
    once = to_mono(stereo)
    np.testing.assert_array_equal(to_mono(once).samples, once.samples)


@pytest.mark.parametrize("value", [0.0, 1.0, -1.0, 0.5, -0.123])
def test_round_trip_single_values(tmp_path, value):
    path = tmp_path / "r.wav"
    write_wav(AudioClip(np.array([value]), 16000), path)
    assert abs(read_wav(path).samples[0] - value) <= 1 / 32768


def test_round_trip_random(tmp_path, rng):
    x = rng.uniform(-1, 1, 1000)
    path = tmp_path / "r.wav"
    write_wav(AudioClip(x, 22050), path)
    back = read_wav(path)
    assert back.sample_rate_hz == 22050
    assert np.max(np.abs(back.samples - x)) <= 2 ** -15


def test_write_clamps_out_of_range(tmp_path):
    path = tmp_path / "c.wav"
    write_wav(AudioClip(np.array([3.0, -7.0]), 16000), path)
    np.testing.assert_allclose(read_wav(path).samples, [32767 / 32768, -1.0])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 300), elements=st.floats(-1, 1)))
def test_round_trip_property(x):
    path_bytes = encode_wav(AudioClip(x, 16000))
    ints = np.frombuffer(path_bytes[44:], "<i2")
    assert np.max(np.abs(ints / 32768 - x)) <= 2 ** -15


def test_decimate_identity():
    clip = AudioClip(np.arange(10) / 10, 16000)
    assert decimate(clip, 1).samples is clip.samples


@pytest.mark.parametrize("n", [48000, 47999, 1001])
def test_decimate_length(n):
    out = decimate(AudioClip(np.zeros(n), 48000), 3)
    assert len(out) == -(-n // 3)
    assert out.sample_rate_hz == 16000


def test_decimate_preserves_tone():
    t48 = np.arange(48000) / 48000
    out = decimate(AudioClip(np.sin(2 * np.pi * 100 * t48), 48000), 3)
    expected = np.sin(2 * np.pi * 100 * np.arange(16000) / 16000)
    transient = len(anti_alias_taps(3))
    err = np.abs(out.samples - expected)[transient:-transient]
    assert err.max() < 1e-3


def test_decimate_rejects_alias_band():
    # 7 kHz at 48 kHz aliases after decimation by 4 (new Nyquist 6 kHz)
    t = np.arange(48000) / 48000
    out = decimate(AudioClip(np.sin(2 * np.pi * 7000 * t), 48000), 4)
    assert np.sqrt(np.mean(out.samples[500:-500] ** 2)) < 1e-3


def test_anti_alias_filter_shape():
    taps = anti_alias_taps(3)
    assert len(taps) >= 64 * 3
    assert taps.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(taps, taps[::-1])


@pytest.mark.parametrize("factor", [0, -1, 2.5])
def test_decimate_bad_factor(factor):
    with pytest.raises(UnsupportedRateError):
        decimate(AudioClip(np.zeros(10), 48000), factor)


def test_decimate_non_integer_ratio():
    with pytest.raises(UnsupportedRateError):
        decimate(AudioClip(np.zeros(10), 44100), 8)
    with pytest.raises(UnsupportedRateError):
        resample_to(AudioClip(np.zeros(10), 44100), 16000)


def test_resample_to_downmixes_then_decimates():
    stereo = AudioClip(np.ones((480, 2)), 48000)
    out = resample_to(stereo, 16000)
    assert out.n_channels == 1 and len(out) == 160 and out.sample_rate_hz == 16000
