import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from fcse.audio_io import AudioClip
from fcse.dsp import mix_at_snr
from fcse.errors import InputError
from fcse.estimator import FCNDenoiser, WaveformFramer, check_waveforms
from fcse.pipeline import decode_checkpoint, encode_checkpoint
from fcse.synthetic import synthetic_babble, synthetic_speech

TINY = dict(hidden_layers=((4, 1.0),), output_kernel_ms=0.5, max_epochs=2, batch_size=16)


class TestCheckWaveforms:
    def test_single_and_list(self, rng):
        x = rng.standard_normal(100)
        waves, single = check_waveforms(x)
        assert single and len(waves) == 1
        waves, single = check_waveforms([x, x[:50]])
        assert not single and [len(w) for w in waves] == [100, 50]

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            check_waveforms(np.array([0.0, np.nan]))

    def test_rejects_wrong_rate_clip(self):
        with pytest.raises(InputError):
            check_waveforms(AudioClip(np.zeros(10), 8000), 16000)

    def test_rejects_empty(self):
        with pytest.raises(InputError):
            check_waveforms([])


class TestWaveformFramer:
    def test_round_trip(self, rng):
        x = rng.standard_normal(16000) * 0.1
        framer = WaveformFramer().fit(x)
        frames = framer.transform(x)
        assert frames.shape == (99, 320)
        y = framer.inverse_transform(frames)
        np.testing.assert_allclose(y, x[160:160 + len(y)], atol=1e-12)

    def test_fit_learns_clean_stats(self, rng):
        x = 0.5 + 0.25 * rng.standard_normal(20000)
        framer = WaveformFramer().fit(x)
        assert framer.stats_.mean == pytest.approx(x.mean())
        assert framer.stats_.std == pytest.approx(x.std())

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            WaveformFramer().transform(np.zeros(1000))


class TestFCNDenoiser:
    def test_params_and_clone(self):
        est = FCNDenoiser(**TINY)
        params = est.get_params()
        assert params["hidden_layers"] == ((4, 1.0),) and params["max_epochs"] == 2
        twin = clone(est).set_params(learning_rate=0.01)
        assert twin.learning_rate == 0.01 and est.learning_rate == 1e-3

    def test_default_is_model53(self):
        est = FCNDenoiser()
        assert est._model_spec(320).param_count() == 2_266_736

    def test_fit_predict_score(self):
        clean = synthetic_speech(1.0, seed=1)
        noisy, _ = mix_at_snr(clean, synthetic_babble(1.0, seed=2), 5.0)
        est = FCNDenoiser(**TINY).fit(noisy.samples, clean.samples)
        assert est.report_.epochs_run == 2
        out = est.predict(noisy.samples)
        assert out.shape == (16000 - 320,) and np.all(np.isfinite(out))
        assert np.isfinite(est.score(noisy.samples, clean.samples))
        outs = est.transform([noisy.samples, noisy.samples[:8000]])
        assert [len(o) for o in outs] == [15680, 7680]

    def test_checkpoint_round_trip(self):
        clean = synthetic_speech(0.5, seed=1)
        noisy, _ = mix_at_snr(clean, synthetic_babble(0.5, seed=2), 5.0)
        est = FCNDenoiser(**TINY).fit(noisy.samples, clean.samples)
        back = FCNDenoiser.from_checkpoint(decode_checkpoint(encode_checkpoint(est.to_checkpoint())))
        assert back.hidden_layers == ((4, 1.0),)
        np.testing.assert_array_equal(back.predict(noisy.samples), est.predict(noisy.samples))

    def test_mismatched_pairs(self, rng):
        with pytest.raises(InputError):
            FCNDenoiser(**TINY).fit(rng.standard_normal(4000), rng.standard_normal(3000))
