import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavefuse import nn_core as nn
from wavefuse.audio import (
    CLIP_LEN,
    SAMPLE_RATE,
    AudioClassifier,
    AudioClip,
    AudioEncoder,
    EncoderConfig,
    FormatError,
    StateError,
    Waveform,
    average_spectrum,
    channel_spectrum,
    classify_clip,
    decode_wav,
    encode_audio,
    encode_wav,
    encoder_frames,
    make_clip,
    n_segments,
    resample,
    spectral_energy,
    standardize,
)


def sine(freq, rate, seconds=1.0, amp=0.5, channels=2):
    t = np.arange(int(round(rate * seconds))) / rate
    return Waveform(np.tile(amp * np.sin(2 * np.pi * freq * t), (channels, 1)), rate)


class TestWav:
    def test_scale(self):
        w = Waveform(np.array([[16384, 0, -32768]]) / 32768.0, SAMPLE_RATE)
        back = decode_wav(encode_wav(w))
        assert back.samples.tolist() == [[0.5, 0.0, -1.0]]

    def test_round_trip_random_pcm(self):
        rng = np.random.default_rng(0)
        ints = rng.integers(-32768, 32768, size=(2, 4001))
        blob = encode_wav(Waveform(ints / 32768.0, 44100))
        back = decode_wav(blob)
        assert back.sample_rate == 44100
        assert np.array_equal(np.round(back.samples * 32768).astype(int), ints)
        assert encode_wav(back) == blob

    def test_rejects_non_pcm(self):
        blob = bytearray(encode_wav(Waveform(np.zeros((1, 10)), 8000)))
        blob[20:22] = (3).to_bytes(2, "little")  # IEEE float tag
        with pytest.raises(FormatError, match="fmt"):
            decode_wav(bytes(blob))

    def test_rejects_garbage(self):
        with pytest.raises(FormatError, match="RIFF"):
            decode_wav(b"OggS" + bytes(40))

    def test_missing_data_chunk_named(self):
        blob = encode_wav(Waveform(np.zeros((1, 10)), 8000))
        cut = blob[: blob.index(b"data")]
        with pytest.raises(FormatError, match="data"):
            decode_wav(cut)


class TestResample:
    def test_identity(self):
        w = Waveform(np.random.default_rng(1).uniform(-1, 1, (2, 1000)), SAMPLE_RATE)
        assert np.array_equal(resample(w).samples, w.samples)

    def test_length(self):
        assert resample(sine(100, 48000)).n_samples == 16000
        assert resample(Waveform(np.zeros((1, 1001)), 44100)).n_samples == round(1001 * 16000 / 44100)

    def test_tone_preserved(self):
        out = resample(sine(440, 32000))
        mag = channel_spectrum(out.samples[0])
        freqs = np.fft.rfftfreq(out.n_samples, 1 / SAMPLE_RATE)
        assert abs(freqs[np.argmax(mag)] - 440) <= freqs[1]

    def test_empty(self):
        with pytest.raises(FormatError):
            resample(Waveform(np.zeros((1, 0)), 8000))


class TestClip:
    def test_stereo_length_and_order(self):
        w = Waveform(np.stack([np.full(16000, 0.1), np.full(16000, -0.1)]), SAMPLE_RATE)
        clip = make_clip(w)
        assert clip.values.shape == (CLIP_LEN,)
        assert np.all(clip.values[:16000] > 0) and np.all(clip.values[16000:] < 0)

    def test_constant_is_zero(self):
        clip = make_clip(Waveform(np.full((2, 16000), 0.3), SAMPLE_RATE))
        assert np.array_equal(clip.values, np.zeros(CLIP_LEN))

    def test_mono_duplicated(self):
        x = np.random.default_rng(2).normal(size=(1, 16000))
        v = make_clip(Waveform(x, SAMPLE_RATE)).values
        assert np.array_equal(v[:16000], v[16000:])

    def test_short_tail_padded(self):
        w = Waveform(np.random.default_rng(3).normal(size=(2, 24000)) * 0.1, SAMPLE_RATE)
        assert n_segments(w) == 2
        assert make_clip(w, 1).values.shape == (CLIP_LEN,)

    def test_standardization_over_random_clips(self):
        rng = np.random.default_rng(4)
        for _ in range(1000):
            scale = 10 ** rng.uniform(-3, 0)
            w = Waveform(np.clip(rng.normal(rng.uniform(-0.2, 0.2), scale, (2, 16000)), -1, 1), SAMPLE_RATE)
            v = make_clip(w).values
            assert v.shape == (CLIP_LEN,)
            assert abs(v.mean()) <= 1e-6
            assert abs(v.var() - 1) <= 1e-4

    def test_rate_checked(self):
        with pytest.raises(nn.ConfigError):
            make_clip(sine(100, 8000))

    def test_clip_shape_enforced(self):
        with pytest.raises(nn.ShapeError):
            AudioClip(np.zeros(100))

    @given(st.floats(-5, 5), st.floats(1e-3, 10))
    def test_standardize_affine_invariant(self, shift, scale):
        x = np.random.default_rng(5).normal(size=500)
        assert np.allclose(standardize(x * scale + shift), standardize(x), atol=1e-7)


class TestEncoder:
    def test_default_shape(self):
        emb = encode_audio(AudioClip(np.random.default_rng(6).normal(size=CLIP_LEN)), AudioEncoder())
        assert emb.frames.shape == (99, 128)
        assert EncoderConfig().frames() == 99
        assert emb.frame_rate == 99.0

    def test_zero_input_zero_output(self):
        emb = encode_audio(AudioClip(np.zeros(CLIP_LEN)), AudioEncoder())
        assert not emb.frames.any()

    def test_deterministic(self):
        clip = AudioClip(np.random.default_rng(7).normal(size=CLIP_LEN))
        enc = AudioEncoder(rng=np.random.default_rng(1))
        assert np.array_equal(encode_audio(clip, enc).frames, encode_audio(clip, enc).frames)

    def test_receptive_field_error(self):
        with pytest.raises(nn.ShapeError):
            encoder_frames(20, (10, 10, 10), (5, 5, 5))

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(st.integers(1, 6), st.integers(1, 4)), min_size=1, max_size=4), st.integers(40, 400))
    def test_frame_count_formula(self, layers, n):
        kernels = tuple(k for k, _ in layers)
        strides = tuple(s for _, s in layers)
        expect = n
        for k, s in layers:
            expect = (expect - k) // s + 1 if expect >= k else 0
        cfg = EncoderConfig(kernels, strides, hidden=3, dim=4)
        if expect < 1:
            with pytest.raises(nn.ShapeError):
                cfg.frames(n)
            return
        got = cfg.frames(n)
        assert got == expect
        out = AudioEncoder(cfg, np.random.default_rng(0))(np.random.default_rng(1).normal(size=n))
        assert out.shape == (expect, 4)

    def test_gradcheck_mean_embedding(self):
        cfg = EncoderConfig((10, 3, 3), (5, 2, 2), hidden=4, dim=6)
        enc = AudioEncoder(cfg, np.random.default_rng(8), dtype=np.float64)
        x = nn.Tensor(np.random.default_rng(9).normal(size=400), requires_grad=True)
        err = nn.grad_check(lambda: enc(x).mean(), [x])
        assert err <= 1e-4


class TestClassifier:
    def head(self, bias):
        h = nn.Linear(4, 2, np.random.default_rng(0), dtype=np.float64)
        h.weight.data[:] = 0
        h.bias.data[:] = bias
        return h

    def test_even_logits(self):
        p = classify_clip(np.ones((5, 4)), self.head([0.0, 0.0]))
        assert np.allclose(p, [0.5, 0.5], atol=1e-15)

    def test_saturated_logits(self):
        assert classify_clip(np.ones((5, 4)), self.head([10.0, -10.0]))[0] >= 0.9999

    def test_missing_head(self):
        with pytest.raises(StateError):
            classify_clip(np.ones((5, 4)), None)

    @given(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=4))
    def test_probabilities_sum_to_one(self, feats):
        h = nn.Linear(4, 2, np.random.default_rng(1), dtype=np.float64)
        p = classify_clip(np.array([feats]), h)
        assert abs(p.sum() - 1) <= 1e-9

    def test_model_outputs_distribution(self):
        m = AudioClassifier(EncoderConfig(hidden=4, dim=8), np.random.default_rng(0))
        p = m(np.random.default_rng(1).normal(size=CLIP_LEN)).data
        assert p.shape == (2,) and abs(float(p.sum()) - 1) < 1e-6


class TestSpectrum:
    def test_zero_clips(self):
        s = average_spectrum([AudioClip(np.zeros(CLIP_LEN))] * 3)
        assert not s.mean_amplitude.any()
        assert s.freqs[0] == 0 and s.freqs[-1] == 8000
        assert np.all(np.diff(s.freqs) > 0)

    def test_tone_peak(self):
        clip = make_clip(sine(1000, SAMPLE_RATE))
        s = average_spectrum([clip])
        assert abs(s.freqs[np.argmax(s.mean_amplitude)] - 1000) <= s.freqs[1]

    def test_idempotent_mean(self):
        clip = make_clip(Waveform(np.random.default_rng(10).normal(size=(2, 16000)) * 0.1, SAMPLE_RATE))
        one = average_spectrum([clip]).mean_amplitude
        assert np.allclose(average_spectrum([clip] * 7).mean_amplitude, one, rtol=1e-12, atol=0)

    def test_parseval(self):
        rng = np.random.default_rng(11)
        for n in (16000, 15999):
            x = rng.normal(size=n)
            e = spectral_energy(channel_spectrum(x), n)
            assert abs(e - np.sum(x**2)) <= 1e-6 * np.sum(x**2)

    def test_mixed_lengths_rejected(self):
        with pytest.raises(nn.ShapeError):
            average_spectrum([np.zeros(10), np.zeros(12)])

    def test_csv(self):
        text = average_spectrum([AudioClip(np.zeros(CLIP_LEN))]).to_csv()
        lines = text.splitlines()
        assert lines[0] == "freq_hz,mean_amplitude"
        assert lines[1].startswith("0,") and lines[-1].startswith("8000,")
        assert len(lines) == 8002
