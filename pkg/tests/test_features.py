import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dnsv.exceptions import UtteranceTooShort
from dnsv.features import (FeatureMatrix, LogMelExtractor, Waveform, apply_vad, energy_vad,
                           extract_features, frame_log_energy, frame_signal, log_mel,
                           mel_center_frequencies, read_features, read_wav, sliding_cmn,
                           write_features, write_wav)

SR = 16000


def tone(freq, n, amp=1000.0, sr=SR):
    t = np.arange(n) / sr
    return Waveform(amp * np.sin(2 * np.pi * freq * t), sr)


class TestFraming:
    def test_one_second(self):
        frames = frame_signal(Waveform(np.ones(SR), SR), 25, 10)
        assert frames.shape == (98, 400)

    def test_zero_signal(self):
        frames = frame_signal(Waveform(np.zeros(1234), SR))
        assert not frames.any()

    def test_exact_single_frame(self):
        assert frame_signal(Waveform(np.ones(400), SR)).shape[0] == 1

    def test_too_short(self):
        with pytest.raises(UtteranceTooShort):
            frame_signal(Waveform(np.ones(399), SR))

    def test_hamming_applied(self):
        frames = frame_signal(Waveform(np.ones(400), SR))
        np.testing.assert_allclose(frames[0], np.hamming(400))

    @given(st.integers(400, 5000), st.sampled_from([(25, 10), (20, 10), (25, 5), (30, 15)]))
    @settings(max_examples=60, deadline=None)
    def test_frame_count_formula(self, n, cfg):
        win_ms, hop_ms = cfg
        win, hop = win_ms * SR // 1000, hop_ms * SR // 1000
        if n < win:
            return
        frames = frame_signal(Waveform(np.zeros(n), SR), win_ms, hop_ms)
        assert frames.shape[0] == (n - win) // hop + 1


def _direct_log_mel(frame, n_mels, sr, n_fft, floor):
    """Slow oracle: explicit DFT sum and per-bin triangle evaluation."""
    n = len(frame)
    k = np.arange(n_fft // 2 + 1)
    t = np.arange(n)
    re = np.array([np.sum(frame * np.cos(2 * np.pi * kk * t / n_fft)) for kk in k])
    im = np.array([np.sum(frame * np.sin(2 * np.pi * kk * t / n_fft)) for kk in k])
    power = re ** 2 + im ** 2
    mel = lambda f: 2595 * math.log10(1 + f / 700)
    top = mel(sr / 2)
    edges = [top * i / (n_mels + 1) for i in range(n_mels + 2)]
    out = []
    for m in range(n_mels):
        lo, c, hi = edges[m], edges[m + 1], edges[m + 2]
        e = 0.0
        for kk in k:
            b = mel(kk * sr / n_fft)
            if lo < b <= c:
                e += power[kk] * (b - lo) / (c - lo)
            elif c < b < hi:
                e += power[kk] * (hi - b) / (hi - c)
        out.append(math.log(max(floor, e)))
    return np.array(out)


class TestLogMel:
    def test_zero_frame_is_floor(self):
        f = log_mel(np.zeros((2, 400)), 64, SR, 1e-10)
        np.testing.assert_allclose(f.frames, math.log(1e-10))

    def test_matches_direct_dft(self, rng):
        frame = frame_signal(Waveform(rng.normal(0, 100, 400), SR))[0]
        fast = log_mel(frame[None], 16, SR, 1e-10).frames[0]
        slow = _direct_log_mel(frame, 16, SR, 512, 1e-10)
        np.testing.assert_allclose(fast, slow, rtol=1e-9, atol=1e-9)

    @pytest.mark.parametrize("k", [0, 5, 17, 32, 48, 63])
    def test_tone_at_center_dominates_its_bin(self, k):
        centers = mel_center_frequencies(64, SR)
        frames = frame_signal(tone(centers[k], 400))
        assert int(np.argmax(log_mel(frames, 64, SR).frames[0])) == k

    def test_doubling_amplitude_adds_ln4(self, rng):
        x = rng.normal(0, 500, 4000)
        a = log_mel(frame_signal(Waveform(x, SR)), 64, SR).frames
        b = log_mel(frame_signal(Waveform(2 * x, SR)), 64, SR).frames
        np.testing.assert_allclose(b - a, math.log(4), atol=1e-9)

    @given(st.lists(st.floats(-1e4, 1e4), min_size=400, max_size=400))
    @settings(max_examples=25, deadline=None)
    def test_always_finite(self, samples):
        out = log_mel(frame_signal(Waveform(np.array(samples), SR)), 64, SR)
        assert np.all(np.isfinite(out.frames))


class TestVAD:
    def test_constant_energy_fallback(self):
        e = np.full(10, 2.0)
        mask = energy_vad(e, 0.0)
        assert mask.sum() == 1
        assert energy_vad(e, -0.001).all()

    def test_half_silence(self):
        e = np.r_[np.full(50, -5.0), np.full(50, 10.0)]
        mask = energy_vad(e, 0.0)
        # mean 2.5: only the speech half strictly exceeds it
        assert mask[50:].all() and not mask[:50].any()

    def test_single_frame(self):
        assert energy_vad(np.array([3.0])).tolist() == [True]

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=200), st.floats(-5, 50))
    def test_never_empty(self, energies, offset):
        assert energy_vad(np.array(energies), offset).any()

    def test_feature_matrix_input(self, rng):
        frames = np.vstack([rng.normal(-5, 0.1, (30, 8)), rng.normal(5, 0.1, (30, 8))])
        mask = energy_vad(FeatureMatrix("u", frames))
        assert mask[30:].all() and not mask[:30].any()
        kept = apply_vad(FeatureMatrix("u", frames), mask)
        assert kept.num_frames == 30 and kept.vad_mask_applied


class TestSlidingCMN:
    def test_constant_to_zero(self):
        out = sliding_cmn(FeatureMatrix("u", np.full((20, 3), 7.5)), 5)
        np.testing.assert_allclose(out.frames, 0, atol=1e-12)
        assert out.cmn_applied

    def test_hand_computed(self):
        out = sliding_cmn(FeatureMatrix("u", np.arange(1, 6, dtype=float)[:, None]), 3)
        np.testing.assert_allclose(out.frames[:, 0], [-0.5, 0, 0, 0, 0.5], atol=1e-12)

    def test_window_covers_all_is_global(self, rng):
        x = rng.normal(size=(40, 4))
        out = sliding_cmn(FeatureMatrix("u", x), 300)
        np.testing.assert_allclose(out.frames, x - x.mean(axis=0))
        assert np.all(np.abs(out.frames.mean(axis=0)) < 1e-9)

    def test_matches_brute_force(self, rng):
        x = rng.normal(size=(57, 3))
        w = 10
        out = sliding_cmn(FeatureMatrix("u", x), w).frames
        for t in range(57):
            lo, hi = max(0, t - (w - 1) // 2), min(57, t + w // 2 + 1)
            np.testing.assert_allclose(out[t], x[t] - x[lo:hi].mean(axis=0), atol=1e-12)


class TestPipelineAndFiles:
    def test_extract_features_flags(self, rng):
        x = np.r_[rng.normal(0, 10, 8000), rng.normal(0, 3000, 8000)]
        f = extract_features(Waveform(x, SR), "u1")
        assert f.dim == 64 and f.vad_mask_applied and f.cmn_applied
        assert 0 < f.num_frames < 98

    def test_transformer(self, rng):
        ex = LogMelExtractor(n_mels=24)
        feats = ex.fit_transform([("a", Waveform(rng.normal(0, 1000, 4000), SR))])
        assert feats[0].utt_id == "a" and feats[0].dim == 24
        assert ex.get_params()["n_mels"] == 24

    def test_wav_roundtrip(self, tmp_path, rng):
        x = np.round(rng.normal(0, 2000, 3000)).astype(np.int16)
        write_wav(tmp_path / "a.wav", Waveform(x, SR))
        w = read_wav(tmp_path / "a.wav")
        assert w.sample_rate == SR
        np.testing.assert_array_equal(w.samples, x)

    def test_stereo_takes_channel0(self, tmp_path):
        import wave
        left = np.arange(100, dtype="<i2")
        right = -left
        with wave.open(str(tmp_path / "s.wav"), "wb") as wf:
            wf.setnchannels(2)
            wf.setsampwidth(2)
            wf.setframerate(8000)
            wf.writeframes(np.stack([left, right], axis=1).tobytes())
        np.testing.assert_array_equal(read_wav(tmp_path / "s.wav").samples, left)

    @pytest.mark.parametrize("binary", [False, True])
    def test_feature_file_roundtrip(self, tmp_path, rng, binary):
        feats = [FeatureMatrix(f"u{i}", rng.normal(size=(i + 1, 5)) * 10 ** i) for i in range(4)]
        path = tmp_path / "f.feat"
        write_features(path, feats, binary=binary)
        back = read_features(path)
        assert [f.utt_id for f in back] == [f.utt_id for f in feats]
        for a, b in zip(feats, back):
            np.testing.assert_array_equal(a.frames, b.frames)

    def test_text_header(self, tmp_path):
        write_features(tmp_path / "f", [FeatureMatrix("x", np.ones((2, 3)))])
        lines = (tmp_path / "f").read_text().splitlines()
        assert lines[0] == "#feat v1 dim=3" and lines[1] == "x 2" and len(lines) == 4

    def test_binary_magic(self, tmp_path):
        write_features(tmp_path / "f", [FeatureMatrix("x", np.ones((2, 3)))], binary=True)
        assert (tmp_path / "f").read_bytes().startswith(b"FEATB1")

    def test_frame_log_energy(self):
        e = frame_log_energy(np.array([[3.0, 4.0], [0.0, 0.0]]))
        np.testing.assert_allclose(e, [math.log(25), math.log(1e-10)])
