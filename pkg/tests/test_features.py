import numpy as np
import pytest

from notetune import features as F

SR = 22050


def sine(freq, dur=1.5, sr=SR, amp=0.3):
    t = np.arange(int(sr * dur)) / sr
    return amp * np.sin(2 * np.pi * freq * t)


def harmonic(f0, dur=1.5, sr=SR):
    t = np.arange(int(sr * dur)) / sr
    return sum((0.25 / k) * np.sin(2 * np.pi * f0 * k * t) for k in range(1, 6))


def test_load_silence_keeps_length(tmp_path):
    path = tmp_path / "sil.wav"
    F.write_wav(path, np.zeros(SR), SR)
    wav = F.load_audio(path)
    assert len(wav) == SR
    assert np.all(wav == 0.0)


def test_load_stereo_averages_channels(tmp_path):
    from scipy.io import wavfile

    left = (sine(440) * 32767).astype(np.int16)
    right = np.zeros_like(left)
    wavfile.write(tmp_path / "st.wav", SR, np.stack([left, right], axis=1))
    wav = F.load_audio(tmp_path / "st.wav")
    mono = left.astype(np.float64) / 32768.0
    assert np.allclose(wav, mono / 2.0, atol=1e-12)


def test_resample_preserves_dominant_frequency(tmp_path):
    t = np.arange(44100) / 44100.0
    F.write_wav(tmp_path / "hi.wav", 0.3 * np.sin(2 * np.pi * 440 * t), 44100)
    wav = F.load_audio(tmp_path / "hi.wav", target_sr=SR)
    spec = np.abs(np.fft.rfft(wav * np.hanning(len(wav))))
    freqs = np.fft.rfftfreq(len(wav), 1.0 / SR)
    assert abs(freqs[np.argmax(spec)] - 440.0) < 1.0


def test_load_unreadable_file_raises(tmp_path):
    bad = tmp_path / "nope.wav"
    bad.write_bytes(b"not audio at all")
    with pytest.raises(F.AudioIOError):
        F.load_audio(bad)
    with pytest.raises(F.AudioIOError):
        F.load_audio(tmp_path / "missing.wav")


def test_track_pitch_a4():
    pitch, voiced = F.track_pitch(sine(440))
    inner = pitch[5:-5]
    assert np.all(voiced[5:-5] == 1)
    assert np.nanmax(np.abs(inner - 69.0)) < 0.05


def test_track_pitch_octave_down():
    pitch, _ = F.track_pitch(sine(220))
    assert abs(np.nanmean(pitch[5:-5]) - 57.0) < 0.05


def test_track_pitch_vibrato_follows_generator_phase():
    t = np.arange(SR * 2) / SR
    inst = 440 * 2 ** (0.5 * np.sin(2 * np.pi * 5 * t) / 12)
    wav = 0.3 * np.sin(2 * np.pi * np.cumsum(inst) / SR)
    pitch, _ = F.track_pitch(wav)
    centers = np.arange(len(pitch)) * 256 / SR
    expected = 69 + 0.5 * np.sin(2 * np.pi * 5 * centers)
    err = np.abs(pitch - expected)[8:-8]
    assert np.nanmax(err) < 0.1


def test_track_pitch_silence_is_unvoiced():
    pitch, voiced = F.track_pitch(np.zeros(SR))
    assert voiced.sum() == 0
    assert np.all(np.isnan(pitch))


def test_semitone_conversion_invertible():
    p = np.linspace(30, 100, 200)
    assert np.allclose(F.hz_to_semitones(F.semitones_to_hz(p)), p, atol=1e-12)


def test_octave_error_rate_below_1_percent():
    wrong = total = 0
    for f0 in (196.0, 261.63, 329.63, 440.0, 523.25):
        pitch, voiced = F.track_pitch(harmonic(f0))
        expected = F.hz_to_semitones(f0)
        vals = pitch[voiced.astype(bool)]
        wrong += int((np.abs(vals - expected) > 6).sum())
        total += len(vals)
    assert total > 0
    assert wrong / total < 0.01


def test_mel_silence_at_log_floor():
    mel = F.mel_spectrogram(np.zeros(SR))
    assert np.allclose(mel, F.LOG_FLOOR)


def test_mel_dominant_band_matches_filterbank():
    mel = F.mel_spectrogram(sine(1000))
    fb = F.mel_filterbank(SR, 1024, 80)
    freqs = np.fft.rfftfreq(1024, 1.0 / SR)
    expected_band = np.argmax(fb[:, np.argmin(np.abs(freqs - 1000.0))])
    inner = mel[5:-5]
    assert (inner.argmax(axis=1) == expected_band).mean() > 0.9


def test_frame_count_convention():
    wav = sine(300, dur=1.234)
    mel = F.mel_spectrogram(wav)
    pitch, voiced = F.track_pitch(wav)
    expected_T = 1 + len(wav) // 256
    assert mel.shape == (expected_T, 80)
    assert len(pitch) == len(voiced) == expected_T


def test_mel_rejects_too_short_input():
    with pytest.raises(ValueError):
        F.mel_spectrogram(np.zeros(100))


def test_extract_track_consistent_and_cache_roundtrip(tmp_path):
    track = F.extract_track(sine(330))
    assert track.mel.shape[0] == track.n_frames
    v = track.voiced.astype(bool)
    assert np.all(np.isfinite(track.pitch_semitones[v]))
    assert np.all(np.isnan(track.pitch_semitones[~v]))
    path = tmp_path / "track.npz"
    F.save_track(path, track)
    loaded = F.load_track(path)
    assert np.array_equal(loaded.pitch_semitones, track.pitch_semitones, equal_nan=True)
    assert np.array_equal(loaded.mel, track.mel)
    assert loaded.sample_rate == track.sample_rate


def test_interpolate_pitch_fills_gaps():
    pitch = np.array([np.nan, 60.0, np.nan, np.nan, 63.0, np.nan])
    voiced = np.array([0, 1, 0, 0, 1, 0], dtype=np.uint8)
    interp = F.interpolate_pitch(pitch, voiced)
    assert np.allclose(interp, [60.0, 60.0, 61.0, 62.0, 63.0, 63.0])
