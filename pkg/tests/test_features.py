import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.io import wavfile

from seldgrid.errors import ShapeMismatch, TooShortInput, UnsupportedSampleRate
from seldgrid.features import (
    CHANNEL_NAMES,
    LOG_EPS,
    AudioBuffer,
    StftConfig,
    feature_pipeline,
    intensity_doa,
    intensity_vectors,
    log_mel,
    mel_filterbank,
    read_wav,
    stft,
    write_wav,
)
from seldgrid.label_codec import make_event
from seldgrid.scene_sim import make_rng, random_direction, render_foa
from seldgrid.sphere_grid import angular_distance_deg

SR = 24000


def plane_wave(az, el, seconds=1.0, snr_db=None, seed=0):
    frames = int(round(seconds / 0.1))
    events = [make_event(t, 0, 0, az, el) for t in range(frames)]
    return render_foa(events, "noise", seconds, seed=seed, snr_db=snr_db)


def test_frame_count_five_seconds():
    audio = AudioBuffer(SR, np.zeros((4, 5 * SR)))
    spec = stft(audio)
    assert spec.data.shape == (4, 250, 481)
    feats = feature_pipeline(audio)
    assert feats.data.shape == (250, 7, 64)


def test_too_short():
    with pytest.raises(TooShortInput):
        stft(AudioBuffer(SR, np.zeros((4, 500))))


def test_tone_peak_bin():
    t = np.arange(SR) / SR
    # a cosine is even about t=0, so the reflect padding extends it smoothly
    x = np.cos(2 * np.pi * 1000 * t)
    spec = stft(AudioBuffer(SR, np.tile(x, (4, 1))))
    bin_hz = SR / spec.n_fft
    peaks = np.argmax(np.abs(spec.data[0]), axis=-1)
    assert np.all(peaks == round(1000 / bin_hz))


def test_zero_input():
    spec = stft(AudioBuffer(SR, np.zeros((4, SR))))
    assert np.all(spec.data == 0)
    assert np.all(log_mel(spec) == np.log(LOG_EPS))
    assert np.all(intensity_vectors(spec) == 0)


def test_parseval_rectangular_window():
    rng = np.random.default_rng(0)
    audio = AudioBuffer(SR, rng.standard_normal((4, SR)))
    cfg = StftConfig(window="boxcar")
    spec = stft(audio, cfg)
    n = spec.n_fft
    power = np.abs(spec.data) ** 2
    # one-sided spectrum: interior bins stand for two conjugate bins
    weights = np.full(power.shape[-1], 2.0)
    weights[0] = 1.0
    if n % 2 == 0:
        weights[-1] = 1.0
    spectral = np.sum(power * weights, axis=-1) / n
    pad = n // 2
    padded = np.pad(audio.samples, ((0, 0), (pad, pad)), mode="reflect")
    hop = cfg.hop_length(SR)
    energy = np.stack([np.sum(padded[:, k * hop:k * hop + n] ** 2, axis=-1) for k in range(spec.data.shape[1])], -1)
    assert np.max(np.abs(spectral - energy) / energy) < 1e-6


def test_filterbank_construction():
    fb = mel_filterbank(SR, 960, 64)
    assert fb.shape == (64, 481)
    assert np.all(fb.sum(axis=1) > 0)
    # every bin strictly between DC and Nyquist belongs to some filter
    assert np.all(fb[:, 1:-1].sum(axis=0) > 0)
    assert np.all(fb <= 1.0) and np.all(fb >= 0.0)


def test_white_noise_band_energy():
    rng = np.random.default_rng(1)
    audio = AudioBuffer(SR, rng.standard_normal((4, 10 * SR)))
    spec = stft(audio)
    mel = np.exp(log_mel(spec))
    window = spec.window
    fb = mel_filterbank(SR, spec.n_fft, 64)
    # E|X_k|^2 = sigma^2 * sum(w^2) for white noise of unit variance
    expected = np.sum(window**2) * fb.sum(axis=1)
    measured = mel.mean(axis=(0, 1))
    assert np.max(np.abs(10 * np.log10(measured / expected))) < 3.0


@pytest.mark.parametrize("az, el, axis", [(0, 0, [1, 0, 0]), (90, 0, [0, 1, 0]), (0, 90, [0, 0, 1])])
def test_intensity_axes(az, el, axis):
    iv = intensity_vectors(stft(plane_wave(az, el)))
    v = iv.sum(axis=0)  # (3, bands)
    v = v / np.linalg.norm(v, axis=0)
    cosines = np.clip(np.asarray(axis) @ v, -1, 1)
    assert np.degrees(np.arccos(cosines)).max() < 1.0


def test_intensity_doa_random_directions():
    rng = make_rng(11)
    errs, noisy = [], []
    for k in range(100):
        d = random_direction(rng)
        for snr, bucket in ((None, errs), (20.0, noisy)):
            iv = intensity_vectors(stft(plane_wave(d.azimuth_deg, d.elevation_deg, 0.3, snr, seed=k)))
            az, el = intensity_doa(iv.sum(axis=0, keepdims=True))
            bucket.append(angular_distance_deg(az[0], el[0], d.azimuth_deg, d.elevation_deg))
    assert np.mean(errs) < 1.0
    assert np.mean(noisy) < 5.0


def test_intensity_needs_four_channels():
    spec = stft(AudioBuffer(SR, np.zeros((4, SR))))
    spec.data = spec.data[:3]
    with pytest.raises(ShapeMismatch):
        intensity_vectors(spec)


def test_channel_layout_and_determinism():
    audio = plane_wave(30, 10)
    a, b = feature_pipeline(audio), feature_pipeline(audio)
    assert CHANNEL_NAMES == ("mel-W", "mel-X", "mel-Y", "mel-Z", "I-x", "I-y", "I-z")
    assert np.array_equal(a.data, b.data)
    spec = stft(audio)
    assert np.array_equal(a.data[:, :4], np.transpose(log_mel(spec), (1, 0, 2)))
    assert np.array_equal(a.data[:, 4:], intensity_vectors(spec))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-6, 1e3))
def test_outputs_finite(seed, scale):
    rng = np.random.default_rng(seed)
    feats = feature_pipeline(AudioBuffer(SR, scale * rng.standard_normal((4, 2400))))
    assert np.all(np.isfinite(feats.data))


def test_wav_roundtrip_and_rates(tmp_path):
    audio = plane_wave(45, 0, 0.5)
    write_wav(tmp_path / "a.wav", audio)
    back = read_wav(tmp_path / "a.wav")
    assert back.sample_rate == SR
    assert np.allclose(back.samples, audio.samples, atol=1e-7)

    pcm = (np.clip(audio.samples.T, -1, 1) * 32767).astype(np.int16)
    wavfile.write(tmp_path / "b.wav", 48000, pcm)
    with pytest.raises(UnsupportedSampleRate):
        read_wav(tmp_path / "b.wav")
    res = read_wav(tmp_path / "b.wav", resample=True)
    assert res.sample_rate == SR and res.n_samples == audio.n_samples // 2
