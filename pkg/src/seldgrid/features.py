"""FOA front-end: STFT, 64-band log-mel spectra and acoustic intensity vectors.

Channel layout of the output tensor is ``(mel-W, mel-X, mel-Y, mel-Z,
I-x, I-y, I-z)``, so a 5 s clip at 24 kHz becomes a (250, 7, 64) array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window

from .errors import ShapeMismatch, TooShortInput, UnsupportedSampleRate
from .sphere_grid import unit_to_direction

EXPECTED_RATE = 24000
LOG_EPS = 1e-10
IV_EPS = 1e-10
CHANNEL_NAMES = ("mel-W", "mel-X", "mel-Y", "mel-Z", "I-x", "I-y", "I-z")


@dataclass
class AudioBuffer:
    sample_rate: int
    samples: np.ndarray  # (4, N), ACN order W, X, Y, Z

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.samples.shape[0] != 4:
            raise ShapeMismatch(f"expected 4 FOA channels, got {self.samples.shape[0]}")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    win_s: float = 0.04
    hop_s: float = 0.02
    mel_bands: int = 64
    window: str = "hann"

    def __post_init__(self):
        if self.win_s < self.hop_s:
            raise ValueError("window must be at least as long as the hop")
        if self.mel_bands < 1:
            raise ValueError("mel_bands must be >= 1")

    def win_length(self, sr: int) -> int:
        return int(round(self.win_s * sr))

    def hop_length(self, sr: int) -> int:
        return int(round(self.hop_s * sr))


@dataclass
class Spectrogram:
    data: np.ndarray  # (channels, frames, bins), complex
    sample_rate: int
    n_fft: int
    window: np.ndarray = field(repr=False)


@dataclass
class FeatureTensor:
    data: np.ndarray  # (frames, 7, bands)
    sample_rate: int
    config: StftConfig

    @property
    def frames(self) -> int:
        return self.data.shape[0]


def stft(audio: AudioBuffer, cfg: StftConfig = StftConfig()) -> Spectrogram:
    """Center-padded STFT with ``ceil(len / hop)`` frames and FFT size = window."""
    sr = audio.sample_rate
    win, hop = cfg.win_length(sr), cfg.hop_length(sr)
    n = audio.n_samples
    if n < win:
        raise TooShortInput(f"{n} samples is shorter than the {win}-sample window")
    pad = win // 2
    padded = np.pad(audio.samples, ((0, 0), (pad, pad)), mode="reflect")
    n_frames = math.ceil(n / hop)
    frames = np.lib.stride_tricks.sliding_window_view(padded, win, axis=-1)[:, ::hop][:, :n_frames]
    window = get_window(cfg.window, win)
    return Spectrogram(np.fft.rfft(frames * window, n=win, axis=-1), sr, win, window)


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=float) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=float) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int = 64, fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """HTK-scale triangular filters, shape (n_mels, n_fft // 2 + 1), unnormalized."""
    fmax = sample_rate / 2.0 if fmax is None else fmax
    bin_hz = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_hz - lower) / (center - lower)
    falling = (upper - bin_hz) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def _filterbank_for(spec: Spectrogram, cfg: StftConfig) -> np.ndarray:
    return mel_filterbank(spec.sample_rate, spec.n_fft, cfg.mel_bands)


def log_mel(spec: Spectrogram, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """(channels, frames, bands) natural-log mel energies."""
    power = np.abs(spec.data) ** 2
    return np.log(power @ _filterbank_for(spec, cfg).T + LOG_EPS)


def intensity_vectors(spec: Spectrogram, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """(frames, 3, bands) normalized active intensity pooled into mel bands."""
    if spec.data.shape[0] != 4:
        raise ShapeMismatch("intensity vectors need a 4-channel FOA spectrogram")
    w, xyz = spec.data[0], spec.data[1:]
    active = np.real(np.conj(w)[None] * xyz)
    energy = np.abs(w) ** 2 + np.sum(np.abs(xyz) ** 2, axis=0) / 3.0
    normalized = active / (energy + IV_EPS)
    banded = normalized @ _filterbank_for(spec, cfg).T
    return np.transpose(banded, (1, 0, 2))


def feature_pipeline(audio: AudioBuffer, cfg: StftConfig = StftConfig()) -> FeatureTensor:
    spec = stft(audio, cfg)
    mel = np.transpose(log_mel(spec, cfg), (1, 0, 2))
    iv = intensity_vectors(spec, cfg)
    return FeatureTensor(np.concatenate([mel, iv], axis=1), audio.sample_rate, cfg)


def intensity_doa(iv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame (azimuth, elevation) from band-summed intensity, iv is (T, 3, F)."""
    return unit_to_direction(np.sum(iv, axis=-1))


def resample_linear(samples: np.ndarray, src_rate: int, dst_rate: int) -> np.ndarray:
    n_src = samples.shape[-1]
    n_dst = int(round(n_src * dst_rate / src_rate))
    t_src = np.arange(n_src) / src_rate
    t_dst = np.arange(n_dst) / dst_rate
    return np.stack([np.interp(t_dst, t_src, ch) for ch in samples])


def read_wav(path, resample: bool = False, target_rate: int = EXPECTED_RATE) -> AudioBuffer:
    """Read a 4-channel PCM16/24/32 or float WAV as floats in [-1, 1]."""
    rate, raw = wavfile.read(path)
    if raw.dtype == np.int16:
        data = raw.astype(float) / 32768.0
    elif raw.dtype == np.int32:
        data = raw.astype(float) / 2147483648.0
    elif raw.dtype == np.uint8:
        data = (raw.astype(float) - 128.0) / 128.0
    else:
        data = raw.astype(float)
    data = np.atleast_2d(data.T) if data.ndim == 2 else data[None]
    if rate != target_rate:
        if not resample:
            raise UnsupportedSampleRate(f"{path}: {rate} Hz, expected {target_rate} Hz")
        data = resample_linear(data, rate, target_rate)
        rate = target_rate
    return AudioBuffer(rate, data)


def write_wav(path, audio: AudioBuffer) -> None:
    wavfile.write(path, audio.sample_rate, audio.samples.T.astype(np.float32))
