"""Magnitude spectrograms on linear or mel frequency axes.

Frames are taken without centering or padding: frame ``t`` covers samples
``[t * hop, t * hop + window)``, so a waveform of ``n`` samples yields
``(n - window) // hop + 1`` frames. Values are amplitudes (not power) in
float64, with an uncompensated periodic Hann taper.
"""

import struct
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional

import numpy as np
import scipy.io.wavfile
import scipy.signal

LINEAR = "linear"
MEL = "mel"

_PCNS_MAGIC = b"PCNS"
_PCNS_VERSION = 1
_PCNS_HEADER = struct.Struct("<4sIIId")


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"waveform must be mono (1-D), got shape {samples.shape}")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def scaled(self, gain: float) -> "Waveform":
        return Waveform(self.samples * gain, self.sample_rate)


@dataclass(frozen=True)
class SpectrogramConfig:
    window_length: int
    hop_length: int
    n_bands: int
    freq_scale: str
    fmin: float
    fmax: float
    sample_rate: int
    window: str = "hann"

    def __post_init__(self):
        if not 0 < self.hop_length <= self.window_length:
            raise ValueError(
                f"need 0 < hop_length <= window_length, got hop={self.hop_length}, "
                f"window={self.window_length}"
            )
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not 0 <= self.fmin < self.fmax:
            raise ValueError(f"need 0 <= fmin < fmax, got fmin={self.fmin}, fmax={self.fmax}")
        if self.fmax > self.sample_rate / 2:
            raise ValueError(
                f"fmax={self.fmax} Hz exceeds the Nyquist frequency {self.sample_rate / 2} Hz"
            )
        if self.n_bands < 1:
            raise ValueError(f"n_bands must be >= 1, got {self.n_bands}")
        if self.freq_scale not in (LINEAR, MEL):
            raise ValueError(f"freq_scale must be 'linear' or 'mel', got {self.freq_scale!r}")
        if self.window != "hann":
            raise ValueError(f"only the Hann window is supported, got {self.window!r}")

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.hop_length

    @property
    def n_fft_bins(self) -> int:
        return self.window_length // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.window_length:
            return 0
        return (n_samples - self.window_length) // self.hop_length + 1


# Sample rates are implied by the stated durations: 256 samples = 12 ms and
# 32 samples = 1.5 ms give 22 050 Hz; a 128 ms / 64 ms frame at 2 kHz gives
# 256 / 128 samples and 129 half-spectrum bins, of which 128 cover 8 Hz - 1 kHz.
AVIAN = SpectrogramConfig(
    window_length=256,
    hop_length=32,
    n_bands=128,
    freq_scale=MEL,
    fmin=2000.0,
    fmax=11025.0,
    sample_rate=22050,
)
MARINE = SpectrogramConfig(
    window_length=256,
    hop_length=128,
    n_bands=128,
    freq_scale=LINEAR,
    fmin=8.0,
    fmax=1000.0,
    sample_rate=2000,
)
PRESETS = {"avian": AVIAN, "marine": MARINE}


@dataclass
class Spectrogram:
    values: np.ndarray
    frame_rate: float
    config: Optional[SpectrogramConfig] = field(default=None, compare=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"spectrogram values must be 2-D, got shape {self.values.shape}")
        if self.config is not None and self.values.shape[1] != self.config.n_bands:
            raise ValueError(
                f"spectrogram has {self.values.shape[1]} bands, config says {self.config.n_bands}"
            )

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_bands(self) -> int:
        return self.values.shape[1]

    def scaled(self, gain: float) -> "Spectrogram":
        return replace(self, values=self.values * gain)


def hz_to_mel(freq):
    """HTK mel scale."""
    return 2595.0 * np.log10(1.0 + np.asarray(freq, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def fft_frequencies(cfg: SpectrogramConfig) -> np.ndarray:
    return np.arange(cfg.n_fft_bins) * cfg.sample_rate / cfg.window_length


def linear_band_indices(cfg: SpectrogramConfig) -> np.ndarray:
    """DFT bins kept for a linear-scale spectrogram.

    A bin is kept when its cell ``[f - df/2, f + df/2]`` overlaps
    ``[fmin, fmax]``. This keeps bin 1 (7.8 Hz) in the marine preset, whose
    cell straddles 8 Hz, so the half spectrum minus DC gives exactly 128 bands.
    """
    freqs = fft_frequencies(cfg)
    half = cfg.sample_rate / cfg.window_length / 2
    keep = np.flatnonzero((freqs + half > cfg.fmin) & (freqs - half <= cfg.fmax))
    if len(keep) != cfg.n_bands:
        raise ValueError(
            f"{len(keep)} DFT bins fall in [{cfg.fmin}, {cfg.fmax}] Hz with a "
            f"{cfg.window_length}-sample window, but n_bands={cfg.n_bands}"
        )
    return keep


def mel_band_edges(cfg: SpectrogramConfig) -> np.ndarray:
    """``n_bands + 2`` frequencies in Hz, equally spaced in mel from fmin to fmax."""
    mels = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_bands + 2)
    return mel_to_hz(mels)


def band_frequencies(cfg: SpectrogramConfig) -> np.ndarray:
    """Center frequency in Hz of every output band."""
    if cfg.freq_scale == MEL:
        return mel_band_edges(cfg)[1:-1]
    return fft_frequencies(cfg)[linear_band_indices(cfg)]


def _triangle_integral(x, lo, center, hi):
    # Antiderivative of a unit-peak triangle on [lo, hi], zero at lo.
    x = np.clip(x, lo, hi)
    rising = (np.minimum(x, center) - lo) ** 2 / (2.0 * (center - lo))
    falling = (hi - center) / 2.0 - (hi - np.maximum(x, center)) ** 2 / (2.0 * (hi - center))
    return rising + falling


def mel_filterbank(cfg: SpectrogramConfig, n_fft_bins: Optional[int] = None) -> np.ndarray:
    """Triangular mel filters, shape ``(n_bands, n_fft_bins)``.

    Each triangle peaks at 1 on its center frequency and reaches zero on the
    neighbouring centers. The weight given to a DFT bin is the mean of the
    triangle over that bin's frequency cell, rather than its value at the bin
    center, so filters narrower than the DFT resolution still receive energy.

    Args:
        cfg: mel-scale configuration.
        n_fft_bins: number of leading DFT bins available; defaults to the full
            half spectrum ``window_length // 2 + 1``.

    Raises:
        ValueError: if some filter receives no weight from the available bins.
    """
    if cfg.freq_scale != MEL:
        raise ValueError("mel_filterbank needs a mel-scale configuration")
    if n_fft_bins is None:
        n_fft_bins = cfg.n_fft_bins
    if not 1 <= n_fft_bins <= cfg.n_fft_bins:
        raise ValueError(f"n_fft_bins must be in [1, {cfg.n_fft_bins}], got {n_fft_bins}")

    df = cfg.sample_rate / cfg.window_length
    centers = np.arange(n_fft_bins) * df
    cell_lo = centers - df / 2
    cell_hi = centers + df / 2
    edges = mel_band_edges(cfg)

    weights = np.empty((cfg.n_bands, n_fft_bins))
    for band in range(cfg.n_bands):
        lo, center, hi = edges[band], edges[band + 1], edges[band + 2]
        area = _triangle_integral(cell_hi, lo, center, hi) - _triangle_integral(
            cell_lo, lo, center, hi
        )
        weights[band] = area / df

    empty = np.flatnonzero(~(weights > 0).any(axis=1))
    if len(empty):
        raise ValueError(
            f"{len(empty)} mel filter(s) are empty (first: band {empty[0]} centered at "
            f"{edges[empty[0] + 1]:.1f} Hz); too many bands for the DFT resolution"
        )
    return weights


def hann_window(length: int) -> np.ndarray:
    return scipy.signal.get_window("hann", length, fftbins=True)


def _check_length(w: Waveform, cfg: SpectrogramConfig):
    if w.sample_rate != cfg.sample_rate:
        raise ValueError(
            f"waveform sample rate {w.sample_rate} Hz does not match configuration "
            f"{cfg.sample_rate} Hz (no resampling is performed)"
        )
    if len(w) < cfg.window_length:
        raise ValueError(
            f"waveform has {len(w)} samples, shorter than one {cfg.window_length}-sample window"
        )


def _dft_magnitude(samples: np.ndarray, cfg: SpectrogramConfig, start: int, stop: int) -> np.ndarray:
    # Full half-spectrum magnitudes for frames [start, stop).
    first = start * cfg.hop_length
    last = (stop - 1) * cfg.hop_length + cfg.window_length
    frames = np.lib.stride_tricks.sliding_window_view(samples[first:last], cfg.window_length)
    frames = frames[:: cfg.hop_length]
    return np.abs(np.fft.rfft(frames * hann_window(cfg.window_length), axis=1))


class _BandMapper:
    def __init__(self, cfg: SpectrogramConfig):
        self.cfg = cfg
        if cfg.freq_scale == MEL:
            self.filters = mel_filterbank(cfg)
            self.indices = None
        else:
            self.filters = None
            self.indices = linear_band_indices(cfg)

    def __call__(self, full: np.ndarray) -> np.ndarray:
        if self.filters is not None:
            return full @ self.filters.T
        return full[:, self.indices]


def iter_spectrogram(
    w: Waveform, cfg: SpectrogramConfig, chunk_frames: int = 8192
) -> Iterator[Spectrogram]:
    """Yield consecutive blocks of at most ``chunk_frames`` spectrogram frames.

    Concatenating the blocks gives the same values as :func:`spectrogram`
    with the same chunk size; memory stays bounded for long recordings.
    """
    _check_length(w, cfg)
    mapper = _BandMapper(cfg)
    total = cfg.n_frames(len(w))
    for start in range(0, total, chunk_frames):
        stop = min(start + chunk_frames, total)
        full = _dft_magnitude(w.samples, cfg, start, stop)
        yield Spectrogram(mapper(full), cfg.frame_rate, cfg)


def spectrogram(w: Waveform, cfg: SpectrogramConfig, chunk_frames: int = 8192) -> Spectrogram:
    """Linear or mel magnitude spectrogram, depending on ``cfg.freq_scale``."""
    blocks = [block.values for block in iter_spectrogram(w, cfg, chunk_frames)]
    return Spectrogram(np.concatenate(blocks, axis=0), cfg.frame_rate, cfg)


def stft_magnitude(w: Waveform, cfg: SpectrogramConfig) -> Spectrogram:
    """Windowed DFT magnitudes restricted to the bins that cover ``[fmin, fmax]``."""
    if cfg.freq_scale != LINEAR:
        raise ValueError("stft_magnitude needs a linear-scale configuration")
    return spectrogram(w, cfg)


def mel_spectrogram(w: Waveform, cfg: SpectrogramConfig) -> Spectrogram:
    if cfg.freq_scale != MEL:
        raise ValueError("mel_spectrogram needs a mel-scale configuration")
    return spectrogram(w, cfg)


def read_wav(path) -> Waveform:
    """Load a mono 16-bit PCM or 32-bit float WAV file.

    Integer samples are scaled to full-scale +-1.0. Multichannel files are
    rejected rather than downmixed.
    """
    sample_rate, data = scipy.io.wavfile.read(path)
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio, found {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype} (need int16 or float32)")
    return Waveform(samples, sample_rate)


def write_wav(path, w: Waveform, pcm16: bool = False):
    if pcm16:
        data = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = w.samples.astype(np.float32)
    scipy.io.wavfile.write(path, w.sample_rate, data)


def save_spectrogram(path, spec: Spectrogram):
    """Write the little-endian ``PCNS`` container: header then row-major float32."""
    header = _PCNS_HEADER.pack(
        _PCNS_MAGIC, _PCNS_VERSION, spec.n_frames, spec.n_bands, float(spec.frame_rate)
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(spec.values, dtype="<f4").tobytes())


def load_spectrogram(path) -> Spectrogram:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _PCNS_HEADER.size:
        raise ValueError(f"{path}: truncated spectrogram header")
    magic, version, n_frames, n_bands, frame_rate = _PCNS_HEADER.unpack_from(raw)
    if magic != _PCNS_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != _PCNS_VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")
    body = raw[_PCNS_HEADER.size :]
    if len(body) != 4 * n_frames * n_bands:
        raise ValueError(
            f"{path}: expected {n_frames}x{n_bands} float32 values, got {len(body)} bytes"
        )
    values = np.frombuffer(body, dtype="<f4").reshape(n_frames, n_bands)
    return Spectrogram(values.astype(np.float64), frame_rate)
