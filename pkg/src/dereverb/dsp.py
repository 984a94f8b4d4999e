"""Deterministic signal primitives: STFT/iSTFT, normalization, convolution,
octave-band filtering, and WAV file I/O.

All toolkit audio is mono at 16 kHz. The STFT uses a 320-sample (20 ms)
periodic Hann window with a 160-sample (10 ms) hop, no centering: frame k
covers samples [k*160, k*160 + 320).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.signal
from scipy.io import wavfile

SAMPLE_RATE = 16000
STFT_WINDOW = 320
STFT_HOP = 160
STFT_BINS = STFT_WINDOW // 2 + 1

#: Octave-band center frequencies in Hz used for frequency-dependent
#: surface reflection modelling.
OCTAVE_CENTERS_HZ = (125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0, 8000.0)
N_OCTAVE_BANDS = len(OCTAVE_CENTERS_HZ)


class AudioFormatError(ValueError):
    """Raised for unsupported audio formats (sample rate, channels, dtype)."""


@dataclass
class Waveform:
    """Mono audio at 16 kHz.

    Samples are dimensionless amplitudes, nominally in [-1, 1]. Non-finite
    samples and sample rates other than 16 kHz are rejected on construction.
    """

    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise AudioFormatError(
                f"waveform must be 1-D, got shape {self.samples.shape}"
            )
        if self.sample_rate_hz != SAMPLE_RATE:
            raise AudioFormatError(
                f"sample rate must be {SAMPLE_RATE} Hz, got {self.sample_rate_hz}"
            )
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise AudioFormatError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass
class ComplexSpectrogram:
    """Real/imag STFT planes, shape (frames, bins) with bins = 161."""

    real_part: np.ndarray
    imag_part: np.ndarray
    window_samples: int = STFT_WINDOW
    hop_samples: int = STFT_HOP

    def __post_init__(self):
        self.real_part = np.asarray(self.real_part, dtype=np.float64)
        self.imag_part = np.asarray(self.imag_part, dtype=np.float64)
        if self.real_part.shape != self.imag_part.shape:
            raise ValueError(
                "real and imaginary parts must have identical shape, got "
                f"{self.real_part.shape} vs {self.imag_part.shape}"
            )
        if self.real_part.ndim != 2 or self.real_part.shape[1] != STFT_BINS:
            raise ValueError(
                f"expected shape (frames, {STFT_BINS}), got {self.real_part.shape}"
            )

    @property
    def frames(self) -> int:
        return self.real_part.shape[0]

    @property
    def bins(self) -> int:
        return self.real_part.shape[1]

    def to_complex(self) -> np.ndarray:
        return self.real_part + 1j * self.imag_part


@lru_cache(maxsize=8)
def _hann_periodic(length: int) -> np.ndarray:
    n = np.arange(length)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)


def stft(w: Waveform) -> ComplexSpectrogram:
    """Short-time Fourier transform with a 320/160 periodic Hann analysis.

    Frames start at sample 0 with no padding; the frame count is
    floor((len(w) - 320) / 160) + 1.
    """
    x = w.samples
    if x.size < STFT_WINDOW:
        raise ValueError(
            f"input too short: need at least {STFT_WINDOW} samples, got {x.size}"
        )
    n_frames = (x.size - STFT_WINDOW) // STFT_HOP + 1
    idx = np.arange(STFT_WINDOW)[None, :] + STFT_HOP * np.arange(n_frames)[:, None]
    frames = x[idx] * _hann_periodic(STFT_WINDOW)[None, :]
    spec = np.fft.rfft(frames, axis=1)
    return ComplexSpectrogram(spec.real, spec.imag)


def istft(s: ComplexSpectrogram) -> Waveform:
    """Inverse STFT by weighted overlap-add with a Hann synthesis window.

    Output length is (frames - 1) * 160 + 320. Round trips through
    ``stft`` reconstruct the interior (half a window in from each edge)
    to within 1e-6 relative error.
    """
    spec = s.to_complex()
    n_frames = spec.shape[0]
    win = _hann_periodic(STFT_WINDOW)
    frames = np.fft.irfft(spec, n=STFT_WINDOW, axis=1) * win[None, :]
    out_len = (n_frames - 1) * STFT_HOP + STFT_WINDOW
    out = np.zeros(out_len)
    norm = np.zeros(out_len)
    win_sq = win * win
    for k in range(n_frames):
        start = k * STFT_HOP
        out[start : start + STFT_WINDOW] += frames[k]
        norm[start : start + STFT_WINDOW] += win_sq
    good = norm > 1e-10
    out[good] /= norm[good]
    out[~good] = 0.0
    return Waveform(out)


def peak_normalize(w: Waveform) -> Waveform:
    """Scale so the maximum absolute sample is exactly 1.0.

    All-zero input is returned unchanged with a warning.
    """
    peak = np.max(np.abs(w.samples)) if len(w) else 0.0
    if peak == 0.0:
        warnings.warn("peak_normalize: all-zero input returned unchanged")
        return Waveform(w.samples.copy())
    return Waveform(w.samples / peak)


def convolve_full(w: Waveform, h: Waveform) -> Waveform:
    """Linear convolution; output length is len(w) + len(h) - 1."""
    if len(w) == 0 or len(h) == 0:
        raise ValueError("convolve_full requires non-empty inputs")
    if w.sample_rate_hz != h.sample_rate_hz:
        raise AudioFormatError(
            f"sample-rate mismatch: {w.sample_rate_hz} vs {h.sample_rate_hz}"
        )
    return Waveform(scipy.signal.fftconvolve(w.samples, h.samples, mode="full"))


# Crossover frequencies between adjacent bands sit at geometric midpoints;
# the lowest crossover is pulled down to 60 Hz so the filterbank sum stays
# flat at 100 Hz while every band still rejects DC.
_BAND_CROSSOVERS_HZ = (60.0,) + tuple(
    float(np.sqrt(OCTAVE_CENTERS_HZ[i] * OCTAVE_CENTERS_HZ[i + 1]))
    for i in range(N_OCTAVE_BANDS - 1)
)


@lru_cache(maxsize=None)
def _crossover_lowpass_sos(cutoff_hz: float) -> np.ndarray:
    return scipy.signal.butter(4, cutoff_hz, btype="lowpass", fs=SAMPLE_RATE, output="sos")


def _zero_phase_lowpass(x: np.ndarray, cutoff_hz: float, edge_pad: bool) -> np.ndarray:
    sos = _crossover_lowpass_sos(cutoff_hz)
    if not edge_pad:
        # zero initial conditions both directions: output is a pure
        # function of content (exact for signals embedded in zeros)
        return scipy.signal.sosfiltfilt(sos, x, padtype=None)
    padlen = 3 * (2 * sos.shape[0] + 1)
    if x.size <= padlen:
        x_padded = np.concatenate([x, np.zeros(padlen + 1 - x.size)])
        return scipy.signal.sosfiltfilt(sos, x_padded)[: x.size]
    return scipy.signal.sosfiltfilt(sos, x)


def octave_band_filter_array(
    x: np.ndarray, band_index: int, edge_pad: bool = True
) -> np.ndarray:
    """Zero-phase octave band-pass on a bare sample array.

    Bands are differences of forward-backward 4th-order Butterworth
    low-passes at the crossover frequencies, so the 7 bands sum exactly
    to an all-pass response minus a 60 Hz rumble high-pass. With
    ``edge_pad`` disabled the filter runs with zero initial conditions,
    which is exact for signals that start and end in zeros (RIR trains).
    """
    if not 0 <= band_index < N_OCTAVE_BANDS:
        raise ValueError(
            f"band_index must be in [0, {N_OCTAVE_BANDS - 1}], got {band_index}"
        )
    lo = _BAND_CROSSOVERS_HZ[band_index]
    if band_index == N_OCTAVE_BANDS - 1:
        return x - _zero_phase_lowpass(x, lo, edge_pad)
    hi = _BAND_CROSSOVERS_HZ[band_index + 1]
    return _zero_phase_lowpass(x, hi, edge_pad) - _zero_phase_lowpass(x, lo, edge_pad)


def octave_band_filter(w: Waveform, band_index: int) -> Waveform:
    """Zero-phase band-pass for one of the 7 octave bands (125 Hz .. 8 kHz).

    The band responses sum to an approximately all-pass system (within
    1 dB from 100 Hz to 7.8 kHz), so per-band processing followed by
    summation preserves broadband content.
    """
    return Waveform(octave_band_filter_array(w.samples, band_index))


def read_wav(path) -> Waveform:
    """Read a mono 16 kHz RIFF WAV (16-bit int or 32/64-bit float)."""
    rate, data = wavfile.read(path)
    if rate != SAMPLE_RATE:
        raise AudioFormatError(f"{path}: sample rate {rate}, expected {SAMPLE_RATE}")
    if data.ndim != 1:
        raise AudioFormatError(f"{path}: expected mono audio, got shape {data.shape}")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise AudioFormatError(f"{path}: unsupported sample format {data.dtype}")
    return Waveform(samples)


def write_wav(path, w: Waveform) -> None:
    """Write a 32-bit float mono WAV."""
    wavfile.write(path, w.sample_rate_hz, w.samples.astype(np.float32))
