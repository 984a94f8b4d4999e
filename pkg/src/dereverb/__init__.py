"""Speech dereverberation toolkit.

Trains single-channel dereverberation models either from paired
(dry, reverberant) examples or from unpaired corpora via a
cycle-consistent adversarial objective, with a synthetic room impulse
response factory and an objective metric suite for comparing them.
"""

__version__ = "0.1.0"

from dereverb.dsp import (
    SAMPLE_RATE,
    ComplexSpectrogram,
    Waveform,
    convolve_full,
    istft,
    octave_band_filter,
    peak_normalize,
    read_wav,
    stft,
    write_wav,
)

__all__ = [
    "SAMPLE_RATE",
    "ComplexSpectrogram",
    "Waveform",
    "convolve_full",
    "istft",
    "octave_band_filter",
    "peak_normalize",
    "read_wav",
    "stft",
    "write_wav",
    "__version__",
]
