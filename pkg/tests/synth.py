"""Synthetic test signals: decaying RIRs, noise bursts, and speech-like audio."""

import math

import numpy as np

from dereverb.dsp import SAMPLE_RATE, Waveform


def exponential_decay_rir(t60: float, seed: int, duration_factor: float = 1.25) -> Waveform:
    """Noise with an exponential energy decay whose Schroeder T60 is ``t60``.

    60 dB of energy decay at time t solves e^(-2 a t) = 1e-6, so a = ln(1e6)/(2 t60).
    """
    alpha = math.log(1e6) / 2.0 / t60
    n = int((duration_factor * t60 + 0.1) * SAMPLE_RATE)
    t = np.arange(n) / SAMPLE_RATE
    rng = np.random.default_rng(seed)
    return Waveform(np.exp(-alpha * t) * rng.standard_normal(n))


def noise_bursts(seed: int, n_bursts: int = 3, burst_s: float = 0.5, gap_s: float = 1.0) -> Waveform:
    """White-noise bursts separated by silence; offsets expose free decays."""
    rng = np.random.default_rng(seed)
    burst = int(burst_s * SAMPLE_RATE)
    gap = int(gap_s * SAMPLE_RATE)
    parts = []
    for _ in range(n_bursts):
        parts.append(rng.standard_normal(burst) * 0.3)
        parts.append(np.zeros(gap))
    return Waveform(np.concatenate(parts))


def click_train(n_clicks: int = 8, period_s: float = 0.25) -> Waveform:
    period = int(period_s * SAMPLE_RATE)
    x = np.zeros(n_clicks * period)
    x[::period] = 1.0
    return Waveform(x)


def speech_like_utterance(seed: int, duration_s: float = 4.0) -> Waveform:
    """Harmonic syllable-like bursts with pauses, loosely speech-shaped.

    Amplitude-modulated harmonic complexes with a wandering fundamental,
    a little breath noise, and inter-syllable silences so that blind decay
    estimation has offsets to work with.
    """
    rng = np.random.default_rng(seed)
    total = int(duration_s * SAMPLE_RATE)
    out = np.zeros(total)
    pos = int(rng.integers(0, SAMPLE_RATE // 10))
    while pos < total:
        syll = int(rng.uniform(0.12, 0.30) * SAMPLE_RATE)
        syll = min(syll, total - pos)
        if syll < 400:
            break
        f0 = rng.uniform(90.0, 240.0)
        t = np.arange(syll) / SAMPLE_RATE
        tone = np.zeros(syll)
        for k in range(1, 24):
            f = k * f0
            if f > 4000.0:
                break
            tone += math.cos(rng.uniform(0, 2 * math.pi)) / k * np.sin(
                2 * np.pi * f * t + rng.uniform(0, 2 * math.pi)
            )
        tone += 0.02 * rng.standard_normal(syll)
        # raised-cosine attack/release so offsets decay fast (dry speech)
        ramp = max(16, int(0.02 * SAMPLE_RATE))
        env = np.ones(syll)
        env[:ramp] = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        env[-ramp:] = 0.5 + 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        out[pos : pos + syll] += tone * env * rng.uniform(0.3, 1.0)
        pos += syll + int(rng.uniform(0.06, 0.30) * SAMPLE_RATE)
    peak = np.max(np.abs(out))
    if peak > 0:
        out = out / peak * 0.7
    return Waveform(out)
