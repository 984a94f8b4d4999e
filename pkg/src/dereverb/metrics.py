"""Objective evaluation: projection-based SDR, frequency-weighted segmental
SNR, blind reverberation-time estimation, and bootstrap confidence intervals.

SDR follows the single-source BSS-eval convention: the estimate is
decomposed against a 512-tap time-invariant filter of the reference, so up
to 512 samples of misalignment (and any fixed gain) are absorbed into the
target component. FWSegSNR uses 32 ms Hann frames at 75% overlap with
per-band clamping and magnitude-power weighting. The blind T60 estimator
replaces a learned estimator: it finds free-decay regions after signal
offsets and fits each with a maximum-likelihood exponential-decay model.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.signal
from scipy.special import logsumexp

from dereverb.dsp import SAMPLE_RATE, Waveform

SDR_CAP_DB = 100.0
SDR_FILTER_TAPS = 512

FWSEG_FRAME = 512            # 32 ms at 16 kHz
FWSEG_HOP = 128              # 75% overlap
FWSEG_CLAMP_DB = (-10.0, 35.0)
FWSEG_GAMMA = 0.2
FWSEG_SILENCE_FLOOR_DB = -40.0


def _project_onto_shifts(ref: np.ndarray, x: np.ndarray, flen: int) -> np.ndarray:
    """Least-squares projection of x onto span{ref shifted by 0..flen-1}.

    Returns the projected signal of length len(x) + flen - 1.
    """
    n = ref.size
    nfft = int(2 ** math.ceil(math.log2(n + flen - 1)))
    sf = np.fft.rfft(ref, nfft)
    xf = np.fft.rfft(x, nfft)
    autocorr = np.fft.irfft(sf * np.conj(sf), nfft)[:flen]
    crosscorr = np.fft.irfft(xf * np.conj(sf), nfft)[:flen]
    try:
        filt = scipy.linalg.solve_toeplitz((autocorr, autocorr), crosscorr)
    except np.linalg.LinAlgError:
        g = scipy.linalg.toeplitz(autocorr)
        filt = np.linalg.lstsq(g, crosscorr, rcond=None)[0]
    return scipy.signal.fftconvolve(filt, ref)[: n + flen - 1]


def sdr(ref: Waveform, est: Waveform) -> float:
    """Signal-to-distortion ratio in dB, tolerant of <=512-sample misalignment.

    The target component is the least-squares projection of the estimate
    onto the reference and its first 511 delays; everything else is
    distortion. Capped at +100 dB.
    """
    r, e = ref.samples, est.samples
    if r.size != e.size:
        raise ValueError(f"length mismatch: {r.size} vs {e.size}")
    if r.size < 4096:
        raise ValueError("sdr requires at least 4096 samples")
    if not np.any(r):
        raise ValueError("silent reference")
    s_target = _project_onto_shifts(r, e, SDR_FILTER_TAPS)
    e_padded = np.concatenate([e, np.zeros(SDR_FILTER_TAPS - 1)])
    distortion = e_padded - s_target
    num = float(np.sum(s_target**2))
    den = float(np.sum(distortion**2))
    if den <= num * 10.0 ** (-SDR_CAP_DB / 10.0):
        return SDR_CAP_DB
    return min(10.0 * math.log10(num / den), SDR_CAP_DB)


def _frame_matrix(x: np.ndarray, frame: int, hop: int) -> np.ndarray:
    n_frames = (x.size - frame) // hop + 1
    idx = np.arange(frame)[None, :] + hop * np.arange(n_frames)[:, None]
    return x[idx]


def fwsegsnr(ref: Waveform, est: Waveform) -> float:
    """Frequency-weighted segmental SNR in dB.

    Per 32 ms Hann frame and FFT bin: 10 log10(|R|^2 / |R - E|^2), clamped
    to [-10, 35] dB, averaged with weights |R|^0.2 and then over frames
    whose reference energy is within 40 dB of the loudest frame.
    """
    r, e = ref.samples, est.samples
    if r.size != e.size:
        raise ValueError(f"length mismatch: {r.size} vs {e.size}")
    if r.size < FWSEG_FRAME:
        raise ValueError(f"fwsegsnr requires at least {FWSEG_FRAME} samples")
    if not np.any(r):
        raise ValueError("silent reference")
    win = scipy.signal.windows.hann(FWSEG_FRAME, sym=False)
    r_frames = _frame_matrix(r, FWSEG_FRAME, FWSEG_HOP) * win
    e_frames = _frame_matrix(e, FWSEG_FRAME, FWSEG_HOP) * win
    r_spec = np.fft.rfft(r_frames, axis=1)
    e_spec = np.fft.rfft(e_frames, axis=1)

    sig = np.abs(r_spec) ** 2
    err = np.abs(r_spec - e_spec) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        snr_db = 10.0 * np.log10(sig / err)
    snr_db = np.nan_to_num(snr_db, nan=FWSEG_CLAMP_DB[1], posinf=FWSEG_CLAMP_DB[1],
                           neginf=FWSEG_CLAMP_DB[0])
    snr_db = np.clip(snr_db, *FWSEG_CLAMP_DB)

    weights = np.abs(r_spec) ** FWSEG_GAMMA
    frame_energy = np.sum(r_frames**2, axis=1)
    active = frame_energy > frame_energy.max() * 10.0 ** (FWSEG_SILENCE_FLOOR_DB / 10.0)
    w_sum = weights[active].sum(axis=1)
    frame_vals = np.sum(weights[active] * snr_db[active], axis=1) / w_sum
    return float(np.mean(frame_vals))


T60_SEARCH_RANGE_S = (0.01, 10.0)
_ENV_FRAME = 256
_ENV_HOP = 64
_MIN_DECAY_DROP_DB = 15.0
_DECAY_RISE_TOL_DB = 2.0
_FIT_SPAN_DB = 20.0


def _energy_envelope_db(x: np.ndarray) -> np.ndarray:
    frames = _frame_matrix(x, _ENV_FRAME, _ENV_HOP)
    energy = np.mean(frames**2, axis=1)
    floor = energy.max() * 1e-10
    env = 10.0 * np.log10(np.maximum(energy, floor))
    # light smoothing to ignore single-frame wiggles
    return np.convolve(env, np.ones(3) / 3.0, mode="same")


def _find_decay_regions(env_db: np.ndarray) -> list[tuple[int, int]]:
    """(onset_frame, end_frame) spans where the envelope falls >= 15 dB."""
    regions = []
    n = env_db.size
    i = 0
    while i < n - 3:
        if env_db[i + 1] > env_db[i]:
            i += 1
            continue
        run_min = env_db[i]
        j_min = i
        j = i + 1
        while j < n and env_db[j] <= run_min + _DECAY_RISE_TOL_DB:
            if env_db[j] < run_min:
                run_min = env_db[j]
                j_min = j
            j += 1
        if env_db[i] - run_min >= _MIN_DECAY_DROP_DB and j_min > i + 2:
            regions.append((i, j_min))
        i = max(j, i + 1)
    return regions


def _ml_decay_t60(x: np.ndarray, fs: int = SAMPLE_RATE) -> float:
    """Maximum-likelihood T60 for one free-decay region.

    Models x_k ~ N(0, (sigma a^k)^2) and profiles the likelihood over the
    per-sample decay factor a by golden-section search in log space.
    """
    n = x.size
    k = np.arange(n)
    with np.errstate(divide="ignore"):
        log_x2 = 2.0 * np.log(np.abs(x))
    k_sum = float(k.sum())

    def nll(ln_a: float) -> float:
        s = logsumexp(log_x2 - 2.0 * k * ln_a) - math.log(n)
        return 0.5 * n * s + ln_a * k_sum

    # a = 10^(-3 / (fs * T60)): search between the T60 range endpoints
    lo = -3.0 * math.log(10.0) / (fs * T60_SEARCH_RANGE_S[0])
    hi = -3.0 * math.log(10.0) / (fs * T60_SEARCH_RANGE_S[1])
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c1, c2 = b - phi * (b - a), a + phi * (b - a)
    f1, f2 = nll(c1), nll(c2)
    for _ in range(60):
        if f1 < f2:
            b, c2, f2 = c2, c1, f1
            c1 = b - phi * (b - a)
            f1 = nll(c1)
        else:
            a, c1, f1 = c1, c2, f2
            c2 = a + phi * (b - a)
            f2 = nll(c2)
    ln_a = (a + b) / 2.0
    return -3.0 * math.log(10.0) / (fs * ln_a)


def estimate_t60_blind(w: Waveform) -> float:
    """Blind reverberation-time estimate from free-decay regions.

    Detects envelope offsets that drop at least 15 dB, fits each with the
    ML exponential-decay model, and reports the 25th percentile of the
    per-region T60s (free decays bound the true decay rate from above;
    interrupted decays only bias upward).
    """
    x = w.samples
    if x.size < SAMPLE_RATE:
        raise ValueError("estimate_t60_blind requires at least 1 s of audio")
    if not np.any(x):
        raise ValueError("no decay detected: silent input")
    env = _energy_envelope_db(x)
    regions = _find_decay_regions(env)
    t60s = []
    for onset, end in regions:
        # fit between the -3 dB and -20 dB envelope crossings: earlier
        # frames still straddle the offset, later ones hit the floor or
        # the next event
        start_level = env[onset]
        f_start = onset + 1
        while f_start <= end and env[f_start] > start_level - 3.0:
            f_start += 1
        f_stop = f_start
        while f_stop <= end and env[f_stop] > start_level - _FIT_SPAN_DB:
            f_stop += 1
        i0 = f_start * _ENV_HOP + _ENV_FRAME // 2
        i1 = min(f_stop * _ENV_HOP + _ENV_FRAME // 2, x.size)
        if i1 - i0 < 256:
            i1 = min(i0 + 256, x.size)
        seg = x[i0:i1]
        if seg.size < 256:
            continue
        if not np.any(seg):
            # instantaneous decay: already at digital silence
            t60s.append(T60_SEARCH_RANGE_S[0])
            continue
        t60s.append(_ml_decay_t60(seg))
    if not t60s:
        raise ValueError("no decay detected")
    return float(np.percentile(t60s, 25.0))


def bootstrap_ci(
    values,
    confidence: float = 0.95,
    n_resamples: int = 10000,
    rng_seed: int = 0,
) -> tuple[float, float]:
    """Percentile bootstrap for the mean: returns (mean, CI half-width)."""
    vals = np.asarray(values, dtype=np.float64)
    if vals.size < 2:
        raise ValueError("bootstrap_ci requires at least 2 values")
    rng = np.random.default_rng(rng_seed)
    idx = rng.integers(0, vals.size, size=(n_resamples, vals.size))
    means = vals[idx].mean(axis=1)
    alpha = (1.0 - confidence) / 2.0
    lo, hi = np.percentile(means, [100.0 * alpha, 100.0 * (1.0 - alpha)])
    return float(vals.mean()), float((hi - lo) / 2.0)


METRIC_NAMES = ("fwsegsnr_db", "sdr_db", "estimated_t60_s")


@dataclass
class SystemMetrics:
    """Per-utterance and aggregate metrics for one system (model / no model)."""

    per_utterance: dict[str, dict[str, float]] = field(default_factory=dict)
    aggregates: dict[str, tuple[float, float]] = field(default_factory=dict)
    missing: dict[str, int] = field(default_factory=dict)


@dataclass
class MetricsReport:
    """Evaluation table: model row vs unprocessed-input baseline row."""

    systems: dict[str, SystemMetrics]
    n_utterances: int

    def summary(self) -> str:
        lines = [
            f"{'system':<10} "
            + " ".join(f"{m:>24}" for m in METRIC_NAMES)
        ]
        for name, sysm in self.systems.items():
            cells = []
            for m in METRIC_NAMES:
                mean, hw = sysm.aggregates.get(m, (float("nan"), float("nan")))
                cells.append(f"{mean:>14.3f} +- {hw:<7.4f}")
            lines.append(f"{name:<10} " + " ".join(cells))
        lines.append(f"utterances: {self.n_utterances}")
        return "\n".join(lines)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["utterance_id", "system", *METRIC_NAMES])
            for name, sysm in self.systems.items():
                for utt_id, vals in sysm.per_utterance.items():
                    writer.writerow(
                        [utt_id, name] + [f"{vals.get(m, float('nan')):.6f}" for m in METRIC_NAMES]
                    )
            for name, sysm in self.systems.items():
                means = [f"{sysm.aggregates[m][0]:.6f}" for m in METRIC_NAMES]
                halfs = [f"{sysm.aggregates[m][1]:.6f}" for m in METRIC_NAMES]
                writer.writerow(["AGGREGATE_MEAN", name, *means])
                writer.writerow(["AGGREGATE_CI95_HALF_WIDTH", name, *halfs])


def _score_one(out: Waveform, ref: Waveform) -> dict[str, float]:
    vals = {}
    for name, fn in (
        ("fwsegsnr_db", lambda: fwsegsnr(ref, out)),
        ("sdr_db", lambda: sdr(ref, out)),
        ("estimated_t60_s", lambda: estimate_t60_blind(out)),
    ):
        try:
            vals[name] = float(fn())
        except ValueError:
            vals[name] = float("nan")
    return vals


def evaluate_model(generator, eval_set, rng_seed: int = 0) -> MetricsReport:
    """Score a generator on (reverberant, reference) pairs.

    ``generator`` maps Waveform -> Waveform (chunking for long inputs is
    the caller's concern; see ``dereverb.nets.enhance_waveform``).
    ``eval_set`` is an iterable of (utterance_id, reverberant, reference).
    The report carries a "model" row and a "no_model" row scoring the
    unprocessed inputs; per-utterance metric failures become missing
    values excluded from the aggregates.
    """
    eval_set = list(eval_set)
    if not eval_set:
        raise ValueError("empty evaluation set")
    systems = {"model": SystemMetrics(), "no_model": SystemMetrics()}
    for utt_id, reverberant, reference in eval_set:
        out = generator(reverberant)
        systems["model"].per_utterance[utt_id] = _score_one(out, reference)
        systems["no_model"].per_utterance[utt_id] = _score_one(reverberant, reference)
    for sysm in systems.values():
        for m in METRIC_NAMES:
            vals = np.array([v[m] for v in sysm.per_utterance.values()])
            good = vals[np.isfinite(vals)]
            sysm.missing[m] = int(vals.size - good.size)
            if good.size >= 2:
                sysm.aggregates[m] = bootstrap_ci(good, rng_seed=rng_seed)
            elif good.size == 1:
                sysm.aggregates[m] = (float(good[0]), 0.0)
            else:
                sysm.aggregates[m] = (float("nan"), float("nan"))
    return MetricsReport(systems=systems, n_utterances=len(eval_set))
