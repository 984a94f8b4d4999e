"""Dataset preparation and training-example generation.

Raw dry-speech corpora pass a dryness filter (model-based output/residual
ratios, or a stage-0 blind decay heuristic for the first round before any
model exists), get cut into fixed 3 s clips, and receive a deterministic
utterance-level half assignment. Half A supplies the dry stream of
unpaired training and half B the reverberated stream, so the model never
sees the same utterance in both versions. Examples are reverberated
on the fly, peak-normalized, gain-augmented, and cropped to 512 ms.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from dereverb.dsp import (
    SAMPLE_RATE,
    AudioFormatError,
    Waveform,
    convolve_full,
    peak_normalize,
    read_wav,
    write_wav,
)
from dereverb.metrics import estimate_t60_blind
from dereverb.roomsim import ImpulseResponse, early_reverb_target

CLIP_SAMPLES = 3 * SAMPLE_RATE  # 48,000
CROP_SAMPLES = 8192             # 512 ms
GAIN_RANGE = (0.3, 1.0)
MIN_UTTERANCE_SAMPLES = SAMPLE_RATE  # utterances under 1 s are dropped

DRY_HALF = "A"
REVERB_HALF = "B"

FILTER_WINDOW_SAMPLES = 3 * SAMPLE_RATE
FILTER_STRIDE_SAMPLES = SAMPLE_RATE
DEFAULT_THETA_WINDOW = 2.0
DEFAULT_THETA_LOGMEAN = math.log(4.0)
STAGE0_T60_THRESHOLD_S = 0.35


@dataclass
class ClipRecord:
    """One fixed-length training clip with its utterance-level half."""

    clip_id: str
    waveform: Waveform
    source_utterance: str
    half: str

    def __post_init__(self):
        if len(self.waveform) != CLIP_SAMPLES:
            raise ValueError(
                f"{self.clip_id}: clips must be exactly {CLIP_SAMPLES} samples"
            )
        if self.half not in (DRY_HALF, REVERB_HALF):
            raise ValueError(f"half must be {DRY_HALF} or {REVERB_HALF}")


@dataclass
class TrainingExample:
    """One 512 ms training crop pair (plus the aligned target when paired)."""

    mode: str
    x_r: Waveform
    y_d: Waveform
    paired_target: Waveform | None
    x_r_utterance: str
    y_d_utterance: str
    gain_x: float
    gain_y: float


@dataclass
class FilterDecision:
    accepted: bool
    stats: dict[str, float]


def assign_half(utterance_id: str) -> str:
    """Deterministic 50/50 utterance-level split (hash-based)."""
    digest = hashlib.sha256(utterance_id.encode("utf-8")).digest()
    return DRY_HALF if digest[0] % 2 == 0 else REVERB_HALF


def assign_halves(utterance_ids) -> dict[str, str]:
    return {u: assign_half(u) for u in utterance_ids}


def dryness_filter(
    w: Waveform,
    enhancer,
    theta_window: float = DEFAULT_THETA_WINDOW,
    theta_logmean: float = DEFAULT_THETA_LOGMEAN,
) -> FilterDecision:
    """Model-based dryness check.

    Runs the enhancer, then over rolling 3 s windows (1 s stride) computes
    the ratio std(output) / std(residual). A clip is rejected if any
    window's ratio falls below ``theta_window`` or the mean log-ratio
    falls below ``theta_logmean``: a large residual means the enhancer
    found reverberation or noise to remove.
    """
    x = w.samples
    if x.size < FILTER_WINDOW_SAMPLES:
        raise ValueError("dryness_filter needs at least 3 s of audio")
    enhanced = enhancer(w)
    if len(enhanced) != len(w):
        raise ValueError(
            f"enhancer output length {len(enhanced)} != input length {len(w)}"
        )
    e = enhanced.samples
    r = x - e
    ratios = []
    for start in range(0, x.size - FILTER_WINDOW_SAMPLES + 1, FILTER_STRIDE_SAMPLES):
        seg_e = e[start : start + FILTER_WINDOW_SAMPLES]
        seg_r = r[start : start + FILTER_WINDOW_SAMPLES]
        std_r = float(np.std(seg_r))
        std_e = float(np.std(seg_e))
        ratios.append(np.inf if std_r == 0.0 else std_e / std_r)
    ratios = np.asarray(ratios)
    with np.errstate(divide="ignore"):
        log_ratios = np.log(ratios)
    min_ratio = float(np.min(ratios))
    mean_log = float(np.mean(log_ratios))
    accepted = (min_ratio >= theta_window) and (mean_log >= theta_logmean)
    return FilterDecision(
        accepted=accepted,
        stats={
            "min_ratio": min_ratio,
            "mean_log_ratio": mean_log,
            "n_windows": float(ratios.size),
        },
    )


def stage0_dryness_filter(
    w: Waveform, t60_threshold_s: float = STAGE0_T60_THRESHOLD_S
) -> FilterDecision:
    """Bootstrap dryness check for the first training round.

    No enhancement model exists yet, so clips whose blind decay estimate
    exceeds the threshold are treated as reverberant. Clips with no
    detectable decay are accepted (nothing proves them reverberant).
    """
    try:
        t60 = estimate_t60_blind(w)
    except ValueError:
        return FilterDecision(accepted=True, stats={"estimated_t60_s": float("nan")})
    return FilterDecision(
        accepted=t60 <= t60_threshold_s, stats={"estimated_t60_s": t60}
    )


def segment_clips(w: Waveform, utterance_id: str) -> list[ClipRecord]:
    """Cut into consecutive non-overlapping 3 s clips; remainder dropped."""
    half = assign_half(utterance_id)
    clips = []
    for k in range(len(w) // CLIP_SAMPLES):
        seg = w.samples[k * CLIP_SAMPLES : (k + 1) * CLIP_SAMPLES]
        clips.append(
            ClipRecord(
                clip_id=f"{utterance_id}_{k:04d}",
                waveform=Waveform(seg.copy()),
                source_utterance=utterance_id,
                half=half,
            )
        )
    return clips


def _normalized_gained(x: np.ndarray, gain: float) -> np.ndarray:
    peak = np.max(np.abs(x))
    if peak == 0.0:
        return x.copy()
    return x / peak * gain


def make_example(
    clip: ClipRecord,
    rir: ImpulseResponse,
    mode: str,
    rng_seed: int,
    dry_clip: ClipRecord | None = None,
) -> TrainingExample:
    """Build one training example.

    Paired mode: the clip is convolved with the RIR (input) and with its
    early-windowed version (target); both sides share the peak-normalize
    gain draw and the crop offset so they stay sample-aligned.

    Unpaired mode: ``clip`` must come from the reverberant half and is
    convolved with the RIR; ``dry_clip`` must come from the dry half and
    is used as-is. Gains and crop offsets are drawn independently.
    """
    rng = np.random.default_rng(rng_seed)
    max_offset = CLIP_SAMPLES - CROP_SAMPLES
    if mode == "paired":
        x_full = convolve_full(clip.waveform, rir.h).samples[:CLIP_SAMPLES]
        target_rir = early_reverb_target(rir)
        t_full = convolve_full(clip.waveform, target_rir.h).samples[:CLIP_SAMPLES]
        gain = float(rng.uniform(*GAIN_RANGE))
        offset = int(rng.integers(0, max_offset + 1))
        x_r = _normalized_gained(x_full, gain)[offset : offset + CROP_SAMPLES]
        target = _normalized_gained(t_full, gain)[offset : offset + CROP_SAMPLES]
        return TrainingExample(
            mode="paired",
            x_r=Waveform(x_r),
            y_d=Waveform(target.copy()),
            paired_target=Waveform(target),
            x_r_utterance=clip.source_utterance,
            y_d_utterance=clip.source_utterance,
            gain_x=gain,
            gain_y=gain,
        )
    if mode == "unpaired":
        if dry_clip is None:
            raise ValueError("unpaired mode needs a dry-half clip")
        if clip.half != REVERB_HALF or dry_clip.half != DRY_HALF:
            raise ValueError(
                f"unpaired mode needs halves ({REVERB_HALF}, {DRY_HALF}), got "
                f"({clip.half}, {dry_clip.half})"
            )
        x_full = convolve_full(clip.waveform, rir.h).samples[:CLIP_SAMPLES]
        gain_x = float(rng.uniform(*GAIN_RANGE))
        gain_y = float(rng.uniform(*GAIN_RANGE))
        offset_x = int(rng.integers(0, max_offset + 1))
        offset_y = int(rng.integers(0, max_offset + 1))
        x_r = _normalized_gained(x_full, gain_x)[offset_x : offset_x + CROP_SAMPLES]
        y_d = _normalized_gained(dry_clip.waveform.samples, gain_y)[
            offset_y : offset_y + CROP_SAMPLES
        ]
        return TrainingExample(
            mode="unpaired",
            x_r=Waveform(x_r),
            y_d=Waveform(y_d),
            paired_target=None,
            x_r_utterance=clip.source_utterance,
            y_d_utterance=dry_clip.source_utterance,
            gain_x=gain_x,
            gain_y=gain_y,
        )
    raise ValueError(f"unknown mode {mode!r}")


@dataclass
class PreparedDataset:
    """Accepted clips plus the per-utterance filter manifest."""

    clips: list[ClipRecord]
    utterances: list[dict]

    def clips_in_half(self, half: str) -> list[ClipRecord]:
        return [c for c in self.clips if c.half == half]


def make_batch(
    dataset: PreparedDataset,
    rirs: list[ImpulseResponse],
    mode: str,
    batch_size: int,
    rng_seed: int,
    step: int,
) -> list[TrainingExample]:
    """Deterministic batch for a given (seed, step): resumable streams."""
    root = np.random.SeedSequence((rng_seed, step))
    rng = np.random.default_rng(root)
    child_seeds = root.generate_state(batch_size + 1)[1:]
    examples = []
    if mode == "paired":
        clips = dataset.clips
        if not clips or not rirs:
            raise ValueError("paired batches need clips and RIRs")
        for slot in range(batch_size):
            clip = clips[int(rng.integers(0, len(clips)))]
            rir = rirs[int(rng.integers(0, len(rirs)))]
            examples.append(make_example(clip, rir, "paired", int(child_seeds[slot])))
        return examples
    if mode == "unpaired":
        reverb = dataset.clips_in_half(REVERB_HALF)
        dry = dataset.clips_in_half(DRY_HALF)
        if not reverb or not dry or not rirs:
            raise ValueError("unpaired batches need clips in both halves and RIRs")
        for slot in range(batch_size):
            clip = reverb[int(rng.integers(0, len(reverb)))]
            dry_clip = dry[int(rng.integers(0, len(dry)))]
            rir = rirs[int(rng.integers(0, len(rirs)))]
            examples.append(
                make_example(
                    clip, rir, "unpaired", int(child_seeds[slot]), dry_clip=dry_clip
                )
            )
        return examples
    raise ValueError(f"unknown mode {mode!r}")


def prepare_dataset(
    in_dir,
    out_dir,
    mode: str = "stage0",
    enhancer=None,
    theta_window: float = DEFAULT_THETA_WINDOW,
    theta_logmean: float = DEFAULT_THETA_LOGMEAN,
) -> PreparedDataset:
    """Filter, segment, and half-assign a directory of 16 kHz WAV files.

    ``mode`` is "stage0" (blind decay heuristic) or "model" (requires an
    ``enhancer`` callable). Files that cannot be read or are not 16 kHz
    mono are listed as rejected, not fatal. Writes float32 clip WAVs plus
    a manifest with per-file accept/reject decisions and filter stats.
    """
    if mode not in ("stage0", "model"):
        raise ValueError(f"unknown filter mode {mode!r}")
    if mode == "model" and enhancer is None:
        raise ValueError("model mode needs an enhancer")
    in_path, out_path = Path(in_dir), Path(out_dir)
    clip_dir = out_path / "clips"
    clip_dir.mkdir(parents=True, exist_ok=True)

    utterances, clips = [], []
    for wav_path in sorted(in_path.glob("*.wav")):
        utt_id = wav_path.stem
        record = {"utterance_id": utt_id, "file": wav_path.name}
        try:
            w = read_wav(wav_path)
        except (AudioFormatError, ValueError) as exc:
            record.update(accepted=False, reason=f"unreadable: {exc}", half=None)
            utterances.append(record)
            continue
        record["half"] = assign_half(utt_id)
        if len(w) < MIN_UTTERANCE_SAMPLES:
            record.update(accepted=False, reason="shorter than 1 s")
            utterances.append(record)
            continue
        if len(w) < CLIP_SAMPLES:
            record.update(accepted=False, reason="shorter than one 3 s clip")
            utterances.append(record)
            continue
        if mode == "stage0":
            decision = stage0_dryness_filter(w)
        else:
            decision = dryness_filter(w, enhancer, theta_window, theta_logmean)
        record["filter_stats"] = decision.stats
        if not decision.accepted:
            record.update(accepted=False, reason="dryness filter")
            utterances.append(record)
            continue
        utt_clips = segment_clips(w, utt_id)
        record.update(accepted=True, reason=None, n_clips=len(utt_clips))
        utterances.append(record)
        for clip in utt_clips:
            write_wav(clip_dir / f"{clip.clip_id}.wav", clip.waveform)
            clips.append(clip)

    manifest = {
        "kind": "prepared_dataset",
        "filter_mode": mode,
        "utterances": utterances,
        "clips": [
            {
                "clip_id": c.clip_id,
                "utterance_id": c.source_utterance,
                "half": c.half,
                "file": f"clips/{c.clip_id}.wav",
            }
            for c in clips
        ],
    }
    (out_path / "manifest.json").write_text(
        json.dumps(manifest, indent=1, sort_keys=True)
    )
    return PreparedDataset(clips=clips, utterances=utterances)


def load_prepared_dataset(data_dir) -> PreparedDataset:
    root = Path(data_dir)
    manifest = json.loads((root / "manifest.json").read_text())
    clips = [
        ClipRecord(
            clip_id=entry["clip_id"],
            waveform=read_wav(root / entry["file"]),
            source_utterance=entry["utterance_id"],
            half=entry["half"],
        )
        for entry in manifest["clips"]
    ]
    return PreparedDataset(clips=clips, utterances=manifest["utterances"])
