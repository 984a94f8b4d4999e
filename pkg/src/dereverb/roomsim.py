"""Synthetic room impulse responses via the image-source method.

Rooms are rectangular with frequency-dependent surface absorption over the
7 octave bands of :mod:`dereverb.dsp`. Image positions (except the direct
path) are jittered inside a 16 cm cube to suppress sweeping echoes, and
per-band impulse trains are combined through the zero-phase octave
filterbank. Early-reflection targets, Schroeder T60, and direct-to-reverb
ratio measurements live here too.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dereverb.dsp import (
    N_OCTAVE_BANDS,
    SAMPLE_RATE,
    Waveform,
    octave_band_filter_array,
    write_wav,
    read_wav,
)

SPEED_OF_SOUND = 343.0
JITTER_CUBE_SIDE_M = 0.16
# zero-padding after the last arrival so band-filter ringing decays fully
# (the 60 Hz crossover rings longest); keeps filtering content-pure
FILTER_TAIL_SAMPLES = 4096
MIN_SURFACE_CLEARANCE_M = 0.3
MIN_SOURCE_MIC_DISTANCE_M = 0.5

ROOM_WIDTH_RANGE_M = (3.0, 7.0)
ROOM_LENGTH_RANGE_M = (4.0, 8.0)
ROOM_HEIGHT_RANGE_M = (2.13, 3.05)


class SimulationError(RuntimeError):
    """Raised for unreachable geometry or corpus-build failures."""


@dataclass(frozen=True)
class Material:
    """Surface material with per-octave-band energy absorption."""

    name: str
    absorption: tuple[float, ...]

    def __post_init__(self):
        if len(self.absorption) != N_OCTAVE_BANDS:
            raise ValueError(
                f"{self.name}: need {N_OCTAVE_BANDS} absorption coefficients"
            )
        if not all(0.0 <= a <= 1.0 for a in self.absorption):
            raise ValueError(f"{self.name}: absorption must lie in [0, 1]")

    @property
    def reflection(self) -> np.ndarray:
        """Per-band amplitude reflection coefficient sqrt(1 - alpha)."""
        return np.sqrt(1.0 - np.asarray(self.absorption))


# Absorption tables, loosely following published trends per material but
# floored near 0.10 so simulated decay times stay in the sub-1.5 s range
# a real furnished room would show (the model has no air absorption).
WALL_MATERIALS = (
    Material("painted_plaster", (0.14, 0.13, 0.12, 0.12, 0.12, 0.13, 0.14)),
    Material("brick", (0.13, 0.12, 0.12, 0.13, 0.14, 0.15, 0.16)),
    Material("glass_pane", (0.25, 0.18, 0.15, 0.13, 0.12, 0.12, 0.12)),
    Material("wood_paneling", (0.30, 0.25, 0.20, 0.17, 0.14, 0.12, 0.12)),
    Material("heavy_curtains", (0.14, 0.35, 0.55, 0.70, 0.70, 0.65, 0.65)),
)
FLOOR_MATERIALS = (
    Material("concrete", (0.14, 0.13, 0.12, 0.12, 0.12, 0.13, 0.14)),
    Material("tile", (0.13, 0.12, 0.12, 0.12, 0.13, 0.14, 0.15)),
    Material("thin_carpet", (0.12, 0.14, 0.17, 0.25, 0.35, 0.40, 0.42)),
    Material("thick_carpet", (0.12, 0.22, 0.40, 0.60, 0.70, 0.72, 0.72)),
)
CEILING_MATERIALS = (
    Material("plaster_ceiling", (0.14, 0.13, 0.12, 0.12, 0.12, 0.13, 0.14)),
    Material("acoustic_tile", (0.45, 0.60, 0.70, 0.75, 0.78, 0.78, 0.75)),
    Material("gypsum_board", (0.24, 0.17, 0.13, 0.12, 0.12, 0.12, 0.13)),
    Material("wood_ceiling", (0.22, 0.18, 0.15, 0.13, 0.12, 0.12, 0.12)),
)

_WALLS_BY_NAME = {m.name: m for m in WALL_MATERIALS + FLOOR_MATERIALS + CEILING_MATERIALS}


@dataclass
class RoomSpec:
    """Rectangular room geometry, materials, and source/mic placement."""

    width_m: float
    length_m: float
    height_m: float
    wall_material: Material
    floor_material: Material
    ceiling_material: Material
    source_pos: tuple[float, float, float]
    mic_pos: tuple[float, float, float]

    def __post_init__(self):
        dims = (self.width_m, self.length_m, self.height_m)
        ranges = (ROOM_WIDTH_RANGE_M, ROOM_LENGTH_RANGE_M, ROOM_HEIGHT_RANGE_M)
        for value, (lo, hi) in zip(dims, ranges):
            if not lo <= value <= hi:
                raise ValueError(f"room dimension {value} outside [{lo}, {hi}]")
        for pos in (self.source_pos, self.mic_pos):
            for coord, dim in zip(pos, dims):
                if not MIN_SURFACE_CLEARANCE_M <= coord <= dim - MIN_SURFACE_CLEARANCE_M:
                    raise ValueError(
                        f"position {pos} closer than {MIN_SURFACE_CLEARANCE_M} m to a surface"
                    )
        if self.source_mic_distance() < MIN_SOURCE_MIC_DISTANCE_M:
            raise ValueError(
                f"source and mic must be at least {MIN_SOURCE_MIC_DISTANCE_M} m apart"
            )

    @property
    def dimensions(self) -> np.ndarray:
        return np.array([self.width_m, self.length_m, self.height_m])

    @property
    def volume_m3(self) -> float:
        return self.width_m * self.length_m * self.height_m

    def source_mic_distance(self) -> float:
        return float(
            np.linalg.norm(np.asarray(self.source_pos) - np.asarray(self.mic_pos))
        )


@dataclass
class ImpulseResponse:
    """Simulated RIR with decay/directness measurements recomputed from h."""

    h: Waveform
    t60_s: float
    drr_db: float
    room: RoomSpec | None
    rng_seed: int


def sample_room(rng_seed: int) -> RoomSpec:
    """Draw a random room: uniform dimensions, materials, and placements.

    Source and mic are uniform inside the room with at least 0.3 m of
    clearance from every surface and at least 0.5 m of separation.
    Deterministic for a given seed.
    """
    rng = np.random.default_rng(rng_seed)
    width = rng.uniform(*ROOM_WIDTH_RANGE_M)
    length = rng.uniform(*ROOM_LENGTH_RANGE_M)
    height = rng.uniform(*ROOM_HEIGHT_RANGE_M)
    wall = WALL_MATERIALS[rng.integers(len(WALL_MATERIALS))]
    floor = FLOOR_MATERIALS[rng.integers(len(FLOOR_MATERIALS))]
    ceiling = CEILING_MATERIALS[rng.integers(len(CEILING_MATERIALS))]

    dims = np.array([width, length, height])

    def draw_position():
        return rng.uniform(MIN_SURFACE_CLEARANCE_M, dims - MIN_SURFACE_CLEARANCE_M)

    source = draw_position()
    mic = draw_position()
    while np.linalg.norm(source - mic) < MIN_SOURCE_MIC_DISTANCE_M:
        mic = draw_position()
    return RoomSpec(
        width_m=float(width),
        length_m=float(length),
        height_m=float(height),
        wall_material=wall,
        floor_material=floor,
        ceiling_material=ceiling,
        source_pos=tuple(float(v) for v in source),
        mic_pos=tuple(float(v) for v in mic),
    )


def _surface_reflections(room: RoomSpec) -> np.ndarray:
    """Amplitude reflection coefficients, shape (6 surfaces, 7 bands).

    Surface order: x=0 wall, x=W wall, y=0 wall, y=L wall, floor, ceiling.
    """
    wall = room.wall_material.reflection
    return np.stack(
        [wall, wall, wall, wall, room.floor_material.reflection,
         room.ceiling_material.reflection]
    )


def _sabine_t60_per_band(room: RoomSpec) -> np.ndarray:
    w, l, h = room.width_m, room.length_m, room.height_m
    s_walls = 2.0 * (w + l) * h
    s_floor = w * l
    alpha_w = np.asarray(room.wall_material.absorption)
    alpha_f = np.asarray(room.floor_material.absorption)
    alpha_c = np.asarray(room.ceiling_material.absorption)
    absorption_area = s_walls * alpha_w + s_floor * alpha_f + s_floor * alpha_c
    return 0.161 * room.volume_m3 / absorption_area


@dataclass
class ImageArrivals:
    """Pre-filter image-source arrivals: integer sample delays and per-band
    amplitudes, with the direct path kept separate."""

    delays: np.ndarray          # (n_images,) int
    band_amps: np.ndarray       # (n_images, 7)
    positions: np.ndarray       # (n_images, 3), after jitter
    base_positions: np.ndarray  # (n_images, 3), before jitter
    direct_delay: int
    direct_amp: float


def _axis_images(n: np.ndarray, q: int, src: float, dim: float) -> np.ndarray:
    # Allen & Berkley image coordinate: (1 - 2q) * src + 2 n dim
    return (1 - 2 * q) * src + 2.0 * n * dim


def image_arrivals(
    room: RoomSpec,
    max_order: int,
    rng_seed: int = 0,
    jitter: bool = True,
) -> ImageArrivals:
    """Enumerate all image sources with at most ``max_order`` reflections.

    Returns integer sample delays (nearest-sample rounding of d/c) and the
    per-band amplitude prod(beta_b^hits) / (4 pi d) of every arrival. The
    direct path is never jittered and is reported separately.
    """
    if max_order < 0:
        raise ValueError("max_order must be >= 0")
    if room.source_mic_distance() < 1e-9:
        raise SimulationError("mic coincides with source")
    rng = np.random.default_rng(rng_seed)
    src = np.asarray(room.source_pos)
    mic = np.asarray(room.mic_pos)
    dims = room.dimensions
    refl = _surface_reflections(room)  # (6, 7)

    rng_ns = np.arange(-max_order, max_order + 1)
    grids = np.meshgrid(rng_ns, rng_ns, rng_ns, indexing="ij")
    n = np.stack([g.ravel() for g in grids], axis=1)  # (cells, 3)

    positions, base_positions, counts = [], [], []
    for qx in (0, 1):
        for qy in (0, 1):
            for qz in (0, 1):
                q = np.array([qx, qy, qz])
                hits_near = np.abs(n - q)     # walls at coordinate 0
                hits_far = np.abs(n)          # walls at coordinate = dim
                order = hits_near.sum(axis=1) + hits_far.sum(axis=1)
                keep = order <= max_order
                if not np.any(keep):
                    continue
                nk = n[keep]
                pos = (1 - 2 * q)[None, :] * src[None, :] + 2.0 * nk * dims[None, :]
                base_positions.append(pos.copy())
                is_direct = (order[keep] == 0)
                if jitter:
                    offset = rng.uniform(
                        -JITTER_CUBE_SIDE_M / 2, JITTER_CUBE_SIDE_M / 2, size=pos.shape
                    )
                    offset[is_direct] = 0.0
                    pos = pos + offset
                positions.append(pos)
                # interleave per-surface hit counts as (near_x, far_x, near_y, ...)
                c = np.empty((nk.shape[0], 6), dtype=np.int64)
                c[:, 0::2] = hits_near[keep]
                c[:, 1::2] = hits_far[keep]
                counts.append(c)

    positions = np.concatenate(positions)
    base_positions = np.concatenate(base_positions)
    counts = np.concatenate(counts)

    dists = np.linalg.norm(positions - mic[None, :], axis=1)
    delays = np.round(dists / SPEED_OF_SOUND * SAMPLE_RATE).astype(np.int64)
    band_amps = _band_amplitudes(counts, refl) / (4.0 * np.pi * dists)[:, None]

    direct = np.flatnonzero(counts.sum(axis=1) == 0)[0]
    direct_delay = int(delays[direct])
    direct_amp = float(1.0 / (4.0 * np.pi * dists[direct]))
    keep = np.ones(delays.size, dtype=bool)
    keep[direct] = False
    return ImageArrivals(
        delays=delays[keep],
        band_amps=band_amps[keep],
        positions=positions[keep],
        base_positions=base_positions[keep],
        direct_delay=direct_delay,
        direct_amp=direct_amp,
    )


def _band_amplitudes(counts: np.ndarray, refl: np.ndarray) -> np.ndarray:
    """prod over surfaces of beta^hits, shape (n_images, 7).

    Uses exp(counts @ log beta) for speed; surfaces with beta == 0 (full
    absorption) are fixed up exactly afterwards.
    """
    safe = np.where(refl > 0.0, refl, 1.0)
    amps = np.exp(counts.astype(np.float64) @ np.log(safe))
    zero_surface, zero_band = np.nonzero(refl == 0.0)
    for s, b in zip(zero_surface, zero_band):
        amps[counts[:, s] > 0, b] = 0.0
    return amps


def _adaptive_band_trains(
    room: RoomSpec,
    n_samples: int,
    d_max: float,
    rng: np.random.Generator,
    jitter: bool,
) -> np.ndarray:
    """Band impulse trains (7, n_samples) for all reflected images with
    distance <= d_max; the direct path is excluded."""
    src = np.asarray(room.source_pos)
    mic = np.asarray(room.mic_pos)
    dims = room.dimensions
    refl = _surface_reflections(room)

    reach = d_max + float(np.linalg.norm(dims))
    n_per_axis = np.ceil(reach / (2.0 * dims)).astype(int)
    axes = [np.arange(-k, k + 1) for k in n_per_axis]
    grids = np.meshgrid(*axes, indexing="ij")
    n_all = np.stack([g.ravel() for g in grids], axis=1)

    trains = np.zeros((N_OCTAVE_BANDS, n_samples))
    chunk = 1 << 19
    for qx in (0, 1):
        for qy in (0, 1):
            for qz in (0, 1):
                q = np.array([qx, qy, qz])
                for start in range(0, n_all.shape[0], chunk):
                    n = n_all[start : start + chunk]
                    pos = (1 - 2 * q)[None, :] * src[None, :] + 2.0 * n * dims[None, :]
                    order = (np.abs(n - q) + np.abs(n)).sum(axis=1)
                    is_direct = order == 0
                    if jitter:
                        offset = rng.uniform(
                            -JITTER_CUBE_SIDE_M / 2,
                            JITTER_CUBE_SIDE_M / 2,
                            size=pos.shape,
                        )
                        offset[is_direct] = 0.0
                        pos = pos + offset
                    dists = np.linalg.norm(pos - mic[None, :], axis=1)
                    keep = (dists <= d_max) & ~is_direct
                    if not np.any(keep):
                        continue
                    nk = n[keep]
                    counts = np.empty((nk.shape[0], 6), dtype=np.int64)
                    counts[:, 0::2] = np.abs(nk - q)
                    counts[:, 1::2] = np.abs(nk)
                    amps = _band_amplitudes(counts, refl)
                    amps /= (4.0 * np.pi * dists[keep])[:, None]
                    delays = np.round(
                        dists[keep] / SPEED_OF_SOUND * SAMPLE_RATE
                    ).astype(np.int64)
                    inside = delays < n_samples
                    for b in range(N_OCTAVE_BANDS):
                        trains[b] += np.bincount(
                            delays[inside],
                            weights=amps[inside, b],
                            minlength=n_samples,
                        )
    return trains


def _trim_to_decay(h: np.ndarray, keep_min: int) -> np.ndarray:
    """Trim the tail once a 4 ms RMS envelope stays 60 dB below its peak,
    keeping a short sub-threshold margin so the decay is visible in h."""
    window = 64
    energy = np.convolve(h * h, np.ones(window), mode="same")
    peak = energy.max()
    if peak == 0.0:
        return h[: keep_min + 1]
    above = np.flatnonzero(energy > peak * 1e-6)
    end = min(h.size, above[-1] + window + 256)
    return h[: max(end, keep_min + 1)]


def simulate_rir(
    room: RoomSpec,
    max_order: int | None = None,
    rng_seed: int = 0,
    jitter: bool = True,
) -> ImpulseResponse:
    """Image-method RIR with frequency-dependent reflections.

    Each octave band accumulates image arrivals with amplitude
    prod(sqrt(1 - alpha_b)) / (4 pi d) at delay d/c (c = 343 m/s); the
    band trains pass through the zero-phase octave filterbank and are
    summed. The direct path is frequency-flat so it is added unfiltered.
    Non-direct image positions are jittered inside a 16 cm cube (fixed
    per image, not per band). When ``max_order`` is None the enumeration
    horizon adapts so the furthest image exceeds the -60 dB decay point
    of a Sabine pre-estimate. The tail is trimmed once its envelope stays
    60 dB below the peak.
    """
    if room.source_mic_distance() < 1e-9:
        raise SimulationError("mic coincides with source")
    rng = np.random.default_rng(rng_seed)
    direct_dist = room.source_mic_distance()
    direct_delay = int(np.round(direct_dist / SPEED_OF_SOUND * SAMPLE_RATE))
    direct_amp = 1.0 / (4.0 * np.pi * direct_dist)

    if max_order is None:
        t_est = float(np.max(_sabine_t60_per_band(room)))
        t_sim = 1.15 * t_est + 0.08
        n_samples = int(np.ceil(t_sim * SAMPLE_RATE)) + FILTER_TAIL_SAMPLES
        n_samples = max(n_samples, direct_delay + FILTER_TAIL_SAMPLES)
        d_max = SPEED_OF_SOUND * t_sim
        trains = _adaptive_band_trains(room, n_samples, d_max, rng, jitter)
    else:
        arrivals = image_arrivals(room, max_order, rng_seed=rng_seed, jitter=jitter)
        max_delay = int(arrivals.delays.max()) if arrivals.delays.size else direct_delay
        n_samples = max(max_delay, direct_delay) + FILTER_TAIL_SAMPLES
        trains = np.zeros((N_OCTAVE_BANDS, n_samples))
        for b in range(N_OCTAVE_BANDS):
            trains[b] = np.bincount(
                arrivals.delays, weights=arrivals.band_amps[:, b], minlength=n_samples
            )

    h = np.zeros(n_samples)
    for b in range(N_OCTAVE_BANDS):
        if np.any(trains[b]):
            h += octave_band_filter_array(trains[b], b, edge_pad=False)
    h[direct_delay] += direct_amp

    h = _trim_to_decay(h, keep_min=direct_delay)
    wave = Waveform(h)
    try:
        t60 = rir_t60(wave)
    except ValueError:
        t60 = float("nan")
    return ImpulseResponse(
        h=wave, t60_s=t60, drr_db=rir_drr(wave), room=room, rng_seed=rng_seed
    )


def _rir_samples(rir) -> np.ndarray:
    return rir.h.samples if isinstance(rir, ImpulseResponse) else rir.samples


def early_reverb_target(rir: ImpulseResponse) -> ImpulseResponse:
    """Zero everything 20 ms after the RIR's peak; the kept head is the
    "dry" target used for paired training."""
    h = _rir_samples(rir).copy()
    peak = int(np.argmax(np.abs(h)))
    cutoff = peak + int(round(0.020 * SAMPLE_RATE))
    if cutoff < h.size:
        h[cutoff:] = 0.0
    wave = Waveform(h)
    try:
        t60 = rir_t60(wave)
    except ValueError:
        t60 = float("nan")
    return ImpulseResponse(
        h=wave,
        t60_s=t60,
        drr_db=rir_drr(wave),
        room=rir.room if isinstance(rir, ImpulseResponse) else None,
        rng_seed=rir.rng_seed if isinstance(rir, ImpulseResponse) else 0,
    )


def rir_t60(rir) -> float:
    """Reverberation time from the Schroeder energy decay curve.

    Backward-integrates the squared RIR, fits a line on the -5 dB to
    -25 dB span, and extrapolates: T60 = 3 x (time for a 20 dB drop).
    """
    h = _rir_samples(rir)
    energy = h * h
    total = energy.sum()
    if total <= 0.0:
        raise ValueError("insufficient decay: RIR is all zero")
    edc = np.cumsum(energy[::-1])[::-1]
    with np.errstate(divide="ignore"):
        edc_db = 10.0 * np.log10(edc / edc[0])
    start_candidates = np.flatnonzero(edc_db <= -5.0)
    end_candidates = np.flatnonzero(edc_db <= -25.0)
    if start_candidates.size == 0 or end_candidates.size == 0:
        raise ValueError("insufficient decay: EDC never reaches -25 dB")
    start, end = start_candidates[0], end_candidates[0]
    if end <= start + 1:
        raise ValueError("insufficient decay: -5 to -25 dB span is empty")
    t = np.arange(start, end + 1) / SAMPLE_RATE
    slope, _ = np.polyfit(t, edc_db[start : end + 1], 1)
    if slope >= 0.0:
        raise ValueError("insufficient decay: non-decreasing EDC fit")
    return float(-60.0 / slope)


DRR_CAP_DB = 100.0
_DIRECT_WINDOW = int(round(0.0025 * SAMPLE_RATE))  # +-2.5 ms around the peak


def rir_drr(rir) -> float:
    """Direct-to-reverberant ratio in dB.

    Energy within +-2.5 ms of the peak over energy outside that window,
    capped at +100 dB when there is no late energy.
    """
    h = _rir_samples(rir)
    if h.size == 0 or not np.any(h):
        raise ValueError("RIR has no peak")
    peak = int(np.argmax(np.abs(h)))
    lo = max(0, peak - _DIRECT_WINDOW)
    hi = min(h.size, peak + _DIRECT_WINDOW + 1)
    direct = float(np.sum(h[lo:hi] ** 2))
    late = float(np.sum(h**2) - direct)
    if late <= direct * 1e-10:
        return DRR_CAP_DB
    return float(min(10.0 * np.log10(direct / late), DRR_CAP_DB))


def _attempt_seeds(rng_seed: int, attempt: int) -> tuple[int, int]:
    state = np.random.SeedSequence((rng_seed, attempt)).generate_state(2)
    return int(state[0]), int(state[1])


def _corpus_attempt(args: tuple[int, int]) -> ImpulseResponse:
    rng_seed, attempt = args
    room_seed, sim_seed = _attempt_seeds(rng_seed, attempt)
    return simulate_rir(sample_room(room_seed), rng_seed=sim_seed)


def build_rir_corpus(
    n: int,
    t60_min_s: float = 0.4,
    rng_seed: int = 0,
    workers: int = 1,
    progress: bool = False,
) -> list[ImpulseResponse]:
    """Sample rooms and simulate until ``n`` RIRs with T60 >= t60_min_s.

    Deterministic for a given seed regardless of ``workers``: attempt k
    always draws the same room and jitter, and results merge in attempt
    order. Aborts with diagnostics if fewer than 1% of any block of
    10,000 consecutive attempts is accepted.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    kept: list[ImpulseResponse] = []
    attempt = 0
    block_attempts = 0
    block_accepts = 0
    t60_seen: list[float] = []

    def consume(rir: ImpulseResponse) -> None:
        nonlocal block_attempts, block_accepts
        block_attempts += 1
        if np.isfinite(rir.t60_s):
            t60_seen.append(rir.t60_s)
        if np.isfinite(rir.t60_s) and rir.t60_s >= t60_min_s:
            kept.append(rir)
            block_accepts += 1
            if progress and len(kept) % 25 == 0:
                print(f"  rir corpus: {len(kept)}/{n}", flush=True)
        if block_attempts >= 10000:
            if block_accepts < 0.01 * block_attempts:
                raise SimulationError(
                    f"RIR acceptance rate {block_accepts}/{block_attempts} below 1%: "
                    f"t60_min_s={t60_min_s}, observed T60 "
                    f"min={min(t60_seen, default=float('nan')):.3f} "
                    f"max={max(t60_seen, default=float('nan')):.3f}"
                )
            block_attempts = 0
            block_accepts = 0

    if workers <= 1:
        while len(kept) < n:
            consume(_corpus_attempt((rng_seed, attempt)))
            attempt += 1
        return kept

    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        while len(kept) < n:
            block = [(rng_seed, attempt + k) for k in range(workers * 4)]
            attempt += len(block)
            for rir in pool.map(_corpus_attempt, block):
                if len(kept) < n:
                    consume(rir)
    return kept


def _room_to_dict(room: RoomSpec) -> dict:
    return {
        "width_m": room.width_m,
        "length_m": room.length_m,
        "height_m": room.height_m,
        "wall_material": room.wall_material.name,
        "floor_material": room.floor_material.name,
        "ceiling_material": room.ceiling_material.name,
        "source_pos": list(room.source_pos),
        "mic_pos": list(room.mic_pos),
    }


def _room_from_dict(d: dict) -> RoomSpec:
    return RoomSpec(
        width_m=d["width_m"],
        length_m=d["length_m"],
        height_m=d["height_m"],
        wall_material=_WALLS_BY_NAME[d["wall_material"]],
        floor_material=_WALLS_BY_NAME[d["floor_material"]],
        ceiling_material=_WALLS_BY_NAME[d["ceiling_material"]],
        source_pos=tuple(d["source_pos"]),
        mic_pos=tuple(d["mic_pos"]),
    )


def save_rir_corpus(rirs: list[ImpulseResponse], out_dir) -> None:
    """Write one float32 WAV + JSON sidecar per RIR and a corpus manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, rir in enumerate(rirs):
        stem = f"rir_{i:06d}"
        write_wav(out / f"{stem}.wav", rir.h)
        meta = {
            "file": f"{stem}.wav",
            "rng_seed": rir.rng_seed,
            "t60_s": rir.t60_s,
            "drr_db": rir.drr_db,
            "room": _room_to_dict(rir.room) if rir.room else None,
        }
        (out / f"{stem}.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
        entries.append(meta)
    manifest = {"kind": "rir_corpus", "count": len(rirs), "entries": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def load_rir_corpus(corpus_dir) -> list[ImpulseResponse]:
    """Load a corpus written by :func:`save_rir_corpus`.

    T60 and DRR are recomputed from the waveforms, never trusted from
    the sidecar metadata.
    """
    manifest = json.loads((Path(corpus_dir) / "manifest.json").read_text())
    rirs = []
    for entry in manifest["entries"]:
        wave = read_wav(Path(corpus_dir) / entry["file"])
        try:
            t60 = rir_t60(wave)
        except ValueError:
            t60 = float("nan")
        rirs.append(
            ImpulseResponse(
                h=wave,
                t60_s=t60,
                drr_db=rir_drr(wave),
                room=_room_from_dict(entry["room"]) if entry["room"] else None,
                rng_seed=entry["rng_seed"],
            )
        )
    return rirs
