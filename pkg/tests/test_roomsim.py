"""Tests for dereverb.roomsim: image-method oracles, decay measurements, corpus build."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from dereverb.dsp import SAMPLE_RATE, Waveform, octave_band_filter_array
from dereverb.roomsim import (
    CEILING_MATERIALS,
    FLOOR_MATERIALS,
    JITTER_CUBE_SIDE_M,
    SPEED_OF_SOUND,
    WALL_MATERIALS,
    ImpulseResponse,
    Material,
    RoomSpec,
    build_rir_corpus,
    early_reverb_target,
    image_arrivals,
    load_rir_corpus,
    rir_drr,
    rir_t60,
    sample_room,
    save_rir_corpus,
    simulate_rir,
)


def oracle_arrival_trains(room, max_order, n_samples):
    """Brute-force image enumeration with plain Python loops.

    Returns per-band reflected impulse trains plus the direct arrival,
    independent of the vectorized enumeration under test.
    """
    src, mic = room.source_pos, room.mic_pos
    dims = (room.width_m, room.length_m, room.height_m)
    mats = [
        room.wall_material,
        room.wall_material,
        room.wall_material,
        room.wall_material,
        room.floor_material,
        room.ceiling_material,
    ]
    betas = [[math.sqrt(1.0 - a) for a in m.absorption] for m in mats]
    trains = np.zeros((7, n_samples))
    direct_delay, direct_amp = None, None
    rng_n = range(-max_order, max_order + 1)
    for qx in (0, 1):
        for qy in (0, 1):
            for qz in (0, 1):
                for nx in rng_n:
                    for ny in rng_n:
                        for nz in rng_n:
                            hits = [
                                abs(nx - qx), abs(nx),
                                abs(ny - qy), abs(ny),
                                abs(nz - qz), abs(nz),
                            ]
                            order = sum(hits)
                            if order > max_order:
                                continue
                            pos = [
                                (1 - 2 * qx) * src[0] + 2 * nx * dims[0],
                                (1 - 2 * qy) * src[1] + 2 * ny * dims[1],
                                (1 - 2 * qz) * src[2] + 2 * nz * dims[2],
                            ]
                            d = math.dist(pos, mic)
                            delay = round(d / SPEED_OF_SOUND * SAMPLE_RATE)
                            if order == 0:
                                direct_delay = delay
                                direct_amp = 1.0 / (4 * math.pi * d)
                                continue
                            for b in range(7):
                                amp = 1.0
                                for s in range(6):
                                    amp *= betas[s][b] ** hits[s]
                                trains[b, delay] += amp / (4 * math.pi * d)
    return trains, direct_delay, direct_amp


def oracle_rir(room, max_order, n_samples):
    trains, d_delay, d_amp = oracle_arrival_trains(room, max_order, n_samples)
    h = np.zeros(n_samples)
    for b in range(7):
        if np.any(trains[b]):
            h += octave_band_filter_array(trains[b], b, edge_pad=False)
    h[d_delay] += d_amp
    return h


def _exponential_decay_rir(t60, seed, fs=SAMPLE_RATE):
    # 60 dB energy drop at t = ln(1e6) / (2 alpha)  =>  alpha = 6.9078 / t60
    alpha = math.log(1e6) / 2.0 / t60
    n = int((1.25 * t60 + 0.1) * fs)
    t = np.arange(n) / fs
    rng = np.random.default_rng(seed)
    return Waveform(np.exp(-alpha * t) * rng.standard_normal(n))


class TestSampleRoom:
    def test_deterministic(self):
        a, b = sample_room(123), sample_room(123)
        assert a == b

    def test_dimension_ranges(self):
        widths, lengths, heights = [], [], []
        for seed in range(10000):
            r = sample_room(seed)
            widths.append(r.width_m)
            lengths.append(r.length_m)
            heights.append(r.height_m)
        assert 3.0 <= min(widths) and max(widths) <= 7.0
        assert 4.0 <= min(lengths) and max(lengths) <= 8.0
        assert 2.13 <= min(heights) and max(heights) <= 3.05
        # uniform draws should nearly fill the ranges
        assert min(widths) < 3.01 and max(widths) > 6.99

    def test_all_80_material_combos_observed(self):
        combos = set()
        for seed in range(10000):
            r = sample_room(seed)
            combos.add(
                (r.wall_material.name, r.floor_material.name, r.ceiling_material.name)
            )
        assert len(combos) == 5 * 4 * 4

    def test_placement_invariants(self):
        for seed in range(200):
            r = sample_room(seed)
            assert r.source_mic_distance() >= 0.5
            for pos in (r.source_pos, r.mic_pos):
                for c, dim in zip(pos, (r.width_m, r.length_m, r.height_m)):
                    assert 0.3 <= c <= dim - 0.3


class TestRoomSpecValidation:
    def test_rejects_out_of_range_dimension(self):
        with pytest.raises(ValueError, match="dimension"):
            RoomSpec(2.0, 5.0, 2.5, WALL_MATERIALS[0], FLOOR_MATERIALS[0],
                     CEILING_MATERIALS[0], (1, 1, 1), (2, 2, 1.5))

    def test_rejects_position_near_wall(self):
        with pytest.raises(ValueError, match="surface"):
            RoomSpec(5.0, 5.0, 2.5, WALL_MATERIALS[0], FLOOR_MATERIALS[0],
                     CEILING_MATERIALS[0], (0.1, 1, 1), (2, 2, 1.5))

    def test_rejects_close_source_mic(self):
        with pytest.raises(ValueError, match="apart"):
            RoomSpec(5.0, 5.0, 2.5, WALL_MATERIALS[0], FLOOR_MATERIALS[0],
                     CEILING_MATERIALS[0], (1, 1, 1), (1.1, 1, 1))


class TestImageMethodOracle:
    def test_first_order_has_seven_arrivals(self):
        room = sample_room(42)
        arr = image_arrivals(room, max_order=1, jitter=False)
        assert arr.delays.size == 6  # direct is kept separate
        trains, d_delay, d_amp = oracle_arrival_trains(
            room, 1, int(arr.delays.max()) + 10
        )
        assert arr.direct_delay == d_delay
        assert_allclose(arr.direct_amp, d_amp, rtol=1e-12)
        for b in range(7):
            got = np.bincount(
                arr.delays, weights=arr.band_amps[:, b], minlength=trains.shape[1]
            )
            assert_allclose(got, trains[b], atol=1e-10)

    @pytest.mark.parametrize("max_order", [1, 2])
    def test_matches_bruteforce_enumeration(self, max_order):
        for seed in (0, 7, 99, 1234, 5555):
            room = sample_room(seed)
            sim = simulate_rir(room, max_order=max_order, rng_seed=1, jitter=False)
            h_oracle = oracle_rir(room, max_order, n_samples=len(sim.h) + 500)
            n = len(sim.h)
            scale = np.max(np.abs(h_oracle))
            assert np.max(np.abs(sim.h.samples - h_oracle[:n])) < 1e-6 * scale
            # anything trimmed away sits below the -60 dB decay point
            assert np.max(np.abs(h_oracle[n:])) < 2e-3 * scale

    def test_fully_absorbing_gives_single_direct_impulse(self):
        dead = Material("anechoic", (1.0,) * 7)
        room = sample_room(3)
        room = RoomSpec(
            room.width_m, room.length_m, room.height_m, dead, dead, dead,
            room.source_pos, room.mic_pos,
        )
        rir = simulate_rir(room, rng_seed=5)
        d = room.source_mic_distance()
        expected_delay = round(d / SPEED_OF_SOUND * SAMPLE_RATE)
        expected_amp = 1.0 / (4 * math.pi * d)
        h = rir.h.samples
        assert abs(h[expected_delay] - expected_amp) < 1e-6
        h_rest = h.copy()
        h_rest[expected_delay] = 0.0
        assert np.max(np.abs(h_rest)) < 1e-6 * expected_amp

    def test_jitter_displaces_images_at_most_8cm_per_axis(self):
        room = sample_room(11)
        arr = image_arrivals(room, max_order=2, rng_seed=9, jitter=True)
        disp = np.abs(arr.positions - arr.base_positions)
        assert np.all(disp <= JITTER_CUBE_SIDE_M / 2 + 1e-12)
        assert np.any(disp > 0.0)

    def test_direct_path_never_jittered(self):
        room = sample_room(11)
        with_j = image_arrivals(room, max_order=1, rng_seed=9, jitter=True)
        without = image_arrivals(room, max_order=1, rng_seed=9, jitter=False)
        assert with_j.direct_delay == without.direct_delay
        assert with_j.direct_amp == without.direct_amp


class TestRirT60:
    @pytest.mark.parametrize("t60", [0.3, 0.5, 0.8, 1.2])
    def test_exponential_decay_oracle(self, t60):
        est = rir_t60(_exponential_decay_rir(t60, seed=17))
        assert abs(est - t60) / t60 < 0.05

    def test_scale_invariance(self):
        w = _exponential_decay_rir(0.5, seed=3)
        assert rir_t60(Waveform(0.1 * w.samples)) == pytest.approx(rir_t60(w))

    def test_insufficient_decay_raises(self):
        h = np.zeros(100)
        h[10] = 1.0
        with pytest.raises(ValueError, match="insufficient decay"):
            rir_t60(Waveform(h))

    def test_more_absorption_never_lengthens_t60(self):
        room = sample_room(21)

        def bump(m, delta):
            return Material(
                m.name + "+", tuple(min(1.0, a + delta) for a in m.absorption)
            )

        room_hi = RoomSpec(
            room.width_m, room.length_m, room.height_m,
            bump(room.wall_material, 0.15),
            bump(room.floor_material, 0.15),
            bump(room.ceiling_material, 0.15),
            room.source_pos, room.mic_pos,
        )
        t_lo = simulate_rir(room, rng_seed=77).t60_s
        t_hi = simulate_rir(room_hi, rng_seed=77).t60_s
        assert t_hi <= t_lo + 0.02


class TestRirDrr:
    def test_single_impulse_capped_at_100(self):
        h = np.zeros(1000)
        h[100] = 0.5
        assert rir_drr(Waveform(h)) == 100.0

    def test_equal_direct_and_late_energy_is_zero_db(self):
        h = np.zeros(1000)
        h[100] = 1.0
        h[500] = 1.0  # far outside the +-2.5 ms direct window
        assert abs(rir_drr(Waveform(h))) < 1e-9

    def test_constructed_ten_db(self):
        h = np.zeros(2000)
        h[100] = 1.0
        h[100 + 80] = 1.0 / math.sqrt(10.0)  # 5 ms later
        assert abs(rir_drr(Waveform(h)) - 10.0) < 0.01


class TestEarlyReverbTarget:
    def _rir_with_peak(self, peak_idx, length, seed=0):
        rng = np.random.default_rng(seed)
        h = 0.05 * rng.standard_normal(length) * np.exp(-np.arange(length) / 4000)
        h[peak_idx] = 1.0
        return ImpulseResponse(Waveform(h), 0.5, 0.0, None, 0)

    def test_zeroed_after_20ms_past_peak(self):
        rir = self._rir_with_peak(100, 4000)
        out = early_reverb_target(rir)
        assert np.all(out.h.samples[420:] == 0.0)
        assert_allclose(out.h.samples[:420], rir.h.samples[:420])

    def test_short_rir_unchanged(self):
        rir = self._rir_with_peak(100, 300)
        out = early_reverb_target(rir)
        assert_allclose(out.h.samples, rir.h.samples)

    def test_energy_never_increases(self):
        rir = self._rir_with_peak(50, 8000, seed=5)
        out = early_reverb_target(rir)
        assert np.sum(out.h.samples**2) <= np.sum(rir.h.samples**2)

    def test_windowed_rir_t60_below_100ms(self):
        room = sample_room(2)
        rir = simulate_rir(room, rng_seed=2)
        out = early_reverb_target(rir)
        assert out.t60_s <= 0.1


class TestCorpus:
    def test_small_corpus_respects_t60_floor_and_determinism(self, tmp_path):
        rirs_a = build_rir_corpus(4, t60_min_s=0.4, rng_seed=123)
        rirs_b = build_rir_corpus(4, t60_min_s=0.4, rng_seed=123)
        assert all(r.t60_s >= 0.4 for r in rirs_a)
        for a, b in zip(rirs_a, rirs_b):
            assert np.array_equal(a.h.samples, b.h.samples)
            assert a.rng_seed == b.rng_seed

        dir_a, dir_b = tmp_path / "a", tmp_path / "b"
        save_rir_corpus(rirs_a, dir_a)
        save_rir_corpus(rirs_b, dir_b)
        for fa, fb in zip(sorted(dir_a.iterdir()), sorted(dir_b.iterdir())):
            assert fa.name == fb.name
            assert fa.read_bytes() == fb.read_bytes()

    def test_save_load_round_trip(self, tmp_path):
        rirs = build_rir_corpus(2, t60_min_s=0.4, rng_seed=5)
        save_rir_corpus(rirs, tmp_path / "c")
        loaded = load_rir_corpus(tmp_path / "c")
        assert len(loaded) == 2
        for orig, back in zip(rirs, loaded):
            assert_allclose(
                back.h.samples, orig.h.samples.astype(np.float32), atol=1e-7
            )
            # measurements recomputed from the float32 waveform
            assert back.t60_s == pytest.approx(orig.t60_s, rel=0.05)
            assert back.room.wall_material == orig.room.wall_material

    def test_rir_decays_60db_before_end(self):
        for seed in (1, 8):
            rir = simulate_rir(sample_room(seed), rng_seed=seed)
            h = rir.h.samples
            window = 64
            energy = np.convolve(h * h, np.ones(window), mode="same")
            tail = energy[-window:]
            assert np.max(tail) < energy.max() * 10 ** (-60.0 / 10.0)
