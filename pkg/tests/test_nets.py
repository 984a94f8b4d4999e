"""Tests for dereverb.nets: shapes, determinism, gradient flow, wiring."""

import numpy as np
import pytest
import torch

from synth import speech_like_utterance

from dereverb.dsp import Waveform
from dereverb.nets import (
    FEATURES_PER_SCALE,
    DiscriminatorConfig,
    GeneratorConfig,
    MultiScaleWaveDiscriminator,
    SpectrogramUNet,
    enhance_waveform,
    init_discriminator,
    init_generator,
)

SMALL_GEN = GeneratorConfig(n_blocks=4, channels=(8, 12, 16, 24))
SMALL_DISC = DiscriminatorConfig(
    in_channels=4, channels=(8, 16, 32, 32), groups=(2, 4, 8, 8)
)


class TestGenerator:
    def test_init_deterministic_per_seed(self):
        a = init_generator(SMALL_GEN, rng_seed=7)
        b = init_generator(SMALL_GEN, rng_seed=7)
        c = init_generator(SMALL_GEN, rng_seed=8)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)
        assert any(
            not torch.equal(pa, pc)
            for pa, pc in zip(a.parameters(), c.parameters())
        )

    def test_weight_std_tracks_fan_in(self):
        g = init_generator(rng_seed=3)
        for name, mod in g.named_modules():
            if isinstance(mod, (torch.nn.Conv2d, torch.nn.ConvTranspose2d)):
                w = mod.weight
                fan_in = w.shape[1] * w.shape[2] * w.shape[3]
                if isinstance(mod, torch.nn.ConvTranspose2d):
                    fan_in = w.shape[0] * w.shape[2] * w.shape[3]
                predicted = 1.0 / np.sqrt(fan_in)
                actual = w.std().item()
                assert predicted / 3.0 < actual < predicted * 3.0, name

    def test_zeroed_output_projection_gives_silence(self):
        g = init_generator(SMALL_GEN, rng_seed=0)
        with torch.no_grad():
            g.out_proj.weight.zero_()
            g.out_proj.bias.zero_()
        out = g(torch.randn(2, 8192))
        assert torch.all(out == 0.0)

    def test_output_length_equals_input_length_100_draws(self):
        for seed in range(100):
            g = init_generator(GeneratorConfig(n_blocks=2, channels=(4, 6)), rng_seed=seed)
            n = int(np.random.default_rng(seed).integers(320, 12000))
            assert g(torch.randn(n)).shape[-1] == n

    def test_frame_aligned_lengths_preserved(self):
        g = init_generator(SMALL_GEN, rng_seed=1)
        for k in (8, 49, 50, 51):
            n = 320 + 160 * k
            assert g(torch.randn(n)).shape[-1] == n

    def test_nonlinear_in_amplitude(self):
        g = init_generator(SMALL_GEN, rng_seed=2)
        x = torch.randn(8192)
        y1, y2 = g(x), g(2.0 * x)
        assert not torch.allclose(y2, 2.0 * y1, rtol=1e-3, atol=1e-6)

    def test_gradient_reaches_every_parameter_tensor(self):
        g = init_generator(SMALL_GEN, rng_seed=4)
        out = g(torch.randn(2, 8192))
        loss = (out**2).mean()
        loss.backward()
        for name, p in g.named_parameters():
            assert p.grad is not None, name
            assert torch.any(p.grad != 0.0), f"dead branch at {name}"

    def test_too_short_raises(self):
        g = init_generator(SMALL_GEN, rng_seed=0)
        with pytest.raises(ValueError, match="too short"):
            g(torch.randn(319))

    def test_deterministic_forward(self):
        g = init_generator(SMALL_GEN, rng_seed=5)
        x = torch.randn(8192)
        assert torch.equal(g(x), g(x))


class TestDiscriminator:
    def test_identical_inputs_identical_outputs(self):
        d = init_discriminator(SMALL_DISC, rng_seed=0)
        x = torch.randn(1, 8192)
        s1, f1 = d(x)
        s2, f2 = d(x)
        for a, b in zip(s1, s2):
            assert torch.equal(a, b)
        for a, b in zip(f1, f2):
            assert torch.equal(a, b)

    def test_feature_list_is_3_scales_by_5_layers(self):
        d = init_discriminator(SMALL_DISC, rng_seed=1)
        scores, feats = d(torch.randn(2, 8192))
        assert len(scores) == 3
        assert len(feats) == 3 * FEATURES_PER_SCALE == 15
        # shape-stable across calls with equal-length input
        _, feats2 = d(torch.randn(2, 8192))
        assert [f.shape for f in feats] == [f2.shape for f2 in feats2]

    def test_scale2_branch_consumes_avg_pooled_waveform(self):
        d = init_discriminator(SMALL_DISC, rng_seed=2)
        x = torch.randn(1, 8192)
        scores, _ = d(x)
        pooled = d.pool(x.unsqueeze(1))
        direct_score, _ = d.scales[1](pooled)
        assert torch.equal(scores[1], direct_score)

    def test_receptive_field_liveness(self):
        d = init_discriminator(SMALL_DISC, rng_seed=3)
        x = torch.randn(1, 8192)
        base_scores, _ = d(x)
        rng = np.random.default_rng(0)
        for _ in range(10):
            idx = int(rng.integers(0, 8192))
            perturbed = x.clone()
            perturbed[0, idx] += 0.1
            scores, _ = d(perturbed)
            assert any(
                not torch.equal(a, b) for a, b in zip(base_scores, scores)
            ), f"sample {idx} invisible to all scales"

    def test_too_short_raises(self):
        d = init_discriminator(SMALL_DISC, rng_seed=0)
        with pytest.raises(ValueError, match="too short"):
            d(torch.randn(1, 4095))

    def test_sub_discriminators_do_not_share_parameters(self):
        d = init_discriminator(SMALL_DISC, rng_seed=4)
        w0 = d.scales[0].conv_in.weight
        w1 = d.scales[1].conv_in.weight
        assert not torch.equal(w0, w1)

    def test_default_schedule_matches_contract(self):
        cfg = DiscriminatorConfig()
        assert cfg.channels == (64, 256, 1024, 1024)
        assert cfg.groups == (4, 16, 64, 256)
        assert (cfg.input_kernel, cfg.grouped_kernel, cfg.grouped_stride) == (15, 41, 4)


class TestEnhanceWaveform:
    def test_output_duration_matches_input(self):
        g = init_generator(SMALL_GEN, rng_seed=6)
        w = speech_like_utterance(0, duration_s=10.0)
        out = enhance_waveform(g, w)
        assert len(out) == len(w)

    def test_deterministic(self):
        g = init_generator(SMALL_GEN, rng_seed=6)
        w = speech_like_utterance(1, duration_s=3.0)
        a = enhance_waveform(g, w)
        b = enhance_waveform(g, w)
        assert np.array_equal(a.samples, b.samples)

    def test_short_input_single_pass(self):
        g = init_generator(SMALL_GEN, rng_seed=6)
        w = Waveform(np.random.default_rng(1).standard_normal(5000) * 0.1)
        assert len(enhance_waveform(g, w)) == 5000
