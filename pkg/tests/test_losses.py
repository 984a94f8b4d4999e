"""Tests for dereverb.losses: closed forms, reconstruction oracle, gradients."""

import math

import numpy as np
import pytest
import torch
from torch import nn

from dereverb.losses import (
    SPEC_LOSS_EPS,
    SPEC_LOSS_FFT_SIZES,
    GeneratorLossTerms,
    LossWeights,
    cycle_losses,
    feature_cycle_losses,
    hinge_disc_loss,
    hinge_gen_loss,
    identity_loss,
    multiscale_spec_loss,
    paired_loss,
    total_generator_loss,
)
from dereverb.nets import (
    DiscriminatorConfig,
    GeneratorConfig,
    init_discriminator,
    init_generator,
)

MINI_GEN = GeneratorConfig(n_blocks=2, channels=(4, 6))
MINI_DISC = DiscriminatorConfig(
    in_channels=4, channels=(8, 8, 8, 8), groups=(2, 2, 2, 2)
)


def mini_generator(seed):
    return init_generator(MINI_GEN, rng_seed=seed).double()


def mini_discriminator(seed):
    return init_discriminator(MINI_DISC, rng_seed=seed).double()


class _Identity(nn.Module):
    def forward(self, x):
        return x


class _Zero(nn.Module):
    def forward(self, x):
        return torch.zeros_like(x)


class _ConstScores(nn.Module):
    """Stub discriminator: fixed scores, features echo the input."""

    def __init__(self, value):
        super().__init__()
        self.value = value

    def forward(self, x):
        scores = [torch.full((1, 1, 8), self.value, dtype=x.dtype)] * 3
        feats = [x.reshape(1, 1, -1)] * 15
        return scores, feats


def msl_oracle(a, b):
    """Per-scale magnitude loss recomputed with numpy loops."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    total = 0.0
    for n_fft in SPEC_LOSS_FFT_SIZES:
        hop = n_fft // 4
        win = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n_fft) / n_fft)
        lin_vals, log_vals = [], []
        for row_a, row_b in zip(a, b):
            n_frames = (row_a.size - n_fft) // hop + 1
            for f in range(n_frames):
                seg_a = row_a[f * hop : f * hop + n_fft] * win
                seg_b = row_b[f * hop : f * hop + n_fft] * win
                ma = np.abs(np.fft.rfft(seg_a))
                mb = np.abs(np.fft.rfft(seg_b))
                lin_vals.extend(np.abs(ma - mb))
                log_vals.extend(
                    np.abs(np.log(ma + SPEC_LOSS_EPS) - np.log(mb + SPEC_LOSS_EPS))
                )
        total += np.mean(lin_vals) + np.mean(log_vals)
    return total


def central_difference_check(loss_fn, params, rel_tol=1e-3, coords_per_tensor=2):
    """Compare autograd gradients with central finite differences.

    The losses contain L1/hinge kinks, so a single step size can land a
    kink inside the stencil; a correct gradient matches at some h while a
    wrong one fails at every h.
    """
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    rng = np.random.default_rng(0)
    checked = 0
    for p, g in zip(params, grads):
        if g is None:
            continue
        flat = p.detach().reshape(-1)
        g_flat = g.reshape(-1)
        for _ in range(coords_per_tensor):
            i = int(rng.integers(0, flat.numel()))
            orig = flat[i].item()
            auto = g_flat[i].item()
            best = np.inf
            for h in (1e-5, 1e-6, 2e-7):
                with torch.no_grad():
                    flat[i] = orig + h
                up = loss_fn().item()
                with torch.no_grad():
                    flat[i] = orig - h
                down = loss_fn().item()
                with torch.no_grad():
                    flat[i] = orig
                fd = (up - down) / (2 * h)
                scale = max(abs(fd), abs(auto), 1e-8)
                best = min(best, abs(fd - auto) / scale)
                if best < rel_tol:
                    break
            assert best < rel_tol, (
                f"gradient mismatch at every step size: autograd={auto} (best rel {best})"
            )
            checked += 1
    assert checked > 0


class TestHingeLosses:
    def test_gen_boundary_cases(self):
        ones = [torch.ones(1, 1, 10)] * 3
        zeros = [torch.zeros(1, 1, 10)] * 3
        twos = [torch.full((1, 1, 10), 2.0)] * 3
        assert hinge_gen_loss(ones).item() == 0.0
        assert hinge_gen_loss(zeros).item() == 1.0
        assert hinge_gen_loss(twos).item() == 0.0  # clamped at zero

    def test_disc_boundary_cases(self):
        def const(v):
            return [torch.full((1, 1, 10), float(v))] * 3

        assert hinge_disc_loss(const(1), const(-1)).item() == 0.0
        assert hinge_disc_loss(const(0), const(0)).item() == 2.0
        assert hinge_disc_loss(const(-1), const(1)).item() == 4.0


class TestMultiscaleSpecLoss:
    def test_identical_is_zero(self):
        x = torch.randn(2, 4096, dtype=torch.float64)
        assert multiscale_spec_loss(x, x).item() == 0.0

    def test_sign_flip_is_zero(self):
        x = torch.randn(4096, dtype=torch.float64)
        assert multiscale_spec_loss(x, -x).item() == pytest.approx(0.0, abs=1e-12)

    def test_matches_per_scale_oracle(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal(4096) * 0.3
        b = a + rng.standard_normal(4096) * 0.05
        got = multiscale_spec_loss(
            torch.as_tensor(a), torch.as_tensor(b)
        ).item()
        assert abs(got - msl_oracle(a, b)) < 1e-6

    def test_length_mismatch_raises(self):
        with pytest.raises(ValueError, match="mismatch"):
            multiscale_spec_loss(torch.randn(4096), torch.randn(4097))

    def test_non_negative(self):
        for seed in range(5):
            g = torch.Generator().manual_seed(seed)
            a, b = torch.randn(4096, generator=g), torch.randn(4096, generator=g)
            assert multiscale_spec_loss(a, b).item() >= 0.0


class TestCycleLosses:
    def test_identity_generators_give_zero(self):
        x = torch.randn(1, 4096, dtype=torch.float64)
        y = torch.randn(1, 4096, dtype=torch.float64)
        l_r, l_d = cycle_losses(_Identity(), _Identity(), x, y)
        assert l_r.item() == 0.0 and l_d.item() == 0.0

    def test_zeroed_generator_nondegenerate(self):
        x = torch.randn(1, 4096, dtype=torch.float64) * 0.5
        y = torch.randn(1, 4096, dtype=torch.float64) * 0.5
        l_r, _ = cycle_losses(_Zero(), _Identity(), x, y)
        assert l_r.item() > 0.0

    def test_gradients_match_finite_differences(self):
        g_rd = mini_generator(1)
        g_dr = mini_generator(2)
        x = torch.randn(1, 4096, dtype=torch.float64) * 0.3
        y = torch.randn(1, 4096, dtype=torch.float64) * 0.3
        params = list(g_rd.parameters()) + list(g_dr.parameters())

        def loss_fn():
            l_r, l_d = cycle_losses(g_rd, g_dr, x, y)
            return l_r + l_d

        central_difference_check(loss_fn, params, coords_per_tensor=1)


class TestFeatureCycleLosses:
    def test_zero_when_cycle_output_equals_input(self):
        d_r = mini_discriminator(3)
        d_d = mini_discriminator(4)
        x = torch.randn(1, 4096, dtype=torch.float64)
        y = torch.randn(1, 4096, dtype=torch.float64)
        l_r, l_d = feature_cycle_losses(d_r, d_d, x, x, y, y)
        assert l_r.item() == 0.0 and l_d.item() == 0.0

    def test_positive_for_perturbed_cycles(self):
        d_r = mini_discriminator(5)
        d_d = mini_discriminator(6)
        for seed in range(100):
            g = torch.Generator().manual_seed(seed)
            x = torch.randn(1, 4096, generator=g).double()
            y = torch.randn(1, 4096, generator=g).double()
            bump = torch.randn(1, 4096, generator=g).double() * 0.05
            l_r, l_d = feature_cycle_losses(d_r, d_d, x, x + bump, y, y + bump)
            assert l_r.item() > 0.0 and l_d.item() > 0.0

    def test_batch_permutation_invariant(self):
        d_r = mini_discriminator(7)
        d_d = mini_discriminator(8)
        x = torch.randn(3, 4096, dtype=torch.float64)
        xc = x + 0.1 * torch.randn(3, 4096, dtype=torch.float64)
        y = torch.randn(3, 4096, dtype=torch.float64)
        yc = y + 0.1 * torch.randn(3, 4096, dtype=torch.float64)
        l1 = feature_cycle_losses(d_r, d_d, x, xc, y, yc)
        perm = torch.tensor([2, 0, 1])
        l2 = feature_cycle_losses(d_r, d_d, x[perm], xc[perm], y[perm], yc[perm])
        assert l1[0].item() == pytest.approx(l2[0].item(), rel=1e-9)
        assert l1[1].item() == pytest.approx(l2[1].item(), rel=1e-9)

    def test_gradients_match_finite_differences(self):
        g_rd = mini_generator(9)
        d_r = mini_discriminator(10)
        d_d = mini_discriminator(11)
        x = torch.randn(1, 4096, dtype=torch.float64) * 0.3
        y = torch.randn(1, 4096, dtype=torch.float64) * 0.3

        def loss_fn():
            x_cycled = g_rd(x)  # stand-in cycle path through one net
            l_r, l_d = feature_cycle_losses(d_r, d_d, x, x_cycled, y, y)
            return l_r + l_d

        central_difference_check(loss_fn, list(g_rd.parameters()), coords_per_tensor=1)


class TestIdentityLoss:
    def test_identity_generator_zero(self):
        y = torch.randn(1, 4096, dtype=torch.float64)
        assert identity_loss(_Identity(), y).item() == 0.0

    def test_zeroing_generator_reduces_to_known_value(self):
        y = torch.randn(1, 4096, dtype=torch.float64) * 0.5
        got = identity_loss(_Zero(), y).item()
        expected = multiscale_spec_loss(torch.zeros_like(y), y).item()
        assert got == pytest.approx(expected)

    def test_monotone_toward_identity_under_scaling(self):
        class Scale(nn.Module):
            def __init__(self, s):
                super().__init__()
                self.s = s

            def forward(self, x):
                return self.s * x

        y = torch.randn(1, 4096, dtype=torch.float64) * 0.5
        assert identity_loss(Scale(0.5), y).item() > identity_loss(Scale(0.9), y).item()

    def test_gradients_match_finite_differences(self):
        g = mini_generator(12)
        y = torch.randn(1, 4096, dtype=torch.float64) * 0.3
        central_difference_check(
            lambda: identity_loss(g, y), list(g.parameters()), coords_per_tensor=1
        )


class TestTotalGeneratorLoss:
    def _ones(self):
        one = torch.tensor(1.0, dtype=torch.float64)
        return GeneratorLossTerms(one, one, one, one, one, one, one)

    def test_all_ones_default_weights_is_4_7(self):
        total = total_generator_loss(self._ones(), LossWeights())
        assert total.item() == pytest.approx(4.7)

    def test_all_zero_weights(self):
        w = LossWeights(0.0, 0.0, 0.0, 0.0)
        assert total_generator_loss(self._ones(), w).item() == 0.0

    def test_dropping_identity_gives_4_2(self):
        w = LossWeights(lambda_id=0.0)
        assert total_generator_loss(self._ones(), w).item() == pytest.approx(4.2)

    def test_linear_in_each_lambda(self):
        terms = self._ones()
        base = total_generator_loss(terms, LossWeights()).item()
        bumped = total_generator_loss(
            terms, LossWeights(lambda_cycle=0.2)
        ).item()
        assert bumped - base == pytest.approx(0.1 * 2.0)

    def test_non_finite_component_named(self):
        terms = self._ones()
        terms.cycle_d = torch.tensor(float("nan"))
        with pytest.raises(ValueError, match="cycle_d"):
            total_generator_loss(terms, LossWeights())

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(lambda_gan=-1.0)


class TestPairedLoss:
    def test_perfect_output_and_confident_scores_give_zero(self):
        x = torch.randn(1, 4096, dtype=torch.float64)
        total, adv, feat = paired_loss(_Identity(), _ConstScores(1.5), x, x)
        assert total.item() == 0.0
        assert adv.item() == 0.0 and feat.item() == 0.0

    def test_feature_weight_applied_exactly(self):
        g = mini_generator(13)
        d = mini_discriminator(14)
        x = torch.randn(1, 4096, dtype=torch.float64) * 0.3
        target = torch.randn(1, 4096, dtype=torch.float64) * 0.3
        t100, adv, feat = paired_loss(g, d, x, target, feature_weight=100.0)
        t200, adv2, feat2 = paired_loss(g, d, x, target, feature_weight=200.0)
        assert adv.item() == pytest.approx(adv2.item())
        assert feat.item() == pytest.approx(feat2.item())
        assert (t200 - adv2).item() == pytest.approx(2 * (t100 - adv).item(), rel=1e-9)
        assert t100.item() == pytest.approx(adv.item() + 100.0 * feat.item())

    def test_gradients_match_finite_differences(self):
        g = mini_generator(15)
        d = mini_discriminator(16)
        x = torch.randn(1, 4096, dtype=torch.float64) * 0.3
        target = torch.randn(1, 4096, dtype=torch.float64) * 0.3
        central_difference_check(
            lambda: paired_loss(g, d, x, target)[0],
            list(g.parameters()),
            coords_per_tensor=1,
        )


class TestHingeGradients:
    def test_adversarial_gradients_match_finite_differences(self):
        g = mini_generator(17)
        d = mini_discriminator(18)
        x = torch.randn(1, 4096, dtype=torch.float64) * 0.3

        def loss_fn():
            scores, _ = d(g(x))
            return hinge_gen_loss(scores)

        central_difference_check(loss_fn, list(g.parameters()), coords_per_tensor=1)

    def test_disc_loss_gradients_match_finite_differences(self):
        d = mini_discriminator(19)
        real = torch.randn(1, 4096, dtype=torch.float64) * 0.3
        fake = torch.randn(1, 4096, dtype=torch.float64) * 0.3

        def loss_fn():
            r, _ = d(real)
            f, _ = d(fake)
            return hinge_disc_loss(r, f)

        central_difference_check(loss_fn, list(d.parameters()), coords_per_tensor=1)
