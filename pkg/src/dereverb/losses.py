"""Training objectives: hinge adversarial losses, multi-scale spectrogram
reconstruction, cycle/identity terms, discriminator-feature losses, the
weighted generator total, and the paired baseline loss.

Reduction conventions (fixed here; they fold into the loss weights):
mean over score/feature elements, sum over a discriminator's feature
layers, mean over its scales, sum over spectrogram scales.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import torch
import torch.nn.functional as F

from dereverb.nets import FEATURES_PER_SCALE

SPEC_LOSS_FFT_SIZES = (64, 128, 256, 512, 1024, 2048)
SPEC_LOSS_EPS = 1e-5

PAIRED_FEATURE_WEIGHT = 100.0


@dataclass
class LossWeights:
    """The four lambda coefficients of the unpaired generator objective."""

    lambda_gan: float = 1.0
    lambda_cycle: float = 0.1
    lambda_feat: float = 1.0
    lambda_id: float = 0.5

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0.0:
                raise ValueError(f"{f.name} must be non-negative")


def hinge_gen_loss(scores) -> torch.Tensor:
    """mean over scales of mean(max(0, 1 - score))."""
    per_scale = [F.relu(1.0 - s).mean() for s in scores]
    return torch.stack(per_scale).mean()


def hinge_disc_loss(real_scores, fake_scores) -> torch.Tensor:
    """mean(max(0, 1 - real)) + mean(max(0, 1 + fake)), scale-averaged."""
    real = torch.stack([F.relu(1.0 - s).mean() for s in real_scores]).mean()
    fake = torch.stack([F.relu(1.0 + s).mean() for s in fake_scores]).mean()
    return real + fake


def _magnitudes(x: torch.Tensor, n_fft: int) -> torch.Tensor:
    win = torch.hann_window(n_fft, periodic=True, dtype=x.dtype, device=x.device)
    frames = x.unfold(-1, n_fft, n_fft // 4) * win
    spec = torch.view_as_real(torch.fft.rfft(frames, dim=-1))
    # smoothed |z|: plain abs has a NaN gradient at exactly-zero bins
    # (silent frames); the 1e-24 floor shifts values by < 1e-12
    return torch.sqrt(spec.pow(2).sum(-1) + 1e-24)


def multiscale_spec_loss(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Sum over FFT sizes {64..2048} of L1 + log-L1 magnitude distances."""
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    total = None
    for n_fft in SPEC_LOSS_FFT_SIZES:
        ma = _magnitudes(a, n_fft)
        mb = _magnitudes(b, n_fft)
        lin = (ma - mb).abs().mean()
        log = ((ma + SPEC_LOSS_EPS).log() - (mb + SPEC_LOSS_EPS).log()).abs().mean()
        term = lin + log
        total = term if total is None else total + term
    return total


def cycle_losses(g_rd, g_dr, x_r: torch.Tensor, y_d: torch.Tensor):
    """Round-trip reconstruction penalties for both domains."""
    x_cycled = g_dr(g_rd(x_r))
    y_cycled = g_rd(g_dr(y_d))
    return multiscale_spec_loss(x_cycled, x_r), multiscale_spec_loss(y_cycled, y_d)


def _feature_l1(feats_a, feats_b) -> torch.Tensor:
    """Sum over layers of mean |a - b|, averaged over scales."""
    if len(feats_a) != len(feats_b):
        raise ValueError("feature list length mismatch")
    per_scale = []
    for start in range(0, len(feats_a), FEATURES_PER_SCALE):
        layer_sum = None
        for fa, fb in zip(
            feats_a[start : start + FEATURES_PER_SCALE],
            feats_b[start : start + FEATURES_PER_SCALE],
        ):
            if fa.shape != fb.shape:
                raise ValueError(
                    f"feature shape mismatch: {tuple(fa.shape)} vs {tuple(fb.shape)}"
                )
            term = (fa - fb).abs().mean()
            layer_sum = term if layer_sum is None else layer_sum + term
        per_scale.append(layer_sum)
    return torch.stack(per_scale).mean()


def feature_cycle_losses(d_r, d_d, x_r, x_cycled, y_d, y_cycled):
    """L1 between discriminator activations of cycle outputs and originals."""
    _, feats_xc = d_r(x_cycled)
    _, feats_x = d_r(x_r)
    _, feats_yc = d_d(y_cycled)
    _, feats_y = d_d(y_d)
    return _feature_l1(feats_xc, feats_x), _feature_l1(feats_yc, feats_y)


def identity_loss(g_rd, y_d: torch.Tensor) -> torch.Tensor:
    """Penalty for changing already-dry input; the reverb generator has no
    identity term anywhere (it must always add reverberation)."""
    return multiscale_spec_loss(g_rd(y_d), y_d)


@dataclass
class GeneratorLossTerms:
    """Unweighted components entering the generator total."""

    gen_adv_r_to_d: torch.Tensor
    gen_adv_d_to_r: torch.Tensor
    cycle_r: torch.Tensor
    cycle_d: torch.Tensor
    feat_cycle_r: torch.Tensor
    feat_cycle_d: torch.Tensor
    identity_d: torch.Tensor


def total_generator_loss(terms: GeneratorLossTerms, w: LossWeights) -> torch.Tensor:
    """lambda_gan (adv terms) + lambda_cycle (cycles) + lambda_feat
    (feature cycles) + lambda_id * identity."""
    for f in fields(terms):
        value = getattr(terms, f.name)
        if not torch.isfinite(torch.as_tensor(value)).all():
            raise ValueError(f"non-finite loss component: {f.name}")
    return (
        w.lambda_gan * (terms.gen_adv_r_to_d + terms.gen_adv_d_to_r)
        + w.lambda_cycle * (terms.cycle_r + terms.cycle_d)
        + w.lambda_feat * (terms.feat_cycle_r + terms.feat_cycle_d)
        + w.lambda_id * terms.identity_d
    )


def paired_loss(
    g_rd,
    d_d,
    x_r: torch.Tensor,
    x_d_target: torch.Tensor,
    feature_weight: float = PAIRED_FEATURE_WEIGHT,
):
    """Paired-baseline generator loss: adversarial hinge plus a heavily
    weighted discriminator-feature L1 against the aligned target.

    Returns (total, adversarial part, feature part).
    """
    output = g_rd(x_r)
    scores, feats_out = d_d(output)
    _, feats_target = d_d(x_d_target)
    adv = hinge_gen_loss(scores)
    feat = _feature_l1(feats_out, [f.detach() for f in feats_target])
    return adv + feature_weight * feat, adv, feat


@dataclass
class LossReport:
    """Named scalar values for one training step."""

    step: int
    mode: str
    gen_adv_r_to_d: float = 0.0
    gen_adv_d_to_r: float = 0.0
    cycle_r: float = 0.0
    cycle_d: float = 0.0
    feat_cycle_r: float = 0.0
    feat_cycle_d: float = 0.0
    identity_d: float = 0.0
    paired_feature: float = 0.0
    gen_total: float = 0.0
    disc_d: float = 0.0
    disc_r: float = 0.0
    disc_total: float = 0.0

    def values(self) -> dict[str, float]:
        return {
            f.name: getattr(self, f.name)
            for f in fields(self)
            if f.name not in ("step", "mode")
        }

    def all_finite(self) -> bool:
        import math

        return all(math.isfinite(v) for v in self.values().values())
