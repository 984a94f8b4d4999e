"""Generators and discriminators.

Generators are 2D-convolutional UNets over the complex STFT: the input
waveform becomes a two-channel (real/imag) image, runs through a mirrored
encoder/decoder with skip connections, and the predicted two-channel
spectrogram is inverted back to a waveform of the original length.

Discriminators are multi-scale waveform discriminators in the MelGAN
style: three identical sub-networks (independent parameters) consume the
input at x1, x2 and x4 average-pooled rates, each exposing its
intermediate activations for feature losses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils.parametrizations import weight_norm

from dereverb.dsp import STFT_BINS, STFT_HOP, STFT_WINDOW, Waveform

GENERATOR_MIN_INPUT = STFT_WINDOW
DISCRIMINATOR_MIN_INPUT = 4096


def _hann(dtype, device):
    return torch.hann_window(STFT_WINDOW, periodic=True, dtype=dtype, device=device)


def frame_count(n_samples: int) -> int:
    return (n_samples - STFT_WINDOW) // STFT_HOP + 1


def torch_stft(wave: torch.Tensor) -> torch.Tensor:
    """Batched STFT (B, T) -> complex (B, frames, 161), matching dsp.stft."""
    win = _hann(wave.dtype, wave.device)
    frames = wave.unfold(-1, STFT_WINDOW, STFT_HOP) * win
    return torch.fft.rfft(frames, dim=-1)


def torch_istft(spec: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`torch_stft` by weighted overlap-add.

    Output length is (frames - 1) * hop + window.
    """
    b, n_frames, _ = spec.shape
    win = _hann(torch.float64 if spec.dtype == torch.complex128 else torch.float32,
                spec.device)
    frames = torch.fft.irfft(spec, n=STFT_WINDOW, dim=-1) * win
    out_len = (n_frames - 1) * STFT_HOP + STFT_WINDOW
    frames_t = frames.transpose(1, 2)  # (B, window, frames)
    out = F.fold(
        frames_t,
        output_size=(1, out_len),
        kernel_size=(1, STFT_WINDOW),
        stride=(1, STFT_HOP),
    ).reshape(b, out_len)
    win_sq = (win * win).expand(n_frames, -1).transpose(0, 1).unsqueeze(0)
    norm = F.fold(
        win_sq,
        output_size=(1, out_len),
        kernel_size=(1, STFT_WINDOW),
        stride=(1, STFT_HOP),
    ).reshape(1, out_len)
    # clamp before dividing: a 0/0 in the unselected branch would still
    # poison gradients through torch.where
    safe = out / norm.clamp_min(1e-10)
    return torch.where(norm > 1e-10, safe, torch.zeros_like(out))


@dataclass
class GeneratorConfig:
    """UNet layout. Blocks up to ``freq_only_blocks`` downsample frequency
    only (kernel 3x4, stride 1x2); deeper blocks use 4x4, stride 2x2."""

    n_blocks: int = 6
    channels: tuple[int, ...] = (32, 64, 128, 192, 256, 256)
    freq_only_blocks: int = 3

    def __post_init__(self):
        if len(self.channels) != self.n_blocks:
            raise ValueError("need one channel count per block")

    def block_is_freq_only(self, index: int) -> bool:
        return index < self.freq_only_blocks


def _enc_conv_b(c: int, freq_only: bool) -> nn.Conv2d:
    if freq_only:
        return nn.Conv2d(c, c, kernel_size=(3, 4), stride=(1, 2), padding=(1, 1))
    return nn.Conv2d(c, c, kernel_size=(4, 4), stride=(2, 2), padding=(1, 1))


def _dec_conv_b(c_in: int, c_out: int, freq_only: bool) -> nn.ConvTranspose2d:
    if freq_only:
        return nn.ConvTranspose2d(c_in, c_out, kernel_size=(3, 4), stride=(1, 2),
                                  padding=(1, 1))
    return nn.ConvTranspose2d(c_in, c_out, kernel_size=(4, 4), stride=(2, 2),
                              padding=(1, 1))


class SpectrogramUNet(nn.Module):
    """STFT-domain dereverberation/reverberation generator.

    Input/output are waveforms; any input of at least 320 samples is
    accepted and the output length always equals the input length
    (internal padding to a whole frame grid, cropped afterwards).
    """

    def __init__(self, config: GeneratorConfig | None = None):
        super().__init__()
        self.config = config or GeneratorConfig()
        cfg = self.config
        c0 = cfg.channels[0]
        self.in_proj = nn.Conv2d(2, c0, kernel_size=3, stride=1, padding=1)

        enc_a, enc_b = [], []
        c_prev = c0
        for i, c in enumerate(cfg.channels):
            enc_a.append(nn.Conv2d(c_prev, c, kernel_size=3, stride=1, padding=1))
            enc_b.append(_enc_conv_b(c, cfg.block_is_freq_only(i)))
            c_prev = c
        self.enc_a = nn.ModuleList(enc_a)
        self.enc_b = nn.ModuleList(enc_b)

        # decoder block j (1-based) mirrors encoder block i = n_blocks+1-j:
        # the transposed counterpart of conv-B upsamples, the encoder
        # block's pre-downsample activation concatenates in, and a 3x3
        # merge conv brings channels down to the level below
        dec_a, dec_b = [], []
        for j in range(1, cfg.n_blocks + 1):
            i = cfg.n_blocks - j  # 0-based encoder index
            c_i = cfg.channels[i]
            c_below = cfg.channels[i - 1] if i > 0 else c0
            dec_b.append(_dec_conv_b(c_i, c_i, cfg.block_is_freq_only(i)))
            dec_a.append(nn.Conv2d(2 * c_i, c_below, kernel_size=3, stride=1, padding=1))
        self.dec_a = nn.ModuleList(dec_a)
        self.dec_b = nn.ModuleList(dec_b)
        self.out_proj = nn.Conv2d(c0, 2, kernel_size=3, stride=1, padding=1)

        # frequency axis padded to a multiple of 8, cropped back at the end
        self.freq_padded = ((STFT_BINS + 7) // 8) * 8
        # fixed invertible rescale so peak-normalized speech spectra reach
        # the convolutions at O(1) values
        self.spec_scale = 2.0
        # He fan-in init with ELU-appropriate gain: torch's default conv
        # init shrinks activations ~1/sqrt(3) per layer, which starves the
        # deep blocks of signal and gradient
        for m in self.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                nn.init.kaiming_uniform_(m.weight, nonlinearity="relu")
                nn.init.zeros_(m.bias)

    def forward(self, wave: torch.Tensor) -> torch.Tensor:
        squeeze = wave.dim() == 1
        if squeeze:
            wave = wave.unsqueeze(0)
        n = wave.shape[-1]
        if n < GENERATOR_MIN_INPUT:
            raise ValueError(f"input too short: need >= {GENERATOR_MIN_INPUT} samples")
        # pad so the frame grid covers every input sample and short inputs
        # still leave every stride-2 block at least a 2-frame time axis
        n_deep = self.config.n_blocks - self.config.freq_only_blocks
        min_len = STFT_WINDOW + (2 ** max(n_deep, 0) - 1) * STFT_HOP
        padded_len = max(n, min_len)
        remainder = (padded_len - STFT_WINDOW) % STFT_HOP
        if remainder:
            padded_len += STFT_HOP - remainder
        if padded_len > n:
            wave = F.pad(wave, (0, padded_len - n))

        spec = torch_stft(wave)
        x = torch.stack([spec.real, spec.imag], dim=1) / self.spec_scale
        x = F.pad(x, (0, self.freq_padded - STFT_BINS))

        x = F.elu(self.in_proj(x))
        skips = []  # encoder block i's activation before its downsample
        for conv_a, conv_b in zip(self.enc_a, self.enc_b):
            x = F.elu(conv_a(x))
            skips.append(x)
            x = F.elu(conv_b(x))

        n_blocks = self.config.n_blocks
        for j in range(1, n_blocks + 1):
            skip = skips[n_blocks - j]
            x = F.elu(self.dec_b[j - 1](x))
            target = skip.shape
            x = x[:, :, : target[2], : target[3]]
            if x.shape[2] < target[2] or x.shape[3] < target[3]:
                x = F.pad(x, (0, target[3] - x.shape[3], 0, target[2] - x.shape[2]))
            x = torch.cat([x, skip], dim=1)
            x = F.elu(self.dec_a[j - 1](x))

        out = self.out_proj(x)[:, :, :, :STFT_BINS] * self.spec_scale
        out_spec = torch.complex(out[:, 0], out[:, 1])
        y = torch_istft(out_spec)
        if y.shape[-1] < n:
            y = F.pad(y, (0, n - y.shape[-1]))
        y = y[:, :n]
        return y.squeeze(0) if squeeze else y


@dataclass
class DiscriminatorConfig:
    """MelGAN-style layer schedule shared by the three scales."""

    n_scales: int = 3
    in_channels: int = 16
    channels: tuple[int, ...] = (64, 256, 1024, 1024)
    groups: tuple[int, ...] = (4, 16, 64, 256)
    input_kernel: int = 15
    grouped_kernel: int = 41
    grouped_stride: int = 4
    penult_kernel: int = 5
    output_kernel: int = 3

    def __post_init__(self):
        if len(self.channels) != len(self.groups):
            raise ValueError("need one group count per grouped conv")


FEATURES_PER_SCALE = 5  # the 4 grouped convs plus the penultimate conv


def _wn(conv: nn.Conv1d) -> nn.Conv1d:
    # He init (leaky-relu gain) before wrapping in weight norm, so the
    # initial magnitudes maintain activation scale through the stack
    nn.init.kaiming_uniform_(conv.weight, a=0.2, nonlinearity="leaky_relu")
    nn.init.zeros_(conv.bias)
    return weight_norm(conv)


class _ScaleDiscriminator(nn.Module):
    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        k = cfg.input_kernel
        self.conv_in = _wn(nn.Conv1d(1, cfg.in_channels, k, padding=k // 2))
        grouped = []
        c_prev = cfg.in_channels
        for c, g in zip(cfg.channels, cfg.groups):
            grouped.append(
                _wn(
                    nn.Conv1d(
                        c_prev, c, cfg.grouped_kernel,
                        stride=cfg.grouped_stride, groups=g,
                        padding=cfg.grouped_kernel // 2,
                    )
                )
            )
            c_prev = c
        self.grouped = nn.ModuleList(grouped)
        self.conv_penult = _wn(
            nn.Conv1d(c_prev, c_prev, cfg.penult_kernel, padding=cfg.penult_kernel // 2)
        )
        self.conv_out = _wn(
            nn.Conv1d(c_prev, 1, cfg.output_kernel, padding=cfg.output_kernel // 2)
        )

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        feats = []
        x = F.leaky_relu(self.conv_in(x), 0.2)
        for conv in self.grouped:
            x = F.leaky_relu(conv(x), 0.2)
            feats.append(x)
        x = F.leaky_relu(self.conv_penult(x), 0.2)
        feats.append(x)
        return self.conv_out(x), feats


class MultiScaleWaveDiscriminator(nn.Module):
    """Three identical sub-discriminators on x1 / x2 / x4 pooled waveforms.

    ``forward`` returns (scores, features): one unbounded score map per
    scale and a flat list of 3 x 5 = 15 post-activation feature tensors,
    ordered scale-major then depth.
    """

    def __init__(self, config: DiscriminatorConfig | None = None):
        super().__init__()
        self.config = config or DiscriminatorConfig()
        self.scales = nn.ModuleList(
            _ScaleDiscriminator(self.config) for _ in range(self.config.n_scales)
        )
        self.pool = nn.AvgPool1d(kernel_size=4, stride=2, padding=1)

    def forward(self, wave: torch.Tensor) -> tuple[list[torch.Tensor], list[torch.Tensor]]:
        squeeze = wave.dim() == 1
        if squeeze:
            wave = wave.unsqueeze(0)
        if wave.shape[-1] < DISCRIMINATOR_MIN_INPUT:
            raise ValueError(
                f"input too short: need >= {DISCRIMINATOR_MIN_INPUT} samples"
            )
        x = wave.unsqueeze(1)
        scores, features = [], []
        for s, sub in enumerate(self.scales):
            if s > 0:
                x = self.pool(x)
            score, feats = sub(x)
            scores.append(score)
            features.extend(feats)
        return scores, features


def init_generator(config: GeneratorConfig | None = None, rng_seed: int = 0) -> SpectrogramUNet:
    """Seeded construction with torch's fan-in-scaled default init."""
    with torch.random.fork_rng():
        torch.manual_seed(rng_seed)
        return SpectrogramUNet(config)


def init_discriminator(
    config: DiscriminatorConfig | None = None, rng_seed: int = 0
) -> MultiScaleWaveDiscriminator:
    with torch.random.fork_rng():
        torch.manual_seed(rng_seed)
        return MultiScaleWaveDiscriminator(config)


def enhance_waveform(
    model: SpectrogramUNet,
    w: Waveform,
    chunk_samples: int = 8192,
    hop_samples: int = 4096,
) -> Waveform:
    """Run the generator over arbitrary-length audio.

    Long inputs are processed in overlapping chunks, cross-faded by
    triangular weights and renormalized; output length equals input
    length.
    """
    x = w.samples
    n = x.size
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    try:
        with torch.no_grad():
            if n <= chunk_samples:
                t = torch.as_tensor(x, dtype=dtype)
                return Waveform(model(t).numpy().astype(np.float64))
            weight = np.ones(chunk_samples)
            ramp = np.linspace(0.0, 1.0, hop_samples, endpoint=False)
            weight[:hop_samples] = ramp
            weight[-hop_samples:] = ramp[::-1] + (1.0 / hop_samples)
            out = np.zeros(n)
            norm = np.zeros(n)
            start = 0
            while start < n:
                stop = min(start + chunk_samples, n)
                seg = x[start:stop]
                pad = chunk_samples - seg.size
                if pad:
                    seg = np.concatenate([seg, np.zeros(pad)])
                t = torch.as_tensor(seg, dtype=dtype)
                y = model(t).numpy().astype(np.float64)
                w_local = weight.copy()
                if start == 0:
                    w_local[:hop_samples] = 1.0  # no left neighbor
                if stop == n and pad == 0:
                    w_local[-hop_samples:] = 1.0
                out[start:stop] += (y * w_local)[: stop - start]
                norm[start:stop] += w_local[: stop - start]
                start += hop_samples
            return Waveform(out / np.maximum(norm, 1e-12))
    finally:
        if was_training:
            model.train()
