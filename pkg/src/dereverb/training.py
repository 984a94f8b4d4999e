"""Optimization loops for the unpaired (cycle-consistent) and paired modes,
with resumable checkpoints and an append-only metrics log.

Each step performs one discriminator update on detached generator outputs,
then one generator update; Adam with moments (0.5, 0.9) throughout, with
the paper's learning-rate asymmetry (1e-4 generators, 1e-3
discriminators). Batches are a pure function of (seed, step), so resuming
from a checkpoint reproduces the uninterrupted run bit for bit.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from dereverb.datapipe import CROP_SAMPLES, PreparedDataset, make_batch
from dereverb.dsp import Waveform
from dereverb.losses import (
    GeneratorLossTerms,
    LossReport,
    LossWeights,
    feature_cycle_losses,
    hinge_disc_loss,
    hinge_gen_loss,
    multiscale_spec_loss,
    paired_loss,
    total_generator_loss,
)
from dereverb.metrics import fwsegsnr
from dereverb.nets import (
    DiscriminatorConfig,
    GeneratorConfig,
    MultiScaleWaveDiscriminator,
    SpectrogramUNet,
    init_discriminator,
    init_generator,
)

CHECKPOINT_FORMAT_VERSION = 1
ADAM_BETAS = (0.5, 0.9)


class TrainingDivergedError(RuntimeError):
    """A loss went non-finite; carries the offending report."""

    def __init__(self, report: LossReport):
        super().__init__(f"non-finite loss at step {report.step}: {report.values()}")
        self.report = report


class CheckpointError(RuntimeError):
    """Unreadable, corrupt, or incompatible checkpoint."""


@dataclass
class TrainConfig:
    mode: str = "unpaired"
    batch_size: int = 32
    lr_generator: float = 1e-4
    lr_discriminator: float = 1e-3
    crop_samples: int = CROP_SAMPLES
    gain_range: tuple[float, float] = (0.3, 1.0)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    paired_feature_weight: float = 100.0
    total_steps: int = 2000
    eval_every: int = 500
    checkpoint_every: int = 500
    rng_seed: int = 0
    grad_clip: float | None = None
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)

    def __post_init__(self):
        if self.mode not in ("paired", "unpaired"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr_generator <= 0 or self.lr_discriminator <= 0:
            raise ValueError("learning rates must be positive")
        if self.crop_samples != CROP_SAMPLES:
            raise ValueError(f"crop_samples is fixed at {CROP_SAMPLES} (512 ms)")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["gain_range"] = list(self.gain_range)
        d["generator"]["channels"] = list(self.generator.channels)
        d["discriminator"]["channels"] = list(self.discriminator.channels)
        d["discriminator"]["groups"] = list(self.discriminator.groups)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "loss_weights" in d and isinstance(d["loss_weights"], dict):
            d["loss_weights"] = LossWeights(**d["loss_weights"])
        if "generator" in d and isinstance(d["generator"], dict):
            g = dict(d["generator"])
            g["channels"] = tuple(g["channels"])
            d["generator"] = GeneratorConfig(**g)
        if "discriminator" in d and isinstance(d["discriminator"], dict):
            dd = dict(d["discriminator"])
            dd["channels"] = tuple(dd["channels"])
            dd["groups"] = tuple(dd["groups"])
            d["discriminator"] = DiscriminatorConfig(**dd)
        if "gain_range" in d:
            d["gain_range"] = tuple(d["gain_range"])
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def state_hash(self) -> str:
        """Hash of everything that shapes the optimization trajectory;
        scheduling knobs (total steps, eval/checkpoint cadence) excluded
        so a run can be resumed with a longer horizon."""
        d = self.to_dict()
        for key in ("total_steps", "eval_every", "checkpoint_every"):
            d.pop(key, None)
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class TrainState:
    config: TrainConfig
    step: int
    g_rd: SpectrogramUNet
    d_d: MultiScaleWaveDiscriminator
    g_dr: SpectrogramUNet | None
    d_r: MultiScaleWaveDiscriminator | None
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam

    def generator_modules(self):
        return [m for m in (self.g_rd, self.g_dr) if m is not None]

    def discriminator_modules(self):
        return [m for m in (self.d_d, self.d_r) if m is not None]


def init_state(config: TrainConfig) -> TrainState:
    seed = config.rng_seed
    g_rd = init_generator(config.generator, rng_seed=seed)
    d_d = init_discriminator(config.discriminator, rng_seed=seed + 2)
    if config.mode == "unpaired":
        g_dr = init_generator(config.generator, rng_seed=seed + 1)
        d_r = init_discriminator(config.discriminator, rng_seed=seed + 3)
    else:
        g_dr, d_r = None, None
    gen_params = [p for m in (g_rd, g_dr) if m is not None for p in m.parameters()]
    disc_params = [p for m in (d_d, d_r) if m is not None for p in m.parameters()]
    opt_g = torch.optim.Adam(gen_params, lr=config.lr_generator, betas=ADAM_BETAS)
    opt_d = torch.optim.Adam(disc_params, lr=config.lr_discriminator, betas=ADAM_BETAS)
    return TrainState(config, 0, g_rd, d_d, g_dr, d_r, opt_g, opt_d)


def batch_to_tensors(examples) -> dict[str, torch.Tensor]:
    out = {
        "x_r": torch.as_tensor(
            np.stack([ex.x_r.samples for ex in examples]), dtype=torch.float32
        ),
        "y_d": torch.as_tensor(
            np.stack([ex.y_d.samples for ex in examples]), dtype=torch.float32
        ),
    }
    if examples[0].paired_target is not None:
        out["target"] = torch.as_tensor(
            np.stack([ex.paired_target.samples for ex in examples]),
            dtype=torch.float32,
        )
    return out


def _clip_grads(modules, max_norm):
    if max_norm is not None:
        params = [p for m in modules for p in m.parameters()]
        torch.nn.utils.clip_grad_norm_(params, max_norm)


def train_step_unpaired(state: TrainState, batch: dict[str, torch.Tensor]) -> LossReport:
    """One discriminator update on detached outputs, then one generator
    update with the full weighted objective."""
    cfg = state.config
    x_r, y_d = batch["x_r"], batch["y_d"]
    g_rd, g_dr, d_d, d_r = state.g_rd, state.g_dr, state.d_d, state.d_r

    with torch.no_grad():
        fake_dry = g_rd(x_r)
        fake_rev = g_dr(y_d)
    state.opt_d.zero_grad()
    real_d, _ = d_d(y_d)
    fake_d, _ = d_d(fake_dry)
    loss_d_d = hinge_disc_loss(real_d, fake_d)
    real_r, _ = d_r(x_r)
    fake_r, _ = d_r(fake_rev)
    loss_d_r = hinge_disc_loss(real_r, fake_r)
    loss_d = loss_d_d + loss_d_r
    loss_d.backward()
    _clip_grads(state.discriminator_modules(), cfg.grad_clip)
    state.opt_d.step()

    state.opt_g.zero_grad()
    y_hat = g_rd(x_r)            # dereverberated
    x_hat = g_dr(y_d)            # re-reverberated
    x_cyc = g_dr(y_hat)
    y_cyc = g_rd(x_hat)
    adv_d_scores, _ = d_d(y_hat)
    adv_r_scores, _ = d_r(x_hat)
    fc_r, fc_d = feature_cycle_losses(d_r, d_d, x_r, x_cyc, y_d, y_cyc)
    terms = GeneratorLossTerms(
        gen_adv_r_to_d=hinge_gen_loss(adv_d_scores),
        gen_adv_d_to_r=hinge_gen_loss(adv_r_scores),
        cycle_r=multiscale_spec_loss(x_cyc, x_r),
        cycle_d=multiscale_spec_loss(y_cyc, y_d),
        feat_cycle_r=fc_r,
        feat_cycle_d=fc_d,
        identity_d=multiscale_spec_loss(g_rd(y_d), y_d),
    )
    loss_g = total_generator_loss(terms, cfg.loss_weights)
    loss_g.backward()
    _clip_grads(state.generator_modules(), cfg.grad_clip)
    state.opt_g.step()

    state.step += 1
    report = LossReport(
        step=state.step,
        mode="unpaired",
        gen_adv_r_to_d=terms.gen_adv_r_to_d.detach().item(),
        gen_adv_d_to_r=terms.gen_adv_d_to_r.detach().item(),
        cycle_r=terms.cycle_r.detach().item(),
        cycle_d=terms.cycle_d.detach().item(),
        feat_cycle_r=fc_r.detach().item(),
        feat_cycle_d=fc_d.detach().item(),
        identity_d=terms.identity_d.detach().item(),
        gen_total=loss_g.detach().item(),
        disc_d=loss_d_d.detach().item(),
        disc_r=loss_d_r.detach().item(),
        disc_total=loss_d.detach().item(),
    )
    if not report.all_finite():
        raise TrainingDivergedError(report)
    return report


def train_step_paired(state: TrainState, batch: dict[str, torch.Tensor]) -> LossReport:
    """Discriminator hinge on (target, detached output), then the paired
    generator loss (adversarial + heavily weighted feature match)."""
    cfg = state.config
    x_r, target = batch["x_r"], batch["target"]
    g_rd, d_d = state.g_rd, state.d_d

    with torch.no_grad():
        fake = g_rd(x_r)
    state.opt_d.zero_grad()
    real_scores, _ = d_d(target)
    fake_scores, _ = d_d(fake)
    loss_d = hinge_disc_loss(real_scores, fake_scores)
    loss_d.backward()
    _clip_grads([d_d], cfg.grad_clip)
    state.opt_d.step()

    state.opt_g.zero_grad()
    loss_g, adv, feat = paired_loss(
        g_rd, d_d, x_r, target, feature_weight=cfg.paired_feature_weight
    )
    loss_g.backward()
    _clip_grads([g_rd], cfg.grad_clip)
    state.opt_g.step()

    state.step += 1
    report = LossReport(
        step=state.step,
        mode="paired",
        gen_adv_r_to_d=adv.detach().item(),
        paired_feature=feat.detach().item(),
        gen_total=loss_g.detach().item(),
        disc_d=loss_d.detach().item(),
        disc_total=loss_d.detach().item(),
    )
    if not report.all_finite():
        raise TrainingDivergedError(report)
    return report


def train_step(state: TrainState, batch: dict[str, torch.Tensor]) -> LossReport:
    if state.config.mode == "paired":
        return train_step_paired(state, batch)
    return train_step_unpaired(state, batch)


def checkpoint_save(state: TrainState, path) -> None:
    """Atomic write (temp + rename) of models, optimizers, and config."""
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "mode": state.config.mode,
        "step": state.step,
        "config": state.config.to_dict(),
        "config_hash": state.config.config_hash(),
        "models": {
            name: module.state_dict()
            for name, module in (
                ("g_rd", state.g_rd),
                ("g_dr", state.g_dr),
                ("d_d", state.d_d),
                ("d_r", state.d_r),
            )
            if module is not None
        },
        "optimizers": {
            "opt_g": state.opt_g.state_dict(),
            "opt_d": state.opt_d.state_dict(),
        },
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)


def checkpoint_load(path, expected_mode: str | None = None) -> TrainState:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointError(f"{path} is not a training checkpoint")
    if payload["format_version"] != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {payload['format_version']} "
            f"(expected {CHECKPOINT_FORMAT_VERSION})"
        )
    if expected_mode is not None and payload["mode"] != expected_mode:
        raise CheckpointError(
            f"mode mismatch: checkpoint is {payload['mode']!r}, requested "
            f"{expected_mode!r}"
        )
    config = TrainConfig.from_dict(payload["config"])
    state = init_state(config)
    state.step = payload["step"]
    for name, module in (
        ("g_rd", state.g_rd),
        ("g_dr", state.g_dr),
        ("d_d", state.d_d),
        ("d_r", state.d_r),
    ):
        if module is not None:
            module.load_state_dict(payload["models"][name])
    state.opt_g.load_state_dict(payload["optimizers"]["opt_g"])
    state.opt_d.load_state_dict(payload["optimizers"]["opt_d"])
    return state


def load_generator_for_inference(path) -> SpectrogramUNet:
    """Load just the dereverberation generator from any checkpoint."""
    payload = None
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "models" not in payload:
        raise CheckpointError(f"{path} is not a training checkpoint")
    config = TrainConfig.from_dict(payload["config"])
    gen = SpectrogramUNet(config.generator)
    gen.load_state_dict(payload["models"]["g_rd"])
    gen.eval()
    return gen


EVAL_STREAM_OFFSET = 10**9  # seed lane for held-out evaluation batches


def _eval_metrics(state: TrainState, dataset, rirs) -> dict[str, float]:
    cfg = state.config
    batch_size = min(cfg.batch_size, 8)
    examples = make_batch(
        dataset, rirs, cfg.mode, batch_size, cfg.rng_seed + EVAL_STREAM_OFFSET, 0
    )
    tensors = batch_to_tensors(examples)
    out: dict[str, float] = {}
    with torch.no_grad():
        if cfg.mode == "paired":
            pred = state.g_rd(tensors["x_r"])
            fw_model, fw_input = [], []
            for i in range(pred.shape[0]):
                ref = Waveform(tensors["target"][i].double().numpy())
                try:
                    fw_model.append(fwsegsnr(ref, Waveform(pred[i].double().numpy())))
                    fw_input.append(
                        fwsegsnr(ref, Waveform(tensors["x_r"][i].double().numpy()))
                    )
                except ValueError:
                    continue
            if fw_model:
                out["eval_fwsegsnr_model"] = float(np.mean(fw_model))
                out["eval_fwsegsnr_input"] = float(np.mean(fw_input))
        else:
            y_hat = state.g_rd(tensors["x_r"])
            x_cyc = state.g_dr(y_hat)
            out["eval_cycle_r"] = float(multiscale_spec_loss(x_cyc, tensors["x_r"]))
            out["eval_identity_d"] = float(
                multiscale_spec_loss(state.g_rd(tensors["y_d"]), tensors["y_d"])
            )
    return out


def run_training(
    config: TrainConfig,
    dataset: PreparedDataset,
    rirs,
    out_dir,
    progress: bool = False,
) -> TrainState:
    """Run (or resume) training; writes checkpoints and a JSONL metrics log.

    Resumes from ``<out_dir>/checkpoint.pt`` when present. Steps are
    deterministic in (config.rng_seed, step index), so an interrupted and
    resumed run matches an uninterrupted one exactly.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "checkpoint.pt"
    if ckpt_path.exists():
        state = checkpoint_load(ckpt_path, expected_mode=config.mode)
        if state.config.state_hash() != config.state_hash():
            raise CheckpointError(
                "existing checkpoint was produced by a different config"
            )
        state.config = config  # adopt the (possibly longer) schedule
    else:
        state = init_state(config)

    log_path = out / "metrics.jsonl"
    with open(log_path, "a") as log:
        while state.step < config.total_steps:
            step_index = state.step  # batches are keyed by pre-update step
            examples = make_batch(
                dataset, rirs, config.mode, config.batch_size,
                config.rng_seed, step_index,
            )
            report = train_step(state, batch_to_tensors(examples))
            row = {"step": report.step, "mode": report.mode, **report.values()}
            if config.eval_every and report.step % config.eval_every == 0:
                row.update(_eval_metrics(state, dataset, rirs))
            log.write(json.dumps(row, sort_keys=True) + "\n")
            log.flush()
            if progress and report.step % 25 == 0:
                print(
                    f"  step {report.step}/{config.total_steps} "
                    f"gen={report.gen_total:.3f} disc={report.disc_total:.3f}",
                    flush=True,
                )
            if config.checkpoint_every and report.step % config.checkpoint_every == 0:
                checkpoint_save(state, ckpt_path)
    checkpoint_save(state, ckpt_path)
    return state
