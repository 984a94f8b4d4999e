"""Calibration probe for toy-scale unpaired training (not part of the package)."""

import os, sys, time
sys.path.insert(0, "tests")
import numpy as np
import torch

from synth import speech_like_utterance
from dereverb.datapipe import PreparedDataset, make_batch, segment_clips
from dereverb.dsp import Waveform, convolve_full, peak_normalize
from dereverb.losses import multiscale_spec_loss
from dereverb.metrics import estimate_t60_blind
from dereverb.nets import DiscriminatorConfig, GeneratorConfig, enhance_waveform
from dereverb.roomsim import build_rir_corpus
from dereverb.training import TrainConfig, batch_to_tensors, init_state, train_step

LR_D = float(os.environ.get("CAL_LR_D", "2e-4"))
STEPS = int(os.environ.get("CAL_STEPS", "600"))

t0 = time.time()
clips = []
for i in range(200):
    clips.extend(segment_clips(speech_like_utterance(i, duration_s=3.2), f"utt{i:03d}"))
rirs = build_rir_corpus(100, t60_min_s=0.4, rng_seed=123)
print(f"data ready in {time.time()-t0:.0f}s", flush=True)

train_ds = PreparedDataset(clips=clips[:180], utterances=[])
eval_clips = clips[180:]
train_rirs, eval_rirs = rirs[:90], rirs[90:]

cfg = TrainConfig(
    mode="unpaired",
    batch_size=8,
    total_steps=10**9,
    rng_seed=7,
    lr_discriminator=LR_D,
    generator=GeneratorConfig(n_blocks=4, channels=(16, 32, 64, 96)),
    discriminator=DiscriminatorConfig(in_channels=8, channels=(32, 64, 128, 128),
                                      groups=(4, 8, 16, 32)),
)
state = init_state(cfg)

def evaluate():
    t60_in, t60_out, msl_dry, msl_rev = [], [], [], []
    for k in range(6):
        clip = eval_clips[(k + 3) % len(eval_clips)]
        rir = eval_rirs[(k + 1) % len(eval_rirs)]
        rev = peak_normalize(Waveform(convolve_full(clip.waveform, rir.h).samples[:48000]))
        out = enhance_waveform(state.g_rd, rev)
        dry = peak_normalize(clip.waveform)
        out_dry = enhance_waveform(state.g_rd, dry)
        try:
            t60_in.append(estimate_t60_blind(rev)); t60_out.append(estimate_t60_blind(out))
        except ValueError:
            pass
        with torch.no_grad():
            msl_dry.append(float(multiscale_spec_loss(
                torch.as_tensor(out_dry.samples), torch.as_tensor(dry.samples))))
            msl_rev.append(float(multiscale_spec_loss(
                torch.as_tensor(out.samples), torch.as_tensor(rev.samples))))
    msg = f"step {state.step}:"
    if t60_in:
        msg += (f" t60_in={np.mean(t60_in):.2f} t60_out={np.mean(t60_out):.2f} "
                f"drop={100*(1-np.mean(t60_out)/np.mean(t60_in)):.0f}%")
    msg += f" | msl_dry={np.mean(msl_dry):.2f} msl_rev={np.mean(msl_rev):.2f} ratio={np.mean(msl_dry)/np.mean(msl_rev):.2f}"
    print(msg, flush=True)

evaluate()
t2 = time.time()
cycles = []
for step in range(STEPS):
    examples = make_batch(train_ds, train_rirs, "unpaired", cfg.batch_size, cfg.rng_seed, state.step)
    report = train_step(state, batch_to_tensors(examples))
    cycles.append((report.cycle_r, report.cycle_d))
    if (step + 1) % 25 == 0:
        print(f"  step {state.step} gen={report.gen_total:.2f} advRD={report.gen_adv_r_to_d:.2f} "
              f"cycR={report.cycle_r:.2f} cycD={report.cycle_d:.2f} id={report.identity_d:.2f} "
              f"fcR={report.feat_cycle_r:.3f} disc={report.disc_total:.3f} "
              f"({(time.time()-t2)/(step+1):.2f}s/step)", flush=True)
    if (step + 1) % 100 == 0:
        evaluate()
first = np.mean([c[1] for c in cycles[:100]])
last = np.mean([c[1] for c in cycles[-100:]])
print(f"cycle_d mean first100={first:.3f} last100={last:.3f}", flush=True)
print("total", time.time() - t0, flush=True)
