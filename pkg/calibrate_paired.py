"""Calibration probe for toy-scale paired training (not part of the package)."""

import sys, time
sys.path.insert(0, "tests")
import numpy as np
import torch

from synth import speech_like_utterance
from dereverb.datapipe import PreparedDataset, make_batch, make_example, segment_clips
from dereverb.dsp import Waveform
from dereverb.metrics import estimate_t60_blind, fwsegsnr
from dereverb.nets import DiscriminatorConfig, GeneratorConfig, enhance_waveform
from dereverb.roomsim import build_rir_corpus
from dereverb.training import TrainConfig, batch_to_tensors, init_state, train_step

t0 = time.time()
print("building clips...", flush=True)
clips = []
for i in range(200):
    clips.extend(segment_clips(speech_like_utterance(i, duration_s=3.2), f"utt{i:03d}"))
print(f"  {len(clips)} clips in {time.time()-t0:.0f}s", flush=True)

t1 = time.time()
print("building rirs...", flush=True)
rirs = build_rir_corpus(100, t60_min_s=0.4, rng_seed=123)
print(f"  100 rirs in {time.time()-t1:.0f}s; t60 range "
      f"[{min(r.t60_s for r in rirs):.2f}, {max(r.t60_s for r in rirs):.2f}]", flush=True)

train_ds = PreparedDataset(clips=clips[:180], utterances=[])
eval_clips = clips[180:]
train_rirs, eval_rirs = rirs[:90], rirs[10:][:0] or rirs[90:]

import os
LR_D = float(os.environ.get("CAL_LR_D", "2e-4"))
LR_G = float(os.environ.get("CAL_LR_G", "1e-4"))
cfg = TrainConfig(
    mode="paired",
    batch_size=8,
    total_steps=10**9,
    rng_seed=7,
    lr_generator=LR_G,
    lr_discriminator=LR_D,
    generator=GeneratorConfig(n_blocks=4, channels=(16, 32, 64, 96)),
    discriminator=DiscriminatorConfig(in_channels=8, channels=(32, 64, 128, 128),
                                      groups=(4, 8, 16, 32)),
)
state = init_state(cfg)

# held-out full-clip eval pairs
eval_pairs = []
for k in range(12):
    ex = make_example(eval_clips[k % len(eval_clips)], eval_rirs[k % len(eval_rirs)],
                      "paired", rng_seed=50_000 + k)
    eval_pairs.append(ex)

def evaluate():
    fw_in, fw_out, t60_in, t60_out = [], [], [], []
    gen = state.g_rd
    for ex in eval_pairs:
        with torch.no_grad():
            pred = gen(torch.as_tensor(ex.x_r.samples, dtype=torch.float32))
        out = Waveform(pred.double().numpy())
        try:
            fw_in.append(fwsegsnr(ex.paired_target, ex.x_r))
            fw_out.append(fwsegsnr(ex.paired_target, out))
        except ValueError:
            pass
    # T60 on longer signals: enhance 3 s reverberant clips
    for k in range(6):
        clip = eval_clips[(k + 3) % len(eval_clips)]
        rir = eval_rirs[(k + 1) % len(eval_rirs)]
        from dereverb.dsp import convolve_full, peak_normalize
        rev = Waveform(convolve_full(clip.waveform, rir.h).samples[:48000])
        rev = peak_normalize(rev)
        out = enhance_waveform(state.g_rd, rev)
        try:
            t60_in.append(estimate_t60_blind(rev))
            t60_out.append(estimate_t60_blind(out))
        except ValueError as e:
            print("   t60 err:", e, flush=True)
    msg = (f"step {state.step}: fw_in={np.mean(fw_in):.2f} fw_out={np.mean(fw_out):.2f} "
           f"delta={np.mean(fw_out)-np.mean(fw_in):+.2f} dB")
    if t60_in and t60_out:
        msg += (f" | t60_in={np.mean(t60_in):.2f} t60_out={np.mean(t60_out):.2f} "
                f"drop={100*(1-np.mean(t60_out)/np.mean(t60_in)):.0f}%")
    print(msg, flush=True)

evaluate()
t2 = time.time()
for step in range(600):
    examples = make_batch(train_ds, train_rirs, "paired", cfg.batch_size, cfg.rng_seed, state.step)
    report = train_step(state, batch_to_tensors(examples))
    if (step + 1) % 25 == 0:
        print(f"  step {state.step} gen={report.gen_total:.2f} adv={report.gen_adv_r_to_d:.3f} "
              f"feat={report.paired_feature:.4f} disc={report.disc_total:.3f} "
              f"({(time.time()-t2)/(step+1):.2f}s/step)", flush=True)
    if (step + 1) % 100 == 0:
        evaluate()
print("total time", time.time() - t0, flush=True)
