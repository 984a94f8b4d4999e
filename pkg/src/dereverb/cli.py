"""Operator entry point chaining the pipeline stages.

Subcommands: ``simulate-rirs``, ``prepare-data``, ``train``, ``enhance``,
``evaluate``. Every run writes a manifest (command, resolved config, seed,
timestamps, outputs) into its artifact directory at the end.

Exit codes: 0 success, 2 usage error, 3 training divergence,
4 I/O or format error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from pathlib import Path

import dereverb
from dereverb.datapipe import load_prepared_dataset, prepare_dataset
from dereverb.dsp import AudioFormatError, Waveform, read_wav, write_wav
from dereverb.metrics import evaluate_model
from dereverb.nets import enhance_waveform
from dereverb.roomsim import (
    SimulationError,
    build_rir_corpus,
    load_rir_corpus,
    save_rir_corpus,
)
from dereverb.training import (
    CheckpointError,
    TrainConfig,
    TrainingDivergedError,
    load_generator_for_inference,
    run_training,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGED = 3
EXIT_IO = 4

_WORKERS_ENV = "DEREVERB_WORKERS"


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get(_WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _utc_stamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def write_run_manifest(
    out_dir,
    command: str,
    config_path,
    resolved_config: dict,
    seed,
    started: str,
    output_paths: list[str],
) -> None:
    """Atomically write the per-run manifest into the artifact directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config_path": str(config_path) if config_path else None,
        "resolved_config": resolved_config,
        "seed": seed,
        "toolkit_version": dereverb.__version__,
        "started": started,
        "finished": _utc_stamp(),
        "output_paths": output_paths,
    }
    fd, tmp = tempfile.mkstemp(dir=out, suffix=".manifest.tmp")
    with os.fdopen(fd, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    os.replace(tmp, out / "run_manifest.json")


def write_eval_set(entries, out_dir) -> None:
    """Write an evaluation set: (utterance_id, reverberant, reference)
    Waveform triples become WAV pairs plus a manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for utt_id, reverberant, reference in entries:
        rev_name, ref_name = f"{utt_id}_rev.wav", f"{utt_id}_ref.wav"
        write_wav(out / rev_name, reverberant)
        write_wav(out / ref_name, reference)
        rows.append(
            {"utterance_id": utt_id, "reverberant": rev_name, "reference": ref_name}
        )
    manifest = {"kind": "eval_set", "entries": rows}
    (out / "eval_manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def read_eval_set(eval_dir):
    """Load eval pairs; missing members are skipped and counted."""
    root = Path(eval_dir)
    manifest = json.loads((root / "eval_manifest.json").read_text())
    pairs, skipped = [], 0
    for row in manifest["entries"]:
        rev_path = root / row["reverberant"]
        ref_path = root / row["reference"]
        if not rev_path.exists() or not ref_path.exists():
            skipped += 1
            continue
        pairs.append((row["utterance_id"], read_wav(rev_path), read_wav(ref_path)))
    return pairs, skipped


def cmd_simulate_rirs(args) -> int:
    started = _utc_stamp()
    try:
        rirs = build_rir_corpus(
            n=args.count,
            t60_min_s=args.t60_min,
            rng_seed=args.seed,
            workers=args.workers,
            progress=args.verbose,
        )
        save_rir_corpus(rirs, args.out)
    except SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    write_run_manifest(
        args.out,
        command="simulate-rirs",
        config_path=None,
        resolved_config={
            "count": args.count,
            "t60_min_s": args.t60_min,
            "workers": args.workers,
        },
        seed=args.seed,
        started=started,
        output_paths=[str(Path(args.out) / "manifest.json")],
    )
    print(f"wrote {len(rirs)} RIRs to {args.out}")
    return EXIT_OK


def cmd_prepare_data(args) -> int:
    started = _utc_stamp()
    enhancer = None
    if args.mode == "model":
        if not args.enhancer:
            print("error: --mode model requires --enhancer", file=sys.stderr)
            return EXIT_USAGE
        try:
            gen = load_generator_for_inference(args.enhancer)
        except CheckpointError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
        enhancer = lambda w: enhance_waveform(gen, w)  # noqa: E731
    try:
        dataset = prepare_dataset(
            args.in_dir, args.out, mode=args.mode, enhancer=enhancer
        )
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    write_run_manifest(
        args.out,
        command="prepare-data",
        config_path=None,
        resolved_config={"mode": args.mode, "enhancer": args.enhancer},
        seed=None,
        started=started,
        output_paths=[str(Path(args.out) / "manifest.json")],
    )
    accepted = sum(1 for u in dataset.utterances if u["accepted"])
    print(
        f"prepared {len(dataset.clips)} clips from {accepted}/"
        f"{len(dataset.utterances)} accepted utterances"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    started = _utc_stamp()
    try:
        config = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    except (OSError, ValueError, TypeError, KeyError) as exc:
        print(f"error: bad config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    overrides = {"mode": args.mode}
    if args.steps is not None:
        overrides["total_steps"] = args.steps
    if args.batch_size is not None:
        overrides["batch_size"] = args.batch_size
    if args.seed is not None:
        overrides["rng_seed"] = args.seed
    config_dict = config.to_dict()
    config_dict.update(overrides)
    config = TrainConfig.from_dict(config_dict)
    try:
        dataset = load_prepared_dataset(args.data)
        rirs = load_rir_corpus(args.rirs)
    except (OSError, ValueError, KeyError, AudioFormatError) as exc:
        print(f"error: cannot load data: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        state = run_training(config, dataset, rirs, args.out, progress=args.verbose)
    except TrainingDivergedError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    write_run_manifest(
        args.out,
        command="train",
        config_path=args.config,
        resolved_config=config.to_dict(),
        seed=config.rng_seed,
        started=started,
        output_paths=[
            str(Path(args.out) / "checkpoint.pt"),
            str(Path(args.out) / "metrics.jsonl"),
        ],
    )
    print(f"trained to step {state.step}; checkpoint at {args.out}/checkpoint.pt")
    return EXIT_OK


def cmd_enhance(args) -> int:
    started = _utc_stamp()
    try:
        gen = load_generator_for_inference(args.ckpt)
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        audio = read_wav(args.in_wav)
    except (OSError, AudioFormatError, ValueError) as exc:
        print(f"error: cannot read {args.in_wav}: {exc}", file=sys.stderr)
        return EXIT_IO
    out = enhance_waveform(gen, audio)
    write_wav(args.out_wav, out)
    out_dir = Path(args.out_wav).parent
    write_run_manifest(
        out_dir,
        command="enhance",
        config_path=None,
        resolved_config={"ckpt": args.ckpt, "input": args.in_wav},
        seed=None,
        started=started,
        output_paths=[args.out_wav],
    )
    print(f"enhanced {args.in_wav} -> {args.out_wav}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    started = _utc_stamp()
    try:
        gen = load_generator_for_inference(args.ckpt)
        pairs, skipped = read_eval_set(args.eval_set)
    except (CheckpointError, OSError, AudioFormatError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    if not pairs:
        print("error: evaluation set is empty", file=sys.stderr)
        return EXIT_IO
    report = evaluate_model(
        lambda w: enhance_waveform(gen, w), pairs, rng_seed=args.seed
    )
    report.write_csv(args.report)
    print(report.summary())
    if skipped:
        print(f"skipped {skipped} entries with missing pair members")
    write_run_manifest(
        Path(args.report).parent,
        command="evaluate",
        config_path=None,
        resolved_config={"ckpt": args.ckpt, "eval_set": str(args.eval_set)},
        seed=args.seed,
        started=started,
        output_paths=[args.report],
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dereverb",
        description="Speech dereverberation toolkit: RIR simulation, data "
        "preparation, paired/unpaired training, enhancement, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate-rirs", help="build a synthetic RIR corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--t60-min", type=float, default=0.4, dest="t60_min")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=_default_workers())
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(fn=cmd_simulate_rirs)

    p = sub.add_parser("prepare-data", help="filter and segment a speech corpus")
    p.add_argument("--in", required=True, dest="in_dir")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("stage0", "model"), default="stage0")
    p.add_argument("--enhancer", help="checkpoint for model-based filtering")
    p.set_defaults(fn=cmd_prepare_data)

    p = sub.add_parser("train", help="train a paired or unpaired model")
    p.add_argument("--config", help="JSON config file (TrainConfig fields)")
    p.add_argument("--mode", choices=("paired", "unpaired"), required=True)
    p.add_argument("--data", required=True, help="prepared dataset directory")
    p.add_argument("--rirs", required=True, help="RIR corpus directory")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, help="override total_steps")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--seed", type=int)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("enhance", help="dereverberate one WAV file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", required=True, dest="in_wav")
    p.add_argument("--out", required=True, dest="out_wav")
    p.set_defaults(fn=cmd_enhance)

    p = sub.add_parser("evaluate", help="score a checkpoint on an eval set")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--eval-set", required=True, dest="eval_set")
    p.add_argument("--report", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "simulate-rirs" and args.count <= 0:
        parser.error("--count must be positive")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
