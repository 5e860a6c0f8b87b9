"""Command-line entry point: corpus synthesis, mixing, training,
enhancement, evaluation, and report generation.

Exit codes: 0 success, 1 runtime/I/O failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, dsp, metrics, mixgen, model, report, synthdata, training, wavio
from .runconfig import ConfigError, parse_config


def _load_model(path) -> model.ModelParameters:
    blobs = checkpoint.read_checkpoint(path)
    return model.ModelParameters.from_blobs(blobs)


def cmd_synth(args) -> int:
    corpus = synthdata.build_corpus(
        n_speakers=args.speakers,
        utterances_per_speaker=args.utts,
        master_seed=args.seed,
        out_dir=args.out,
        visual_dim=args.visual_dim,
        frames_per_utterance=args.frames,
        noise_scale=args.noise_scale,
    )
    print(
        f"corpus at {args.out}: {len(corpus.speakers('train'))} train + "
        f"{len(corpus.speakers('test'))} test speakers, {args.utts} utterances each"
    )
    return 0


def cmd_mix(args) -> int:
    if not 1 <= len(args.noise) <= 4:
        print(f"error: need 1 to 4 noise files, got {len(args.noise)}", file=sys.stderr)
        return 2
    ref = wavio.read_wav(args.ref)
    noises = [wavio.read_wav(p) for p in args.noise]
    for path, noise in zip(args.noise, noises):
        if len(noise.samples) != len(ref.samples):
            print(
                f"error: length mismatch: {args.ref} has {len(ref.samples)} "
                f"samples, {path} has {len(noise.samples)}",
                file=sys.stderr,
            )
            return 2
    ref_rms = mixgen.rms(ref)
    scales = [ref_rms / mixgen.rms(n) for n in noises]
    mixture = ref.samples + sum(s * n.samples for s, n in zip(scales, noises))
    wavio.write_wav(args.out, dsp.Waveform(mixture, ref.sample_rate))

    manifest = Path(args.manifest) if args.manifest else Path(str(args.out) + ".manifest")
    lines = [f"{args.ref}\t{1.0:.9g}"]
    lines += [f"{p}\t{s:.9g}" for p, s in zip(args.noise, scales)]
    manifest.write_text("\n".join(lines) + "\n")
    print(f"wrote {args.out} ({len(noises) + 1} speakers) and {manifest}")
    return 0


def cmd_train(args) -> int:
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if not Path(args.corpus).is_dir():
        print(f"error: corpus directory {args.corpus} does not exist", file=sys.stderr)
        return 1
    corpus = synthdata.Corpus(args.corpus)
    log_path = Path(args.log) if args.log else Path(str(args.out) + ".log")
    log_path.parent.mkdir(parents=True, exist_ok=True)

    with open(log_path, "w") as log_file:

        def sink(point):
            log_file.write(point.format() + "\n")
            log_file.flush()
            print(f"  {point.format()}")

        mp, _ = training.run_curriculum(
            corpus,
            cfg.schedule(),
            cfg.seed,
            net_cfg=cfg.net_config(),
            loss_cfg=cfg.loss_config(),
            learning_rate=cfg.learning_rate,
            batch_size=cfg.batch_size,
            segment_frames=cfg.segment_frames,
            val_interval=cfg.val_interval,
            val_mixtures=cfg.val_mixtures,
            stft_cfg=cfg.stft_config(),
            log_sink=sink,
        )
    checkpoint.write_checkpoint(args.out, mp.to_blobs())
    print(f"wrote checkpoint {args.out} and metrics log {log_path}")
    return 0


def cmd_enhance(args) -> int:
    if args.phase == "gt" and not args.gt_wav:
        print("error: --phase gt requires --gt-wav", file=sys.stderr)
        return 2
    mp = _load_model(args.ckpt)
    mix = wavio.read_wav(args.mix)
    visual = synthdata.read_avf(args.visual)
    cfg = dsp.StftConfig()
    try:
        result = model.enhance(mix, visual, mp, cfg)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if args.phase == "pr":
        out_wave = result.waveform
    else:
        m_hat = result.enhanced_magnitude
        if args.phase == "mix":
            _, phase = dsp.split_mag_phase(dsp.stft(mix, cfg))
            out_wave = dsp.istft(dsp.merge_mag_phase(m_hat, phase, cfg))
        elif args.phase == "gl":
            out_wave = dsp.griffin_lim(m_hat, args.gl_iters, cfg)
        else:  # gt
            gt = wavio.read_wav(args.gt_wav)
            if len(gt.samples) != len(mix.samples):
                print(
                    f"error: length mismatch: mixture has {len(mix.samples)} "
                    f"samples, ground truth has {len(gt.samples)}",
                    file=sys.stderr,
                )
                return 2
            _, phase = dsp.split_mag_phase(dsp.stft(gt, cfg))
            out_wave = dsp.istft(dsp.merge_mag_phase(m_hat, phase, cfg))
    wavio.write_wav(args.out, out_wave)
    print(f"wrote {args.out} (phase source: {args.phase})")
    return 0


def cmd_evaluate(args) -> int:
    estimate = wavio.read_wav(args.estimate)
    target = wavio.read_wav(args.target)
    interferers = [wavio.read_wav(p) for p in args.interferers]
    lengths = {len(estimate.samples), len(target.samples)}
    lengths.update(len(i.samples) for i in interferers)
    if len(lengths) != 1:
        print(f"error: input lengths differ: {sorted(lengths)}", file=sys.stderr)
        return 2
    print(f"note: {metrics.PROJECTION_NOTE}", file=sys.stderr)
    result = metrics.bss_eval(estimate, target, interferers)
    header = ["sir_db", "sdr_db", "sar_db", "pesq"]
    row = [f"{result.sir_db:.2f}", f"{result.sdr_db:.2f}", f"{result.sar_db:.2f}", "n/a"]
    if args.stoi:
        header.append("stoi")
        row.append(f"{metrics.stoi(estimate, target):.4f}")
    print("\t".join(header))
    print("\t".join(row))
    return 0


def cmd_report(args) -> int:
    mp = _load_model(args.ckpt)
    if not Path(args.corpus).is_dir():
        print(f"error: corpus directory {args.corpus} does not exist", file=sys.stderr)
        return 1
    corpus = synthdata.Corpus(args.corpus)
    table, first = report.evaluate_testset(
        mp,
        corpus.view("test"),
        n_mixtures=args.mixtures,
        n_interferers=args.interferers,
        seed=args.seed,
        segment_frames=args.segment_frames,
        with_stoi=args.stoi,
    )
    tsv = report.write_report(
        args.out, table, first, args.mixtures, args.interferers, training_log=args.log
    )
    print(tsv.read_text(), end="")
    print(f"report written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avse",
        description="Audio-visual speech enhancement with magnitude and phase refinement",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--speakers", type=int, required=True)
    p.add_argument("--utts", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--visual-dim", type=int, default=32)
    p.add_argument("--frames", type=int, default=100, help="video frames per utterance")
    p.add_argument("--noise-scale", type=float, default=0.05)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("mix", help="mix a reference with 1-4 interferers")
    p.add_argument("--ref", required=True)
    p.add_argument("--noise", required=True, nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("train", help="run the three-phase curriculum")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", default=None, help="metrics log path (default: <out>.log)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="enhance a mixture WAV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--mix", required=True)
    p.add_argument("--visual", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--phase", choices=["pr", "mix", "gl", "gt"], default="pr")
    p.add_argument("--gt-wav", default=None)
    p.add_argument("--gl-iters", type=int, default=100)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("evaluate", help="score an estimate against a target")
    p.add_argument("--estimate", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--interferers", nargs="*", default=[])
    p.add_argument("--stoi", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="variant evaluation table plus figures")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--mixtures", type=int, default=20)
    p.add_argument("--interferers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--segment-frames", type=int, default=60)
    p.add_argument("--stoi", action="store_true")
    p.add_argument("--log", default=None, help="training log to plot")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (
        OSError,
        wavio.WavFormatError,
        checkpoint.CheckpointError,
        synthdata.CorpusError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
