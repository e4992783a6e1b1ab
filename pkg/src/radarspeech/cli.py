"""Command-line entry point: simulate, train, infer, eval, plot.

One binary in subcommand style. A JSON config file plus --set overrides feed
a single RunConfig (flags win over the file; R2S_SEED overrides the config
seed, an explicit --seed wins over both). Every command writes the resolved
config snapshot next to its outputs and exits 0 only if all outputs were
written; failures print one machine-parsable line to stderr.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import config as run_config
from . import dsp, metrics, model, plots, simulate

PROG = "radarspeech"


def _common_options() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="FILE",
                   help="JSON config file; keys listed in the top-level --help")
    p.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                   dest="overrides", help="override one config key (repeatable, wins over --config)")
    p.add_argument("--seed", type=int, help="master seed (wins over R2S_SEED and the config file)")
    p.add_argument("--threads", type=int, help="worker cap for parallel sections")
    p.add_argument("--force", action="store_true",
                   help="allow writing into an existing non-empty directory")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(
        prog=PROG,
        description="Simulate a radar-observed loudspeaker, train the recovery "
                    "network, and evaluate recovered speech.",
        epilog=run_config.schema_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("simulate", parents=[common],
                       help="generate source clips and build a paired RF corpus")
    p.add_argument("out_dir", nargs="?", default=None,
                   help="corpus root (default: paths.corpus_dir)")
    p.add_argument("--speech-dir", help="pair existing WAV clips instead of synthesizing")
    p.add_argument("--clips", type=int, help="shorthand for --set simulate.n_clips=N")

    p = sub.add_parser("train", parents=[common],
                       help="run SGD on a corpus, writing checkpoints and a loss CSV")
    p.add_argument("corpus_dir", nargs="?", default=None,
                   help="corpus root (default: paths.corpus_dir)")
    p.add_argument("--out", help="output dir (default: paths.run_dir)")
    p.add_argument("--steps", type=int, help="shorthand for --set train.steps=N")
    p.add_argument("--lr", type=float, help="shorthand for --set train.lr=F")
    p.add_argument("--resume", metavar="CKPT", help="continue from a saved checkpoint")

    p = sub.add_parser("infer", parents=[common],
                       help="recover a Mel dump and a synthesized WAV from one RF trace")
    p.add_argument("trace", help="RF trace WAV at 5100 Hz")
    p.add_argument("--checkpoint", help="trained checkpoint (default: <paths.run_dir>/ckpt_final.bin)")
    p.add_argument("--out", help="output dir (default: paths.out_dir)")
    p.add_argument("--variant", help="shorthand for --set infer.variant=NAME")

    p = sub.add_parser("eval", parents=[common],
                       help="score every test clip and write an evaluation report")
    p.add_argument("corpus_dir", nargs="?", default=None,
                   help="corpus root (default: paths.corpus_dir)")
    p.add_argument("--checkpoint", help="trained checkpoint (default: <paths.run_dir>/ckpt_final.bin)")
    p.add_argument("--out", help="output dir (default: paths.out_dir)")
    p.add_argument("--variants", help="comma list, shorthand for --set eval.variants=...")
    p.add_argument("--griffin-lim-iters", type=int,
                   help="shorthand for --set eval.griffin_lim_iters=N")

    p = sub.add_parser("plot", parents=[common],
                       help="render a Mel dump heatmap or a loss-CSV curve to PNG")
    p.add_argument("input", help="Mel dump (.bin) or loss CSV (.csv)")
    p.add_argument("--out", help="output PNG path (default: input with .png suffix)")
    p.add_argument("--scale", type=int, default=plots.DEFAULT_SCALE,
                   help="heatmap pixels per matrix cell (image is bands*scale x frames*scale)")

    return parser


def resolve_config(args) -> run_config.RunConfig:
    """Merge defaults, config file, R2S_SEED, --set overrides, then flags."""
    cfg = run_config.RunConfig.from_file(args.config) if args.config else run_config.RunConfig()
    env_seed = os.environ.get("R2S_SEED")
    if env_seed is not None:
        try:
            cfg.set("seed", int(env_seed))
        except ValueError:
            raise ValueError("R2S_SEED must be an integer, got %r" % env_seed)
    for item in args.overrides:
        key, sep, text = item.partition("=")
        if not sep:
            raise ValueError("--set expects KEY=VALUE, got %r" % item)
        cfg.set_text(key.strip(), text)
    if args.seed is not None:
        cfg.set("seed", args.seed)
    if args.threads is not None:
        cfg.set("threads", args.threads)
    return cfg


def _prepare_out_dir(path, force: bool) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not force:
        raise ValueError("output dir %s is not empty (pass --force to overwrite)" % out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_manifest(corpus_dir) -> Path:
    corpus = Path(corpus_dir)
    manifest = corpus / "manifest.json"
    if not manifest.exists():
        raise ValueError("missing corpus manifest %s (run `%s simulate` first)"
                         % (manifest, PROG))
    return corpus


def _load_state(path) -> model.TrainingState:
    ckpt = Path(path)
    if not ckpt.exists():
        raise ValueError("missing checkpoint %s (run `%s train` first)" % (ckpt, PROG))
    sidecar = Path(str(ckpt) + model.STATE_SUFFIX)
    if not sidecar.exists():
        raise ValueError("missing checkpoint sidecar %s" % sidecar)
    return model.TrainingState.load(str(ckpt))


def _default_checkpoint(cfg: run_config.RunConfig, flag) -> Path:
    return Path(flag) if flag else Path(cfg.get("paths.run_dir")) / "ckpt_final.bin"


def cmd_simulate(cfg: run_config.RunConfig, args) -> int:
    out = _prepare_out_dir(args.out_dir or cfg.get("paths.corpus_dir"), args.force)
    if args.clips is not None:
        cfg.set("simulate.n_clips", args.clips)
    seed = cfg.get("seed")
    if args.speech_dir:
        speech_dir = Path(args.speech_dir)
    else:
        speech_dir = out / "source"
        simulate.generate_source_clips(
            speech_dir, cfg.get("simulate.n_clips"), seed,
            min_duration_s=cfg.get("simulate.min_duration_s"),
            max_duration_s=cfg.get("simulate.max_duration_s"),
        )
    manifest = simulate.build_corpus(
        speech_dir, out, cfg.radar_config(),
        train_fraction=cfg.get("simulate.train_fraction"),
        threads=cfg.get("threads"),
    )
    cfg.snapshot(out / "config.json")
    clips = manifest["clips"]
    durations = [c["duration_s"] for c in clips]
    n_train = sum(1 for c in clips if c["split"] == "train")
    print("wrote %d clips to %s: %d train / %d test, durations %.2f-%.2f s, total %.1f s"
          % (len(clips), out, n_train, len(clips) - n_train,
             min(durations), max(durations), sum(durations)))
    return 0


def cmd_train(cfg: run_config.RunConfig, args) -> int:
    corpus = _require_manifest(args.corpus_dir or cfg.get("paths.corpus_dir"))
    if args.steps is not None:
        cfg.set("train.steps", args.steps)
    if args.lr is not None:
        cfg.set("train.lr", args.lr)
    resume = _load_state(args.resume) if args.resume else None
    out_dir = Path(args.out) if args.out else Path(cfg.get("paths.run_dir"))
    if resume is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    else:
        out_dir = _prepare_out_dir(out_dir, args.force)
    state = model.train(
        str(corpus), str(out_dir), cfg.net_config(),
        steps=cfg.get("train.steps"), lr=cfg.get("train.lr"), seed=cfg.get("seed"),
        checkpoint_every=cfg.get("train.checkpoint_every"), resume=resume,
    )
    cfg.snapshot(out_dir / "config.json")
    _, losses = plots.read_loss_csv(out_dir / "loss.csv")
    print("trained to step %d: l1 loss %.6f -> %.6f, artifacts in %s"
          % (state.step, losses[0], losses[-1], out_dir))
    return 0


def cmd_infer(cfg: run_config.RunConfig, args) -> int:
    state = _load_state(_default_checkpoint(cfg, args.checkpoint))
    trace_path = Path(args.trace)
    if not trace_path.exists():
        raise ValueError("missing trace %s" % trace_path)
    if args.variant is not None:
        cfg.set("infer.variant", args.variant)
    variant = cfg.get("infer.variant")
    if variant not in metrics.VARIANTS:
        raise ValueError("unknown variant %r (choose from %s)"
                         % (variant, ", ".join(metrics.VARIANTS)))
    out = _prepare_out_dir(args.out or cfg.get("paths.out_dir"), args.force)

    rf = dsp.wav_read(trace_path)
    mel = model.infer_mel(state, rf)
    rf8k = dsp.resample_cubic_spline(rf, int(dsp.MEL_RATE_HZ))
    wave = metrics.synthesize(variant, state, rf, rf8k, mel,
                              cfg.get("eval.griffin_lim_iters"))
    mel_path = out / ("%s.mel.bin" % trace_path.stem)
    wav_path = out / ("%s.%s.wav" % (trace_path.stem, variant))
    dsp.mel_dump_write(mel_path, mel.values)
    dsp.wav_write(wav_path, wave)
    cfg.snapshot(out / "config.json")
    print("wrote %s (%dx%d) and %s (%.2f s at %d Hz)"
          % (mel_path, mel.values.shape[0], mel.values.shape[1],
             wav_path, wave.duration_s, int(wave.sample_rate_hz)))
    return 0


def cmd_eval(cfg: run_config.RunConfig, args) -> int:
    corpus = _require_manifest(args.corpus_dir or cfg.get("paths.corpus_dir"))
    state = _load_state(_default_checkpoint(cfg, args.checkpoint))
    if args.variants:
        cfg.set_text("eval.variants", args.variants)
    if args.griffin_lim_iters is not None:
        cfg.set("eval.griffin_lim_iters", args.griffin_lim_iters)
    out = _prepare_out_dir(args.out or cfg.get("paths.out_dir"), args.force)
    report = metrics.evaluate(
        str(corpus), state, variants=tuple(cfg.get("eval.variants")),
        griffin_lim_iters=cfg.get("eval.griffin_lim_iters"), threads=cfg.get("threads"),
    )
    report.write_json(out / "report.json")
    report.write_csv(out / "report.csv")
    cfg.snapshot(out / "config.json")
    for name in sorted(report.variants):
        r = report.variants[name]
        print("%-20s  lsd %.4f +/- %.4f   stoi %.4f +/- %.4f"
              % (name, r.lsd_mean, r.lsd_std, r.stoi_mean, r.stoi_std))
    print("evaluated %d test clips, report in %s" % (report.n_clips, out))
    return 0


def cmd_plot(cfg: run_config.RunConfig, args) -> int:
    src = Path(args.input)
    if not src.exists():
        raise ValueError("missing input %s" % src)
    out_path = Path(args.out) if args.out else src.with_suffix(".png")
    if src.suffix == ".csv":
        h, w = plots.loss_curve(src, out_path)
    else:
        h, w = plots.mel_heatmap(dsp.mel_dump_read(src), out_path, scale=args.scale)
    # named per output so it cannot clobber another command's config.json
    cfg.snapshot(out_path.parent / (out_path.stem + ".config.json"))
    print("wrote %s (%dx%d px)" % (out_path, w, h))
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except Exception as exc:  # contract: single-line machine-parsable failure
        message = " ".join(str(exc).split()) or exc.__class__.__name__
        print("%s: error: %s" % (PROG, message), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
