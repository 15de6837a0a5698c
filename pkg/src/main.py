"""Command-line entry point for AutoCycle-VC.

Subcommands: make-corpus, train-se, train-vc, convert, evaluate, ablate.
Exit status is 0 on success, 1 on a usage error and 2 when the run fails.
Every run writes a provenance record next to its outputs.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

from .config import CONFIG_MODELS, dump_config, get_config_path, resolve_config
from .corpus import generate_synthetic_corpus, load_corpus, save_corpus
from .dsp import read_mel, write_mel
from .errors import AutoCycleError
from .evaluation import evaluate_mcd, run_ablation, speaker_probe, write_ablation, write_report
from .provenance import RunRecorder, recorded
from .speaker_encoder import SpeakerEncoderNet, train_speaker_encoder
from .trainer import CHECKPOINT_NAME, LOSS_LOG_NAME, train_vc
from .vc_model import VcNet, convert


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
RUN_RECORD_NAME = "run.json"
SE_CHECKPOINT_NAME = "se.ckpt"
SE_LOG_NAME = "se_log.csv"


class UsageErrorParser(argparse.ArgumentParser):
    """ArgumentParser that exits with EXIT_USAGE on bad arguments."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def configure_logging(level: str, log_file: Optional[str] = None) -> None:
    """Log to stderr at ``level``; optionally mirror everything at DEBUG to a file."""
    logging.basicConfig(level=getattr(logging, level), format=LOG_FORMAT, stream=sys.stderr, force=True)
    if log_file:
        debug_handler = logging.FileHandler(log_file, mode='w')
        debug_handler.setLevel(logging.DEBUG)
        debug_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root_logger = logging.getLogger()
        root_logger.addHandler(debug_handler)
        root_logger.setLevel(logging.DEBUG)
        for handler in root_logger.handlers:
            if handler is not debug_handler:
                handler.setLevel(getattr(logging, level))


def _require(path: str | Path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def _effective_config(command: str, args: argparse.Namespace, overrides: dict[str, Any]):
    if args.seed is not None:
        overrides = {"seed": args.seed, **overrides}
    return resolve_config(CONFIG_MODELS[command], get_config_path(args.config), overrides)


def _load_corpus(args: argparse.Namespace, directory: Path):
    if args.held_out_speakers:
        print(f"Holding out speakers: {', '.join(args.held_out_speakers)}", file=sys.stderr)
    return load_corpus(directory, held_out_speakers=args.held_out_speakers)


def _record_of(args: argparse.Namespace, recorder: RunRecorder) -> RunRecorder:
    return recorder


@recorded(_record_of)
def cmd_make_corpus(args: argparse.Namespace, recorder: RunRecorder) -> None:
    cfg = _effective_config("make-corpus", args, {
        "speakers": args.speakers,
        "utts_per_speaker": args.utts,
        "utt_seconds": args.seconds,
        "groups": args.groups,
        "held_out_speakers": args.held_out,
    })
    recorder.set_config(dump_config(cfg), cfg.seed)

    print(f"Generating {cfg.speakers if not cfg.specs else len(cfg.specs)} speakers x "
          f"{cfg.utts_per_speaker} utterances of {cfg.utt_seconds} s", file=sys.stderr)
    corpus = generate_synthetic_corpus(cfg.speaker_specs(), cfg.utts_per_speaker, cfg.utt_seconds,
                                       cfg.train_ratio, split_seed=cfg.seed, held_out_speakers=cfg.held_out_speakers)
    manifest = save_corpus(corpus, args.out)
    recorder.add_output("manifest", manifest)
    print(f"Corpus written to {args.out} ({len(corpus)} utterances)", file=sys.stderr)


@recorded(_record_of)
def cmd_train_se(args: argparse.Namespace, recorder: RunRecorder) -> None:
    corpus_dir = _require(args.corpus, "Corpus directory")
    cfg = _effective_config("train-se", args, {
        "epochs": args.epochs,
        "lr": args.lr,
        "alpha": args.alpha,
        "batch_size": args.batch_size,
    })
    recorder.set_config(dump_config(cfg), cfg.seed)
    recorder.add_input("corpus", corpus_dir)

    out_dir = Path(args.out)
    ckpt = out_dir / SE_CHECKPOINT_NAME
    print(f"Loading corpus from: {corpus_dir}", file=sys.stderr)
    corpus = _load_corpus(args, corpus_dir)
    _, log = train_speaker_encoder(corpus, cfg, out_path=ckpt, log_path=out_dir / SE_LOG_NAME)

    recorder.add_checkpoint("speaker_encoder", ckpt)
    recorder.add_output("log", out_dir / SE_LOG_NAME)
    recorder.add_summary("training", log.get_summary())
    if len(log):
        last = log.entries[-1]
        print(f"Speaker encoder: held-out accuracy {last['heldout_accuracy']:.3f} after {len(log)} epochs",
              file=sys.stderr)
    print(f"Checkpoint written to {ckpt}", file=sys.stderr)


@recorded(_record_of)
def cmd_train_vc(args: argparse.Namespace, recorder: RunRecorder) -> None:
    corpus_dir = _require(args.corpus, "Corpus directory")
    se_ckpt = _require(args.se, "Speaker encoder checkpoint")
    cfg = _effective_config("train-vc", args, {
        "iterations": args.iterations,
        "lr": args.lr,
        "batch_size": args.batch_size,
        "crop_frames": args.crop_frames,
        "model.bottleneck": args.bottleneck,
    })
    recorder.set_config(dump_config(cfg), cfg.seed)
    recorder.add_input("corpus", corpus_dir)
    recorder.add_checkpoint("speaker_encoder", se_ckpt)

    out_dir = Path(args.out)
    print(f"Loading corpus from: {corpus_dir}", file=sys.stderr)
    corpus = _load_corpus(args, corpus_dir)
    try:
        _, log = train_vc(corpus, se_ckpt, cfg, out_dir)
    finally:
        if (out_dir / CHECKPOINT_NAME).exists():
            recorder.add_checkpoint("vc_model", out_dir / CHECKPOINT_NAME)
    recorder.add_output("loss_log", out_dir / LOSS_LOG_NAME)
    recorder.add_summary("training", log.get_summary())
    print(f"VC training finished: final total loss {log.column('total')[-1]:.4f}", file=sys.stderr)


@recorded(_record_of)
def cmd_convert(args: argparse.Namespace, recorder: RunRecorder) -> None:
    vc_ckpt = _require(args.vc, "VC checkpoint")
    se_ckpt = _require(args.se, "Speaker encoder checkpoint")
    source = _require(args.source, "Source mel")
    target = _require(args.target, "Target mel")
    for name, path in (("vc_model", vc_ckpt), ("speaker_encoder", se_ckpt)):
        recorder.add_checkpoint(name, path)
    recorder.add_input("source", source)
    recorder.add_input("target", target)

    net = VcNet.from_checkpoint(vc_ckpt)
    se = SpeakerEncoderNet.from_checkpoint(se_ckpt)
    source_mel = read_mel(source)
    converted = convert(net, se, source_mel, read_mel(target))
    write_mel(args.out, converted, {"source": str(source), "target": str(target)})
    recorder.add_output("mel", args.out)
    print(f"Converted {source_mel.frames} frames -> {args.out}", file=sys.stderr)


@recorded(_record_of)
def cmd_evaluate(args: argparse.Namespace, recorder: RunRecorder) -> None:
    vc_ckpt = _require(args.vc, "VC checkpoint")
    se_ckpt = _require(args.se, "Speaker encoder checkpoint")
    test_dir = _require(args.test, "Test corpus directory")
    for name, path in (("vc_model", vc_ckpt), ("speaker_encoder", se_ckpt)):
        recorder.add_checkpoint(name, path)
    recorder.add_input("test", test_dir)
    recorder.set_config({
        "probe": args.probe,
        "max_pairs": args.max_pairs,
        "db_scale": args.db_scale,
        "held_out_speakers": list(args.held_out_speakers),
    }, args.seed)

    net = VcNet.from_checkpoint(vc_ckpt)
    se = SpeakerEncoderNet.from_checkpoint(se_ckpt)
    corpus = _load_corpus(args, test_dir)
    report = evaluate_mcd(net, se, corpus, db_scale=args.db_scale)
    if args.probe:
        report.probe_rate = speaker_probe(net, se, corpus, max_pairs=args.max_pairs, seed=args.seed or 0)

    csv_path, text_path = write_report(report, args.report)
    recorder.add_output("report", csv_path)
    recorder.add_output("table", text_path)
    print(text_path.read_text(encoding="utf-8"), file=sys.stderr)


@recorded(_record_of)
def cmd_ablate(args: argparse.Namespace, recorder: RunRecorder) -> None:
    spec_path = _require(args.spec, "Ablation plan")
    overrides: dict[str, Any] = {"spec.max_workers": args.max_workers}
    if args.seed is not None:
        overrides.update({"vc.seed": args.seed, "se.seed": args.seed})
    plan = resolve_config(CONFIG_MODELS["ablate"], str(spec_path), overrides)
    recorder.set_config(dump_config(plan), plan.vc.seed)
    recorder.add_input("plan", spec_path)

    corpus_dir = Path(plan.corpus)
    if not corpus_dir.is_absolute():
        corpus_dir = spec_path.parent / corpus_dir
    corpus = load_corpus(_require(corpus_dir, "Corpus directory"))
    recorder.add_input("corpus", corpus_dir)

    out_dir = Path(args.out)
    cells = run_ablation(corpus, plan.spec, plan.vc, plan.se, out_dir=out_dir / "cells")
    csv_path, text_path = write_ablation(cells, out_dir)
    recorder.add_output("table", text_path)
    recorder.add_output("csv", csv_path)
    print(text_path.read_text(encoding="utf-8"), file=sys.stderr)


def _record_path(args: argparse.Namespace) -> Path:
    """``run.json`` inside output directories, ``<file>.run.json`` next to output files."""
    if args.command in ("convert", "evaluate"):
        out_file = Path(args.out if args.command == "convert" else args.report)
        return out_file.with_name(out_file.name + ".run.json")
    return Path(args.out) / RUN_RECORD_NAME


HANDLERS = {
    "make-corpus": cmd_make_corpus,
    "train-se": cmd_train_se,
    "train-vc": cmd_train_vc,
    "convert": cmd_convert,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
}


def build_parser() -> UsageErrorParser:
    """Parser with one subcommand per workflow step; global flags go after the subcommand."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="Global seed (overrides config files)")
    common.add_argument("--config", default=None, help="JSON config file (default: $AUTOCYCLE_CONFIG)")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common.add_argument("--log-file", default=None, help="Also write a DEBUG log to this file")

    held_out = argparse.ArgumentParser(add_help=False)
    held_out.add_argument("--held-out-speakers", nargs="+", default=[], metavar="SPEAKER",
                          help="Treat these speakers as unseen: excluded from training, scored as a2a")

    parser = UsageErrorParser(
        prog="autocycle-vc",
        description="AutoCycle-VC - zero-shot voice conversion with cycle-consistent training",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version="autocycle-vc 0.1.0")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("make-corpus", parents=[common], help="Generate a synthetic multi-speaker corpus")
    p.add_argument("--speakers", type=int, default=None)
    p.add_argument("--utts", type=int, default=None, help="Utterances per speaker")
    p.add_argument("--seconds", type=float, default=None, help="Utterance length in seconds")
    p.add_argument("--groups", type=int, default=None, help="Accent groups")
    p.add_argument("--held-out", type=int, default=None, help="Trailing speakers kept out of training (unseen split)")
    p.add_argument("--out", required=True, help="Corpus directory to create")

    p = sub.add_parser("train-se", parents=[common, held_out], help="Train the speaker encoder")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="Output directory")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None, help="Label smoothing strength")
    p.add_argument("--batch-size", type=int, default=None)

    p = sub.add_parser("train-vc", parents=[common, held_out], help="Train the conversion network")
    p.add_argument("--corpus", required=True)
    p.add_argument("--se", required=True, help="Speaker encoder checkpoint")
    p.add_argument("--out", required=True, help="Output directory")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--crop-frames", type=int, default=None)
    p.add_argument("--bottleneck", type=int, default=None)

    p = sub.add_parser("convert", parents=[common], help="Convert one mel-spectrogram")
    p.add_argument("--vc", required=True)
    p.add_argument("--se", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True, help="Output mel file")

    p = sub.add_parser("evaluate", parents=[common, held_out], help="MCD report on a corpus test split")
    p.add_argument("--vc", required=True)
    p.add_argument("--se", required=True)
    p.add_argument("--test", required=True, help="Corpus directory")
    p.add_argument("--report", required=True, help="Report CSV path (table goes to <report>.txt)")
    p.add_argument("--probe", action="store_true", help="Also run the speaker-embedding probe")
    p.add_argument("--max-pairs", type=int, default=200)
    p.add_argument("--db-scale", action="store_true", help="Scale MCD to dB")

    p = sub.add_parser("ablate", parents=[common], help="Bottleneck x component ablation grid")
    p.add_argument("--spec", required=True, help="Ablation plan file")
    p.add_argument("--out", required=True, help="Output directory")
    p.add_argument("--max-workers", type=int, default=None)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand and return the process exit status."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    configure_logging(args.log_level, args.log_file)
    recorder = RunRecorder(_record_path(args), args.command, argv)

    try:
        HANDLERS[args.command](args, recorder)
    except (AutoCycleError, FileNotFoundError, ValueError, OSError) as e:
        logger.debug("Run failed", exc_info=True)
        print(f"\nERROR: {e}", file=sys.stderr)
        return EXIT_FAILURE
    except Exception as e:
        logger.error(f"Unexpected failure: {e}", exc_info=True)
        print(f"\nERROR: {e}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
