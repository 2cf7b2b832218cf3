"""
Command-line interface: synth, ingest, stats, train-rvq, train-gen, generate, evaluate.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import os
import sys
from collections.abc import Sequence
from typing import NoReturn

from dotenv import load_dotenv
from loguru import logger
from pydantic import ValidationError as PydanticValidationError
from rich.console import Console
from rich.markup import escape
from rich.table import Table

from topomotion.exceptions import (
    CheckpointError,
    ConfigurationError,
    DataFormatError,
    NumericalError,
    ParseError,
    TopoMotionError,
    ValidationError,
)
from topomotion.models.config import RunConfig
from topomotion.models.motion import Corpus, CorpusEntry, Split, TextRecord
from topomotion.models.report import EpochLoss
from topomotion.models.skeleton import SkeletonGraph
from topomotion.motion.corpus import load_corpus, save_corpus
from topomotion.pipeline import Pipeline
from topomotion.services.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from topomotion.skeleton.bvh import export_bvh, parse_bvh
from topomotion.skeleton.graph import with_default_channels
from topomotion.skeleton.interchange import load_skeleton_json
from topomotion.utils.io import IOError, build_path, read_text, write_model, write_text

load_dotenv()

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

console = Console()
err_console = Console(stderr=True)


class UsageError(Exception):
    """Raised by the argument parser instead of exiting."""
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        raise UsageError(f"{self.prog}: {message}")


def exit_code_for(e: Exception) -> int:
    """Map an exception to the process exit code."""
    if isinstance(e, (UsageError, ConfigurationError, PydanticValidationError)):
        return EXIT_USAGE
    if isinstance(e, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(e, (ValidationError, ParseError, DataFormatError, CheckpointError, IOError, OSError)):
        return EXIT_DATA
    return EXIT_DATA if isinstance(e, TopoMotionError) else EXIT_USAGE


def get_user_friendly_error(e: Exception) -> str:
    if isinstance(e, CheckpointError):
        return f"Checkpoint problem: {e}"
    if isinstance(e, ParseError):
        return f"Could not parse BVH ({e})"
    if isinstance(e, NumericalError):
        return f"Numerical failure: {e}"
    return str(e)


def _stats_table(corpus: Corpus, title: str) -> Table:
    table = Table(title=title)
    table.add_column("Species")
    table.add_column("Sequences", justify="right")
    table.add_column("Frames", justify="right")
    table.add_column("Avg joints", justify="right")
    rows = corpus.stats()
    for row in rows:
        table.add_row(row.species, str(row.sequences), str(row.frames), f"{row.avg_joints:.1f}")
    total_frames = sum(r.frames for r in rows)
    sequences = sum(r.sequences for r in rows)
    avg_len = total_frames / sequences if sequences else 0.0
    table.add_row(
        "[bold]total[/bold]", str(sequences), str(total_frames), f"avg length {avg_len:.1f}", end_section=True,
    )
    return table


def _load_config(args: argparse.Namespace) -> RunConfig:
    train = {}
    if getattr(args, 'seed', None) is not None:
        train['seed'] = args.seed
    if getattr(args, 'epochs', None) is not None:
        train[args.epochs_field] = args.epochs
    if getattr(args, 'batch_size', None) is not None:
        train['batch_size'] = args.batch_size
    return Pipeline.load_config(args.config, {'train': train} if train else None)


def _loss_csv_path(checkpoint_path: str) -> str:
    return os.path.splitext(checkpoint_path)[0] + '.loss.csv'


def _load_skeleton(path: str) -> SkeletonGraph:
    if path.lower().endswith('.bvh'):
        skeleton, _ = parse_bvh(read_text(path), name=os.path.splitext(os.path.basename(path))[0])
        return skeleton
    return load_skeleton_json(path)


def cmd_synth(args: argparse.Namespace) -> int:
    pipeline = Pipeline(_load_config(args))
    corpus = pipeline.synth(
        args.seed,
        args.species,
        args.per,
        joint_range=tuple(args.joints),
        frame_range=tuple(args.frames),
        test_ratio=args.test_ratio,
    )
    checksum = save_corpus(corpus, build_path(args.out))
    console.print(_stats_table(corpus, f"Synthetic corpus ({len(corpus.entries)} entries)"))
    console.print(f"Wrote {escape(args.out)} (sha256 {checksum})")
    return EXIT_OK


def cmd_ingest(args: argparse.Namespace) -> int:
    pipeline = Pipeline(_load_config(args))
    corpus, report = pipeline.ingest(args.paths, resample=args.resample, species=args.species)
    report_path = args.report or os.path.splitext(args.out)[0] + '.report.json'
    write_model(report, build_path(report_path))
    for rejected in report.rejected:
        err_console.print(f"[yellow]rejected[/yellow] {escape(rejected.path)}: {escape(rejected.reason)}")
    if not corpus.entries:
        raise ValidationError(f"No input file was accepted; see {report_path}")
    save_corpus(corpus, build_path(args.out))
    console.print(_stats_table(corpus, f"Ingested corpus ({len(corpus.entries)} entries)"))
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus, enforce_frame_bounds=False)
    console.print(_stats_table(corpus, os.path.basename(args.corpus)))
    splits = {split.value: len(corpus.by_split(split)) for split in Split}
    console.print(f"Splits: {splits}; skeletons: {len(corpus.skeletons)}")
    return EXIT_OK


def _report_progress(stage: str, epoch: int, total: int) -> None:
    if epoch == total or epoch % 50 == 0:
        logger.info(f"{stage}: {epoch}/{total} epochs")


def _finish_training(checkpoint: Checkpoint, history: list[EpochLoss], out: str) -> None:
    save_checkpoint(checkpoint, build_path(out))
    Pipeline.write_loss_csv(history, _loss_csv_path(out))
    if history:
        console.print(f"Final loss {history[-1].loss:.6f} after {len(history)} epochs; wrote {escape(out)}")


def cmd_train_rvq(args: argparse.Namespace) -> int:
    args.epochs_field = 'rvq_epochs'
    checkpoint = None
    if args.resume:
        if not os.path.exists(args.out):
            raise CheckpointError(f"--resume given but no checkpoint exists at {args.out}")
        checkpoint = load_checkpoint(args.out)
        config = checkpoint.config
        if args.epochs is not None:
            config.train.rvq_epochs = args.epochs
    else:
        config = _load_config(args)
    pipeline = Pipeline(config)
    corpus = load_corpus(args.corpus)
    checkpoint = pipeline.train_rvq(corpus, checkpoint, progress_callback=_report_progress)
    _finish_training(checkpoint, checkpoint.history['rvq'], args.out)
    return EXIT_OK


def cmd_train_gen(args: argparse.Namespace) -> int:
    args.epochs_field = 'gen_epochs'
    if args.resume:
        if not os.path.exists(args.out):
            raise CheckpointError(f"--resume given but no checkpoint exists at {args.out}")
        checkpoint = load_checkpoint(args.out)
        if args.epochs is not None:
            checkpoint.config.train.gen_epochs = args.epochs
    else:
        if not args.rvq or not os.path.exists(args.rvq):
            raise CheckpointError(
                f"RVQ checkpoint {args.rvq!r} not found; run 'topomotion train-rvq' first and pass it with --rvq"
            )
        checkpoint = load_checkpoint(args.rvq)
        checkpoint.require_rvq()
        config = _load_config(args)
        checkpoint.config = config.model_copy(update={'rvq': checkpoint.config.rvq})
        checkpoint.reset_generator()
    pipeline = Pipeline(checkpoint.config)
    corpus = load_corpus(args.corpus)
    checkpoint = pipeline.train_generator(corpus, checkpoint, progress_callback=_report_progress)
    _finish_training(checkpoint, checkpoint.history['generator'], args.out)
    return EXIT_OK


def cmd_generate(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    pipeline = Pipeline(checkpoint.config)
    skeleton = _load_skeleton(args.skeleton)
    result = pipeline.generate(checkpoint, args.text, skeleton, args.frames, args.seed, args.cfg_scale)
    motion = result.motion
    out = build_path(args.output)
    if args.out == 'bvh':
        write_text(export_bvh(with_default_channels(skeleton), motion), out)
    elif args.out == 'json':
        write_model(motion, out)
    else:
        entry = CorpusEntry(
            skeleton=skeleton.name,
            motion=motion,
            text=TextRecord(summary=args.text, species_tag=skeleton.species),
            split=Split.TEST,
        )
        save_corpus(Corpus(skeletons={skeleton.name: skeleton}, entries=[entry]), out)
    console.print(f"Generated {motion.num_frames} frames x {motion.num_joints} joints -> {escape(args.output)}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    config = checkpoint.config
    if args.seed is not None:
        config.metrics.seed = args.seed
    if args.shrinkage:
        config.metrics.shrinkage = True
    pipeline = Pipeline(config)
    corpus = load_corpus(args.corpus)
    report = pipeline.evaluate(
        checkpoint,
        corpus,
        cfg_scale=args.cfg_scale,
        use_skeleton_embed=False if args.no_skeleton_embed else None,
        use_motion_summary=False if args.no_motion_summary else None,
    )
    write_model(report, build_path(args.out))

    table = Table(title="Evaluation")
    table.add_column("Metric")
    table.add_column("Value", justify="right")
    for name, value in [
        ("FID", report.fid),
        ("FID real/real", report.fid_real_vs_real),
        ("FID random/real", report.fid_random_vs_real),
        ("Diversity", report.diversity),
        ("MatchingScore", report.matching_score),
        ("MultiModality", report.multimodality),
        ("R@1", report.r_at[1]),
        ("R@2", report.r_at[2]),
        ("R@3", report.r_at[3]),
        ("Masked-token accuracy", report.masked_token_accuracy),
    ]:
        table.add_row(name, "n/a" if value is None else f"{value:.4f}")
    console.print(table)

    if args.ablation_seeds:
        seeds = [config.metrics.seed + i for i in range(args.ablation_seeds)]
        ablation = pipeline.skeleton_ablation(corpus, seeds, checkpoint)
        ablation_path = os.path.splitext(args.out)[0] + '.ablation.json'
        write_model(ablation, build_path(ablation_path))
        console.print(
            f"Skeleton-embedding ablation over {len(seeds)} seeds: mean accuracy gain "
            f"{ablation.mean_difference:.4f}, p={ablation.p_value} -> {escape(ablation_path)}"
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog='topomotion', description="Topology-agnostic text-to-motion toolkit")
    parser.add_argument('--config', help="Run-config JSON (default: $TOPOMOTION_CONFIG)")
    commands = parser.add_subparsers(dest='command', required=True, parser_class=_Parser)

    synth = commands.add_parser('synth', help="Synthesize a corpus")
    synth.add_argument('--seed', type=int, default=0)
    synth.add_argument('--species', type=int, default=10)
    synth.add_argument('--per', type=int, default=10, help="Sequences per species")
    synth.add_argument('--joints', type=int, nargs=2, default=[8, 24], metavar=('MIN', 'MAX'))
    synth.add_argument('--frames', type=int, nargs=2, default=[40, 120], metavar=('MIN', 'MAX'))
    synth.add_argument('--test-ratio', type=float, default=0.05)
    synth.add_argument('--out', required=True)
    synth.set_defaults(handler=cmd_synth)

    ingest = commands.add_parser('ingest', help="Ingest BVH files into a corpus")
    ingest.add_argument('paths', nargs='+')
    ingest.add_argument('--out', required=True)
    ingest.add_argument('--resample', action='store_true', help="Resample sequences outside [20, 240] frames")
    ingest.add_argument('--species', help="Species tag when no sidecar JSON names one")
    ingest.add_argument('--report', help="Ingest report path (default: <out>.report.json)")
    ingest.add_argument('--seed', type=int)
    ingest.set_defaults(handler=cmd_ingest)

    stats = commands.add_parser('stats', help="Print corpus statistics")
    stats.add_argument('corpus')
    stats.set_defaults(handler=cmd_stats)

    for name, handler, help_text in [
        ('train-rvq', cmd_train_rvq, "Train the residual VQ-VAE"),
        ('train-gen', cmd_train_gen, "Train the masked and residual transformers"),
    ]:
        train = commands.add_parser(name, help=help_text)
        train.add_argument('--corpus', required=True)
        train.add_argument('--out', required=True, help="Checkpoint to write")
        train.add_argument('--epochs', type=int)
        train.add_argument('--batch-size', type=int)
        train.add_argument('--seed', type=int)
        train.add_argument('--resume', action='store_true', help="Continue training the checkpoint at --out")
        if name == 'train-gen':
            train.add_argument('--rvq', help="Checkpoint holding the trained RVQ model")
        train.set_defaults(handler=handler)

    generate = commands.add_parser('generate', help="Generate a motion from text")
    generate.add_argument('--checkpoint', required=True)
    generate.add_argument('--text', required=True)
    generate.add_argument('--skeleton', required=True, help="Skeleton JSON or BVH file")
    generate.add_argument('--frames', type=int, required=True)
    generate.add_argument('--seed', type=int, default=0)
    generate.add_argument('--cfg-scale', type=float)
    generate.add_argument('--out', choices=('bvh', 'corpus', 'json'), default='bvh', help="Output format")
    generate.add_argument('--output', required=True, help="Output file")
    generate.set_defaults(handler=cmd_generate)

    evaluate = commands.add_parser('evaluate', help="Compute the metric report")
    evaluate.add_argument('--checkpoint', required=True)
    evaluate.add_argument('--corpus', required=True)
    evaluate.add_argument('--out', required=True, help="MetricReport JSON path")
    evaluate.add_argument('--seed', type=int)
    evaluate.add_argument('--cfg-scale', type=float)
    evaluate.add_argument('--shrinkage', action='store_true')
    evaluate.add_argument('--no-skeleton-embed', action='store_true')
    evaluate.add_argument('--no-motion-summary', action='store_true')
    evaluate.add_argument('--ablation-seeds', type=int, default=0)
    evaluate.set_defaults(handler=cmd_evaluate)
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    """Parse arguments, dispatch, and return the exit code."""
    try:
        args = build_parser().parse_args(argv)
        return args.handler(args)
    except UsageError as e:
        err_console.print(f"[red]Usage error:[/red] {escape(str(e))}")
        return EXIT_USAGE
    except (TopoMotionError, PydanticValidationError, OSError) as e:
        err_console.print(f"[red]Error:[/red] {escape(get_user_friendly_error(e))}")
        return exit_code_for(e)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
