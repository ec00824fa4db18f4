#!/usr/bin/env python3
"""
Hybrid wavelet tokenizer for Transformer activity recognition.

Trains and evaluates a small Transformer encoder on UCI-HAR raw inertial
windows whose patch tokens carry GeM-pooled wavelet packet features, and
runs the ablation matrix around it.

Usage:
    python main.py verify-data [--data-root DIR] [--archive ZIP [--sha256 HEX]]
    python main.py train [--config FILE] [--variant NAME] [options]
    python main.py ablate [--config FILE] [--jobs N] [options]
    python main.py eval --checkpoint FILE [--data-root DIR]
    python main.py report --runs FILE [--output DIR]

Examples:
    python main.py verify-data --data-root "./UCI HAR Dataset"
    python main.py train --config configs/champion.json
    python main.py train --variant baseline --seeds 0 --epochs 1
    python main.py ablate --jobs 4 --output runs/ablation
    python main.py eval --checkpoint runs/checkpoints/hybrid-L3-db2-gem-seed0.json

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric failure.
"""
import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import autodiff as ad
from artifacts import atomic_write_text, guard_overwrite, read_jsonl, write_json, write_jsonl
from classifier import expected_parameter_count, load_checkpoint
from config_loader import apply_overrides, load_config, save_config
from data_validator import verify_dataset
from errors import HiWaveError
from experiment import run_experiment, summarize
from har_loader import (
    ACTIVITY_LABELS, ChannelStats, extract_archive, load_split, prepare_splits,
    resolve_data_root, standardize,
)
from models import ExperimentConfig, ExperimentSummary, RunRecord, VariantSpec
from report_generator import FAIL, ReportGenerator, p_values_payload
from trainer import evaluate
from variant_mappings import all_variants, get_variant, variant_name

logger = logging.getLogger("hiwave")


class CliParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with code 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


# -- shared helpers ----------------------------------------------------------

def effective_config(args) -> ExperimentConfig:
    """Config file (or defaults) with command-line flags applied on top."""
    cfg = load_config(args.config)
    cfg = apply_overrides(cfg, {
        "data.root": args.data_root,
        "data.standardize": False if args.no_standardize else None,
        "data.cache": args.cache,
        "tokenizer.gem_init": args.gem_init,
        "model.dropout": args.dropout,
        "train.epochs": args.epochs,
        "train.lr": args.lr,
        "train.batch_size": args.batch_size,
        "train.weight_decay": args.weight_decay,
        "train.seeds": args.seeds,
        "train.clip": args.clip,
        "train.selection": args.selection,
        "output.dir": args.output,
    })
    cfg.validate()
    return cfg


def load_training_data(cfg: ExperimentConfig):
    root = resolve_data_root(cfg.data.root)
    print(f"Loading UCI-HAR from: {root}")
    train, test = prepare_splits(root, cfg.data.standardize, cfg.data.cache)
    print(f"  - train windows: {len(train)}")
    print(f"  - test windows: {len(test)}")
    return train, test


def summary_line(summary: ExperimentSummary) -> List[str]:
    return [
        f"{row.variant}: {row.mean_acc:.4f} ± {row.std_acc:.4f} over {row.n_seeds} seed(s)"
        for row in summary.rows
    ]


def print_banner(title: str) -> None:
    print("\n" + "=" * 60)
    print(title)
    print("=" * 60)


# -- commands ----------------------------------------------------------------

def cmd_verify_data(args) -> int:
    """Check (and optionally unpack) the dataset; exit 0 only when it is valid."""
    if args.archive:
        dest = Path(args.dest or args.data_root or ".")
        print(f"Extracting {args.archive} to: {dest}")
        root = extract_archive(Path(args.archive), dest, args.sha256)
    else:
        root = resolve_data_root(args.data_root)

    print(f"Verifying dataset in: {root}")
    report = verify_dataset(root)
    for check in report.checks:
        status = "ok" if check.passed else "FAILED"
        print(f"  - {check.name}: {status}" + (f" ({check.detail})" if check.detail else ""))
    for split, counts in report.class_counts.items():
        print(f"  - {split} per class: " + ", ".join(f"{name}={n}" for name, n in zip(ACTIVITY_LABELS, counts)))
    print(report.summary_line())
    return 0 if report.passed else 2


def cmd_train(args) -> int:
    """Train one variant over every configured seed."""
    cfg = effective_config(args)
    if args.variant:
        variant = get_variant(args.variant, cfg.model, base=cfg.tokenizer)
        cfg = replace(cfg, tokenizer=variant.tokenizer)
    else:
        variant = VariantSpec(name=variant_name(cfg.tokenizer), tokenizer=cfg.tokenizer, model=cfg.model)

    out = Path(cfg.output.dir)
    runs_path = out / "runs.jsonl"
    guard_overwrite([runs_path, out / "config.json", out / "p_values.json"], args.force)

    param_count = expected_parameter_count(variant.model, variant.tokenizer.token_dim,
                                           variant.tokenizer.pooling_param_count)
    print(f"Variant: {variant.name}")
    print(f"param_count={param_count} ({param_count:,} trainable parameters)")
    print(f"Seeds: {', '.join(str(s) for s in cfg.train.seeds)}")

    data = load_training_data(cfg)
    save_config(cfg, out / "config.json")
    summary = run_experiment([variant], cfg.train, data, checkpoint_dir=out / "checkpoints")

    write_jsonl(runs_path, [record.to_dict() for record in summary.records])
    write_json(out / "p_values.json", p_values_payload(summary.records))

    print_banner("SUMMARY")
    for line in summary_line(summary):
        print(line)
    print(f"\nRun records: {runs_path}")
    return 0


def cmd_ablate(args) -> int:
    """Run the full variant matrix and write tables plus the Markdown report."""
    cfg = effective_config(args)
    names = args.variants or all_variants()
    variants = [get_variant(name, cfg.model, base=cfg.tokenizer) for name in names]

    out = Path(cfg.output.dir)
    report = ReportGenerator(str(out))
    manifest = out / "variants.json"
    guard_overwrite([out / "runs.jsonl", out / "config.json", manifest] + list(report.paths.values()), args.force)

    print(f"Variants: {len(variants)} x {len(cfg.train.seeds)} seed(s), jobs={args.jobs}")
    data = load_training_data(cfg)
    save_config(cfg, out / "config.json")
    write_json(manifest, {"variants": list(names), "seeds": list(cfg.train.seeds), "jobs": args.jobs})
    summary = run_experiment(variants, cfg.train, data, jobs=args.jobs, checkpoint_dir=out / "checkpoints")

    write_jsonl(out / "runs.jsonl", [record.to_dict() for record in summary.records])
    return _finish_report(report, summary)


def cmd_report(args) -> int:
    """Rebuild summary tables and the report from an existing runs.jsonl."""
    runs_path = Path(args.runs)
    out = Path(args.output) if args.output else runs_path.parent
    records = [RunRecord.from_dict(row) for row in read_jsonl(runs_path)]
    if not records:
        print(f"No run records in {runs_path}")
        return 1
    report = ReportGenerator(str(out))
    guard_overwrite(report.paths.values(), args.force)
    print(f"Loaded {len(records)} run record(s) from: {runs_path}")
    manifest = runs_path.with_name("variants.json")
    known = json.loads(manifest.read_text())["variants"] if manifest.exists() else all_variants()
    order = [name for name in known if any(r.variant == name for r in records)]
    return _finish_report(report, summarize(records, order=order))


def _finish_report(report: ReportGenerator, summary: ExperimentSummary) -> int:
    checks = report.generate_all(summary)
    print_banner("SUMMARY")
    for line in summary_line(summary):
        print(line)
    print("\nAcceptance:")
    for check in checks:
        print(f"  - [{check.status.upper()}] {check.name}" + (f": {check.detail}" if check.detail else ""))
    print(f"\nReport: {report.paths['report']}")
    if any(check.status == FAIL for check in checks):
        logger.warning("%d acceptance check(s) failed", sum(c.status == FAIL for c in checks))
    return 0


def cmd_eval(args) -> int:
    """Evaluate a checkpoint on the test split and write its confusion matrix."""
    checkpoint = Path(args.checkpoint)
    confusion_path = Path(args.confusion) if args.confusion else checkpoint.with_suffix(".confusion.csv")
    guard_overwrite([confusion_path], args.force)

    model, extra = load_checkpoint(checkpoint)
    root = resolve_data_root(args.data_root)
    test = load_split(root, "test")
    if extra.get("stats"):
        test = standardize(test, ChannelStats.from_dict(extra["stats"]))

    result = evaluate(model, test)
    print(f"Checkpoint: {checkpoint}")
    print(f"Test accuracy: {result.accuracy:.4f} ({int(result.confusion.trace())}/{int(result.confusion.sum())})")
    recorded = extra.get("final_test_accuracy")
    if recorded is not None:
        status = "matches" if recorded == result.accuracy else "differs from"
        print(f"  {status} recorded final-epoch accuracy {recorded:.4f}")

    print("\nPer-class recall:")
    for index, name in enumerate(ACTIVITY_LABELS):
        row_total = int(result.confusion[index].sum())
        recall = result.confusion[index, index] / row_total if row_total else 0.0
        print(f"  - {name}: {recall:.4f} ({row_total} windows)")

    atomic_write_text(confusion_path, confusion_csv(result.confusion))
    print(f"\nConfusion matrix: {confusion_path}")
    return 0


def confusion_csv(confusion) -> str:
    """Rows are true classes, columns predicted classes."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["true\\predicted"] + list(ACTIVITY_LABELS))
    for name, row in zip(ACTIVITY_LABELS, confusion):
        writer.writerow([name] + [int(v) for v in row])
    return buffer.getvalue()


# -- argument parsing --------------------------------------------------------

def _common_options() -> argparse.ArgumentParser:
    common = CliParser(add_help=False)
    common.add_argument('-v', '--verbose', action='store_true', help='Enable debug logging')
    common.add_argument('--debug', action='store_true',
                        help='Check every forward result for NaN/Inf (slow)')
    common.add_argument('--force', action='store_true', help='Overwrite existing outputs')
    common.add_argument('--data-root', metavar='DIR',
                        help='UCI-HAR dataset directory (default: $HIWAVE_DATA_ROOT)')
    return common


def _run_options() -> argparse.ArgumentParser:
    run = CliParser(add_help=False)
    run.add_argument('--config', metavar='FILE', help='Experiment config JSON')
    run.add_argument('--seeds', type=int, nargs='+', metavar='N', help='Seeds to run')
    run.add_argument('--epochs', type=int)
    run.add_argument('--lr', type=float)
    run.add_argument('--batch-size', type=int)
    run.add_argument('--weight-decay', type=float)
    run.add_argument('--dropout', type=float)
    run.add_argument('--gem-init', type=float, help='Initial GeM exponent')
    run.add_argument('--clip', type=float, metavar='NORM', help='Clip the global gradient norm')
    run.add_argument('--selection', choices=['final', 'best'],
                     help='Report final-epoch (default) or best-epoch test accuracy')
    run.add_argument('--no-standardize', action='store_true', help='Skip per-channel z-scoring')
    run.add_argument('--cache', metavar='DIR', help='Directory for the parsed-data cache')
    run.add_argument('-o', '--output', metavar='DIR', help='Output directory (default: runs)')
    return run


def build_parser() -> argparse.ArgumentParser:
    parser = CliParser(
        description="Hybrid wavelet tokenizer experiments on UCI-HAR",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s verify-data --data-root "./UCI HAR Dataset"
  %(prog)s train --config configs/champion.json
  %(prog)s train --variant baseline --seeds 0 --epochs 1
  %(prog)s ablate --jobs 4 -o runs/ablation
  %(prog)s eval --checkpoint runs/checkpoints/hybrid-L3-db2-gem-seed0.json
  %(prog)s report --runs runs/ablation/runs.jsonl
        """
    )
    common, run = _common_options(), _run_options()
    subparsers = parser.add_subparsers(dest='command', help='Commands', parser_class=CliParser)

    verify = subparsers.add_parser('verify-data', parents=[common], help='Validate the dataset directory')
    verify.add_argument('--archive', metavar='ZIP', help='Downloaded UCI-HAR zip to verify and extract')
    verify.add_argument('--sha256', metavar='HEX', help='Expected SHA-256 of the archive')
    verify.add_argument('--dest', metavar='DIR', help='Extraction directory (default: --data-root or .)')

    train = subparsers.add_parser('train', parents=[common, run], help='Train one variant over all seeds')
    train.add_argument('--variant', metavar='NAME',
                       help=f"Named variant ({', '.join(all_variants())}); default from config")

    ablate = subparsers.add_parser('ablate', parents=[common, run], help='Run the full ablation matrix')
    ablate.add_argument('--jobs', type=int, default=1, help='Parallel (variant, seed) workers')
    ablate.add_argument('--variants', nargs='+', metavar='NAME', help='Subset of variants to run')

    evaluate_parser = subparsers.add_parser('eval', parents=[common], help='Evaluate a checkpoint')
    evaluate_parser.add_argument('--checkpoint', required=True, metavar='FILE')
    evaluate_parser.add_argument('--confusion', metavar='CSV',
                                 help='Confusion matrix output (default: beside the checkpoint)')

    report = subparsers.add_parser('report', parents=[common], help='Rebuild tables and report from runs.jsonl')
    report.add_argument('--runs', required=True, metavar='FILE')
    report.add_argument('-o', '--output', metavar='DIR', help='Output directory (default: beside runs file)')
    return parser


COMMANDS = {
    'verify-data': cmd_verify_data,
    'train': cmd_train,
    'ablate': cmd_ablate,
    'eval': cmd_eval,
    'report': cmd_report,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command is None:
        parser.print_help()
        return 1

    configure_logging(args.verbose)
    ad.set_debug_checks(args.debug)
    try:
        return COMMANDS[args.command](args)
    except HiWaveError as exc:
        print(f"Error: {exc}")
        return exc.exit_code
    finally:
        ad.set_debug_checks(False)


if __name__ == '__main__':
    sys.exit(main())
