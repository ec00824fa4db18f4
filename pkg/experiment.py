"""
Multi-seed experiment runner and seed aggregation.

Each (variant, seed) pair is one independent task. With ``jobs > 1`` tasks
run in worker processes that receive the dataset once through the pool
initializer; records are merged back in (variant, seed) order so the
summary does not depend on scheduling.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from classifier import save_checkpoint
from har_loader import DatasetSplit
from models import (
    ExperimentSummary, ModelConfig, RunRecord, TokenizerConfig, TrainConfig, VariantSpec, VariantSummary,
)
from trainer import Progress, train_one
from variant_mappings import get_variant

logger = logging.getLogger(__name__)

_worker_data: Optional[Tuple[DatasetSplit, DatasetSplit]] = None


def checkpoint_path(checkpoint_dir: Path, variant: str, seed: int) -> Path:
    return Path(checkpoint_dir) / f"{variant}-seed{seed}.json"


def run_task(variant: VariantSpec, train_cfg: TrainConfig, seed: int,
             data: Tuple[DatasetSplit, DatasetSplit],
             checkpoint_dir: Optional[Path] = None,
             progress: Optional[Progress] = print) -> RunRecord:
    """Train one (variant, seed) pair and optionally write its checkpoint."""
    record, model = train_one(variant, train_cfg, seed, data, progress=progress)
    if checkpoint_dir is not None:
        stats = data[0].stats
        save_checkpoint(model, checkpoint_path(checkpoint_dir, variant.name, seed), extra={
            "variant": variant.name,
            "test_accuracy": record.test_accuracy,
            "final_test_accuracy": record.final_test_accuracy,
            "stats": stats.to_dict() if stats is not None else None,
        })
    return record


def _init_worker(data: Tuple[DatasetSplit, DatasetSplit]) -> None:
    global _worker_data
    _worker_data = data


def _worker_task(variant: VariantSpec, train_cfg: TrainConfig, seed: int,
                 checkpoint_dir: Optional[Path], verbose: bool) -> RunRecord:
    """Run one task in a worker; progress callables do not cross the process boundary."""
    return run_task(variant, train_cfg, seed, _worker_data, checkpoint_dir,
                    progress=print if verbose else None)


def run_experiment(variants: Sequence[Union[str, VariantSpec]], train_cfg: TrainConfig,
                   data: Tuple[DatasetSplit, DatasetSplit], jobs: int = 1,
                   checkpoint_dir: Optional[Path] = None,
                   progress: Optional[Progress] = print,
                   model_cfg: Optional[ModelConfig] = None,
                   base_tokenizer: Optional[TokenizerConfig] = None) -> ExperimentSummary:
    """Run every variant over ``train_cfg.seeds`` and aggregate test accuracy.

    Variants may be given by name; names resolve against ``model_cfg`` and
    ``base_tokenizer``.
    """
    train_cfg.validate()
    variants = [get_variant(v, model_cfg, base=base_tokenizer) if isinstance(v, str) else v
                for v in variants]
    tasks = [(variant, seed) for variant in variants for seed in train_cfg.seeds]
    logger.debug("planned %d runs over %d variant(s)", len(tasks), len(variants))

    if jobs <= 1 or len(tasks) == 1:
        records = [run_task(v, train_cfg, s, data, checkpoint_dir, progress) for v, s in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(data,)) as pool:
            verbose = progress is not None
            futures = [pool.submit(_worker_task, v, train_cfg, s, checkpoint_dir, verbose) for v, s in tasks]
            records = [future.result() for future in futures]

    return summarize(records, order=[v.name for v in variants])


def summarize(records: Sequence[RunRecord], order: Optional[Sequence[str]] = None) -> ExperimentSummary:
    """Mean and sample standard deviation (N-1) of test accuracy per variant.

    A variant with a single run reports std 0.0. ``mean_p`` averages each
    packet's exponent over seeds and is empty for runs without GeM.
    """
    grouped: Dict[str, List[RunRecord]] = {}
    for record in records:
        grouped.setdefault(record.variant, []).append(record)
    names = [name for name in (order or []) if name in grouped]
    names += [name for name in grouped if name not in names]

    rows = []
    for name in names:
        runs = sorted(grouped[name], key=lambda r: r.seed)
        accuracies = np.array([r.test_accuracy for r in runs])
        std = float(np.std(accuracies, ddof=1)) if len(runs) > 1 else 0.0
        p_matrix = [r.p_values for r in runs if r.p_values]
        mean_p = np.mean(np.array(p_matrix), axis=0).tolist() if p_matrix else []
        rows.append(VariantSummary(
            variant=name,
            mean_acc=float(np.mean(accuracies)),
            std_acc=std,
            n_seeds=len(runs),
            param_count=runs[0].param_count,
            mean_p=mean_p,
        ))

    ordered = [r for name in names for r in sorted(grouped[name], key=lambda r: r.seed)]
    return ExperimentSummary(rows=rows, records=ordered)
