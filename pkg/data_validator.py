"""
Dataset validation for a UCI-HAR directory.

Checks file presence, row counts (consistency across files and, optionally,
agreement with the distributed counts) and label coverage, and collects the
outcome in a report instead of stopping at the first problem.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from errors import DataError
from har_loader import ACTIVITY_LABELS, DISTRIBUTED_COUNTS, SPLITS, load_split, split_files


@dataclass
class CheckResult:
    """Outcome of a single validation check."""
    name: str
    passed: bool
    detail: str = ""


@dataclass
class DataVerificationReport:
    """Complete validation report for one dataset root."""
    root: str
    checks: List[CheckResult] = field(default_factory=list)
    counts: Dict[str, int] = field(default_factory=dict)
    class_counts: Dict[str, List[int]] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def failures(self) -> List[CheckResult]:
        return [check for check in self.checks if not check.passed]

    def add(self, name: str, passed: bool, detail: str = "") -> None:
        self.checks.append(CheckResult(name, passed, detail))

    def summary_line(self) -> str:
        if self.passed:
            return "OK, " + ", ".join(f"{split}={self.counts.get(split, 0)}" for split in SPLITS)
        return "FAILED: " + "; ".join(check.detail or check.name for check in self.failures)


def verify_dataset(root: Path, expected_counts: Optional[Dict[str, int]] = DISTRIBUTED_COUNTS) -> DataVerificationReport:
    """Validate a dataset directory. ``expected_counts=None`` skips the distributed-count check."""
    root = Path(root)
    report = DataVerificationReport(root=str(root))

    missing = [path for split in SPLITS for path in split_files(root, split).values() if not path.is_file()]
    report.add("files present", not missing,
               "missing dataset file(s): " + ", ".join(str(p) for p in missing) if missing else "")
    if missing:
        return report

    for split in SPLITS:
        try:
            data = load_split(root, split)
        except DataError as exc:
            report.add(f"{split} parse", False, str(exc))
            continue
        report.add(f"{split} parse", True)
        report.counts[split] = len(data)

        counts = data.class_counts()
        report.class_counts[split] = counts.tolist()
        empty = [ACTIVITY_LABELS[i] for i in np.flatnonzero(counts == 0)]
        report.add(f"{split} label coverage", not empty,
                   f"{split}: no windows for {', '.join(empty)}" if empty else "")

        if expected_counts is not None and split in expected_counts:
            expected = expected_counts[split]
            report.add(f"{split} row count", len(data) == expected,
                       f"{split}: {len(data)} windows, expected {expected}" if len(data) != expected else "")

    return report
