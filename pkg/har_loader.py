"""
UCI-HAR raw inertial signal loader.

Reads the distributed directory layout::

    <root>/train/Inertial Signals/body_acc_x_train.txt   (one 128-sample window per row)
    <root>/train/y_train.txt                              (labels 1..6)
    <root>/train/subject_train.txt                        (subjects 1..30)
    <root>/test/...                                       (same with _test)

into ``(N, 9, 128)`` float64 arrays with zero-based labels. Channel order is
fixed: body_acc x,y,z; body_gyro x,y,z; total_acc x,y,z.
"""
import hashlib
import logging
import os
import struct
import zipfile
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from errors import ConfigError, CorruptionError, DataError, IngestionError

logger = logging.getLogger(__name__)

CHANNEL_NAMES = (
    "body_acc_x", "body_acc_y", "body_acc_z",
    "body_gyro_x", "body_gyro_y", "body_gyro_z",
    "total_acc_x", "total_acc_y", "total_acc_z",
)
ACTIVITY_LABELS = (
    "WALKING", "WALKING_UPSTAIRS", "WALKING_DOWNSTAIRS", "SITTING", "STANDING", "LAYING",
)
SPLITS = ("train", "test")
WINDOW_LENGTH = 128
NUM_SUBJECTS = 30
DISTRIBUTED_COUNTS = {"train": 7352, "test": 2947}
DATA_ROOT_ENV = "HIWAVE_DATA_ROOT"
DATASET_DIRNAME = "UCI HAR Dataset"

CACHE_MAGIC = b"HIWAVE01"
_CACHE_HEADER = struct.Struct("<8sIII32s")


@dataclass(frozen=True, eq=False)
class HarWindow:
    signal: np.ndarray      # (9, 128)
    label: int              # 0..5
    subject: int            # 1..30


@dataclass(frozen=True, eq=False)
class ChannelStats:
    """Per-channel mean/std; records which split produced them."""
    mean: np.ndarray
    std: np.ndarray
    source_split: str

    def to_dict(self) -> Dict[str, object]:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "source_split": self.source_split}

    @classmethod
    def from_dict(cls, payload: Dict[str, object]) -> "ChannelStats":
        return cls(
            mean=np.asarray(payload["mean"], dtype=np.float64),
            std=np.asarray(payload["std"], dtype=np.float64),
            source_split=str(payload["source_split"]),
        )


@dataclass(frozen=True, eq=False)
class DatasetSplit:
    """One split as stacked arrays; ``stats`` is set once standardized."""
    split: str
    signals: np.ndarray     # (N, 9, 128)
    labels: np.ndarray      # (N,) int
    subjects: np.ndarray    # (N,) int
    stats: Optional[ChannelStats] = None

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, index: int) -> HarWindow:
        return HarWindow(self.signals[index], int(self.labels[index]), int(self.subjects[index]))

    def subset(self, indices) -> "DatasetSplit":
        indices = np.asarray(indices)
        return replace(self, signals=self.signals[indices], labels=self.labels[indices],
                       subjects=self.subjects[indices])

    def class_counts(self, n_classes: int = len(ACTIVITY_LABELS)) -> np.ndarray:
        return np.bincount(self.labels, minlength=n_classes)


def resolve_data_root(path: Optional[str]) -> Path:
    """Use ``path`` or ``$HIWAVE_DATA_ROOT``; step into ``UCI HAR Dataset/`` if present."""
    value = path or os.environ.get(DATA_ROOT_ENV)
    if not value:
        raise ConfigError(f"no dataset root given; pass --data-root or set {DATA_ROOT_ENV}")
    root = Path(value).expanduser()
    if (root / DATASET_DIRNAME).is_dir():
        root = root / DATASET_DIRNAME
    return root


def split_files(root: Path, split: str) -> Dict[str, Path]:
    """Every file a split needs, keyed by a short role name."""
    signals_dir = Path(root) / split / "Inertial Signals"
    files = {name: signals_dir / f"{name}_{split}.txt" for name in CHANNEL_NAMES}
    files["labels"] = Path(root) / split / f"y_{split}.txt"
    files["subjects"] = Path(root) / split / f"subject_{split}.txt"
    return files


def read_matrix(path: Path, columns: Optional[int] = None) -> np.ndarray:
    """Parse whitespace-delimited rows; every row must hold ``columns`` values."""
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"missing dataset file: {path}")
    rows: List[List[float]] = []
    with open(path, "r") as handle:
        for row_index, line in enumerate(handle):
            fields = line.split()
            if not fields:
                continue
            if columns is not None and len(fields) != columns:
                raise CorruptionError(
                    f"{path}: row {len(rows)} has {len(fields)} values, expected {columns}"
                )
            try:
                rows.append([float(v) for v in fields])
            except ValueError:
                raise CorruptionError(f"{path}: row {len(rows)} (line {row_index + 1}) is not numeric")
    if not rows:
        return np.zeros((0, columns or 0))
    return np.asarray(rows, dtype=np.float64)


def load_split(root: Path, split: str) -> DatasetSplit:
    if split not in SPLITS:
        raise ConfigError(f"unknown split {split!r}")
    files = split_files(root, split)
    channels = []
    for name in CHANNEL_NAMES:
        channels.append(read_matrix(files[name], WINDOW_LENGTH))
    counts = {name: len(ch) for name, ch in zip(CHANNEL_NAMES, channels)}
    if len(set(counts.values())) != 1:
        raise CorruptionError(f"{split}: channel files disagree on row count: {counts}")
    rows = channels[0].shape[0]

    labels = read_matrix(files["labels"], 1)[:, 0]
    subjects = read_matrix(files["subjects"], 1)[:, 0]
    for role, values in (("labels", labels), ("subjects", subjects)):
        if len(values) != rows:
            raise CorruptionError(f"{files[role]}: {len(values)} rows, expected {rows} to match the signal files")
    if np.any(labels != np.round(labels)) or np.any((labels < 1) | (labels > len(ACTIVITY_LABELS))):
        raise CorruptionError(f"{files['labels']}: labels must be integers 1..{len(ACTIVITY_LABELS)}")
    if np.any((subjects < 1) | (subjects > NUM_SUBJECTS)):
        raise CorruptionError(f"{files['subjects']}: subject ids must lie in 1..{NUM_SUBJECTS}")

    signals = np.stack(channels, axis=1) if rows else np.zeros((0, len(CHANNEL_NAMES), WINDOW_LENGTH))
    return DatasetSplit(
        split=split,
        signals=signals,
        labels=labels.astype(np.int64) - 1,
        subjects=subjects.astype(np.int64),
    )


# -- cache -------------------------------------------------------------------

def source_digest(root: Path) -> bytes:
    """SHA-256 of the resolved dataset root; ties a cache file to its source."""
    return hashlib.sha256(str(Path(root).resolve()).encode("utf-8")).digest()


def write_cache(split: DatasetSplit, path: Path, root: Path) -> None:
    """Header (magic, rows, channels, length, source digest) + float64 signals + int32 labels + int32 subjects."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n, c, t = split.signals.shape
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as handle:
        handle.write(_CACHE_HEADER.pack(CACHE_MAGIC, n, c, t, source_digest(root)))
        handle.write(np.ascontiguousarray(split.signals, dtype="<f8").tobytes())
        handle.write(np.asarray(split.labels, dtype="<i4").tobytes())
        handle.write(np.asarray(split.subjects, dtype="<i4").tobytes())
    os.replace(tmp, path)


def read_cache(path: Path, split: str, root: Path) -> DatasetSplit:
    raw = Path(path).read_bytes()
    if len(raw) < _CACHE_HEADER.size:
        raise CorruptionError(f"{path}: cache file truncated")
    magic, n, c, t, digest = _CACHE_HEADER.unpack_from(raw)
    if magic != CACHE_MAGIC:
        raise CorruptionError(f"{path}: not a hiwave cache file")
    if digest != source_digest(root):
        raise DataError(f"{path}: cache was built from a different dataset root than {root}; "
                        f"remove it or choose another --cache directory")
    offset = _CACHE_HEADER.size
    expected = offset + n * c * t * 8 + 2 * n * 4
    if len(raw) != expected:
        raise CorruptionError(f"{path}: cache holds {len(raw)} bytes, expected {expected}")
    signals = np.frombuffer(raw, dtype="<f8", count=n * c * t, offset=offset).reshape(n, c, t)
    offset += n * c * t * 8
    labels = np.frombuffer(raw, dtype="<i4", count=n, offset=offset)
    offset += n * 4
    subjects = np.frombuffer(raw, dtype="<i4", count=n, offset=offset)
    return DatasetSplit(split=split, signals=signals.astype(np.float64),
                        labels=labels.astype(np.int64), subjects=subjects.astype(np.int64))


def load_ucihar(root, cache_dir: Optional[str] = None) -> Tuple[DatasetSplit, DatasetSplit]:
    """Load (train, test) in source row order, optionally through a parsed cache."""
    root = Path(root)
    loaded = []
    for split in SPLITS:
        cache_path = Path(cache_dir) / f"ucihar_{split}.bin" if cache_dir else None
        if cache_path is not None and cache_path.exists():
            logger.debug("reading %s split from cache %s", split, cache_path)
            loaded.append(read_cache(cache_path, split, root))
            continue
        data = load_split(root, split)
        if cache_path is not None:
            write_cache(data, cache_path, root)
            logger.debug("cached %s split at %s", split, cache_path)
        loaded.append(data)
    return loaded[0], loaded[1]


# -- normalization and batching ----------------------------------------------

def compute_stats(split: DatasetSplit) -> ChannelStats:
    """Per-channel mean/std over all windows and samples of the train split."""
    if split.split != "train":
        raise DataError(f"normalization statistics must come from the train split, not {split.split!r}")
    mean = split.signals.mean(axis=(0, 2))
    std = split.signals.std(axis=(0, 2))
    zero = std == 0
    if np.any(zero):
        names = [CHANNEL_NAMES[i] for i in np.flatnonzero(zero)]
        logger.warning("zero variance in channel(s) %s; using std=1", ", ".join(names))
        std = np.where(zero, 1.0, std)
    return ChannelStats(mean=mean, std=std, source_split=split.split)


def standardize(split: DatasetSplit, stats: ChannelStats) -> DatasetSplit:
    """Z-score every channel with train-split statistics."""
    if stats.source_split != "train":
        raise DataError("refusing to standardize with statistics not computed on the train split")
    signals = (split.signals - stats.mean[None, :, None]) / stats.std[None, :, None]
    return replace(split, signals=signals, stats=stats)


def batches(split: DatasetSplit, batch_size: int = 64,
            rng: Optional[np.random.Generator] = None) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Yield (signals, labels); the train split is shuffled with ``rng``, test never is."""
    n = len(split)
    if split.split == "train" and rng is not None:
        order = rng.permutation(n)
    else:
        order = np.arange(n)
    for start in range(0, n, batch_size):
        index = order[start:start + batch_size]
        yield split.signals[index], split.labels[index]


def batch_count(split: DatasetSplit, batch_size: int) -> int:
    return -(-len(split) // batch_size)


# -- archive -----------------------------------------------------------------

def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def extract_archive(archive: Path, dest: Path, expected_sha256: Optional[str] = None) -> Path:
    """Verify the downloaded zip (when a digest is given) and unpack it into ``dest``."""
    archive = Path(archive)
    if not archive.is_file():
        raise IngestionError(f"archive not found: {archive}")
    if expected_sha256:
        actual = file_sha256(archive)
        if actual.lower() != expected_sha256.lower():
            raise CorruptionError(f"{archive}: SHA-256 {actual} does not match expected {expected_sha256}")
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(archive) as bundle:
        bundle.extractall(dest)
        # the UCI download nests a second zip holding the dataset directory
        inner = [name for name in bundle.namelist() if name.endswith(".zip")]
    for name in inner:
        nested = dest / name
        if nested.is_file():
            with zipfile.ZipFile(nested) as bundle:
                bundle.extractall(dest)
    return resolve_data_root(str(dest))


def prepare_splits(root, standardize_data: bool = True,
                   cache_dir: Optional[str] = None) -> Tuple[DatasetSplit, DatasetSplit]:
    """Load both splits and, unless disabled, z-score them with train statistics."""
    train, test = load_ucihar(root, cache_dir)
    if not standardize_data:
        return train, test
    stats = compute_stats(train)
    return standardize(train, stats), standardize(test, stats)
