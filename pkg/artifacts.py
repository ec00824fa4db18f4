"""
Output file helpers: atomic writes, JSON lines, overwrite protection.
"""
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, List

from errors import ConfigError


def atomic_write_text(path: Path, text: str) -> None:
    """Write ``text`` to a temp file beside ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=str(path.parent))
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def write_json(path: Path, payload: Any) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2) + "\n")


def write_jsonl(path: Path, rows: Iterable[Dict[str, Any]]) -> None:
    atomic_write_text(path, "".join(json.dumps(row) + "\n" for row in rows))


def read_jsonl(path: Path) -> List[Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no run records at {path}")
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def guard_overwrite(paths: Iterable[Path], force: bool) -> None:
    """Refuse to replace existing outputs unless ``force`` is set."""
    existing = [str(p) for p in paths if Path(p).exists()]
    if existing and not force:
        raise ConfigError(f"output already exists ({', '.join(existing)}); rerun with --force to overwrite")
