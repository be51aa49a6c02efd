"""File-based storage utilities for jacobi-rl.

Handles run directories, JSON metadata, JSON-lines pools, matrix text files
and CSV reports.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence

import numpy as np
import pandas as pd

from . import config
from .errors import CorruptFile, StorageError


def run_dir(name: str) -> Path:
    """Get the directory for a named run under the data directory."""
    root = config.settings.data_dir / name
    root.mkdir(parents=True, exist_ok=True)
    return root


def checkpoints_dir(out_dir: Path, name: str = "checkpoints") -> Path:
    """Get the checkpoint directory of a run."""
    return out_dir / name


def manifest_path(out_dir: Path) -> Path:
    """Get the manifest.json path of a run."""
    return out_dir / "manifest.json"


def metrics_path(out_dir: Path) -> Path:
    """Get the per-round metrics CSV path of a run."""
    return out_dir / "metrics.csv"


def effective_config_path(out_dir: Path) -> Path:
    """Get the echoed effective config path of a run."""
    return out_dir / "effective_config.json"


def read_json(path: Path) -> Dict[str, Any]:
    """Read a JSON file, returning empty dict if not exists."""
    if not path.exists():
        return {}
    try:
        with path.open("r", encoding="utf-8") as f:
            return json.load(f)
    except (json.JSONDecodeError, IOError):
        return {}


def read_json_strict(path: Path) -> Any:
    """Read a JSON file, raising when it is missing or unparsable."""
    if not path.exists():
        raise StorageError(f"File not found: {path}")
    try:
        with path.open("r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise CorruptFile(f"Cannot parse {path}: {e}") from e
    except UnicodeDecodeError as e:
        raise CorruptFile(f"Cannot decode {path}: {e}") from e


def write_json(path: Path, data: Any) -> None:
    """Write data to a JSON file, creating parent directories."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, default=str)


def append_jsonl(path: Path, records: Iterable[Dict[str, Any]]) -> int:
    """Append records to a JSON-lines file; returns how many were written."""
    path.parent.mkdir(parents=True, exist_ok=True)
    written = 0
    with path.open("a", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, default=str))
            f.write("\n")
            written += 1
    return written


def read_jsonl(path: Path) -> Iterator[Dict[str, Any]]:
    """Iterate the records of a JSON-lines file."""
    if not path.exists():
        raise StorageError(f"File not found: {path}")
    with path.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as e:
                raise CorruptFile(f"{path}:{lineno}: {e}") from e


def file_sha256(path: Path) -> str:
    """Hex SHA-256 of a file's bytes."""
    digest = hashlib.sha256()
    with path.open("rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def config_hash(config: Dict[str, Any]) -> str:
    """Hash of the canonical JSON form of a config dict."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def assert_disjoint(train: Sequence[str], evaluation: Sequence[str]) -> None:
    """Refuse a train/eval split that shares matrices."""
    overlap = set(train) & set(evaluation)
    if overlap:
        sample = sorted(overlap)[:3]
        raise ValueError(f"{len(overlap)} matrices appear in both train and eval sets, e.g. {sample}")


# --- Matrix text format ---

def parse_matrix_text(text: str, source: str = "<text>") -> np.ndarray:
    """Parse 'N' followed by N rows of N values into a square array."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise CorruptFile(f"{source}: empty matrix file")
    try:
        n = int(lines[0].strip())
    except ValueError as e:
        raise CorruptFile(f"{source}: first line must be the dimension, got {lines[0]!r}") from e
    if len(lines) - 1 != n:
        raise CorruptFile(f"{source}: expected {n} rows, found {len(lines) - 1}")
    try:
        rows = [[float(tok) for tok in ln.split()] for ln in lines[1:]]
    except ValueError as e:
        raise CorruptFile(f"{source}: non-numeric entry ({e})") from e
    if any(len(r) != n for r in rows):
        raise CorruptFile(f"{source}: every row must have {n} values")
    return np.array(rows, dtype=np.float64)


def read_matrix(path: Path, symmetrize: bool = False, asym_tol: float = 1e-9) -> np.ndarray:
    """Load a matrix file; rejects asymmetry beyond ``asym_tol`` relative unless symmetrizing."""
    if not path.exists():
        raise StorageError(f"Matrix file not found: {path}")
    values = parse_matrix_text(path.read_text(encoding="utf-8"), str(path))
    scale = max(float(np.linalg.norm(values)), np.finfo(np.float64).tiny)
    gap = float(np.max(np.abs(values - values.T)))
    if gap > asym_tol * scale and not symmetrize:
        raise CorruptFile(
            f"{path}: matrix is not symmetric (max |a_ij - a_ji| = {gap:.3e}); use --symmetrize"
        )
    return (values + values.T) / 2.0


def format_matrix_text(values: np.ndarray) -> str:
    """Render a square array in the matrix text format (17 significant digits)."""
    n = values.shape[0]
    rows = [" ".join(format(float(x), ".17g") for x in values[i]) for i in range(n)]
    return "\n".join([str(n), *rows]) + "\n"


def write_matrix(path: Path, values: np.ndarray) -> None:
    """Write a matrix in the text format, creating parent directories."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_matrix_text(values), encoding="utf-8")


# --- CSV reports ---

def write_table(
    path: Path,
    rows: List[Dict[str, Any]],
    columns: Optional[List[str]] = None,
    index: Optional[str] = None,
) -> pd.DataFrame:
    """Write report rows as CSV and return the frame.

    With ``index`` that column is written first as the frame index.
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(rows, columns=columns)
    if index is not None:
        frame = frame.set_index(index)
    frame.to_csv(path, index=index is not None)
    return frame


def read_table(path: Path, index: Optional[str] = None) -> pd.DataFrame:
    """Read a CSV report written by ``write_table``."""
    if not path.exists():
        raise StorageError(f"File not found: {path}")
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise CorruptFile(f"{path}: {e}") from e
    if index is not None:
        if index not in frame.columns:
            raise CorruptFile(f"{path}: missing column {index!r}")
        frame = frame.set_index(index)
    return frame


def append_table_row(path: Path, row: Dict[str, Any]) -> None:
    """Append one row to a CSV, writing the header on first use."""
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([row])
    frame.to_csv(path, mode="a", header=not path.exists(), index=False)
