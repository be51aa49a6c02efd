"""The eight cyclic sweep orderings and the sweep kernel.

Every ordering is a permutation of the strict upper triangle:

- Horizontal: row-major, ``(0,1), (0,2), ..., (0,N-1), (1,2), ...``
- Vertical: column-major, for each column ``q`` ascending rows ``0..q-1``
- TopLeftBottomRight: diagonals parallel to the main diagonal, nearest
  first (``q - p`` ascending), then ``p`` ascending
- TopRightBottomLeft: diagonals parallel to the anti-diagonal starting at
  the corner ``(0, N-1)`` (``p + (N-1-q)`` ascending), then ``p`` ascending

Each ``...Back`` ordering is the exact reverse of its base. The sequences
for N = 3, 4, 5 are frozen in ``src/golden/``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache
from pathlib import Path
from typing import List, Tuple

from .matrix_core import PivotAction, SymmetricMatrix, zero_pivot_inplace

logger = logging.getLogger(__name__)

GOLDEN_DIR = Path(__file__).parent / "golden"
GOLDEN_SIZES = (3, 4, 5)


class SweepOption(IntEnum):
    """One of the eight cyclic orderings (the SMDP option space)."""

    Horizontal = 0
    HorizontalBack = 1
    Vertical = 2
    VerticalBack = 3
    TopLeftBottomRight = 4
    TopLeftBottomRightBack = 5
    TopRightBottomLeft = 6
    TopRightBottomLeftBack = 7

    @property
    def id(self) -> int:
        return int(self.value)

    @property
    def is_back(self) -> bool:
        return self.value % 2 == 1

    @property
    def base(self) -> "SweepOption":
        return SweepOption(self.value - self.value % 2)

    @property
    def label(self) -> str:
        return f"{self.value}:{self.name}"

    @classmethod
    def parse(cls, text: str) -> "SweepOption":
        """Accept an id (``"4"``), a name, or a label (``"4:TopLeftBottomRight"``)."""
        token = text.strip()
        if ":" in token:
            token = token.split(":", 1)[0]
        if token.isdigit():
            value = int(token)
            if not 0 <= value < len(cls):
                raise ValueError(f"option id must be 0-7, got {value}")
            return cls(value)
        try:
            return cls[token]
        except KeyError:
            raise ValueError(f"unknown sweep option {text!r}") from None


NUM_OPTIONS = len(SweepOption)


def all_options() -> List[SweepOption]:
    """The eight options, ids 0..7."""
    return list(SweepOption)


def _base_sequence(base: SweepOption, n: int) -> List[PivotAction]:
    pairs = [PivotAction(p, q) for p in range(n) for q in range(p + 1, n)]
    if base is SweepOption.Horizontal:
        return pairs
    if base is SweepOption.Vertical:
        return sorted(pairs, key=lambda a: (a.q, a.p))
    if base is SweepOption.TopLeftBottomRight:
        return sorted(pairs, key=lambda a: (a.q - a.p, a.p))
    if base is SweepOption.TopRightBottomLeft:
        return sorted(pairs, key=lambda a: (a.p + (n - 1 - a.q), a.p))
    raise ValueError(f"{base!r} is not a base ordering")


@lru_cache(maxsize=512)
def pivot_sequence(opt: SweepOption, n: int) -> Tuple[PivotAction, ...]:
    """Ordered pivots visited by one sweep of ``opt`` on an ``n×n`` matrix."""
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    opt = SweepOption(opt)
    seq = _base_sequence(opt.base, n)
    if opt.is_back:
        seq.reverse()
    return tuple(seq)


@dataclass(frozen=True)
class SweepResult:
    """Outcome of one full sweep."""

    matrix: SymmetricMatrix
    rotations: int
    rotated: Tuple[PivotAction, ...]


def run_sweep(m: SymmetricMatrix, opt: SweepOption) -> SweepResult:
    """One sweep of ``opt``, skipping pivots with ``|m_pq| <= tol``."""
    a = m.copy_entries()
    rotated: List[PivotAction] = []
    for pivot in pivot_sequence(opt, m.n):
        if abs(a[pivot.p, pivot.q]) > m.tol:
            zero_pivot_inplace(a, pivot.p, pivot.q)
            rotated.append(pivot)
    return SweepResult(m.with_entries(a), len(rotated), tuple(rotated))


# --- Golden files ---

def golden_path(opt: SweepOption, n: int, directory: Path = GOLDEN_DIR) -> Path:
    return directory / f"{SweepOption(opt).name}_{n}.txt"


def format_sequence(seq: Tuple[PivotAction, ...]) -> str:
    return "".join(f"{a.p} {a.q}\n" for a in seq)


def read_golden(opt: SweepOption, n: int, directory: Path = GOLDEN_DIR) -> Tuple[PivotAction, ...]:
    """Load a frozen pivot sequence (one ``p q`` pair per line)."""
    path = golden_path(opt, n, directory)
    pairs = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            p, q = line.split()
            pairs.append(PivotAction(int(p), int(q)))
    return tuple(pairs)


def write_golden(directory: Path, n: int) -> List[Path]:
    """Write the eight sequences for ``n``; returns the written paths."""
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for opt in all_options():
        path = golden_path(opt, n, directory)
        path.write_text(format_sequence(pivot_sequence(opt, n)), encoding="utf-8")
        written.append(path)
    logger.info("wrote %d golden files for n=%d to %s", len(written), n, directory)
    return written
