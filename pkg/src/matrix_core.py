"""Symmetric matrices, Givens rotations and the upper-triangle index maps.

Pivots are always stored with ``p < q``. A rotation ``J(p, q)`` has
``J[p, p] = J[q, q] = c``, ``J[p, q] = s`` and ``J[q, p] = -s``; applying it
computes ``Jᵀ M J`` by touching only rows and columns ``p`` and ``q``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, NamedTuple, Optional, Tuple

import numpy as np

from . import config
from .errors import DegeneratePivot, DimensionMismatch, IndexOutOfRange, NonConvergence

logger = logging.getLogger(__name__)

_TINY = np.finfo(np.float64).tiny


class PivotAction(NamedTuple):
    """Strict upper-triangle entry ``(p, q)``, ``p < q``."""

    p: int
    q: int

    def __str__(self) -> str:
        return f"({self.p},{self.q})"


@dataclass(frozen=True)
class GivensRotation:
    """Plane rotation in the ``(p, q)`` plane."""

    p: int
    q: int
    c: float
    s: float

    def __post_init__(self) -> None:
        if abs(self.c * self.c + self.s * self.s - 1.0) > 1e-12:
            raise ValueError(f"c^2 + s^2 must be 1, got c={self.c!r}, s={self.s!r}")
        if not 0 <= self.p < self.q:
            raise IndexOutOfRange(f"rotation plane must satisfy 0 <= p < q, got ({self.p},{self.q})")

    @classmethod
    def identity(cls, p: int, q: int) -> "GivensRotation":
        return cls(p, q, 1.0, 0.0)


@dataclass(frozen=True, eq=False)
class SymmetricMatrix:
    """Immutable dense real symmetric matrix.

    ``tol`` is the "approximately zero" threshold used by the skip rule and
    by action masking. It stays fixed across rotations, since they preserve
    the Frobenius norm it is derived from.
    """

    entries: np.ndarray
    tol: float

    def __post_init__(self) -> None:
        a = self.entries
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionMismatch(f"matrix must be square, got shape {a.shape}")
        if a.shape[0] < 2:
            raise ValueError(f"matrix dimension must be >= 2, got {a.shape[0]}")
        if not self.tol > 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")
        if not np.array_equal(a, a.T):
            raise ValueError("entries are not exactly symmetric")
        a.setflags(write=False)

    @classmethod
    def from_array(
        cls,
        values: np.ndarray | Iterable[Iterable[float]],
        tol: Optional[float] = None,
        symmetrize: bool = False,
    ) -> "SymmetricMatrix":
        """Build from any square array.

        ``tol`` defaults to ``JACOBI_RL_TOL_REL · ‖M‖_F``. Without
        ``symmetrize`` the input must already be exactly symmetric.
        """
        a = np.array(values, dtype=np.float64, copy=True)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionMismatch(f"matrix must be square, got shape {a.shape}")
        if symmetrize:
            a = (a + a.T) / 2.0
        if tol is None:
            tol = max(config.settings.tol_rel * float(np.linalg.norm(a)), _TINY)
        return cls(a, float(tol))

    @property
    def n(self) -> int:
        return int(self.entries.shape[0])

    @cached_property
    def off_norm(self) -> float:
        return off_norm(self)

    def copy_entries(self) -> np.ndarray:
        """Writable copy of the entries."""
        return np.array(self.entries, copy=True)

    def scaled(self, k: float) -> "SymmetricMatrix":
        """``k·M`` with the tolerance scaled alongside."""
        if not k > 0:
            raise ValueError(f"scale factor must be > 0, got {k}")
        return SymmetricMatrix(self.entries * k, self.tol * k)

    def with_entries(self, entries: np.ndarray) -> "SymmetricMatrix":
        """Same tolerance, new entries (which must be exactly symmetric)."""
        return SymmetricMatrix(entries, self.tol)

    def __getitem__(self, idx: Tuple[int, int]) -> float:
        return float(self.entries[idx])

    def __repr__(self) -> str:
        return f"SymmetricMatrix(n={self.n}, off_norm={self.off_norm:.3e}, tol={self.tol:.1e})"


# --- Rotation kernels (operate in place on a private array) ---

def givens_cs(a_pp: float, a_qq: float, a_pq: float) -> Tuple[float, float]:
    """Stable ``(c, s)`` that zeroes ``a_pq``; ``|θ| ≤ π/4``."""
    tau = (a_qq - a_pp) / (2.0 * a_pq)
    if tau == 0.0:
        t = 1.0
    else:
        t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau))
    c = 1.0 / math.sqrt(1.0 + t * t)
    return c, t * c


def rotate_inplace(a: np.ndarray, p: int, q: int, c: float, s: float) -> None:
    """``a ← Jᵀ a J`` touching only rows/columns ``p`` and ``q``; mirrors exactly."""
    col_p = a[:, p].copy()
    col_q = a[:, q].copy()
    a[:, p] = c * col_p - s * col_q
    a[:, q] = s * col_p + c * col_q
    row_p = a[p, :].copy()
    row_q = a[q, :].copy()
    a[p, :] = c * row_p - s * row_q
    a[q, :] = s * row_p + c * row_q
    a[:, p] = a[p, :]
    a[:, q] = a[q, :]


def zero_pivot_inplace(a: np.ndarray, p: int, q: int) -> None:
    """Rotate ``(p, q)`` to zero with the stable closed form."""
    c, s = givens_cs(a[p, p], a[q, q], a[p, q])
    rotate_inplace(a, p, q, c, s)


# --- Operations ---

def compute_givens(m: SymmetricMatrix, a: PivotAction) -> GivensRotation:
    """Rotation that zeroes ``m[p, q]``.

    Raises:
        DegeneratePivot: ``|m[p, q]| <= m.tol``.
    """
    p, q = _check_pair(a.p, a.q, m.n)
    a_pq = m.entries[p, q]
    if abs(a_pq) <= m.tol:
        raise DegeneratePivot(f"pivot {a} is already ~0 ({a_pq:.3e} <= tol {m.tol:.3e})")
    c, s = givens_cs(m.entries[p, p], m.entries[q, q], a_pq)
    return GivensRotation(p, q, c, s)


def apply_rotation(m: SymmetricMatrix, g: GivensRotation) -> SymmetricMatrix:
    """``Jᵀ M J`` as a new matrix."""
    if g.q >= m.n:
        raise DimensionMismatch(f"rotation plane ({g.p},{g.q}) does not fit a {m.n}x{m.n} matrix")
    a = m.copy_entries()
    rotate_inplace(a, g.p, g.q, g.c, g.s)
    return m.with_entries(a)


def rotate(m: SymmetricMatrix, a: PivotAction) -> SymmetricMatrix:
    """Zero ``a`` with one Givens rotation."""
    return apply_rotation(m, compute_givens(m, a))


def off_norm(m: SymmetricMatrix) -> float:
    """Frobenius norm of the off-diagonal part."""
    upper = m.entries[np.triu_indices(m.n, 1)]
    return float(math.sqrt(2.0 * float(np.dot(upper, upper))))


def frobenius_norm(m: SymmetricMatrix) -> float:
    return float(np.linalg.norm(m.entries))


def is_diagonalized(m: SymmetricMatrix, threshold: float) -> bool:
    """``off_norm(m) < threshold``."""
    if not threshold > 0:
        raise ValueError(f"threshold must be > 0, got {threshold}")
    return m.off_norm < threshold


def upper_values(m: SymmetricMatrix) -> np.ndarray:
    """Upper triangle (with diagonal) flattened in ``upper_index`` order."""
    return m.entries[np.triu_indices(m.n)].copy()


def strict_upper_values(m: SymmetricMatrix) -> np.ndarray:
    """Strict upper triangle flattened in ``strict_upper_index`` order."""
    return m.entries[np.triu_indices(m.n, 1)].copy()


def nonzero_pivots(m: SymmetricMatrix) -> list[PivotAction]:
    """Row-major pivots with ``|m_pq| > tol``."""
    rows, cols = np.triu_indices(m.n, 1)
    mask = np.abs(m.entries[rows, cols]) > m.tol
    return [PivotAction(int(p), int(q)) for p, q in zip(rows[mask], cols[mask])]


def max_elem_action(m: SymmetricMatrix, actions: Optional[Iterable[PivotAction]] = None) -> Optional[PivotAction]:
    """MaxElem pivot: largest ``|m_pq|`` above tol, ties by row-major order.

    Returns ``None`` when no candidate exceeds tol.
    """
    if actions is None:
        rows, cols = np.triu_indices(m.n, 1)
        mags = np.abs(m.entries[rows, cols])
        best = int(np.argmax(mags))
        if mags[best] <= m.tol:
            return None
        return PivotAction(int(rows[best]), int(cols[best]))

    best_action: Optional[PivotAction] = None
    best_mag = m.tol
    for a in sorted(actions):
        mag = abs(m.entries[a.p, a.q])
        if mag > best_mag:
            best_action, best_mag = PivotAction(a.p, a.q), mag
    return best_action


def classical_jacobi(
    m: SymmetricMatrix,
    threshold: float,
    max_rotations: Optional[int] = None,
) -> Tuple[SymmetricMatrix, int]:
    """Repeated MaxElem pivoting until ``off_norm < threshold``.

    Stops early when no pivot exceeds tol. Raises ``NonConvergence`` when
    ``max_rotations`` (default ``20·N(N-1)/2``) is exhausted.
    """
    if not threshold > 0:
        raise ValueError(f"threshold must be > 0, got {threshold}")
    n = m.n
    budget = max_rotations if max_rotations is not None else 20 * n * (n - 1) // 2
    a = m.copy_entries()
    rows, cols = np.triu_indices(n, 1)
    count = 0
    while True:
        upper = a[rows, cols]
        if math.sqrt(2.0 * float(np.dot(upper, upper))) < threshold:
            break
        mags = np.abs(upper)
        best = int(np.argmax(mags))
        if mags[best] <= m.tol:
            break
        if count >= budget:
            raise NonConvergence(f"classical Jacobi did not converge within {budget} rotations (n={n})")
        zero_pivot_inplace(a, int(rows[best]), int(cols[best]))
        count += 1
    return m.with_entries(a), count


def eigenvalue_oracle(m: SymmetricMatrix, threshold_rel: float = 1e-12) -> np.ndarray:
    """Sorted eigenvalues from classical Jacobi iterated to ``threshold_rel·‖M‖_F``."""
    scale = max(frobenius_norm(m), _TINY)
    work = SymmetricMatrix(m.copy_entries(), _TINY)
    final, _ = classical_jacobi(work, threshold_rel * scale, max_rotations=200 * m.n * m.n)
    return np.sort(np.diag(final.entries))


def generate_random_symmetric(
    n: int,
    seed: int,
    scale: float = 1.0,
    tol: Optional[float] = None,
) -> SymmetricMatrix:
    """Seeded random matrix: uniform ``[-scale, scale]`` entries, then ``(A+Aᵀ)/2``.

    Uses numpy's Philox counter-based bit generator, so a ``(n, seed)`` pair
    names the same matrix on every platform.
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    rng = np.random.Generator(np.random.Philox(seed))
    a = rng.uniform(-scale, scale, size=(n, n))
    return SymmetricMatrix.from_array((a + a.T) / 2.0, tol=tol)


# --- Index maps ---

def _check_pair(p: int, q: int, n: int) -> Tuple[int, int]:
    if not 0 <= p < q < n:
        raise IndexOutOfRange(f"pivot ({p},{q}) is not strictly upper for n={n}")
    return p, q


def upper_index(i: int, j: int, n: int) -> int:
    """Row-major flat index of ``(i, j)``, ``i <= j``, in the upper triangle with diagonal."""
    if not 0 <= i <= j < n:
        raise IndexOutOfRange(f"({i},{j}) is not in the upper triangle for n={n}")
    return n * (n + 1) // 2 - (n - i) * (n - i + 1) // 2 + (j - i)


def upper_pair(index: int, n: int) -> Tuple[int, int]:
    """Inverse of ``upper_index``."""
    if not 0 <= index < n * (n + 1) // 2:
        raise IndexOutOfRange(f"flat index {index} out of range for n={n}")
    i = 0
    row_len = n
    while index >= row_len:
        index -= row_len
        i += 1
        row_len -= 1
    return i, i + index


def strict_upper_index(a: PivotAction, n: int) -> int:
    """Row-major flat index of a pivot in the strict upper triangle."""
    p, q = _check_pair(a.p, a.q, n)
    return n * (n - 1) // 2 - (n - p) * (n - p - 1) // 2 + (q - p - 1)


def strict_upper_pair(index: int, n: int) -> PivotAction:
    """Inverse of ``strict_upper_index``."""
    if not 0 <= index < n * (n - 1) // 2:
        raise IndexOutOfRange(f"action index {index} out of range for n={n}")
    p = 0
    row_len = n - 1
    while index >= row_len:
        index -= row_len
        p += 1
        row_len -= 1
    return PivotAction(p, p + 1 + index)


def num_pivots(n: int) -> int:
    return n * (n - 1) // 2


def pool_seeds(seed: int, n: int, count: int) -> list[int]:
    """Per-matrix seeds of a pool, derived from ``(seed, n)``."""
    state = np.random.SeedSequence([seed, n]).generate_state(count, dtype=np.uint64)
    return [int(s) for s in state]


def random_pool(n: int, count: int, seed: int, scale: float = 1.0) -> list[SymmetricMatrix]:
    """``count`` seeded random matrices of size ``n``."""
    return [generate_random_symmetric(n, s, scale) for s in pool_seeds(seed, n, count)]
