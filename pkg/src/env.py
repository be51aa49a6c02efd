"""Decision processes over Jacobi diagonalization.

The MDP picks one pivot per step; a game is a race between players who each
diagonalize their own copy of the same matrix. The SMDP picks one of the
eight sweep orderings per step and pays ``-ε`` per primitive rotation.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import config
from .errors import GameNotOver, IllegalAction, StepOnTerminal
from .matrix_core import (
    PivotAction,
    SymmetricMatrix,
    frobenius_norm,
    is_diagonalized,
    nonzero_pivots,
    rotate,
    strict_upper_values,
    upper_values,
)
from .models import RewardConfig
from .orderings import SweepOption, run_sweep
from .storage import append_jsonl

logger = logging.getLogger(__name__)


def default_threshold(m: SymmetricMatrix, threshold_rel: Optional[float] = None) -> float:
    """Absolute convergence threshold ``threshold_rel·‖M⁰‖_F``."""
    rel = config.settings.threshold_rel if threshold_rel is None else threshold_rel
    return max(rel * frobenius_norm(m), np.finfo(np.float64).tiny)


def default_max_depth(n: int) -> int:
    """``D = 4·N(N-1)/2``."""
    return 4 * n * (n - 1) // 2


def default_max_sweeps(n: int) -> int:
    return 3 * n


# --- MDP ---

@dataclass(frozen=True)
class MdpState:
    """One player's board: the matrix and how many rotations it has used."""

    matrix: SymmetricMatrix
    step: int
    max_depth: int
    threshold: float

    @classmethod
    def initial(
        cls,
        m: SymmetricMatrix,
        max_depth: Optional[int] = None,
        threshold: Optional[float] = None,
    ) -> "MdpState":
        return cls(
            matrix=m,
            step=0,
            max_depth=default_max_depth(m.n) if max_depth is None else max_depth,
            threshold=default_threshold(m) if threshold is None else threshold,
        )

    @property
    def diagonalized(self) -> bool:
        return is_diagonalized(self.matrix, self.threshold)

    @property
    def done(self) -> bool:
        """Diagonalized, or no pivot left above tol."""
        return self.diagonalized or not nonzero_pivots(self.matrix)

    @property
    def out_of_budget(self) -> bool:
        return self.step >= self.max_depth


def mdp_legal_actions(s: MdpState, constrain: bool = False) -> List[PivotAction]:
    """Pivots with ``|m_pq| > tol``; empty once the board is diagonalized.

    With ``constrain`` only the N pivots closest to the diagonal
    (``q - p`` ascending, row-major tie-break) are kept, in that order.
    """
    if s.diagonalized:
        return []
    actions = nonzero_pivots(s.matrix)
    if constrain:
        actions = sorted(actions, key=lambda a: (a.q - a.p, a.p))[: s.matrix.n]
    return actions


def mdp_step(s: MdpState, a: PivotAction) -> MdpState:
    """Rotate ``a`` to zero and advance the step counter."""
    n = s.matrix.n
    if not (0 <= a.p < a.q < n) or s.diagonalized or abs(s.matrix.entries[a.p, a.q]) <= s.matrix.tol:
        raise IllegalAction(f"pivot {tuple(a)} is not legal in this state")
    return replace(s, matrix=rotate(s.matrix, PivotAction(a.p, a.q)), step=s.step + 1)


def race_outcome(finished: Sequence[bool], tie_value: float = 0.0) -> List[float]:
    """Terminal values of a race, one per player.

    Nobody finished: everyone -1. Everybody finished in the same round:
    everyone ``tie_value``. Otherwise finishers +1 and the rest -1.
    """
    if not any(finished):
        return [-1.0] * len(finished)
    if all(finished):
        return [float(tie_value)] * len(finished)
    return [1.0 if f else -1.0 for f in finished]


def mdp_terminal_value(states: Sequence[MdpState], player: int, tie_value: float = 0.0) -> float:
    """Value for ``player`` once a completed round ends the race.

    The race is over when some board is finished or every board has used
    its rotation budget.
    """
    finished = [s.done for s in states]
    if not any(finished) and not all(s.out_of_budget for s in states):
        raise GameNotOver("no player has finished and budgets remain")
    return race_outcome(finished, tie_value)[player]


# --- SMDP ---

@dataclass(frozen=True)
class SmdpState:
    """Matrix plus sweep bookkeeping for option selection."""

    matrix: SymmetricMatrix
    sweeps_taken: int
    primitive_rotations: int
    max_sweeps: int
    threshold: float
    last_option: Optional[int] = None

    @classmethod
    def initial(
        cls,
        m: SymmetricMatrix,
        max_sweeps: Optional[int] = None,
        threshold: Optional[float] = None,
    ) -> "SmdpState":
        return cls(
            matrix=m,
            sweeps_taken=0,
            primitive_rotations=0,
            max_sweeps=default_max_sweeps(m.n) if max_sweeps is None else max_sweeps,
            threshold=default_threshold(m) if threshold is None else threshold,
        )

    @property
    def diagonalized(self) -> bool:
        return is_diagonalized(self.matrix, self.threshold)

    @property
    def done(self) -> bool:
        return self.diagonalized or not nonzero_pivots(self.matrix)

    @property
    def timed_out(self) -> bool:
        return self.sweeps_taken >= self.max_sweeps and not self.done

    @property
    def terminal(self) -> bool:
        return self.done or self.sweeps_taken >= self.max_sweeps


def smdp_timeout_penalty(s: SmdpState) -> float:
    """``-Σ_{p<q} |m_pq|``, the off-diagonal mass left at timeout."""
    return -float(np.sum(np.abs(strict_upper_values(s.matrix))))


def smdp_step(
    s: SmdpState,
    opt: SweepOption,
    rewards: Optional[RewardConfig] = None,
) -> Tuple[SmdpState, float, int]:
    """Run one full sweep of ``opt``.

    Reward is ``-ε·r`` for the ``r`` rotations performed; the sweep that
    uses up ``max_sweeps`` without diagonalizing also carries the timeout
    penalty. A sweep over a finished matrix performs no rotation.

    Raises:
        StepOnTerminal: the sweep budget is already spent.
    """
    rewards = rewards or RewardConfig()
    if s.sweeps_taken >= s.max_sweeps:
        raise StepOnTerminal(f"sweep budget of {s.max_sweeps} already used")
    opt = SweepOption(opt)
    result = run_sweep(s.matrix, opt)
    nxt = replace(
        s,
        matrix=result.matrix,
        sweeps_taken=s.sweeps_taken + 1,
        primitive_rotations=s.primitive_rotations + result.rotations,
        last_option=opt.id,
    )
    reward = -rewards.epsilon * result.rotations
    if nxt.timed_out:
        reward += smdp_timeout_penalty(nxt)
        logger.debug("sweep budget exhausted with off_norm %.3e", nxt.matrix.off_norm)
    return nxt, reward, result.rotations


# --- Keys and returns ---

def state_key(m: SymmetricMatrix) -> str:
    """Hashable key of the upper triangle quantized to 6 decimals."""
    # +0.0 folds -0.0 into 0.0; float bytes keep huge entries exact
    quantized = np.round(upper_values(m), 6) + 0.0
    digest = hashlib.blake2b(quantized.tobytes(), digest_size=16).hexdigest()
    return f"{m.n}:{digest}"


def discounted_return(rewards: Sequence[float], discount: float = 1.0) -> float:
    """``Σ γ^t r_t``."""
    total = 0.0
    for r in reversed(rewards):
        total = r + discount * total
    return total


def returns_to_go(rewards: Sequence[float], discount: float = 1.0) -> List[float]:
    """Discounted return from every step onward."""
    out = [0.0] * len(rewards)
    running = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        running = rewards[t] + discount * running
        out[t] = running
    return out


# --- Decision log ---

@dataclass
class DecisionLogger:
    """Appends one JSON line per decision; ``context`` is merged into every record."""

    path: Path
    context: Dict[str, Any] = field(default_factory=dict)
    records: int = field(default=0, init=False)

    def log(
        self,
        key: str,
        legal_actions: Sequence[Any],
        policy_target: Sequence[float],
        action: Any,
        reward: float,
        done: bool,
        **extra: Any,
    ) -> None:
        record: Dict[str, Any] = {
            "state_key": key,
            "legal_actions": [_jsonable(a) for a in legal_actions],
            "policy_target": [float(x) for x in policy_target],
            "action": _jsonable(action),
            "reward": float(reward),
            "done": bool(done),
        }
        record.update(self.context)
        record.update(extra)
        self.records += append_jsonl(self.path, [record])


def _jsonable(action: Any) -> Any:
    if isinstance(action, PivotAction):
        return [action.p, action.q]
    if isinstance(action, SweepOption):
        return action.id
    return action


def run_fixed_option(s: SmdpState, opt: SweepOption, rewards: Optional[RewardConfig] = None) -> SmdpState:
    """Repeat one ordering until the episode ends."""
    while not s.terminal:
        s, _, _ = smdp_step(s, opt, rewards)
    return s
