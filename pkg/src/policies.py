"""Pivot and option policies used by self-play, gating and benchmarks.

A pivot policy sees the whole race (every board and its own seat) so a
search-based player can look at the opponent's board. An option policy
sees the SMDP state.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Protocol, Sequence, Tuple

import numpy as np

from .approximator import ModelParams, build_graph, forward
from .env import MdpState, SmdpState, mdp_legal_actions, mdp_step
from .matrix_core import (
    PivotAction,
    SymmetricMatrix,
    max_elem_action,
    num_pivots,
    strict_upper_index,
    zero_pivot_inplace,
)
from .mcts import (
    Evaluator,
    OptionGame,
    RaceGame,
    Window,
    option_context,
    pivot_game_for,
    search,
)
from .models import RewardConfig, SearchConfig
from .orderings import NUM_OPTIONS, SweepOption, all_options

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Turn:
    """A player's view of the race when it is their move."""

    boards: Tuple[MdpState, ...]
    seat: int
    window: Window = None

    @property
    def state(self) -> MdpState:
        return self.boards[self.seat]


@dataclass(frozen=True)
class Decision:
    """Chosen action plus the policy target over the mover's own slots (if any)."""

    action: object
    target: Optional[np.ndarray] = None


class PivotPolicy(Protocol):
    name: str

    def decide(self, turn: Turn, rng: np.random.Generator) -> Decision: ...


class OptionPolicy(Protocol):
    name: str

    def decide(self, state: SmdpState, rng: np.random.Generator) -> Decision: ...


def onehot(size: int, index: int) -> np.ndarray:
    out = np.zeros(size)
    out[index] = 1.0
    return out


# --- Pivot policies ---

class MaxElemPolicy:
    """Classical Jacobi: rotate the largest off-diagonal entry."""

    name = "maxelem"

    def __init__(self, constrain: bool = False) -> None:
        self.constrain = constrain

    def decide(self, turn: Turn, rng: np.random.Generator) -> Decision:
        s = turn.state
        action = max_elem_action(s.matrix, mdp_legal_actions(s, self.constrain))
        if action is None:
            raise ValueError("no legal pivot")
        return Decision(action, onehot(num_pivots(s.matrix.n), strict_upper_index(action, s.matrix.n)))

    def __call__(self, s: MdpState) -> PivotAction:
        action = max_elem_action(s.matrix, mdp_legal_actions(s, self.constrain))
        assert action is not None
        return action


class RandomPolicy:
    """Uniform over legal pivots."""

    name = "random"

    def __init__(self, constrain: bool = False) -> None:
        self.constrain = constrain

    def decide(self, turn: Turn, rng: np.random.Generator) -> Decision:
        actions = mdp_legal_actions(turn.state, self.constrain)
        return Decision(actions[int(rng.integers(len(actions)))])


def _finishes_within(a: np.ndarray, depth: int, threshold: float, tol: float, rows: np.ndarray, cols: np.ndarray) -> bool:
    upper = a[rows, cols]
    if np.sqrt(2.0 * float(np.dot(upper, upper))) < threshold:
        return True
    live = np.flatnonzero(np.abs(upper) > tol)
    if live.size == 0:
        return True
    if depth == 0:
        return False
    for k in live:
        b = a.copy()
        zero_pivot_inplace(b, int(rows[k]), int(cols[k]))
        if _finishes_within(b, depth - 1, threshold, tol, rows, cols):
            return True
    return False


def min_rotations(m: SymmetricMatrix, threshold: float, max_depth: int) -> Optional[int]:
    """Fewest rotations that diagonalize ``m`` (iterative deepening), or ``None`` past ``max_depth``."""
    rows, cols = np.triu_indices(m.n, 1)
    a = m.copy_entries()
    for depth in range(max_depth + 1):
        if _finishes_within(a, depth, threshold, m.tol, rows, cols):
            return depth
    return None


class ExhaustivePolicy:
    """Brute-force optimal pivot; only practical for N <= 4."""

    name = "exhaustive"

    def decide(self, turn: Turn, rng: np.random.Generator) -> Decision:
        s = turn.state
        best: Optional[PivotAction] = None
        best_len: Optional[int] = None
        remaining = max(0, s.max_depth - s.step - 1)
        for action in mdp_legal_actions(s):
            nxt = mdp_step(s, action)
            length = min_rotations(nxt.matrix, s.threshold, remaining if best_len is None else min(remaining, best_len - 1))
            if length is not None and (best_len is None or length < best_len):
                best, best_len = action, length
        if best is None:
            best = max_elem_action(s.matrix, mdp_legal_actions(s))
        assert best is not None
        return Decision(best, onehot(num_pivots(s.matrix.n), strict_upper_index(best, s.matrix.n)))


def _sample(policy: np.ndarray, temperature: float, rng: np.random.Generator) -> int:
    if temperature == 0:
        return int(np.argmax(policy))
    return int(rng.choice(len(policy), p=policy))


class MctsPivotPolicy:
    """Search on the own board (or the whole race) and play from the visit policy."""

    name = "mcts"

    def __init__(self, evaluator: Evaluator, cfg: SearchConfig, rewards: Optional[RewardConfig] = None) -> None:
        self.evaluator = evaluator
        self.cfg = cfg
        self.rewards = rewards or RewardConfig()

    def decide(self, turn: Turn, rng: np.random.Generator) -> Decision:
        s = turn.state
        if self.cfg.race:
            game = RaceGame(
                tie_value=self.rewards.tie_value,
                constrain=self.cfg.constrain_actions,
                discount=self.rewards.discount,
                opponent=MaxElemPolicy(self.cfg.constrain_actions),
                searcher=turn.seat,
            )
            root = game.from_boards(turn.boards, ply=turn.seat)
        else:
            game = pivot_game_for(self.cfg)
            root = s
        result = search(game, root, self.cfg, self.evaluator, rng=rng, window=turn.window)
        idx = _sample(result.policy, self.cfg.temperature, rng)
        target = np.zeros(num_pivots(s.matrix.n))
        for action, p in zip(result.actions, result.policy):
            target[strict_upper_index(action, s.matrix.n)] = p
        return Decision(result.actions[idx], target)


class NetworkPivotPolicy:
    """Greedy on the network policy head, no search."""

    name = "network"

    def __init__(self, params: ModelParams, constrain: bool = False) -> None:
        self.params = params
        self.constrain = constrain

    def decide(self, turn: Turn, rng: np.random.Generator) -> Decision:
        s = turn.state
        out = forward(build_graph(s.matrix), self.params)
        actions = mdp_legal_actions(s, self.constrain)
        scores = [out.policy[strict_upper_index(a, s.matrix.n)] for a in actions]
        best = actions[int(np.argmax(scores))]
        return Decision(best, out.policy[: num_pivots(s.matrix.n)].copy())


# --- Option policies ---

class FixedOptionPolicy:
    """Always the same ordering."""

    def __init__(self, option: SweepOption) -> None:
        self.option = SweepOption(option)
        self.name = f"option:{self.option.id}"

    def decide(self, state: SmdpState, rng: np.random.Generator) -> Decision:
        return Decision(self.option, onehot(NUM_OPTIONS, self.option.id))


class DistributionReplayPolicy:
    """Sample each sweep's option from a recorded per-stage distribution.

    Stages past the table, or rows that were never populated, reuse the
    last populated row.
    """

    name = "distribution"

    def __init__(self, stage_probabilities: np.ndarray) -> None:
        table = np.asarray(stage_probabilities, dtype=np.float64)
        if table.ndim != 2 or table.shape[1] != NUM_OPTIONS:
            raise ValueError(f"expected a (stages, {NUM_OPTIONS}) table, got {table.shape}")
        self.rows: List[Optional[np.ndarray]] = []
        for row in table:
            total = np.nansum(row)
            self.rows.append(None if not total > 0 else np.nan_to_num(row) / total)
        if all(r is None for r in self.rows):
            raise ValueError("distribution has no populated stage")

    def _row(self, stage: int) -> np.ndarray:
        for k in range(min(stage, len(self.rows) - 1), -1, -1):
            row = self.rows[k]
            if row is not None:
                return row
        return next(r for r in self.rows if r is not None)

    def decide(self, state: SmdpState, rng: np.random.Generator) -> Decision:
        row = self._row(state.sweeps_taken)
        if np.count_nonzero(row) == 1:
            idx = int(np.argmax(row))
        else:
            idx = int(rng.choice(NUM_OPTIONS, p=row))
        return Decision(SweepOption(idx), row.copy())


class MctsOptionPolicy:
    """Search over options; plays from the visit policy."""

    name = "mcts"

    def __init__(self, evaluator: Evaluator, cfg: SearchConfig, rewards: Optional[RewardConfig] = None) -> None:
        self.evaluator = evaluator
        self.cfg = cfg
        self.game = OptionGame(rewards, rollout_option=cfg.rollout_option)

    def decide(self, state: SmdpState, rng: np.random.Generator) -> Decision:
        result = search(self.game, state, self.cfg, self.evaluator, rng=rng)
        idx = _sample(result.policy, self.cfg.temperature, rng)
        return Decision(result.actions[idx], result.policy_vector(self.game, state))


class NetworkOptionPolicy:
    """Greedy on the option head, no search."""

    name = "network"

    def __init__(self, params: ModelParams) -> None:
        self.params = params

    def decide(self, state: SmdpState, rng: np.random.Generator) -> Decision:
        out = forward(build_graph(state.matrix), self.params, context=option_context(state.last_option))
        return Decision(SweepOption(int(np.argmax(out.policy))), out.policy.copy())


def baseline_policies() -> List[FixedOptionPolicy]:
    return [FixedOptionPolicy(opt) for opt in all_options()]

