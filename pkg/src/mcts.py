"""AlphaZero-style tree search over the pivot and option decision processes.

One engine, three games:

- ``PivotGame``: the mover's own board; diagonalizing scores +1, running
  out of rotations scores -1, and ``depth_discount`` makes shorter
  diagonalizations worth more.
- ``RaceGame``: both boards of a two-player race with alternating plies.
  A race is adjudicated after every complete round.
- ``OptionGame``: the sweep-ordering SMDP, rewards scaled into [-1, 1].

Backups carry one value per player, ``G = r + γ·G_child``.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from .env import (
    MdpState,
    SmdpState,
    mdp_legal_actions,
    mdp_step,
    race_outcome,
    smdp_step,
    state_key,
)
from .errors import NoLegalActions, TerminalRoot
from .matrix_core import PivotAction, SymmetricMatrix, max_elem_action, num_pivots, strict_upper_index
from .models import RewardConfig, SearchConfig
from .orderings import NUM_OPTIONS, SweepOption, all_options

logger = logging.getLogger(__name__)

Window = Optional[Tuple[int, int]]


# --- Game and evaluator protocols ---

class SearchGame(Protocol):
    """What the search needs to know about a decision process."""

    num_players: int
    discount: float
    # MaxElem guidance applies (pivot actions on game.matrix(state))
    pivot_guided: bool

    def legal_actions(self, state: Any) -> Sequence[Any]: ...

    def step(self, state: Any, action: Any) -> Tuple[Any, np.ndarray]: ...

    def terminal_values(self, state: Any) -> Optional[np.ndarray]: ...

    def to_play(self, state: Any) -> int: ...

    def key(self, state: Any) -> str: ...

    def matrix(self, state: Any) -> SymmetricMatrix: ...

    def timestep(self, state: Any) -> int: ...

    def context(self, state: Any) -> Optional[np.ndarray]: ...

    def policy_size(self, state: Any) -> int: ...

    def action_slot(self, state: Any, action: Any) -> int: ...

    def value_vector(self, state: Any, value: float) -> np.ndarray: ...

    def rollout_values(self, state: Any) -> np.ndarray: ...


class Evaluator(Protocol):
    """Leaf evaluation: priors over ``game.legal_actions(state)`` and per-player values."""

    def evaluate(self, game: SearchGame, state: Any) -> Tuple[np.ndarray, np.ndarray]: ...


class UniformEvaluator:
    """Uniform priors, neutral value."""

    def evaluate(self, game: SearchGame, state: Any) -> Tuple[np.ndarray, np.ndarray]:
        k = len(game.legal_actions(state))
        return np.full(k, 1.0 / k), np.zeros(game.num_players)


class RolloutEvaluator:
    """Uniform priors, value from the game's heuristic continuation."""

    def evaluate(self, game: SearchGame, state: Any) -> Tuple[np.ndarray, np.ndarray]:
        k = len(game.legal_actions(state))
        return np.full(k, 1.0 / k), game.rollout_values(state)


# --- Heavy rollouts and cutoff ---

def heavy_rollout_window(max_depth: int, rng: np.random.Generator) -> Tuple[int, int]:
    """Draw ``(t_start, t_end)`` uniformly from ``[1, D]``; empty when ``t_end <= t_start``."""
    if max_depth < 1:
        raise ValueError(f"max_depth must be >= 1, got {max_depth}")
    t_start = int(rng.integers(1, max_depth + 1))
    t_end = int(rng.integers(1, max_depth + 1))
    return t_start, t_end


def window_active(window: Window, t: int) -> bool:
    if window is None:
        return False
    t_start, t_end = window
    return t_end > t_start and t_start < t < t_end


def guided_expand(
    priors: np.ndarray,
    actions: Sequence[PivotAction],
    t: int,
    window: Window,
    matrix: SymmetricMatrix,
    mix: float = 0.75,
) -> np.ndarray:
    """Mix a one-hot on the MaxElem action into the priors inside the window.

    Outside the window (or with an empty one) the input array is returned
    as is.
    """
    if not window_active(window, t):
        return priors
    idx = _maxelem_index(matrix, actions)
    if idx is None:
        return priors
    # (1-λ)·P + λ·onehot(MaxElem)
    onehot = np.zeros_like(priors)
    onehot[idx] = 1.0
    return (1.0 - mix) * priors + mix * onehot


def depth_cutoff_check(s: MdpState, max_depth: Optional[int] = None) -> bool:
    """Out of rotations without finishing; searched as a loss."""
    depth = s.max_depth if max_depth is None else max_depth
    return s.step >= depth and not s.done


# --- Games ---

def _maxelem_index(matrix: SymmetricMatrix, actions: Sequence[PivotAction]) -> Optional[int]:
    best = max_elem_action(matrix, actions)
    return None if best is None else list(actions).index(best)


class PivotGame:
    """Single board, MDP pivot selection."""

    num_players = 1
    pivot_guided = True

    def __init__(
        self,
        constrain: bool = False,
        discount: float = 0.95,
        policy_size: Optional[int] = None,
    ) -> None:
        self.constrain = constrain
        self.discount = discount
        self._policy_size = policy_size

    def initial(self, m: SymmetricMatrix, max_depth: Optional[int] = None, threshold: Optional[float] = None) -> MdpState:
        return MdpState.initial(m, max_depth=max_depth, threshold=threshold)

    def legal_actions(self, state: MdpState) -> List[PivotAction]:
        if self.terminal_values(state) is not None:
            return []
        return mdp_legal_actions(state, self.constrain)

    def step(self, state: MdpState, action: PivotAction) -> Tuple[MdpState, np.ndarray]:
        return mdp_step(state, action), np.zeros(1)

    def terminal_values(self, state: MdpState) -> Optional[np.ndarray]:
        if state.done:
            return np.ones(1)
        if depth_cutoff_check(state):
            return -np.ones(1)
        return None

    def to_play(self, state: MdpState) -> int:
        return 0

    def key(self, state: MdpState) -> str:
        return f"{state_key(state.matrix)}@{state.step}"

    def matrix(self, state: MdpState) -> SymmetricMatrix:
        return state.matrix

    def timestep(self, state: MdpState) -> int:
        return state.step

    def context(self, state: MdpState) -> Optional[np.ndarray]:
        return None

    def policy_size(self, state: MdpState) -> int:
        return self._policy_size or num_pivots(state.matrix.n)

    def action_slot(self, state: MdpState, action: PivotAction) -> int:
        return strict_upper_index(action, state.matrix.n)

    def value_vector(self, state: MdpState, value: float) -> np.ndarray:
        return np.array([value], dtype=np.float64)

    def rollout_values(self, state: MdpState) -> np.ndarray:
        """MaxElem to the end: ``γ^k`` if it finishes after ``k`` more rotations, else ``-γ^k``."""
        scale = 1.0
        while True:
            terminal = self.terminal_values(state)
            if terminal is not None:
                return scale * terminal
            action = max_elem_action(state.matrix, mdp_legal_actions(state, self.constrain))
            assert action is not None
            state = mdp_step(state, action)
            scale *= self.discount


@dataclass(frozen=True)
class RaceState:
    """Boards of all players and the ply counter (``to_play = ply % players``)."""

    boards: Tuple[MdpState, ...]
    ply: int = 0

    @property
    def round_complete(self) -> bool:
        return self.ply % len(self.boards) == 0


PivotChooser = Callable[[MdpState], PivotAction]


class RaceGame:
    """Two-player race where each ply rotates the mover's own board.

    With ``opponent`` set, that player's plies are played automatically
    and the search branches only on ``searcher``'s moves.
    """

    num_players = 2
    pivot_guided = True

    def __init__(
        self,
        tie_value: float = 0.0,
        constrain: bool = False,
        discount: float = 1.0,
        policy_size: Optional[int] = None,
        opponent: Optional[PivotChooser] = None,
        searcher: int = 0,
    ) -> None:
        self.tie_value = tie_value
        self.constrain = constrain
        self.discount = discount
        self._policy_size = policy_size
        self.opponent = opponent
        self.searcher = searcher

    def initial(self, m: SymmetricMatrix, max_depth: Optional[int] = None, threshold: Optional[float] = None) -> RaceState:
        board = MdpState.initial(m, max_depth=max_depth, threshold=threshold)
        return self._advance(RaceState(boards=(board,) * self.num_players, ply=0))

    def from_boards(self, boards: Sequence[MdpState], ply: int) -> RaceState:
        return self._advance(RaceState(boards=tuple(boards), ply=ply))

    def to_play(self, state: RaceState) -> int:
        return state.ply % self.num_players

    def terminal_values(self, state: RaceState) -> Optional[np.ndarray]:
        if not state.round_complete:
            return None
        finished = [b.done for b in state.boards]
        if any(finished):
            return np.array(race_outcome(finished, self.tie_value))
        if all(b.out_of_budget for b in state.boards):
            return -np.ones(self.num_players)
        return None

    def legal_actions(self, state: RaceState) -> List[PivotAction]:
        if self.terminal_values(state) is not None:
            return []
        return mdp_legal_actions(state.boards[self.to_play(state)], self.constrain)

    def _move(self, state: RaceState, action: PivotAction) -> RaceState:
        mover = self.to_play(state)
        boards = list(state.boards)
        boards[mover] = mdp_step(boards[mover], action)
        return RaceState(boards=tuple(boards), ply=state.ply + 1)

    def _advance(self, state: RaceState) -> RaceState:
        # Finished boards pass; the automatic opponent plays its ply.
        while self.terminal_values(state) is None:
            mover = self.to_play(state)
            board = state.boards[mover]
            if board.done:
                state = replace(state, ply=state.ply + 1)
            elif self.opponent is not None and mover != self.searcher:
                state = self._move(state, self.opponent(board))
            else:
                break
        return state

    def step(self, state: RaceState, action: PivotAction) -> Tuple[RaceState, np.ndarray]:
        return self._advance(self._move(state, action)), np.zeros(self.num_players)

    def key(self, state: RaceState) -> str:
        boards = "|".join(f"{state_key(b.matrix)}@{b.step}" for b in state.boards)
        return f"{state.ply}#{boards}"

    def matrix(self, state: RaceState) -> SymmetricMatrix:
        return state.boards[self.to_play(state)].matrix

    def timestep(self, state: RaceState) -> int:
        return state.boards[self.to_play(state)].step

    def context(self, state: RaceState) -> Optional[np.ndarray]:
        return None

    def policy_size(self, state: RaceState) -> int:
        return self._policy_size or num_pivots(self.matrix(state).n)

    def action_slot(self, state: RaceState, action: PivotAction) -> int:
        return strict_upper_index(action, self.matrix(state).n)

    def value_vector(self, state: RaceState, value: float) -> np.ndarray:
        # Zero-sum: what the mover gains every other player loses.
        out = np.full(self.num_players, -value, dtype=np.float64)
        out[self.to_play(state)] = value
        return out

    def rollout_values(self, state: RaceState) -> np.ndarray:
        """Both players continue with MaxElem until the race is decided."""
        scale = 1.0
        while True:
            terminal = self.terminal_values(state)
            if terminal is not None:
                return scale * terminal
            actions = self.legal_actions(state)
            action = max_elem_action(self.matrix(state), actions)
            assert action is not None
            state, _ = self.step(state, action)
            scale *= self.discount


class OptionGame:
    """Sweep-ordering selection; rewards divided by ``ε·N(N-1)/2·max_sweeps``."""

    num_players = 1
    pivot_guided = False

    def __init__(self, rewards: Optional[RewardConfig] = None, rollout_option: int = 4) -> None:
        self.rewards = rewards or RewardConfig()
        self.discount = self.rewards.discount
        self.rollout_option = SweepOption(rollout_option)

    def initial(self, m: SymmetricMatrix, max_sweeps: Optional[int] = None, threshold: Optional[float] = None) -> SmdpState:
        return SmdpState.initial(m, max_sweeps=max_sweeps, threshold=threshold)

    def reward_scale(self, state: SmdpState) -> float:
        return self.rewards.epsilon * num_pivots(state.matrix.n) * state.max_sweeps

    def legal_actions(self, state: SmdpState) -> List[SweepOption]:
        return [] if state.terminal else all_options()

    def step(self, state: SmdpState, action: SweepOption) -> Tuple[SmdpState, np.ndarray]:
        nxt, reward, _ = smdp_step(state, action, self.rewards)
        scaled = float(np.clip(reward / self.reward_scale(state), -1.0, 1.0))
        return nxt, np.array([scaled])

    def terminal_values(self, state: SmdpState) -> Optional[np.ndarray]:
        return np.zeros(1) if state.terminal else None

    def to_play(self, state: SmdpState) -> int:
        return 0

    def key(self, state: SmdpState) -> str:
        return f"{state_key(state.matrix)}@{state.sweeps_taken}"

    def matrix(self, state: SmdpState) -> SymmetricMatrix:
        return state.matrix

    def timestep(self, state: SmdpState) -> int:
        return state.sweeps_taken

    def context(self, state: SmdpState) -> Optional[np.ndarray]:
        return option_context(state.last_option)

    def policy_size(self, state: SmdpState) -> int:
        return NUM_OPTIONS

    def action_slot(self, state: SmdpState, action: SweepOption) -> int:
        return int(action)

    def value_vector(self, state: SmdpState, value: float) -> np.ndarray:
        return np.array([value], dtype=np.float64)

    def rollout_values(self, state: SmdpState) -> np.ndarray:
        """Repeat ``rollout_option`` until the episode ends."""
        total, scale = 0.0, 1.0
        while not state.terminal:
            state, r = self.step(state, self.rollout_option)
            total += scale * float(r[0])
            scale *= self.discount
        return np.array([max(-1.0, total)])


def option_context(last_option: Optional[int]) -> np.ndarray:
    """One-hot of the previous option; slot 8 means no option taken yet."""
    ctx = np.zeros(NUM_OPTIONS + 1)
    ctx[NUM_OPTIONS if last_option is None else int(last_option)] = 1.0
    return ctx


# --- Tree ---

@dataclass
class SearchNode:
    """Per-action statistics of one expanded state."""

    key: str
    state: Any
    to_play: int
    actions: List[Any] = field(default_factory=list)
    priors: np.ndarray = field(default_factory=lambda: np.zeros(0))
    visit_counts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    total_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    children: Dict[int, "SearchNode"] = field(default_factory=dict)
    edge_rewards: Dict[int, np.ndarray] = field(default_factory=dict)
    terminal: Optional[np.ndarray] = None
    expanded: bool = False

    def q_values(self) -> np.ndarray:
        return self.total_values / np.maximum(1, self.visit_counts)

    def select(self, c_puct: float) -> int:
        """PUCT argmax; ties go to the lowest index."""
        total = float(self.visit_counts.sum())
        u = c_puct * self.priors * math.sqrt(total) / (1.0 + self.visit_counts)
        return int(np.argmax(self.q_values() + u))


@dataclass
class SearchTrace:
    """Chosen ``(state_key, action_slot)`` path of every simulation."""

    simulations: List[List[Tuple[str, int]]] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({"simulations": self.simulations})

    def write(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json(), encoding="utf-8")


@dataclass
class SearchResult:
    """Root statistics and the visit-count policy."""

    actions: List[Any]
    visit_counts: np.ndarray
    policy: np.ndarray
    root_value: float
    trace: Optional[SearchTrace] = None

    def best_action(self) -> Any:
        return self.actions[int(np.argmax(self.visit_counts))]

    def policy_vector(self, game: SearchGame, state: Any) -> np.ndarray:
        """Policy laid out on the game's slot vector; other slots are 0."""
        out = np.zeros(game.policy_size(state))
        for action, p in zip(self.actions, self.policy):
            out[game.action_slot(state, action)] = p
        return out


def visit_policy(visit_counts: np.ndarray, temperature: float) -> np.ndarray:
    """``π ∝ N^(1/T)``; one-hot at the lowest-index argmax when ``T == 0``."""
    counts = np.asarray(visit_counts, dtype=np.float64)
    if temperature == 0 or counts.sum() == 0:
        out = np.zeros_like(counts)
        out[int(np.argmax(counts))] = 1.0
        return out
    with np.errstate(divide="ignore"):
        logs = np.log(counts)
    logs = (logs - logs.max()) / temperature
    weights = np.exp(logs)
    return weights / weights.sum()


class MCTS:
    """Select, expand, evaluate and back up ``num_simulations`` times from a root."""

    def __init__(
        self,
        game: SearchGame,
        evaluator: Evaluator,
        cfg: Optional[SearchConfig] = None,
        rng: Optional[np.random.Generator] = None,
        window: Window = None,
        record_trace: bool = False,
    ) -> None:
        self.game = game
        self.evaluator = evaluator
        self.cfg = cfg or SearchConfig()
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.window = window if self.cfg.heavy_rollout else None
        self.record_trace = record_trace

    def _new_node(self, state: Any) -> SearchNode:
        return SearchNode(
            key=self.game.key(state),
            state=state,
            to_play=self.game.to_play(state),
            terminal=self.game.terminal_values(state),
        )

    def _expand(self, node: SearchNode) -> np.ndarray:
        """Evaluate and attach priors; returns the per-player leaf values."""
        actions = list(self.game.legal_actions(node.state))
        priors, values = self.evaluator.evaluate(self.game, node.state)
        priors = np.asarray(priors, dtype=np.float64)
        if self.window is not None and self.game.pivot_guided:
            priors = guided_expand(
                priors, actions, self.game.timestep(node.state), self.window,
                self.game.matrix(node.state), mix=self.cfg.heavy_mix,
            )
        node.actions = actions
        node.priors = priors
        node.visit_counts = np.zeros(len(actions), dtype=np.int64)
        node.total_values = np.zeros(len(actions))
        node.expanded = True
        return np.asarray(values, dtype=np.float64)

    def _add_noise(self, node: SearchNode) -> None:
        if self.cfg.dirichlet_alpha <= 0 or len(node.actions) < 2:
            return
        noise = self.rng.dirichlet([self.cfg.dirichlet_alpha] * len(node.actions))
        w = self.cfg.dirichlet_weight
        node.priors = (1.0 - w) * node.priors + w * noise

    def _simulate(self, root: SearchNode, trace: Optional[SearchTrace]) -> None:
        node = root
        path: List[Tuple[SearchNode, int]] = []
        while True:
            a = node.select(self.cfg.c_puct)
            path.append((node, a))
            child = node.children.get(a)
            if child is None:
                next_state, reward = self.game.step(node.state, node.actions[a])
                child = self._new_node(next_state)
                node.children[a] = child
                node.edge_rewards[a] = reward
                if child.terminal is not None:
                    value = child.terminal
                elif not self.game.legal_actions(next_state):
                    child.terminal = self.game.rollout_values(next_state)
                    value = child.terminal
                else:
                    value = self._expand(child)
                break
            if child.terminal is not None:
                value = child.terminal
                break
            node = child

        if trace is not None:
            trace.simulations.append(
                [(n.key, self.game.action_slot(n.state, n.actions[i])) for n, i in path]
            )
        self._backup(path, value)

    def _backup(self, path: List[Tuple[SearchNode, int]], leaf_values: np.ndarray) -> None:
        g = leaf_values
        for node, a in reversed(path):
            g = node.edge_rewards[a] + self.game.discount * g
            node.visit_counts[a] += 1
            node.total_values[a] += g[node.to_play]

    def run(self, root_state: Any) -> SearchResult:
        if self.game.terminal_values(root_state) is not None:
            raise TerminalRoot("search root is terminal")
        if not self.game.legal_actions(root_state):
            raise NoLegalActions("search root has no legal action")

        root = self._new_node(root_state)
        self._expand(root)
        self._add_noise(root)
        trace = SearchTrace() if self.record_trace else None
        for _ in range(self.cfg.num_simulations):
            self._simulate(root, trace)

        visits = root.visit_counts.copy()
        policy = visit_policy(visits, self.cfg.temperature)
        root_value = float(root.total_values.sum() / max(1, visits.sum()))
        logger.debug("search %s: visits=%s value=%.4f", root.key, visits.tolist(), root_value)
        return SearchResult(list(root.actions), visits, policy, root_value, trace)


def search(
    game: SearchGame,
    root: Any,
    cfg: SearchConfig,
    evaluator: Evaluator,
    rng: Optional[np.random.Generator] = None,
    window: Window = None,
    record_trace: bool = False,
) -> SearchResult:
    """Run one search and return the root visit policy."""
    return MCTS(game, evaluator, cfg, rng=rng, window=window, record_trace=record_trace).run(root)


def pivot_game_for(cfg: SearchConfig, policy_size: Optional[int] = None) -> PivotGame:
    """Single-board game configured from search settings."""
    return PivotGame(constrain=cfg.constrain_actions, discount=cfg.depth_discount, policy_size=policy_size)
