"""Self-play, synthetic demonstrations, training rounds and gating.

A training run alternates rounds of data generation and gradient descent.
Each round's candidate plays the champion on a held-out matrix pool and
replaces it only when it wins the gate.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import config
from .approximator import (
    ModelParams,
    NetworkEvaluator,
    OptimizerState,
    TrainingSample,
    init_params,
    load_params,
    save_params,
    train_step,
)
from .env import (
    DecisionLogger,
    MdpState,
    SmdpState,
    default_max_depth,
    default_max_sweeps,
    default_threshold,
    discounted_return,
    mdp_legal_actions,
    mdp_step,
    race_outcome,
    returns_to_go,
    run_fixed_option,
    smdp_step,
    state_key,
)
from .errors import EmptyTrainingData, StorageError
from .matrix_core import (
    PivotAction,
    SymmetricMatrix,
    generate_random_symmetric,
    max_elem_action,
    num_pivots,
    random_pool,
    strict_upper_index,
)
from .mcts import heavy_rollout_window, option_context
from .models import (
    GateResult,
    ManifestEntry,
    ModelConfig,
    RewardConfig,
    RunConfig,
    RunManifest,
    SearchConfig,
)
from .orderings import SweepOption, all_options
from .policies import (
    FixedOptionPolicy,
    MaxElemPolicy,
    MctsOptionPolicy,
    MctsPivotPolicy,
    OptionPolicy,
    PivotPolicy,
    Turn,
    onehot,
)
from .storage import (
    append_jsonl,
    append_table_row,
    assert_disjoint,
    checkpoints_dir,
    config_hash,
    effective_config_path,
    file_sha256,
    manifest_path,
    metrics_path,
    read_json_strict,
    read_jsonl,
    read_matrix,
    write_json,
)
from .workers import parallel_map

logger = logging.getLogger(__name__)

Action = Union[PivotAction, SweepOption]


# --- Episodes ---

@dataclass
class EpisodeRecord:
    """One decision: the state it was made in, the move and its target."""

    state_key: str
    action: Action
    policy: Optional[np.ndarray] = None
    reward: float = 0.0


@dataclass
class Episode:
    """One player's trajectory with its outcome and per-record value targets."""

    kind: str  # "mdp" or "smdp"
    matrix: SymmetricMatrix
    threshold: float
    budget: int  # rotation budget (mdp) or sweep budget (smdp)
    seat: int = 0
    player: str = ""
    source: str = "selfplay"
    records: List[EpisodeRecord] = field(default_factory=list)
    outcome: float = 0.0
    rotation_count: int = 0
    finished: bool = False  # diagonalized within the budget
    value_targets: List[float] = field(default_factory=list)

    @property
    def actions(self) -> List[Action]:
        return [r.action for r in self.records]

    def to_json(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "n": self.matrix.n,
            "matrix": self.matrix.entries.tolist(),
            "tol": self.matrix.tol,
            "threshold": self.threshold,
            "budget": self.budget,
            "seat": self.seat,
            "player": self.player,
            "source": self.source,
            "outcome": self.outcome,
            "rotation_count": self.rotation_count,
            "finished": self.finished,
            "value_targets": list(self.value_targets),
            "records": [
                {
                    "state_key": r.state_key,
                    "action": [r.action.p, r.action.q] if isinstance(r.action, PivotAction) else int(r.action),
                    "policy": None if r.policy is None else [float(x) for x in r.policy],
                    "reward": r.reward,
                }
                for r in self.records
            ],
        }

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "Episode":
        kind = data["kind"]
        records = []
        for r in data["records"]:
            action: Action = PivotAction(*r["action"]) if kind == "mdp" else SweepOption(r["action"])
            policy = None if r.get("policy") is None else np.asarray(r["policy"], dtype=np.float64)
            records.append(EpisodeRecord(r["state_key"], action, policy, float(r.get("reward", 0.0))))
        return cls(
            kind=kind,
            matrix=SymmetricMatrix(np.asarray(data["matrix"], dtype=np.float64), float(data["tol"])),
            threshold=float(data["threshold"]),
            budget=int(data["budget"]),
            seat=int(data.get("seat", 0)),
            player=data.get("player", ""),
            source=data.get("source", "selfplay"),
            records=records,
            outcome=float(data["outcome"]),
            rotation_count=int(data["rotation_count"]),
            finished=bool(data.get("finished", False)),
            value_targets=[float(v) for v in data.get("value_targets", [])],
        )

    def initial_state(self) -> Union[MdpState, SmdpState]:
        if self.kind == "mdp":
            return MdpState.initial(self.matrix, self.budget, self.threshold)
        return SmdpState.initial(self.matrix, self.budget, self.threshold)

    def final_state(self) -> Union[MdpState, SmdpState]:
        """State after the last record."""
        s = self.initial_state()
        for r in self.records:
            if isinstance(s, MdpState):
                s = mdp_step(s, r.action)  # type: ignore[arg-type]
            else:
                s, _, _ = smdp_step(s, r.action)  # type: ignore[arg-type]
        return s

    def states(self) -> List[Union[MdpState, SmdpState]]:
        """State before each record, re-executed from the initial matrix."""
        out: List[Union[MdpState, SmdpState]] = []
        s = self.initial_state()
        for r in self.records:
            out.append(s)
            if isinstance(s, MdpState):
                s = mdp_step(s, r.action)  # type: ignore[arg-type]
            else:
                s, _, _ = smdp_step(s, r.action)  # type: ignore[arg-type]
        return out


def replay_episode(episode: Episode) -> List[str]:
    """Re-run an episode and check every recorded state key.

    Raises:
        ValueError: a replayed state differs from the recorded one.
    """
    keys = []
    for t, (s, r) in enumerate(zip(episode.states(), episode.records)):
        key = state_key(s.matrix)
        if key != r.state_key:
            raise ValueError(f"replay diverged at step {t}: {key} != {r.state_key}")
        keys.append(key)
    return keys


# --- Games ---

def play_mdp_game(
    matrix: SymmetricMatrix,
    players: Sequence[PivotPolicy],
    max_depth: Optional[int],
    rng: np.random.Generator,
    rewards: Optional[RewardConfig] = None,
    heavy_rollout: bool = False,
    threshold: Optional[float] = None,
    decisions: Optional[DecisionLogger] = None,
) -> List[Episode]:
    """Race ``players`` on copies of ``matrix``; one episode per seat.

    Players move round-robin. After every full round the race ends when a
    board is done (winners +1, the rest -1, all-done is a tie) or every
    budget is spent (all -1). A finished board skips its turns.
    """
    rewards = rewards or RewardConfig()
    depth = default_max_depth(matrix.n) if max_depth is None else max_depth
    thr = default_threshold(matrix) if threshold is None else threshold
    boards = [MdpState.initial(matrix, depth, thr) for _ in players]
    window = heavy_rollout_window(depth, rng) if heavy_rollout and depth >= 1 else None
    records: List[List[EpisodeRecord]] = [[] for _ in players]

    while True:
        finished = [b.done for b in boards]
        if any(finished) or all(b.out_of_budget for b in boards):
            break
        for seat, player in enumerate(players):
            board = boards[seat]
            if board.done or board.out_of_budget:
                continue
            decision = player.decide(Turn(tuple(boards), seat, window), rng)
            key = state_key(board.matrix)
            legal = mdp_legal_actions(board) if decisions is not None else []
            boards[seat] = mdp_step(board, decision.action)
            records[seat].append(EpisodeRecord(key, decision.action, decision.target))
            if decisions is not None:
                decisions.log(
                    key,
                    legal,
                    [] if decision.target is None else decision.target,
                    decision.action,
                    0.0,
                    boards[seat].done,
                    seat=seat,
                )

    outcome = race_outcome([b.done for b in boards], rewards.tie_value)
    episodes = []
    for seat, player in enumerate(players):
        episodes.append(Episode(
            kind="mdp",
            matrix=matrix,
            threshold=thr,
            budget=depth,
            seat=seat,
            player=player.name,
            records=records[seat],
            outcome=outcome[seat],
            rotation_count=boards[seat].step,
            finished=boards[seat].done,
            value_targets=[outcome[seat]] * len(records[seat]),
        ))
    logger.debug("race on %dx%d finished with %s after %s rotations",
                 matrix.n, matrix.n, outcome, [b.step for b in boards])
    return episodes


def smdp_value_scale(n: int, max_sweeps: int, rewards: RewardConfig) -> float:
    """Return magnitude that maps onto a value of 1."""
    return max(rewards.epsilon * num_pivots(n) * max_sweeps, np.finfo(np.float64).tiny)


def play_smdp_episode(
    matrix: SymmetricMatrix,
    policy: OptionPolicy,
    max_sweeps: Optional[int],
    rng: np.random.Generator,
    rewards: Optional[RewardConfig] = None,
    threshold: Optional[float] = None,
    decisions: Optional[DecisionLogger] = None,
) -> Episode:
    """Pick options until diagonalized or out of sweeps."""
    rewards = rewards or RewardConfig()
    s = SmdpState.initial(matrix, max_sweeps, threshold)
    records: List[EpisodeRecord] = []
    while not s.terminal:
        decision = policy.decide(s, rng)
        key = state_key(s.matrix)
        s, reward, _ = smdp_step(s, decision.action, rewards)
        records.append(EpisodeRecord(key, SweepOption(decision.action), decision.target, reward))
        if decisions is not None:
            decisions.log(
                key,
                [o.id for o in all_options()],
                [] if decision.target is None else decision.target,
                decision.action,
                reward,
                s.terminal,
            )
    step_rewards = [r.reward for r in records]
    scale = smdp_value_scale(matrix.n, s.max_sweeps, rewards)
    targets = [float(np.clip(g / scale, -1.0, 1.0)) for g in returns_to_go(step_rewards, rewards.discount)]
    return Episode(
        kind="smdp",
        matrix=matrix,
        threshold=s.threshold,
        budget=s.max_sweeps,
        player=policy.name,
        records=records,
        outcome=discounted_return(step_rewards, rewards.discount),
        rotation_count=s.primitive_rotations,
        finished=s.done,
        value_targets=targets,
    )


# --- Synthetic demonstrations ---

def _seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**63 - 1))


def _maxelem_finishes(s: MdpState) -> bool:
    while not s.done:
        if s.out_of_budget:
            return False
        action = max_elem_action(s.matrix)
        if action is None:
            return True
        s = mdp_step(s, action)
    return True


def make_synthetic_demos(
    n: int,
    count: int,
    rng: np.random.Generator,
    max_depth: Optional[int] = None,
    threshold_rel: Optional[float] = None,
    random_transitions: bool = True,
) -> List[Episode]:
    """MaxElem demonstrations plus random-rotation transitions.

    Every demo state gets a one-hot target at the MaxElem pivot and value +1.
    A random transition starts from a few random rotations; its target is the
    MaxElem pivot and its value says whether MaxElem finishes in the budget
    left.
    """
    depth = default_max_depth(n) if max_depth is None else max_depth
    slots = num_pivots(n)
    out: List[Episode] = []
    for _ in range(count):
        m = generate_random_symmetric(n, _seed(rng))
        thr = default_threshold(m, threshold_rel)
        s = MdpState.initial(m, depth, thr)
        records = []
        while not s.done and not s.out_of_budget:
            action = max_elem_action(s.matrix)
            if action is None:
                break
            records.append(EpisodeRecord(state_key(s.matrix), action, onehot(slots, strict_upper_index(action, n))))
            s = mdp_step(s, action)
        value = 1.0 if s.done else -1.0
        out.append(Episode(
            kind="mdp", matrix=m, threshold=thr, budget=depth, player="maxelem", source="demo",
            records=records, outcome=value, rotation_count=s.step, finished=s.done, value_targets=[value] * len(records),
        ))

        if not random_transitions:
            continue
        s = MdpState.initial(m, depth, thr)
        for _ in range(int(rng.integers(1, max(1, depth // 2) + 1))):
            if s.done:
                break
            legal = mdp_legal_actions(s)
            s = mdp_step(s, legal[int(rng.integers(len(legal)))])
        if s.done:
            continue
        action = max_elem_action(s.matrix)
        if action is None:
            continue
        remaining = MdpState.initial(s.matrix, depth - s.step, thr)
        value = 1.0 if _maxelem_finishes(remaining) else -1.0
        out.append(Episode(
            kind="mdp", matrix=s.matrix, threshold=thr, budget=depth - s.step, player="maxelem",
            source="random",
            records=[EpisodeRecord(state_key(s.matrix), action, onehot(slots, strict_upper_index(action, n)))],
            outcome=value, rotation_count=0, value_targets=[value],
        ))
    return out


def best_fixed_option(
    m: SymmetricMatrix,
    max_sweeps: Optional[int] = None,
    threshold: Optional[float] = None,
) -> SweepOption:
    """Cheapest converging ordering for ``m`` (lowest id on ties)."""
    best, best_count = SweepOption(0), None
    for opt in all_options():
        end = run_fixed_option(SmdpState.initial(m, max_sweeps, threshold), opt)
        count = end.primitive_rotations if end.done else float("inf")
        if best_count is None or count < best_count:
            best, best_count = opt, count
    return best


def make_synthetic_option_demos(
    n: int,
    count: int,
    rng: np.random.Generator,
    rewards: Optional[RewardConfig] = None,
    max_sweeps: Optional[int] = None,
    threshold_rel: Optional[float] = None,
) -> List[Episode]:
    """Episodes that repeat the best fixed ordering of each random matrix."""
    out = []
    for _ in range(count):
        m = generate_random_symmetric(n, _seed(rng))
        thr = default_threshold(m, threshold_rel)
        opt = best_fixed_option(m, max_sweeps, thr)
        ep = play_smdp_episode(m, FixedOptionPolicy(opt), max_sweeps, rng, rewards, thr)
        ep.source = "demo"
        out.append(ep)
    return out


# --- Training data ---

def episode_samples(episode: Episode, model_cfg: ModelConfig) -> List[TrainingSample]:
    """Training samples for every record that carries a policy target."""
    samples = []
    for t, (s, r) in enumerate(zip(episode.states(), episode.records)):
        if r.policy is None:
            continue
        target = np.zeros(model_cfg.policy_size)
        target[: len(r.policy)] = r.policy
        context = option_context(s.last_option) if isinstance(s, SmdpState) else None
        samples.append(TrainingSample.from_matrix(s.matrix, target, episode.value_targets[t], context))
    return samples


def effective_model_config(run: RunConfig) -> ModelConfig:
    """Network shape the run's mode needs."""
    if run.mode == "smdp":
        return run.model.model_copy(update={"option_head": True, "context_dim": 9})
    return run.model.model_copy(update={"option_head": False, "context_dim": 0})


def _budget(run: RunConfig, n: int) -> int:
    if run.mode == "smdp":
        return run.max_sweeps or default_max_sweeps(n)
    return run.search.max_depth or default_max_depth(n)


def _threshold(run: RunConfig, m: SymmetricMatrix) -> float:
    return default_threshold(m, run.threshold)


# --- Rounds ---

@dataclass
class TrainerState:
    """Where a training run stands between rounds."""

    champion: ModelParams
    champion_path: Optional[Path] = None
    round: int = 0
    surpassed_maxelem: bool = False


@dataclass
class RoundResult:
    candidate: ModelParams
    losses: List[float]
    episodes: List[Episode]
    opponent: str
    samples: int


@dataclass(frozen=True)
class _GameJob:
    kind: str
    matrix: SymmetricMatrix
    players: Tuple[Any, ...]
    budget: int
    threshold: float
    seed: int
    rewards: RewardConfig
    heavy: bool
    decisions: Optional[DecisionLogger] = None


def _play_job(job: _GameJob) -> List[Episode]:
    rng = np.random.Generator(np.random.Philox(job.seed))
    if job.kind == "mdp":
        return play_mdp_game(job.matrix, job.players, job.budget, rng, job.rewards, job.heavy, job.threshold,
                             decisions=job.decisions)
    return [play_smdp_episode(job.matrix, job.players[0], job.budget, rng, job.rewards, job.threshold,
                              decisions=job.decisions)]


def _part_path(decisions_path: Path, game: int) -> Path:
    return decisions_path.with_name(f"{decisions_path.name}.part{game:04d}")


def _merge_decision_parts(decisions_path: Path, parts: Sequence[Path]) -> int:
    """Concatenate per-game logs into ``decisions_path`` in game order."""
    written = 0
    for part in parts:
        if part.exists():
            written += append_jsonl(decisions_path, list(read_jsonl(part)))
            part.unlink()
    return written


def _agent_search(run: RunConfig, simulations: int, temperature: float) -> SearchConfig:
    return run.search.model_copy(update={"num_simulations": simulations, "temperature": temperature})


def training_round(
    state: TrainerState,
    run: RunConfig,
    pool: Sequence[SymmetricMatrix],
    rng: np.random.Generator,
    jobs: Optional[int] = 1,
    decisions_path: Optional[Path] = None,
) -> RoundResult:
    """Generate games with the champion, mix in demos and train a candidate.

    Until the champion has beaten MaxElem at a gate its opponent is MaxElem;
    afterwards it plays itself. With ``decisions_path`` every self-play
    decision is appended there, tagged with its round and game.
    """
    cfg = run.training
    selfplay_games = int(round(cfg.games_per_round * cfg.selfplay_fraction))
    demo_games = cfg.games_per_round - selfplay_games
    search_cfg = _agent_search(run, cfg.train_simulations, run.search.temperature)
    evaluator = NetworkEvaluator(state.champion)

    jobs_list: List[_GameJob] = []
    opponent = "self"
    for i in range(selfplay_games if pool else 0):
        m = pool[i % len(pool)]
        if run.mode == "mdp":
            agent = MctsPivotPolicy(evaluator, search_cfg, run.rewards)
            if state.surpassed_maxelem:
                players: Tuple[Any, ...] = (agent, agent)
            else:
                opponent = "maxelem"
                rival = MaxElemPolicy(run.search.constrain_actions)
                players = (agent, rival) if i % 2 == 0 else (rival, agent)
        else:
            players = (MctsOptionPolicy(evaluator, search_cfg, run.rewards),)
        decisions = None
        if decisions_path is not None:
            part = _part_path(decisions_path, i)
            part.unlink(missing_ok=True)
            decisions = DecisionLogger(part, {"round": state.round + 1, "game": i})
        jobs_list.append(_GameJob(
            run.mode, m, players, _budget(run, m.n), _threshold(run, m), _seed(rng), run.rewards,
            run.search.heavy_rollout, decisions,
        ))
    played = parallel_map(_play_job, jobs_list, jobs)
    if decisions_path is not None:
        _merge_decision_parts(decisions_path, [j.decisions.path for j in jobs_list if j.decisions is not None])
    episodes = [ep for eps in played for ep in eps if ep.player == "mcts"]

    sizes = sorted({m.n for m in pool}) or list(run.sizes)
    for k in range(demo_games):
        n = sizes[k % len(sizes)]
        if run.mode == "mdp":
            episodes.extend(make_synthetic_demos(n, 1, rng, run.search.max_depth, run.threshold))
        else:
            episodes.extend(make_synthetic_option_demos(n, 1, rng, run.rewards, run.max_sweeps, run.threshold))

    model_cfg = state.champion.config
    samples = [s for ep in episodes for s in episode_samples(ep, model_cfg)]
    if not samples:
        raise EmptyTrainingData(
            f"round produced no training samples ({selfplay_games} games, {demo_games} demos)"
        )
    logger.info("round data: %d episodes, %d samples, opponent=%s", len(episodes), len(samples), opponent)

    candidate = state.champion.copy()
    optimizer = OptimizerState()
    losses: List[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(samples))
        epoch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [samples[i] for i in order[start:start + cfg.batch_size]]
            candidate, loss = train_step(candidate, batch, cfg.lr, rng=rng, optimizer=optimizer)
            epoch_losses.append(loss)
        losses.append(float(np.mean(epoch_losses)))
        logger.debug("epoch %d loss %.5f", epoch, losses[-1])
    candidate.metadata["iteration"] = state.round + 1
    return RoundResult(candidate, losses, episodes, opponent, len(samples))


# --- Gating ---

def _race_score(cand: float, other: float) -> float:
    if cand > other:
        return 1.0
    if cand < other:
        return 0.0
    return 0.5


def gate_accepts(win_rate: float, threshold: float) -> bool:
    """``win_rate > threshold``; a threshold of 1 demands every game."""
    if threshold >= 1.0:
        return win_rate >= 1.0
    return win_rate > threshold


def gate(
    candidate: PivotPolicy,
    champion: PivotPolicy,
    matrices: Sequence[SymmetricMatrix],
    gate_threshold: float,
    rng: np.random.Generator,
    rewards: Optional[RewardConfig] = None,
    max_depth: Optional[int] = None,
    threshold_rel: Optional[float] = None,
    jobs: Optional[int] = 1,
) -> GateResult:
    """Head-to-head races on every matrix, once from each seat."""
    rewards = rewards or RewardConfig()
    jobs_list = []
    for m in matrices:
        depth = default_max_depth(m.n) if max_depth is None else max_depth
        thr = default_threshold(m, threshold_rel)
        for players in ((candidate, champion), (champion, candidate)):
            jobs_list.append(_GameJob("mdp", m, players, depth, thr, _seed(rng), rewards, False))
    scores = []
    for job, eps in zip(jobs_list, parallel_map(_play_job, jobs_list, jobs)):
        seat = 0 if job.players[0] is candidate else 1
        scores.append(_race_score(eps[seat].outcome, eps[1 - seat].outcome))
    win_rate = float(np.mean(scores)) if scores else 0.0
    accepted = gate_accepts(win_rate, gate_threshold)
    logger.info("gate: win rate %.3f over %d games (threshold %.2f) -> %s",
                win_rate, len(scores), gate_threshold, "accepted" if accepted else "rejected")
    return GateResult(accepted=accepted, metric=win_rate, champion_metric=1.0 - win_rate, games=len(scores))


def mean_rotations(
    policy: OptionPolicy,
    matrices: Sequence[SymmetricMatrix],
    rng: np.random.Generator,
    rewards: Optional[RewardConfig] = None,
    max_sweeps: Optional[int] = None,
    threshold_rel: Optional[float] = None,
    jobs: Optional[int] = 1,
) -> List[int]:
    """Primitive rotation counts of ``policy`` on each matrix."""
    rewards = rewards or RewardConfig()
    jobs_list = [
        _GameJob("smdp", m, (policy,), max_sweeps or default_max_sweeps(m.n),
                 default_threshold(m, threshold_rel), _seed(rng), rewards, False)
        for m in matrices
    ]
    return [eps[0].rotation_count for eps in parallel_map(_play_job, jobs_list, jobs)]


def gate_smdp(
    candidate: OptionPolicy,
    champion: OptionPolicy,
    matrices: Sequence[SymmetricMatrix],
    rng: np.random.Generator,
    rewards: Optional[RewardConfig] = None,
    max_sweeps: Optional[int] = None,
    threshold_rel: Optional[float] = None,
    jobs: Optional[int] = 1,
) -> GateResult:
    """Accept when the candidate's mean rotation count is strictly lower."""
    seed = _seed(rng)
    cand = mean_rotations(candidate, matrices, np.random.Generator(np.random.Philox(seed)),
                          rewards, max_sweeps, threshold_rel, jobs)
    champ = mean_rotations(champion, matrices, np.random.Generator(np.random.Philox(seed)),
                           rewards, max_sweeps, threshold_rel, jobs)
    c_mean, h_mean = float(np.mean(cand)), float(np.mean(champ))
    accepted = c_mean < h_mean
    logger.info("gate: candidate %.2f vs champion %.2f rotations -> %s",
                c_mean, h_mean, "accepted" if accepted else "rejected")
    return GateResult(accepted=accepted, metric=c_mean, champion_metric=h_mean, games=len(matrices))


# --- Matrix pools ---

def _load_manifest_pool(path: Path) -> List[SymmetricMatrix]:
    files = read_json_strict(path)
    if not isinstance(files, list):
        raise StorageError(f"{path}: expected a JSON list of matrix files")
    return [SymmetricMatrix.from_array(read_matrix(path.parent / f)) for f in files]


def build_pools(run: RunConfig, seed: int) -> Tuple[List[SymmetricMatrix], List[SymmetricMatrix]]:
    """Disjoint training and evaluation pools.

    Manifests written by ``gen --split`` take precedence; otherwise the pools
    are generated from ``seed`` with ``run.split`` matrices per size.
    """
    if run.paths.train_manifest and run.paths.eval_manifest:
        train = _load_manifest_pool(Path(run.paths.train_manifest))
        evaluation = _load_manifest_pool(Path(run.paths.eval_manifest))
    else:
        n_train, n_eval = run.split
        train, evaluation = [], []
        for n in run.sizes:
            pool = random_pool(n, n_train + n_eval, seed, run.scale)
            train.extend(pool[:n_train])
            evaluation.extend(pool[n_train:])
    assert_disjoint([state_key(m) for m in train], [state_key(m) for m in evaluation])
    return train, evaluation


# --- Runs ---

def _round_rng(seed: int, r: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, r])))


def _gate_round(
    state: TrainerState,
    candidate: ModelParams,
    run: RunConfig,
    pool: Sequence[SymmetricMatrix],
    rng: np.random.Generator,
    jobs: Optional[int],
) -> Tuple[GateResult, str]:
    search_cfg = _agent_search(run, run.training.eval_simulations, 0.0)
    if run.mode == "mdp":
        cand = MctsPivotPolicy(NetworkEvaluator(candidate), search_cfg, run.rewards)
        if state.surpassed_maxelem:
            champ: Any = MctsPivotPolicy(NetworkEvaluator(state.champion), search_cfg, run.rewards)
            opponent = "champion"
        else:
            champ = MaxElemPolicy(run.search.constrain_actions)
            opponent = "maxelem"
        result = gate(cand, champ, pool, run.training.gate_threshold, rng, run.rewards,
                      run.search.max_depth, run.threshold, jobs)
        return result, opponent
    cand_opt = MctsOptionPolicy(NetworkEvaluator(candidate), search_cfg, run.rewards)
    champ_opt = MctsOptionPolicy(NetworkEvaluator(state.champion), search_cfg, run.rewards)
    result = gate_smdp(cand_opt, champ_opt, pool, rng, run.rewards, run.max_sweeps, run.threshold, jobs)
    return result, "champion"


def run_training(run: RunConfig, out_dir: Path, jobs: Optional[int] = None) -> RunManifest:
    """Train for ``run.training.rounds`` rounds, resuming from an existing manifest."""
    seed = config.settings.resolve_seed(run.seed)
    jobs = run.jobs if jobs is None else jobs
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_dir = checkpoints_dir(out_dir, run.paths.checkpoints)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    effective = run.model_dump(mode="json")
    effective["seed"] = seed
    write_json(effective_config_path(out_dir), effective)
    digest = config_hash(effective)

    mpath = manifest_path(out_dir)
    if mpath.exists():
        manifest = RunManifest(**read_json_strict(mpath))
        if manifest.config_hash != digest:
            logger.warning("resuming %s with a changed config (%s -> %s)", out_dir, manifest.config_hash, digest)
        if manifest.champion is None:
            raise StorageError(f"{mpath} records no champion")
        champion = load_params(out_dir / manifest.champion)
        logger.info("resuming after round %d", len(manifest.rounds))
    else:
        champion = init_params(effective_model_config(run), seed)
        first = ckpt_dir / "champion_000.json"
        save_params(champion, first)
        manifest = RunManifest(
            seed=seed,
            config_hash=digest,
            config=effective,
            champion=str(first.relative_to(out_dir)),
        )
        write_json(mpath, manifest.model_dump(mode="json"))

    state = TrainerState(
        champion=champion,
        champion_path=out_dir / manifest.champion,
        round=len(manifest.rounds),
        surpassed_maxelem=manifest.surpassed_maxelem,
    )
    if state.round >= run.training.rounds:
        return manifest

    train_pool, eval_pool = build_pools(run, seed)
    gate_pool = eval_pool[: run.training.gate_matrices]
    episodes_path = out_dir / run.paths.episodes
    decisions_path = out_dir / run.paths.decisions if run.paths.decisions else None

    for r in range(state.round + 1, run.training.rounds + 1):
        rng = _round_rng(seed, r)
        result = training_round(state, run, train_pool, rng, jobs, decisions_path)
        path = ckpt_dir / f"candidate_{r:03d}.json"
        save_params(result.candidate, path)
        verdict, opponent = _gate_round(state, result.candidate, run, gate_pool, rng, jobs)

        if verdict.accepted:
            state.champion = result.candidate
            state.champion_path = path
            manifest.champion = str(path.relative_to(out_dir))
            if run.mode == "mdp" and not state.surpassed_maxelem:
                state.surpassed_maxelem = True
                manifest.surpassed_maxelem = True
                logger.info("round %d surpassed MaxElem; switching to self-play", r)
        state.round = r

        manifest.rounds.append(ManifestEntry(
            round=r,
            checkpoint=str(path.relative_to(out_dir)),
            sha256=file_sha256(path),
            accepted=verdict.accepted,
            opponent=opponent,
            loss_first=result.losses[0] if result.losses else None,
            loss_last=result.losses[-1] if result.losses else None,
            gate_metric=verdict.metric,
        ))
        write_json(mpath, manifest.model_dump(mode="json"))
        append_table_row(metrics_path(out_dir), {
            "round": r,
            "samples": result.samples,
            "loss_first": result.losses[0] if result.losses else None,
            "loss_last": result.losses[-1] if result.losses else None,
            "opponent": opponent,
            "gate_metric": verdict.metric,
            "champion_metric": verdict.champion_metric,
            "accepted": verdict.accepted,
        })
        append_jsonl(episodes_path, (ep.to_json() for ep in result.episodes))
        logger.info("round %d/%d done (accepted=%s)", r, run.training.rounds, verdict.accepted)

    return manifest
