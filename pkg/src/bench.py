"""Rotation-count benchmarks, sweep-transition statistics and their exports."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pydot
from scipy.special import gammaincc, gammaln

from . import config
from .approximator import NetworkEvaluator, load_params
from .env import SmdpState, default_max_depth, default_threshold, run_fixed_option
from .errors import ConfigError, CorruptFile, DegenerateTable, MissingCheckpoint, NonConvergence
from .matrix_core import SymmetricMatrix, random_pool
from .mcts import RolloutEvaluator
from .models import BenchReport, ChiSquaredResult, RewardConfig, RunConfig
from .orderings import NUM_OPTIONS, SweepOption, all_options
from .policies import (
    DistributionReplayPolicy,
    MaxElemPolicy,
    MctsOptionPolicy,
    MctsPivotPolicy,
    OptionPolicy,
    PivotPolicy,
    min_rotations,
)
from .selfplay import Episode, play_mdp_game, play_smdp_episode
from .storage import (
    config_hash,
    effective_config_path,
    read_json_strict,
    read_matrix,
    read_table,
    write_json,
    write_table,
)
from .workers import parallel_map

logger = logging.getLogger(__name__)

SAVINGS_COLUMNS = ["Matrix Size", "Baseline", "Alpha Zero", "Savings (%)"]
LOG10_FLOOR = 1e-300


# --- Rotation counts ---

@dataclass
class RunCounts:
    """Primitive rotation counts of one policy over a matrix pool."""

    policy: str
    counts: List[int]
    converged: List[bool]

    @property
    def mean(self) -> float:
        return float(np.mean(self.counts)) if self.counts else float("nan")

    @property
    def min(self) -> int:
        return int(np.min(self.counts))

    @property
    def max(self) -> int:
        return int(np.max(self.counts))

    @property
    def unconverged(self) -> int:
        return sum(1 for c in self.converged if not c)


def _baseline_job(job: Tuple[SymmetricMatrix, int, float, Optional[int]]) -> Tuple[int, bool]:
    m, option, threshold, max_sweeps = job
    end = run_fixed_option(SmdpState.initial(m, max_sweeps, threshold), SweepOption(option))
    return end.primitive_rotations, end.done


def run_baseline(
    option: SweepOption,
    matrices: Sequence[SymmetricMatrix],
    threshold_rel: Optional[float] = None,
    max_sweeps: Optional[int] = None,
    jobs: Optional[int] = 1,
    strict: bool = False,
) -> RunCounts:
    """Repeat one ordering on every matrix until diagonalized.

    Matrices that run out of sweeps are counted and logged; with ``strict``
    they raise instead.
    """
    option = SweepOption(option)
    jobs_list = [(m, option.id, default_threshold(m, threshold_rel), max_sweeps) for m in matrices]
    results = parallel_map(_baseline_job, jobs_list, jobs)
    counts = RunCounts(option.label, [r for r, _ in results], [ok for _, ok in results])
    if counts.unconverged:
        message = f"{option.label} did not converge on {counts.unconverged}/{len(matrices)} matrices"
        if strict:
            raise NonConvergence(message)
        logger.warning(message)
    return counts


_AgentJob = Tuple[SymmetricMatrix, OptionPolicy, int, int, float, Optional[int], Optional[RewardConfig]]


def _agent_job(job: _AgentJob) -> Episode:
    m, policy, seed, i, threshold, max_sweeps, rewards = job
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, i])))
    return play_smdp_episode(m, policy, max_sweeps, rng, rewards, threshold)


def run_agent(
    policy: OptionPolicy,
    matrices: Sequence[SymmetricMatrix],
    seed: int,
    threshold_rel: Optional[float] = None,
    max_sweeps: Optional[int] = None,
    rewards: Optional[RewardConfig] = None,
    jobs: Optional[int] = 1,
) -> Tuple[RunCounts, List[Episode]]:
    """Let an option policy pick every sweep; returns counts and episodes.

    Matrix ``i`` is played with its own generator seeded from ``(seed, i)``,
    so results do not depend on ``jobs``.
    """
    jobs_list = [
        (m, policy, seed, i, default_threshold(m, threshold_rel), max_sweeps, rewards)
        for i, m in enumerate(matrices)
    ]
    episodes = parallel_map(_agent_job, jobs_list, jobs)
    counts = RunCounts(
        policy.name,
        [ep.rotation_count for ep in episodes],
        [ep.finished for ep in episodes],
    )
    if counts.unconverged:
        logger.warning("agent %s did not converge on %d/%d matrices",
                       policy.name, counts.unconverged, len(matrices))
    return counts, episodes


def agent_from_config(run: RunConfig) -> Optional[Union[OptionPolicy, PivotPolicy]]:
    """Build the evaluated agent, or ``None`` for baselines only.

    Raises:
        MissingCheckpoint: ``agent.kind`` is ``checkpoint`` and the file is absent.
        ConfigError: ``agent.kind`` is ``distribution`` outside SMDP mode or
            without ``agent.distribution``.
    """
    agent = run.agent
    if agent.kind == "none":
        return None
    if agent.kind == "distribution":
        if run.mode != "smdp":
            raise ConfigError("agent.kind 'distribution' replays sweep options and needs mode smdp")
        if not agent.distribution:
            raise ConfigError("agent.kind is 'distribution' but no agent.distribution is set")
        return DistributionReplayPolicy(load_stage_distribution(Path(agent.distribution)))
    cfg = run.search.model_copy(update={"num_simulations": agent.simulations, "temperature": 0.0})
    if agent.kind == "checkpoint":
        if not agent.checkpoint:
            raise MissingCheckpoint("agent.kind is 'checkpoint' but no agent.checkpoint is set")
        evaluator: Any = NetworkEvaluator(load_params(Path(agent.checkpoint)))
    else:
        evaluator = RolloutEvaluator()
    if run.mode == "smdp":
        return MctsOptionPolicy(evaluator, cfg, run.rewards)
    return MctsPivotPolicy(evaluator, cfg, run.rewards)


def load_stage_distribution(path: Path) -> np.ndarray:
    """Stage x option probabilities from a transitions CSV.

    Stages missing from the file come back as NaN rows.
    """
    frame = read_table(path, index="stage")
    labels = [opt.label for opt in all_options()]
    missing = [label for label in labels if label not in frame.columns]
    if missing:
        raise CorruptFile(f"{path}: missing option columns {missing}")
    stages = int(frame.index.max()) + 1 if len(frame) else 0
    table = np.full((stages, NUM_OPTIONS), np.nan)
    for stage, row in frame[labels].iterrows():
        table[int(stage)] = row.to_numpy(dtype=np.float64)
    return table


# --- Transition statistics ---

@dataclass
class TransitionStats:
    """Option counts per sweep stage and option-to-option transitions."""

    stage_counts: np.ndarray = field(default_factory=lambda: np.zeros((0, NUM_OPTIONS), dtype=np.int64))
    transition_counts: np.ndarray = field(default_factory=lambda: np.zeros((NUM_OPTIONS, NUM_OPTIONS), dtype=np.int64))

    @property
    def populated_stages(self) -> List[int]:
        return [k for k, row in enumerate(self.stage_counts) if row.sum() > 0]

    @property
    def stage_probabilities(self) -> np.ndarray:
        """Row-normalized stage counts; rows never observed are NaN."""
        return _normalize_rows(self.stage_counts)

    @property
    def transition_probabilities(self) -> np.ndarray:
        return _normalize_rows(self.transition_counts)


def _normalize_rows(counts: np.ndarray) -> np.ndarray:
    totals = counts.sum(axis=1, keepdims=True).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        probs = counts / totals
    probs[totals[:, 0] == 0] = np.nan
    return probs


def _option_ids(item: Union[Episode, Sequence[int]]) -> List[int]:
    if isinstance(item, Episode):
        return [int(a) for a in item.actions]
    return [int(a) for a in item]


def collect_transitions(episodes: Iterable[Union[Episode, Sequence[int]]]) -> TransitionStats:
    """Count option choices per stage and consecutive option pairs."""
    sequences = [_option_ids(e) for e in episodes]
    stages = max((len(s) for s in sequences), default=0)
    stage_counts = np.zeros((stages, NUM_OPTIONS), dtype=np.int64)
    transitions = np.zeros((NUM_OPTIONS, NUM_OPTIONS), dtype=np.int64)
    for seq in sequences:
        for k, opt in enumerate(seq):
            stage_counts[k, opt] += 1
        for a, b in zip(seq, seq[1:]):
            transitions[a, b] += 1
    return TransitionStats(stage_counts, transitions)


# --- Chi-squared ---

def _log_upper_gamma_tail(a: float, x: float) -> float:
    """``ln Q(a, x)`` for large ``x`` from the asymptotic series."""
    term, total = 1.0, 1.0
    for k in range(1, 200):
        nxt = term * (a - k) / x
        if abs(nxt) >= abs(term) or abs(nxt) < 1e-17:
            break
        term = nxt
        total += term
    return (a - 1.0) * math.log(x) - x - float(gammaln(a)) + math.log(total)


def chi_squared(table: Union[np.ndarray, Sequence[Sequence[float]]], drop_empty: bool = False) -> ChiSquaredResult:
    """Pearson test of independence between rows and columns.

    Expected counts come from the marginals. P-values under 1e-300 are
    reported as 0 with ``p_underflow`` set and ``log10_p`` still finite.

    Raises:
        DegenerateTable: a row or column sums to zero, or fewer than 2x2 remain.
    """
    observed = np.asarray(table, dtype=np.float64)
    if observed.ndim != 2:
        raise DegenerateTable(f"expected a 2-D table, got shape {observed.shape}")
    if drop_empty:
        observed = observed[observed.sum(axis=1) > 0][:, observed.sum(axis=0) > 0]
    rows, cols = observed.shape
    if rows < 2 or cols < 2:
        raise DegenerateTable(f"need at least a 2x2 table, got {rows}x{cols}")
    row_tot = observed.sum(axis=1)
    col_tot = observed.sum(axis=0)
    if np.any(row_tot == 0) or np.any(col_tot == 0):
        raise DegenerateTable("table has a zero marginal")
    expected = np.outer(row_tot, col_tot) / observed.sum()
    small = int(np.count_nonzero(expected < 5))
    if small:
        logger.warning("%d of %d expected counts are below 5; p-value is approximate", small, expected.size)

    statistic = float(np.sum((observed - expected) ** 2 / expected))
    dof = (rows - 1) * (cols - 1)
    a, x = dof / 2.0, statistic / 2.0
    p = float(gammaincc(a, x))
    underflow = p < LOG10_FLOOR
    if underflow:
        log10_p = _log_upper_gamma_tail(a, x) / math.log(10.0)
        p = 0.0
    else:
        log10_p = math.log10(p)
    return ChiSquaredResult(
        statistic=statistic, dof=dof, p_value=p, log10_p=log10_p,
        p_underflow=underflow, rows=rows, cols=cols,
    )


# --- Exports ---

def transition_graph(stats: TransitionStats) -> pydot.Dot:
    """Options as nodes, observed transitions as probability-labelled edges."""
    graph = pydot.Dot("sweep_transitions", graph_type="digraph")
    for opt in all_options():
        graph.add_node(pydot.Node(str(opt.id), label=f'"{opt.label}"'))
    probs = stats.transition_probabilities
    for a in range(NUM_OPTIONS):
        for b in range(NUM_OPTIONS):
            p = probs[a, b]
            if np.isnan(p) or p <= 0:
                continue
            edge = pydot.Edge(str(a), str(b), weight=f"{p:.3f}")
            edge.set_label(f"{p:.3f}")
            graph.add_edge(edge)
    return graph


def export_transition_graph(stats: TransitionStats, dot_path: Path, csv_path: Optional[Path] = None) -> List[Path]:
    """Write the DOT graph and (optionally) the stage x option probability CSV."""
    dot_path.parent.mkdir(parents=True, exist_ok=True)
    dot_path.write_text(transition_graph(stats).to_string(), encoding="utf-8")
    written = [dot_path]
    if csv_path is not None:
        probs = stats.stage_probabilities
        rows = []
        for k in stats.populated_stages:
            row: Dict[str, Any] = {"stage": k}
            row.update({opt.label: float(probs[k, opt.id]) for opt in all_options()})
            rows.append(row)
        write_table(csv_path, rows, columns=["stage", *[o.label for o in all_options()]], index="stage")
        written.append(csv_path)
    logger.info("transition exports written: %s", ", ".join(str(p) for p in written))
    return written


# --- Reports ---

def savings_percent(baseline_mean: float, agent_mean: float) -> float:
    return 100.0 * (baseline_mean - agent_mean) / baseline_mean


def savings_table(
    baselines: Mapping[int, Sequence[RunCounts]],
    agents: Mapping[int, RunCounts],
    threshold: float,
    seed: int,
    digest: Optional[str] = None,
) -> List[BenchReport]:
    """One report per size; the baseline is the mean over the fixed orderings."""
    reports = []
    for n in sorted(baselines):
        runs = baselines[n]
        base = float(np.mean([r.mean for r in runs]))
        agent = agents.get(n)
        reports.append(BenchReport(
            matrix_size=n,
            baseline_mean=base,
            per_policy_mean={r.policy: r.mean for r in runs},
            per_policy_min={r.policy: r.min for r in runs},
            per_policy_max={r.policy: r.max for r in runs},
            agent_mean=None if agent is None else agent.mean,
            savings_percent=None if agent is None else savings_percent(base, agent.mean),
            num_instances=len(runs[0].counts) if runs else 0,
            threshold=threshold,
            seed=seed,
            unconverged={r.policy: r.unconverged for r in [*runs, *([agent] if agent else [])] if r.unconverged},
            config_hash=digest,
        ))
    return reports


def _solo_rotations(job: Tuple[SymmetricMatrix, Any, int, float, int]) -> Tuple[int, bool]:
    m, policy, depth, threshold, seed = job
    rng = np.random.Generator(np.random.Philox(seed))
    ep = play_mdp_game(m, [policy], depth, rng, threshold=threshold)[0]
    return ep.rotation_count, ep.finished


def compare_mdp(
    matrices: Sequence[SymmetricMatrix],
    agent: PivotPolicy,
    seed: int = 0,
    max_depth: Optional[int] = None,
    threshold_rel: Optional[float] = None,
    exhaustive: bool = True,
    jobs: Optional[int] = 1,
) -> List[Dict[str, Any]]:
    """Pivot agent against MaxElem on each matrix, plus the true minimum for N <= 4."""
    jobs_agent, jobs_max = [], []
    for i, m in enumerate(matrices):
        depth = default_max_depth(m.n) if max_depth is None else max_depth
        thr = default_threshold(m, threshold_rel)
        jobs_agent.append((m, agent, depth, thr, seed + i))
        jobs_max.append((m, MaxElemPolicy(), depth, thr, seed + i))
    agent_runs = parallel_map(_solo_rotations, jobs_agent, jobs)
    max_runs = parallel_map(_solo_rotations, jobs_max, jobs)
    rows = []
    for (m, _, depth, thr, _), (a_count, a_ok), (m_count, m_ok) in zip(jobs_agent, agent_runs, max_runs):
        minimum = None
        if exhaustive and m.n <= 4:
            minimum = min_rotations(m, thr, depth)
        rows.append({
            "n": m.n,
            "agent": a_count,
            "agent_converged": a_ok,
            "maxelem": m_count,
            "maxelem_converged": m_ok,
            "minimum": minimum,
        })
    return rows


def _eval_matrices(run: RunConfig, n: int, seed: int) -> List[SymmetricMatrix]:
    if run.paths.eval_manifest:
        path = Path(run.paths.eval_manifest)
        files = read_json_strict(path)
        pool = [SymmetricMatrix.from_array(read_matrix(path.parent / f)) for f in files]
        return [m for m in pool if m.n == n]
    return random_pool(n, run.count, seed, run.scale)


def _run_bench_mdp(run: RunConfig, out_dir: Path, seed: int, threshold: float, digest: str, jobs: Optional[int]) -> List[BenchReport]:
    agent = agent_from_config(run) or MctsPivotPolicy(
        RolloutEvaluator(), run.search.model_copy(update={"temperature": 0.0}), run.rewards
    )
    reports, rows = [], []
    for n in run.sizes:
        found = compare_mdp(_eval_matrices(run, n, seed), agent, seed, run.search.max_depth, threshold, jobs=jobs)
        rows.extend(found)
        maxelem = RunCounts("maxelem", [r["maxelem"] for r in found], [r["maxelem_converged"] for r in found])
        searched = RunCounts("agent", [r["agent"] for r in found], [r["agent_converged"] for r in found])
        reports.extend(savings_table({n: [maxelem]}, {n: searched}, threshold, seed, digest))
    write_table(out_dir / "mdp_comparison.csv", rows)
    return reports


def run_bench(run: RunConfig, out_dir: Path, jobs: Optional[int] = None) -> List[BenchReport]:
    """Baselines and (when configured) the agent on every size's eval pool.

    Writes ``baselines.csv``, ``savings.csv`` (agent runs only), per-size
    transition CSV/DOT, ``chi_squared.json`` and ``bench_report.json``.
    """
    seed = config.settings.resolve_seed(run.seed)
    threshold = run.threshold if run.threshold is not None else config.settings.threshold_rel
    jobs = run.jobs if jobs is None else jobs
    out_dir.mkdir(parents=True, exist_ok=True)
    effective = run.model_dump(mode="json")
    effective.update({"seed": seed, "threshold": threshold})
    write_json(effective_config_path(out_dir), effective)
    digest = config_hash(effective)

    if run.mode == "mdp":
        reports = _run_bench_mdp(run, out_dir, seed, threshold, digest, jobs)
        write_json(out_dir / "bench_report.json", [r.model_dump(mode="json") for r in reports])
        return reports

    try:
        agent = agent_from_config(run)
    except MissingCheckpoint as e:
        logger.warning("agent rows omitted: %s", e)
        agent = None

    baselines: Dict[int, List[RunCounts]] = {}
    agents: Dict[int, RunCounts] = {}
    stats_by_size: Dict[int, TransitionStats] = {}
    for n in run.sizes:
        matrices = _eval_matrices(run, n, seed)
        if not matrices:
            logger.warning("no evaluation matrices of size %d", n)
            continue
        baselines[n] = [run_baseline(opt, matrices, threshold, run.max_sweeps, jobs) for opt in all_options()]
        if agent is not None:
            counts, episodes = run_agent(agent, matrices, seed, threshold, run.max_sweeps, run.rewards, jobs)
            agents[n] = counts
            stats = collect_transitions(episodes)
            stats_by_size[n] = stats
            export_transition_graph(stats, out_dir / f"transitions_{n}.dot", out_dir / f"transitions_{n}.csv")
        logger.info("size %d: baseline mean %.1f%s", n, float(np.mean([r.mean for r in baselines[n]])),
                    "" if n not in agents else f", agent mean {agents[n].mean:.1f}")

    reports = savings_table(baselines, agents, threshold, seed, digest)
    baseline_rows = []
    for r in reports:
        row: Dict[str, Any] = {"Matrix Size": r.matrix_size, "Baseline": r.baseline_mean}
        row.update(r.per_policy_mean)
        baseline_rows.append(row)
    write_table(out_dir / "baselines.csv", baseline_rows,
                columns=["Matrix Size", "Baseline", *[o.label for o in all_options()]])
    if agents:
        write_table(out_dir / "savings.csv", [
            {
                "Matrix Size": r.matrix_size,
                "Baseline": r.baseline_mean,
                "Alpha Zero": r.agent_mean,
                "Savings (%)": r.savings_percent,
            }
            for r in reports if r.agent_mean is not None
        ], columns=SAVINGS_COLUMNS)
        write_json(out_dir / "chi_squared.json", chi_squared_summary(stats_by_size, threshold, seed, digest))
    write_json(out_dir / "bench_report.json", [r.model_dump(mode="json") for r in reports])
    return reports


def chi_squared_summary(
    stats_by_size: Mapping[int, TransitionStats],
    threshold: Optional[float] = None,
    seed: Optional[int] = None,
    digest: Optional[str] = None,
) -> Dict[str, Any]:
    """Stage x option test per size and over the pooled (size, stage) rows."""
    summary: Dict[str, Any] = {"seed": seed, "threshold": threshold, "config_hash": digest, "per_size": {}}
    pooled = []
    for n, stats in sorted(stats_by_size.items()):
        pooled.extend(stats.stage_counts)
        try:
            summary["per_size"][str(n)] = chi_squared(stats.stage_counts, drop_empty=True).model_dump()
        except DegenerateTable as e:
            summary["per_size"][str(n)] = {"error": str(e)}
    try:
        summary["pooled"] = chi_squared(np.array(pooled), drop_empty=True).model_dump() if pooled else None
    except DegenerateTable as e:
        summary["pooled"] = {"error": str(e)}
    return summary
