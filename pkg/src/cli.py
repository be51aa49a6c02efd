"""jacobi-rl Command Line Interface.

Generates matrix pools, diagonalizes single matrices, trains agents,
runs benchmarks and exports transition statistics.
"""
from __future__ import annotations

import functools
import json
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import click
import numpy as np
import yaml
from pydantic import ValidationError

from . import __version__
from . import config as config_module
from .approximator import NetworkEvaluator, load_params
from .bench import chi_squared_summary, collect_transitions, export_transition_graph, run_bench
from .env import DecisionLogger, default_threshold, state_key
from .errors import ConfigError, JacobiRLError, NonConvergence
from .matrix_core import SymmetricMatrix, generate_random_symmetric, pool_seeds
from .models import RunConfig
from .orderings import SweepOption, write_golden
from .policies import (
    FixedOptionPolicy,
    MaxElemPolicy,
    MctsOptionPolicy,
    MctsPivotPolicy,
    NetworkOptionPolicy,
    NetworkPivotPolicy,
)
from .selfplay import Episode, play_mdp_game, play_smdp_episode, run_training
from .storage import (
    assert_disjoint,
    read_jsonl,
    read_matrix,
    run_dir,
    write_json,
    write_matrix,
)


def _fail(e: JacobiRLError) -> None:
    click.echo(f"Error: {e}", err=True)
    sys.exit(e.exit_code)


def handle_errors(fn: Callable[..., Any]) -> Callable[..., Any]:
    """Map package errors to their exit codes."""

    @functools.wraps(fn)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return fn(*args, **kwargs)
        except JacobiRLError as e:
            _fail(e)
        except ValueError as e:
            _fail(ConfigError(str(e)))
        except OSError as e:
            click.echo(f"Error: {e}", err=True)
            sys.exit(4)

    return wrapper


def load_run_config(path: Optional[str], overrides: Dict[str, Any]) -> RunConfig:
    """Config file (JSON or YAML) with non-None flag overrides applied."""
    data: Dict[str, Any] = {}
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse {p}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"{p}: top level must be a mapping")
    for key, value in overrides.items():
        if value is None:
            continue
        section, _, field = key.partition(".")
        if field:
            data.setdefault(section, {})[field] = value
        else:
            data[key] = value
    try:
        return RunConfig(**data)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}") from e


def _parse_sizes(text: Optional[str]) -> Optional[List[int]]:
    if text is None:
        return None
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as e:
        raise ConfigError(f"--sizes expects comma-separated integers, got {text!r}") from e


def _parse_split(text: str) -> tuple[int, int]:
    try:
        a, b = (int(tok) for tok in text.split(":"))
    except ValueError as e:
        raise ConfigError(f"--split expects TRAIN:EVAL, got {text!r}") from e
    if a < 0 or b < 0:
        raise ConfigError(f"--split parts must be >= 0, got {text!r}")
    return a, b


@click.group()
@click.version_option(version=__version__, prog_name="jacobi-rl")
@click.option("--log-level", default=None, help="Override LOG_LEVEL")
def cli(log_level: Optional[str]):
    """jacobi-rl - learned pivot and sweep orderings for Jacobi diagonalization."""
    problems = config_module.settings.validate()
    if problems:
        for p in problems:
            click.echo(f"Error: {p}", err=True)
        sys.exit(ConfigError.exit_code)
    config_module.configure_logging(level=log_level)


@cli.command()
@click.option("--n", "n", type=int, required=True, help="Matrix dimension")
@click.option("--count", "-c", default=10, show_default=True, help="Number of matrices")
@click.option("--seed", type=int, default=None, help="Seed (falls back to JACOBI_RL_SEED)")
@click.option("--scale", default=1.0, show_default=True, help="Entry scale")
@click.option("--out", "out", type=click.Path(), required=True, help="Output directory")
@click.option("--split", default=None, help="Write disjoint TRAIN:EVAL manifests, e.g. 750:250")
@handle_errors
def gen(n: int, count: int, seed: Optional[int], scale: float, out: str, split: Optional[str]):
    """Generate random symmetric matrices in the text format.

    Example:
        jacobi-rl gen --n 10 --count 1000 --split 750:250 --out pools/n10
    """
    if n < 2:
        raise ConfigError(f"--n must be >= 2, got {n}")
    if count < 1:
        raise ConfigError(f"--count must be >= 1, got {count}")
    seed = config_module.settings.resolve_seed(seed)
    out_dir = Path(out)
    names, keys = [], []
    for i, s in enumerate(pool_seeds(seed, n, count)):
        m = generate_random_symmetric(n, s, scale)
        name = f"matrix_{n}_{i:04d}.txt"
        write_matrix(out_dir / name, m.entries)
        names.append(name)
        keys.append(state_key(m))
    effective: Dict[str, Any] = {"n": n, "count": count, "seed": seed, "scale": scale, "split": split}
    if split:
        n_train, n_eval = _parse_split(split)
        if n_train + n_eval != count:
            raise ConfigError(f"--split {split} does not add up to --count {count}")
        assert_disjoint(keys[:n_train], keys[n_train:])
        write_json(out_dir / "train_manifest.json", names[:n_train])
        write_json(out_dir / "eval_manifest.json", names[n_train:])
        click.echo(f"✓ {n_train} train / {n_eval} eval manifests")
    write_json(out_dir / "effective_config.json", effective)
    click.echo(f"✓ Wrote {count} matrices of size {n} to {out_dir}")


def _diag_episode(m: SymmetricMatrix, policy: str, threshold: float, max_sweeps: Optional[int],
                  checkpoint: Optional[str], simulations: int,
                  decisions: Optional[DecisionLogger] = None) -> Episode:
    rng = np.random.Generator(np.random.Philox(config_module.settings.resolve_seed()))
    budget = 20 * m.n * (m.n - 1) // 2

    def pivots(player: Any) -> Episode:
        return play_mdp_game(m, [player], budget, rng, threshold=threshold, decisions=decisions)[0]

    def options(player: Any) -> Episode:
        return play_smdp_episode(m, player, max_sweeps, rng, threshold=threshold, decisions=decisions)

    if policy == "maxelem":
        return pivots(MaxElemPolicy())
    if policy.startswith("option:"):
        return options(FixedOptionPolicy(SweepOption.parse(policy.split(":", 1)[1])))
    if policy in ("checkpoint", "network"):
        if not checkpoint:
            raise ConfigError(f"--policy {policy} needs --checkpoint PATH")
        params = load_params(Path(checkpoint))
        option_head = params.config.option_head
        if policy == "network":
            return options(NetworkOptionPolicy(params)) if option_head else pivots(NetworkPivotPolicy(params))
        cfg = RunConfig().search.model_copy(update={"num_simulations": simulations, "temperature": 0.0})
        if option_head:
            return options(MctsOptionPolicy(NetworkEvaluator(params), cfg))
        return pivots(MctsPivotPolicy(NetworkEvaluator(params), cfg))
    raise ConfigError(f"unknown policy {policy!r}; use maxelem, option:<0-7>, checkpoint or network")


@cli.command()
@click.argument("matrix_file", type=click.Path())
@click.option("--policy", "-p", default="maxelem", show_default=True,
              help="maxelem, option:<0-7>, checkpoint or network")
@click.option("--checkpoint", default=None, help="Checkpoint for --policy checkpoint|network")
@click.option("--threshold", type=float, default=None, help="Convergence factor relative to ||M0||_F")
@click.option("--max-sweeps", type=int, default=None, help="Sweep budget for option policies")
@click.option("--simulations", default=30, show_default=True, help="Search simulations per move")
@click.option("--symmetrize", is_flag=True, help="Accept an asymmetric file as (A + A^T)/2")
@click.option("--trace", type=click.Path(), default=None, help="Write the pivot/option sequence as JSON")
@click.option("--decisions", type=click.Path(), default=None, help="Append one JSON line per decision to this file")
@handle_errors
def diag(matrix_file: str, policy: str, checkpoint: Optional[str], threshold: Optional[float],
         max_sweeps: Optional[int], simulations: int, symmetrize: bool, trace: Optional[str],
         decisions: Optional[str]):
    """Diagonalize one matrix and report the rotation count.

    Example:
        jacobi-rl diag matrix.txt --policy option:4 --trace trace.json
    """
    m = SymmetricMatrix.from_array(read_matrix(Path(matrix_file), symmetrize=symmetrize))
    thr = default_threshold(m, threshold)
    log = DecisionLogger(Path(decisions), {"policy": policy}) if decisions else None
    episode = _diag_episode(m, policy, thr, max_sweeps, checkpoint, simulations, log)
    final = episode.final_state().matrix
    if trace:
        write_json(Path(trace), {
            "policy": policy,
            "threshold": thr,
            "rotations": episode.rotation_count,
            "off_norm": final.off_norm,
            "actions": [list(a) if isinstance(a, tuple) else int(a) for a in episode.actions],
        })
    click.echo(f"rotations: {episode.rotation_count}")
    click.echo(f"off_norm: {final.off_norm:.6e}")
    if not episode.finished:
        raise NonConvergence(
            f"{policy} stopped at off_norm {final.off_norm:.3e} above threshold {thr:.3e}"
        )


@cli.command()
@click.option("--config", "config_path", type=click.Path(), default=None, help="JSON/YAML run config")
@click.option("--out", "out", type=click.Path(), default=None, help="Run directory (default DATA_DIR/train)")
@click.option("--mode", type=click.Choice(["mdp", "smdp"]), default=None)
@click.option("--sizes", default=None, help="Comma-separated matrix sizes")
@click.option("--rounds", type=int, default=None, help="Round budget")
@click.option("--seed", type=int, default=None)
@click.option("--jobs", "-j", type=int, default=None, help="Worker processes")
@handle_errors
def train(config_path: Optional[str], out: Optional[str], mode: Optional[str], sizes: Optional[str],
          rounds: Optional[int], seed: Optional[int], jobs: Optional[int]):
    """Run self-play training rounds; resumes an existing run directory.

    Example:
        jacobi-rl train --config configs/smdp10.yaml --out runs/smdp10
    """
    run = load_run_config(config_path, {
        "mode": mode, "sizes": _parse_sizes(sizes), "seed": seed, "jobs": jobs, "training.rounds": rounds,
    })
    out_dir = Path(out) if out else run_dir("train")
    manifest = run_training(run, out_dir, jobs=run.jobs or config_module.settings.jobs)
    accepted = sum(1 for r in manifest.rounds if r.accepted)
    click.echo(f"✓ {len(manifest.rounds)} rounds, {accepted} accepted; champion {manifest.champion}")


@cli.command()
@click.option("--config", "config_path", type=click.Path(), default=None, help="JSON/YAML run config")
@click.option("--out", "out", type=click.Path(), default=None, help="Report directory (default DATA_DIR/bench)")
@click.option("--mode", type=click.Choice(["mdp", "smdp"]), default=None)
@click.option("--sizes", default=None, help="Comma-separated matrix sizes")
@click.option("--count", type=int, default=None, help="Matrices per size")
@click.option("--threshold", type=float, default=None, help="Convergence factor relative to ||M0||_F")
@click.option("--checkpoint", default=None, help="Evaluate a trained agent from this checkpoint")
@click.option("--search-agent", is_flag=True, help="Evaluate a search-only agent (rollout evaluator)")
@click.option("--distribution", type=click.Path(), default=None,
              help="Replay the stage x option probabilities of a transitions CSV")
@click.option("--simulations", type=int, default=None, help="Agent search simulations")
@click.option("--seed", type=int, default=None)
@click.option("--jobs", "-j", type=int, default=None, help="Worker processes")
@click.option("--json", "as_json", is_flag=True, help="Output as JSON")
@handle_errors
def bench(config_path: Optional[str], out: Optional[str], mode: Optional[str], sizes: Optional[str],
          count: Optional[int], threshold: Optional[float], checkpoint: Optional[str], search_agent: bool,
          distribution: Optional[str], simulations: Optional[int], seed: Optional[int], jobs: Optional[int],
          as_json: bool):
    """Benchmark the fixed orderings (and an agent) on seeded pools.

    Example:
        jacobi-rl bench --sizes 10,15 --count 50 --threshold 1e-8
    """
    kind = None
    if checkpoint:
        kind = "checkpoint"
    elif distribution:
        kind = "distribution"
    elif search_agent:
        kind = "search"
    run = load_run_config(config_path, {
        "mode": mode, "sizes": _parse_sizes(sizes), "count": count, "threshold": threshold, "seed": seed,
        "jobs": jobs, "agent.kind": kind, "agent.checkpoint": checkpoint, "agent.simulations": simulations,
        "agent.distribution": distribution,
    })
    out_dir = Path(out) if out else run_dir("bench")
    reports = run_bench(run, out_dir, jobs=run.jobs or config_module.settings.jobs)

    if as_json:
        click.echo(json.dumps([r.model_dump(mode="json") for r in reports], indent=2))
        return
    click.echo(f"{'Matrix Size':>12} {'Baseline':>10} {'Alpha Zero':>11} {'Savings (%)':>12}")
    for r in reports:
        agent = "-" if r.agent_mean is None else f"{r.agent_mean:.1f}"
        savings = "-" if r.savings_percent is None else f"{r.savings_percent:.2f}"
        click.echo(f"{r.matrix_size:>12} {r.baseline_mean:>10.1f} {agent:>11} {savings:>12}")
    click.echo(f"Reports written to {out_dir}")


@cli.command()
@click.option("--episodes", type=click.Path(), default=None, help="Episode pool (JSONL) to summarize")
@click.option("--orderings", type=int, default=None, help="Write golden pivot files for this N")
@click.option("--out", "out", type=click.Path(), required=True, help="Output directory")
@handle_errors
def export(episodes: Optional[str], orderings: Optional[int], out: str):
    """Export transition statistics or golden ordering files.

    Example:
        jacobi-rl export --episodes runs/smdp10/episodes.jsonl --out exports/
        jacobi-rl export --orderings 5 --out golden/
    """
    out_dir = Path(out)
    if episodes is None and orderings is None:
        raise ConfigError("give --episodes and/or --orderings")
    if orderings is not None:
        if orderings < 2:
            raise ConfigError(f"--orderings must be >= 2, got {orderings}")
        paths = write_golden(out_dir, orderings)
        click.echo(f"✓ Wrote {len(paths)} ordering files")
    if episodes is not None:
        by_size: Dict[int, List[Episode]] = {}
        for data in read_jsonl(Path(episodes)):
            if data.get("kind") == "smdp":
                ep = Episode.from_json(data)
                by_size.setdefault(ep.matrix.n, []).append(ep)
        if not by_size:
            click.echo("No option episodes found.", err=True)
            return
        stats = {n: collect_transitions(eps) for n, eps in sorted(by_size.items())}
        for n, s in stats.items():
            export_transition_graph(s, out_dir / f"transitions_{n}.dot", out_dir / f"transitions_{n}.csv")
        write_json(out_dir / "chi_squared.json", chi_squared_summary(stats))
        click.echo(f"✓ Exported transitions for sizes {', '.join(str(n) for n in stats)}")


@cli.command("config")
@click.option("--json", "as_json", is_flag=True, help="Output as JSON")
def show_config(as_json: bool):
    """Show process settings and the default run config."""
    s = config_module.settings
    data = {
        "data_dir": str(s.data_dir),
        "seed": s.seed,
        "jobs": s.jobs,
        "tol_rel": s.tol_rel,
        "threshold_rel": s.threshold_rel,
        "log_level": s.log_level,
        "log_format": s.log_format,
        "run_defaults": RunConfig().model_dump(mode="json"),
    }
    if as_json:
        click.echo(json.dumps(data, indent=2))
        return
    for key, value in data.items():
        if key != "run_defaults":
            click.echo(f"{key}: {value}")


if __name__ == "__main__":
    cli()
