"""Pydantic models for run configuration and report schemas."""
from __future__ import annotations

import math
from datetime import datetime
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator


# --- Decision-process configuration ---

class RewardConfig(BaseModel):
    """Reward constants shared by both decision processes."""
    epsilon: float = Field(default=0.01, gt=0)  # per-rotation cost magnitude
    tie_value: float = Field(default=0.0, gt=-1, lt=1)
    discount: float = Field(default=1.0, gt=0, le=1)

    model_config = {"frozen": True}


class SearchConfig(BaseModel):
    """MCTS knobs."""
    c_puct: float = Field(default=math.sqrt(2.0), ge=0)
    num_simulations: int = Field(default=30, ge=1)
    max_depth: Optional[int] = Field(default=None, ge=1)  # None: 4·N(N-1)/2 for pivot games
    temperature: float = Field(default=1.0, ge=0)
    heavy_rollout: bool = False
    heavy_mix: float = Field(default=0.75, ge=0, le=1)
    constrain_actions: bool = False
    dirichlet_alpha: float = Field(default=0.0, ge=0)
    dirichlet_weight: float = Field(default=0.25, ge=0, le=1)
    race: bool = False  # search both boards instead of the mover's own
    rollout_option: int = Field(default=4, ge=0, le=7)
    depth_discount: float = Field(default=0.95, gt=0, le=1)  # single-board pivot search

    model_config = {"frozen": True}


class ModelConfig(BaseModel):
    """Shape and regularization of the graph policy/value network."""
    n_max: int = Field(default=12, ge=2)
    num_layers: int = Field(default=5, ge=1)
    hidden_dim: int = Field(default=128, ge=1)
    dropout_rate: float = Field(default=0.3, ge=0, lt=1)
    learn_eps: bool = False
    feature_dim: int = Field(default=4, ge=1)
    context_dim: int = Field(default=0, ge=0)
    option_head: bool = False  # 8 option slots instead of N_max(N_max-1)/2 pivots
    l2: float = Field(default=1e-4, ge=0)
    momentum: float = Field(default=0.0, ge=0, lt=1)

    model_config = {"frozen": True}

    @property
    def policy_size(self) -> int:
        if self.option_head:
            return 8
        return self.n_max * (self.n_max - 1) // 2


class TrainRoundConfig(BaseModel):
    """One self-play + training round."""
    games_per_round: int = Field(default=200, ge=0)
    epochs: int = Field(default=15, ge=1)
    batch_size: int = Field(default=256, ge=1)
    lr: float = Field(default=0.001, ge=0)
    synthetic_fraction: float = Field(default=0.5, ge=0, le=1)
    gate_threshold: float = Field(default=0.55, gt=0.5, le=1)
    train_simulations: int = Field(default=100, ge=1)
    eval_simulations: int = Field(default=30, ge=1)
    rounds: int = Field(default=10, ge=0)
    gate_matrices: int = Field(default=50, ge=1)  # eval matrices per gate

    model_config = {"frozen": True}

    @property
    def selfplay_fraction(self) -> float:
        return 1.0 - self.synthetic_fraction


# --- Run configuration ---

class AgentConfig(BaseModel):
    """Which agent a bench or diag run evaluates."""
    kind: Literal["none", "checkpoint", "search", "distribution"] = "none"
    checkpoint: Optional[str] = None
    distribution: Optional[str] = None  # stage x option CSV from `export` or a bench run
    simulations: int = Field(default=30, ge=1)


class PathsConfig(BaseModel):
    """Output locations; relative paths resolve against the run directory."""
    checkpoints: str = "checkpoints"
    episodes: str = "episodes.jsonl"
    decisions: Optional[str] = "decisions.jsonl"  # None disables the per-decision log
    reports: str = "reports"
    train_manifest: Optional[str] = None
    eval_manifest: Optional[str] = None


class RunConfig(BaseModel):
    """Effective configuration of a CLI run."""
    mode: Literal["mdp", "smdp"] = "smdp"
    sizes: List[int] = Field(default_factory=lambda: [10])
    seed: Optional[int] = None
    count: int = Field(default=50, ge=1)
    scale: float = Field(default=1.0, gt=0)
    threshold: Optional[float] = Field(default=None, gt=0)  # relative to ||M0||_F
    max_sweeps: Optional[int] = Field(default=None, ge=1)  # None: 3·N
    split: Tuple[int, int] = (750, 250)
    jobs: Optional[int] = Field(default=None, ge=1)
    search: SearchConfig = Field(default_factory=SearchConfig)
    rewards: RewardConfig = Field(default_factory=RewardConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    training: TrainRoundConfig = Field(default_factory=TrainRoundConfig)
    agent: AgentConfig = Field(default_factory=AgentConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)

    @field_validator("sizes")
    @classmethod
    def _sizes_at_least_two(cls, v: List[int]) -> List[int]:
        if not v:
            raise ValueError("sizes must not be empty")
        if any(n < 2 for n in v):
            raise ValueError(f"every size must be >= 2, got {v}")
        return v

    @model_validator(mode="after")
    def _model_covers_sizes(self) -> "RunConfig":
        if self.mode == "mdp" and max(self.sizes) > self.model.n_max:
            raise ValueError(
                f"model.n_max={self.model.n_max} is smaller than the largest size {max(self.sizes)}"
            )
        return self


# --- Reports ---

class BenchReport(BaseModel):
    """One row of the rotation-count comparison."""
    matrix_size: int
    baseline_mean: float
    per_policy_mean: Dict[str, float]
    per_policy_min: Dict[str, int]
    per_policy_max: Dict[str, int]
    agent_mean: Optional[float] = None
    savings_percent: Optional[float] = None
    num_instances: int
    threshold: float
    seed: int
    unconverged: Dict[str, int] = Field(default_factory=dict)
    config_hash: Optional[str] = None


class ChiSquaredResult(BaseModel):
    """Pearson test of association."""
    statistic: float
    dof: int
    p_value: float
    log10_p: float
    p_underflow: bool = False
    rows: int
    cols: int


class GateResult(BaseModel):
    """Outcome of a champion/candidate comparison."""
    accepted: bool
    metric: float  # win rate (mdp) or candidate mean rotations (smdp)
    champion_metric: Optional[float] = None
    games: int


class ManifestEntry(BaseModel):
    """One training round in the run manifest."""
    round: int
    checkpoint: str
    sha256: str
    accepted: bool
    opponent: str
    loss_first: Optional[float] = None
    loss_last: Optional[float] = None
    gate_metric: Optional[float] = None
    created_at: datetime = Field(default_factory=datetime.utcnow)


class RunManifest(BaseModel):
    """Lineage of a training run."""
    seed: int
    config_hash: str
    config: Dict[str, Any]
    surpassed_maxelem: bool = False
    champion: Optional[str] = None
    rounds: List[ManifestEntry] = Field(default_factory=list)
