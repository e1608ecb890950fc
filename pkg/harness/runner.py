"""
Training and deployment runs: the environment/agent loop, its per-step CSV
log and the hand-off to and from the policy directory.
"""
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ai.agent import SlicingAgent
from ai.network import NumericError, PolicyWeights, Role, policy_logits
from ai.oracle import oracle_best_reward
from ai.policy_store import (PolicyRecord, PolicyStoreError, load_policy, policy_path, resolve_context,
                             save_policy)
from ai.transfer import TransferDecision, TransferMode
from harness.config import RunConfig
from harness.metrics import RunMetrics, compute_run_metrics
from slicing.action_space import ActionSpace
from slicing.environment import SlicingEnv
from slicing.traffic import load_trace
from slicing.types import ConfigError, EnvConfig, SlicingError, StepResult, Trace, TrafficKind

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
FINAL_REWARD_WINDOW = 1000


class RunAborted(SlicingError):
    """A run stopped early; its per-step CSV is renamed ``*.partial.csv``."""


def step_fields(num_slices: int) -> List[str]:
    return (["step", "action_id", "source", "reward"]
            + [f"kappa_{s}" for s in range(num_slices)]
            + [f"l_{s}" for s in range(num_slices)]
            + ["theta", "epsilon"])


def partial_path(path: Path) -> Path:
    return path.with_name(path.stem + ".partial.csv")


class StepLog:
    """Per-step CSV writer. On an exception the file is kept under a ``.partial.csv`` name."""

    def __init__(self, path: Optional[PathLike], num_slices: int):
        self.path = Path(path) if path is not None else None
        self.num_slices = num_slices
        self._fh = None
        self._writer = None

    def __enter__(self) -> 'StepLog':
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w", newline="")
            self._writer = csv.writer(self._fh)
            self._writer.writerow(step_fields(self.num_slices))
        return self

    def write(self, step: int, state: np.ndarray, decision: TransferDecision, result: StepResult,
              theta: float, epsilon: float):
        if self._writer is None:
            return
        self._writer.writerow(
            [step, decision.action_id, str(decision.source), float(result.reward)]
            + [float(k) for k in state]
            + [float(l) for l in result.kpis.avg_latency_ms]
            + [float(theta), float(epsilon)])

    def __exit__(self, exc_type, exc, tb):
        if self._fh is None:
            return False
        self._fh.close()
        if exc_type is not None:
            flagged = partial_path(self.path)
            self.path.replace(flagged)
            logger.warning("run aborted; partial log kept at %s", flagged)
        return False


@dataclass
class RunResult:
    rewards: np.ndarray
    learner: PolicyWeights
    action_space: ActionSpace
    action_source_counts: Dict[str, int] = field(default_factory=dict)
    transfer_source_counts: Dict[str, int] = field(default_factory=dict)
    csv_path: Optional[Path] = None
    metrics: Optional[RunMetrics] = None
    oracle_avg: Optional[float] = None


def load_traces(env_config: EnvConfig) -> Dict[int, Trace]:
    """Trace files of every trace-driven slice, keyed by slice id."""
    return {spec.slice_id: load_trace(spec.traffic.trace_path)
            for spec in env_config.slices if spec.traffic.kind == TrafficKind.VR_TRACE}


def make_env(env_config: EnvConfig) -> SlicingEnv:
    return SlicingEnv(env_config, load_traces(env_config))


def context_key_for(config: RunConfig) -> str:
    return f"{config.env.num_slices}slice/{config.traffic_pattern}/seed{config.seed}"


def run_loop(config: RunConfig, experts: Sequence[PolicyWeights] = (),
             learner: Optional[PolicyWeights] = None,
             csv_path: Optional[PathLike] = None) -> RunResult:
    """
    ``config.total_steps`` windows of act, step, observe. Training and
    deployment share this loop; only the transfer settings differ.

    Raises:
        RunAborted: on non-finite network values.
    """
    env = make_env(config.env)
    state = env.reset(config.seed)
    agent = SlicingAgent.create(env.action_space, config.learner_seed, learner=learner, hyper=config.ppo,
                                schedule=config.explore, transfer=config.transfer, experts=experts,
                                transfer_seed=config.seed)
    transfer_active = config.transfer.mode != TransferMode.NONE
    rewards = np.zeros(config.total_steps)
    logger.info("run start: %d steps, mode %s, pattern %s, seed %d, agent seed %d", config.total_steps,
                config.transfer.mode, config.traffic_pattern, config.seed, config.learner_seed)
    with StepLog(csv_path, config.env.num_slices) as log:
        step = 0
        try:
            for step in range(config.total_steps):
                in_window = transfer_active and step < config.transfer.duration
                theta = agent.theta if in_window else 0.0
                epsilon = agent.epsilon
                decision = agent.act(state)
                result = env.step(decision.action_id)
                agent.observe(result.reward, result.state)
                rewards[step] = result.reward
                log.write(step, state, decision, result, theta, epsilon)
                state = result.state
        except NumericError as exc:
            raise RunAborted(f"run aborted at step {step}: {exc}") from exc
    logger.info("run end: mean reward %.4f, last %d steps %.4f", rewards.mean(),
                min(FINAL_REWARD_WINDOW, len(rewards)), rewards[-FINAL_REWARD_WINDOW:].mean())
    return RunResult(rewards, agent.learner, env.action_space,
                     agent.counts_by_source(), agent.counts_by_source(in_transfer_window=True),
                     Path(csv_path) if csv_path is not None else None)


def train_expert(config: RunConfig, policy_dir: PathLike, out_dir: Optional[PathLike] = None,
                 context_key: Optional[str] = None, overwrite: bool = False) -> Tuple[PolicyRecord, RunResult]:
    """Train a policy without transfer and store it as an expert."""
    if config.transfer.mode != TransferMode.NONE:
        raise ConfigError("expert training runs without transfer (mode none)")
    key = context_key or context_key_for(config)
    if policy_path(policy_dir, key).exists() and not overwrite:
        raise PolicyStoreError(f"policy {key!r} already exists in {policy_dir}; pass overwrite")
    csv_path = Path(out_dir) / "experts" / (key.replace("/", "-") + ".csv") if out_dir is not None else None
    result = run_loop(config, csv_path=csv_path)
    record = PolicyRecord.from_weights(key, result.learner, result.action_space.digest(), metadata={
        "training_steps": config.total_steps,
        "final_avg_reward": float(result.rewards[-FINAL_REWARD_WINDOW:].mean()),
        "traffic_pattern": config.traffic_pattern,
        "seed": config.seed,
    })
    save_policy(policy_dir, record, overwrite=overwrite)
    return record, result


def _load(policy_dir: PathLike, key: str, action_space: ActionSpace, role: Role) -> PolicyWeights:
    key = resolve_context(policy_dir, key)
    record = load_policy(policy_dir, key, expected_hash=action_space.digest(),
                         expected_state_dim=action_space.num_slices, expected_n_actions=len(action_space))
    return record.weights(role)


def deploy_run(config: RunConfig, policy_dir: PathLike, out_dir: Optional[PathLike] = None,
               run_id: Optional[str] = None, oracle_avg: Optional[float] = None,
               overwrite: bool = False) -> RunResult:
    """
    A transfer-aided deployment run.

    Experts (and the optional warm-start policy) are resolved before the
    first step. Without ``oracle_avg`` the exhaustive-search oracle is run
    on ``config.oracle_windows`` windows of the same seed.
    """
    action_space = make_env(config.env).action_space
    experts = [_load(policy_dir, key, action_space, Role.EXPERT) for key in config.expert_keys]
    learner = None
    if config.learner_init_key:
        learner = _load(policy_dir, config.learner_init_key, action_space, Role.LEARNER)

    run_id = run_id or f"{config.transfer.mode}-seed{config.seed}"
    csv_path = Path(out_dir) / "runs" / f"{run_id}.csv" if out_dir is not None else None
    result = run_loop(config, experts, learner, csv_path)

    if oracle_avg is None:
        oracle_avg = oracle_best_reward(config.env, config.seed, config.oracle_windows,
                                        load_traces(config.env)).average
    result.oracle_avg = oracle_avg
    result.metrics = compute_run_metrics(result.rewards, oracle_avg, config.env.weight_sum,
                                         result.action_source_counts, result.transfer_source_counts)

    if config.save_learner_key:
        record = PolicyRecord.from_weights(config.save_learner_key, result.learner, action_space.digest(),
                                           metadata={
                                               "training_steps": config.total_steps,
                                               "final_avg_reward": float(
                                                   result.rewards[-FINAL_REWARD_WINDOW:].mean()),
                                               "traffic_pattern": config.traffic_pattern,
                                               "transfer_mode": str(config.transfer.mode),
                                               "experts": list(config.expert_keys),
                                           })
        save_policy(policy_dir, record, overwrite=overwrite)
    return result


def evaluate_policy(weights: PolicyWeights, env_config: EnvConfig, seed: int, n_windows: int) -> np.ndarray:
    """Rewards of the policy's argmax action over ``n_windows`` windows; no learning."""
    env = make_env(env_config)
    state = env.reset(seed)
    rewards = np.zeros(n_windows)
    for w in range(n_windows):
        result = env.step(int(np.argmax(policy_logits(weights, state))))
        rewards[w] = result.reward
        state = result.state
    return rewards
