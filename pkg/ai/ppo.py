"""
PPO clipped-surrogate updates, epsilon-mixed action selection and the
exploration schedule.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

import constants
from ai.network import NumericError, PolicyWeights, backward, forward
from slicing.types import ConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PpoHyperparams:
    learning_rate: float = constants.LEARNING_RATE
    batch_size: int = constants.BATCH_SIZE
    clip_ratio: float = constants.CLIP_RATIO
    discount: float = constants.DISCOUNT
    entropy_coef: float = constants.ENTROPY_COEF
    value_coef: float = constants.VALUE_COEF
    epochs_per_update: int = constants.EPOCHS_PER_UPDATE

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.epochs_per_update < 1:
            raise ConfigError("batch_size and epochs_per_update must be >= 1")
        if not 0 < self.clip_ratio < 1:
            raise ConfigError("clip_ratio must be in (0, 1)")
        if not 0 < self.discount <= 1:
            raise ConfigError("discount must be in (0, 1]")


@dataclass(frozen=True)
class ExplorationSchedule:
    eps0: float = constants.EXPLORATION_RATE
    decay: float = constants.EXPLORATION_DECAYS[0]
    end_step: int = constants.EXPLORATION_END_STEP

    def __post_init__(self):
        if not 0 <= self.eps0 <= 1:
            raise ConfigError("eps0 must be in [0, 1]")
        if not 0 < self.decay <= 1:
            raise ConfigError("exploration decay must be in (0, 1]")
        if self.end_step < 0:
            raise ConfigError("end_step must be >= 0")


def exploration_rate(t: int, schedule: ExplorationSchedule) -> float:
    """eps0 * decay^t before ``end_step``, 0 afterwards."""
    if t >= schedule.end_step:
        return 0.0
    return schedule.eps0 * schedule.decay ** t


@dataclass
class Transition:
    state: np.ndarray
    action_id: int
    log_prob: float
    reward: float
    value: float


@dataclass
class TransitionBuffer:
    """Holds exactly ``capacity`` transitions between updates."""
    capacity: int
    transitions: List[Transition] = field(default_factory=list)

    def append(self, transition: Transition):
        if self.is_full():
            raise ValueError("buffer is full; flush it before appending")
        self.transitions.append(transition)

    def is_full(self) -> bool:
        return len(self.transitions) >= self.capacity

    def flush(self) -> List[Transition]:
        batch, self.transitions = self.transitions, []
        return batch

    def __len__(self) -> int:
        return len(self.transitions)


@dataclass
class ActionChoice:
    action_id: int
    log_prob: float
    explored: bool


def mixed_distribution(probs: np.ndarray, epsilon: float) -> np.ndarray:
    """The policy mixed with a uniform distribution at rate epsilon."""
    return (1.0 - epsilon) * probs + epsilon / len(probs)


def select_action(probs: np.ndarray, rng: np.random.Generator, epsilon: float) -> ActionChoice:
    """
    With probability epsilon pick uniformly, otherwise sample from ``probs``.
    Two uniforms are drawn per call whichever branch is taken.
    """
    n = len(probs)
    u, v = rng.random(2)
    if u < epsilon:
        action_id = min(int(v * n), n - 1)
        explored = True
    else:
        action_id = min(int(np.searchsorted(np.cumsum(probs), v, side="right")), n - 1)
        explored = False
    log_prob = float(np.log(mixed_distribution(probs, epsilon)[action_id]))
    return ActionChoice(action_id, log_prob, explored)


def discounted_returns(rewards: Sequence[float], discount: float, bootstrap: float = 0.0) -> np.ndarray:
    returns = np.zeros(len(rewards))
    running = bootstrap
    for i in reversed(range(len(rewards))):
        running = rewards[i] + discount * running
        returns[i] = running
    return returns


@dataclass
class LossReport:
    total: float
    policy: float
    value: float
    entropy: float
    clip_fraction: float


@dataclass
class _Batch:
    states: np.ndarray
    actions: np.ndarray
    old_log_probs: np.ndarray
    returns: np.ndarray
    advantages: np.ndarray


def _prepare(transitions: Sequence[Transition], hyper: PpoHyperparams, bootstrap_value: float) -> _Batch:
    rewards = [tr.reward for tr in transitions]
    values = np.array([tr.value for tr in transitions])
    returns = discounted_returns(rewards, hyper.discount, bootstrap_value)
    advantages = returns - values
    if len(transitions) > 1:
        advantages = advantages - advantages.mean()
    return _Batch(
        states=np.array([tr.state for tr in transitions], dtype=np.float64),
        actions=np.array([tr.action_id for tr in transitions], dtype=np.int64),
        old_log_probs=np.array([tr.log_prob for tr in transitions]),
        returns=returns,
        advantages=advantages,
    )


def _loss_and_grad(weights: PolicyWeights, batch: _Batch, hyper: PpoHyperparams) -> Tuple[float, np.ndarray, LossReport]:
    n = len(batch.actions)
    rows = np.arange(n)
    fp = forward(weights, batch.states)
    shifted = fp.logits - fp.logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    probs = fp.probs

    ratio = np.exp(log_probs[rows, batch.actions] - batch.old_log_probs)
    clipped = np.clip(ratio, 1.0 - hyper.clip_ratio, 1.0 + hyper.clip_ratio)
    adv = batch.advantages
    unclipped_branch = ratio * adv <= clipped * adv
    surrogate = np.where(unclipped_branch, ratio * adv, clipped * adv)
    policy_loss = -surrogate.mean()

    value_error = batch.returns - fp.values
    value_loss = np.mean(value_error ** 2)

    entropy = -np.sum(probs * log_probs, axis=1)
    total = policy_loss + hyper.value_coef * value_loss - hyper.entropy_coef * entropy.mean()
    if not np.isfinite(total):
        raise NumericError(f"non-finite PPO loss {total}")

    # d(loss)/d(logits): surrogate through the ratio, then the entropy bonus
    dratio = np.where(unclipped_branch, -adv / n, 0.0)
    one_hot = np.zeros_like(probs)
    one_hot[rows, batch.actions] = 1.0
    dlogits = (dratio * ratio)[:, None] * (one_hot - probs)
    dlogits += (hyper.entropy_coef / n) * probs * (log_probs + entropy[:, None])
    dvalues = -2.0 * hyper.value_coef * value_error / n

    grad = backward(weights, fp, dlogits, dvalues)
    report = LossReport(float(total), float(policy_loss), float(value_loss),
                        float(entropy.mean()), float(np.mean(~unclipped_branch)))
    return float(total), grad, report


def ppo_loss_and_grad(weights: PolicyWeights, transitions: Sequence[Transition], hyper: PpoHyperparams,
                      bootstrap_value: float = 0.0) -> Tuple[float, np.ndarray, LossReport]:
    """Total PPO loss and its analytic gradient w.r.t. the flat parameters."""
    return _loss_and_grad(weights, _prepare(transitions, hyper, bootstrap_value), hyper)


def ppo_update(weights: PolicyWeights, buffer: TransitionBuffer, hyper: PpoHyperparams,
               bootstrap_value: float = 0.0) -> Tuple[PolicyWeights, List[LossReport]]:
    """
    One plain gradient-descent step per epoch on the full buffer.
    Returns new weights; the input weights are left untouched.
    """
    if not buffer.is_full():
        raise ValueError(f"buffer holds {len(buffer)} of {buffer.capacity} transitions")
    batch = _prepare(buffer.transitions, hyper, bootstrap_value)
    updated = weights.copy()
    reports = []
    for _ in range(hyper.epochs_per_update):
        _, grad, report = _loss_and_grad(updated, batch, hyper)
        updated.params -= hyper.learning_rate * grad
        reports.append(report)
    if not np.all(np.isfinite(updated.params)):
        raise NumericError("non-finite parameters after update")
    logger.debug("ppo update: loss %.5f policy %.5f value %.5f entropy %.4f",
                 reports[-1].total, reports[-1].policy, reports[-1].value, reports[-1].entropy)
    return updated, reports
