"""
Policy transfer during deployment: reuse (generalized policy improvement
over expert logits), distillation (grid point nearest the expert/learner
midpoint) and the hybrid gate between the two.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from ai.network import PolicyWeights, policy_forward, policy_logits
from ai.ppo import mixed_distribution, select_action
from slicing.action_space import ActionSpace
from slicing.types import ConfigError, SlicingError


class TransferError(SlicingError):
    """A transfer mode was requested without the experts it needs."""


class TransferMode(Enum):
    NONE = "none"
    REUSE = "reuse"
    DISTILL = "distill"
    HYBRID = "hybrid"

    def __str__(self) -> str:
        return self.value


class ActionSource(Enum):
    """Which branch produced the executed action."""
    LEARNER = "learner"
    EXPERT_REUSE = "expert_reuse"
    DISTILLED = "distilled"
    RANDOM_EXPLORATION = "random_exploration"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class TransferConfig:
    mode: TransferMode = TransferMode.NONE
    theta: float = 0.9
    nu: float = 0.99
    duration: int = 3000
    gamma: float = 0.9

    def __post_init__(self):
        if not 0 <= self.theta <= 1:
            raise ConfigError(f"theta must be in [0, 1], got {self.theta}")
        if not 0 < self.nu <= 1:
            raise ConfigError(f"nu must be in (0, 1], got {self.nu}")
        if not 0 <= self.gamma <= 1:
            raise ConfigError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.duration < 0:
            raise ConfigError("transfer duration must be >= 0")


@dataclass
class TransferDecision:
    action_id: int
    source: ActionSource
    log_prob: float


def gpi_action(state: np.ndarray, experts: Sequence[PolicyWeights]) -> int:
    """
    Best action over all experts, scoring actions by each expert's logits.
    Ties go to the lowest action id.
    """
    if not experts:
        raise TransferError("gpi_action needs at least one expert")
    scores = np.stack([policy_logits(expert, state) for expert in experts])
    return int(np.argmax(scores.max(axis=0)))


def distill_action(expert_action_id: int, learner_action_id: int, action_space: ActionSpace) -> int:
    """Action nearest to the midpoint of the expert and learner allocations."""
    return action_space.nearest_to_midpoint(expert_action_id, learner_action_id)


def decay_theta(theta: float, nu: float) -> float:
    return theta * nu


def transfer_select(state: np.ndarray, learner: PolicyWeights, experts: Sequence[PolicyWeights],
                    cfg: TransferConfig, t: int, rng: np.random.Generator, *,
                    theta: float, epsilon: float, policy_rng: np.random.Generator,
                    action_space: ActionSpace) -> TransferDecision:
    """
    Choose the executed action for step ``t``.

    The learner's own epsilon-mixed choice is always drawn from ``policy_rng``.
    During the transfer window (t < duration) two uniforms x and r are drawn
    from ``rng`` on every step; the expert is consulted when x <= theta
    (never when theta is 0) and the hybrid mode reuses it when r < gamma,
    otherwise distils. ``log_prob`` is the learner's epsilon-mixed
    log-probability of the executed action.
    """
    if cfg.mode != TransferMode.NONE and not experts:
        raise TransferError(f"mode {cfg.mode} requires at least one expert")

    probs, _ = policy_forward(learner, state)
    choice = select_action(probs, policy_rng, epsilon)
    source = ActionSource.RANDOM_EXPLORATION if choice.explored else ActionSource.LEARNER
    own = TransferDecision(choice.action_id, source, choice.log_prob)
    if cfg.mode == TransferMode.NONE or t >= cfg.duration:
        return own

    x, r = rng.random(2)
    if theta <= 0.0 or x > theta:
        return own

    expert_action = gpi_action(state, experts)
    if cfg.mode == TransferMode.REUSE or (cfg.mode == TransferMode.HYBRID and r < cfg.gamma):
        action_id, source = expert_action, ActionSource.EXPERT_REUSE
    else:
        learner_best = int(np.argmax(probs))
        action_id, source = distill_action(expert_action, learner_best, action_space), ActionSource.DISTILLED
    log_prob = float(np.log(mixed_distribution(probs, epsilon)[action_id]))
    return TransferDecision(action_id, source, log_prob)
