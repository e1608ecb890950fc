"""
Deployed slicing agent: a PPO learner, optional frozen experts and the
transfer/exploration bookkeeping of one run.
"""
import logging
from collections import Counter
from typing import List, Optional, Sequence

import numpy as np

import constants
from ai.network import PolicyWeights, Role, policy_forward
from ai.ppo import (ExplorationSchedule, LossReport, PpoHyperparams, Transition, TransitionBuffer,
                    exploration_rate, ppo_update)
from ai.transfer import ActionSource, TransferConfig, TransferDecision, decay_theta, transfer_select
from slicing.action_space import ActionSpace

logger = logging.getLogger(__name__)

# sub-streams of SeedSequence([seed, k])
INIT_STREAM = 1
POLICY_STREAM = 2
TRANSFER_STREAM = 3


def agent_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream]))


class SlicingAgent:
    """
    Picks one allocation per slicing window and learns from the rewards.

    Call ``act`` with the current state, then ``observe`` with the reward
    of that window and the next state. Every ``batch_size`` observations
    trigger a PPO update.
    """

    def __init__(self, learner: PolicyWeights, action_space: ActionSpace, seed: int,
                 hyper: PpoHyperparams = PpoHyperparams(),
                 schedule: ExplorationSchedule = ExplorationSchedule(),
                 transfer: TransferConfig = TransferConfig(),
                 experts: Sequence[PolicyWeights] = (),
                 transfer_seed: Optional[int] = None):
        """
        Args:
            learner: Starting weights; copied, never mutated.
            action_space: Allocation grid shared by learner and experts.
            seed: Agent seed; exploration and sampling draw from it.
            hyper: PPO hyper-parameters.
            schedule: Exploration schedule.
            transfer: Transfer mode and its probabilities.
            experts: Frozen expert policies.
            transfer_seed: Seed of the transfer draws; defaults to ``seed``.
        """
        if learner.n_actions != len(action_space):
            raise ValueError(f"learner has {learner.n_actions} actions, grid has {len(action_space)}")
        for expert in experts:
            if expert.n_actions != len(action_space) or expert.state_dim != learner.state_dim:
                raise ValueError("expert architecture does not match the learner")
        self.learner = learner.copy(Role.LEARNER)
        self.experts = [expert if expert.role == Role.EXPERT else expert.frozen() for expert in experts]
        self.action_space = action_space
        self.hyper = hyper
        self.schedule = schedule
        self.transfer = transfer
        self.theta = transfer.theta
        self.buffer = TransitionBuffer(hyper.batch_size)
        self.policy_rng = agent_rng(seed, POLICY_STREAM)
        self.transfer_rng = agent_rng(seed if transfer_seed is None else transfer_seed, TRANSFER_STREAM)
        self.step_count = 0
        self.source_counts: Counter = Counter()
        self.transfer_counts: Counter = Counter()
        self.last_losses: List[LossReport] = []
        self._pending: Optional[tuple] = None

    @classmethod
    def create(cls, action_space: ActionSpace, seed: int,
               learner: Optional[PolicyWeights] = None,
               hidden: Sequence[int] = constants.HIDDEN_SIZES, **kwargs) -> 'SlicingAgent':
        """Agent with a fresh learner unless warm-start weights are given."""
        if learner is None:
            learner = PolicyWeights.initialize(action_space.num_slices, len(action_space),
                                               agent_rng(seed, INIT_STREAM), hidden)
        return cls(learner, action_space, seed, **kwargs)

    @property
    def epsilon(self) -> float:
        return exploration_rate(self.step_count, self.schedule)

    def act(self, state: np.ndarray) -> TransferDecision:
        """Executed action for the current window."""
        if self._pending is not None:
            raise RuntimeError("act() called twice without observe()")
        decision = transfer_select(state, self.learner, self.experts, self.transfer, self.step_count,
                                   self.transfer_rng, theta=self.theta, epsilon=self.epsilon,
                                   policy_rng=self.policy_rng, action_space=self.action_space)
        _, value = policy_forward(self.learner, state)
        self._pending = (np.array(state, dtype=np.float64), decision, value)
        return decision

    def observe(self, reward: float, next_state: np.ndarray) -> bool:
        """
        Store the transition of the last ``act``. Returns True when the
        learner was updated on this call.
        """
        if self._pending is None:
            raise RuntimeError("observe() called before act()")
        state, decision, value = self._pending
        self._pending = None
        self.buffer.append(Transition(state, decision.action_id, decision.log_prob, reward, value))
        self.source_counts[decision.source] += 1
        if self.step_count < self.transfer.duration:
            self.transfer_counts[decision.source] += 1
        self.step_count += 1
        self.theta = decay_theta(self.theta, self.transfer.nu)

        if not self.buffer.is_full():
            return False
        _, bootstrap = policy_forward(self.learner, next_state)
        self.learner, self.last_losses = ppo_update(self.learner, self.buffer, self.hyper, bootstrap)
        self.buffer.flush()
        return True

    def greedy_action(self, state: np.ndarray) -> int:
        """Argmax of the learner's policy, without exploration or experts."""
        probs, _ = policy_forward(self.learner, state)
        return int(np.argmax(probs))

    def counts_by_source(self, in_transfer_window: bool = False) -> dict:
        counts = self.transfer_counts if in_transfer_window else self.source_counts
        return {str(source): counts.get(source, 0) for source in ActionSource}
