"""
Exhaustive one-window lookahead: try every allocation against the same
window of traffic and keep the best. Arrivals do not depend on the chosen
action, so each window's arrivals are drawn once and every candidate is
scheduled against them.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from slicing.environment import SlicingEnv, WindowArrivals
from slicing.types import EnvConfig, SlicingError, Trace

logger = logging.getLogger(__name__)


@dataclass
class OracleResult:
    rewards: np.ndarray
    actions: np.ndarray

    @property
    def average(self) -> float:
        return float(self.rewards.mean()) if len(self.rewards) else 0.0


def _candidate_rewards(env: SlicingEnv, arrivals: WindowArrivals) -> np.ndarray:
    return np.array([env.serve(a, arrivals, commit=False).reward for a in range(env.num_actions)])


def evaluate_actions(env: SlicingEnv) -> np.ndarray:
    """Reward of every action for the next window; ``env`` is left untouched."""
    snapshot = env.copy()
    return _candidate_rewards(snapshot, snapshot.draw_arrivals())


def oracle_best_reward(env_config: EnvConfig, seed: int, n_windows: int,
                       traces: Optional[Dict[int, Trace]] = None) -> OracleResult:
    """
    Greedy per-window best reward over ``n_windows`` windows.

    After each window the environment continues from the best candidate's
    queues. Ties go to the lowest action id.
    """
    if n_windows < 1:
        raise SlicingError("n_windows must be >= 1")
    env = SlicingEnv(env_config, traces)
    env.reset(seed)
    rewards = np.zeros(n_windows)
    actions = np.zeros(n_windows, dtype=np.int64)
    for w in range(n_windows):
        arrivals = env.draw_arrivals()
        # argmax returns the first maximum, i.e. the lowest action id
        best_action = int(np.argmax(_candidate_rewards(env, arrivals)))
        rewards[w] = env.serve(best_action, arrivals).reward
        actions[w] = best_action
        if (w + 1) % 50 == 0:
            logger.debug("oracle window %d: running average %.4f", w + 1, rewards[:w + 1].mean())
    logger.info("oracle over %d windows (seed %d): average reward %.4f", n_windows, seed, rewards.mean())
    return OracleResult(rewards, actions)
