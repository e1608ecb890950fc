"""
Per-run learning metrics: start reward, variance, convergence against the
exhaustive-search oracle and the normalized average reward.
"""
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

import constants


@dataclass
class RunMetrics:
    initial_reward: float
    reward_variance: float
    steps_to_converge: Optional[int]
    avg_normalized_reward: float
    action_source_counts: Dict[str, int] = field(default_factory=dict)
    transfer_source_counts: Dict[str, int] = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.steps_to_converge is not None


def moving_average(values: Sequence[float], window: int) -> np.ndarray:
    """Trailing means over full windows; element i covers values[i : i + window]."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) < window:
        return np.zeros(0)
    csum = np.concatenate(([0.0], np.cumsum(values)))
    return (csum[window:] - csum[:-window]) / window


def smoothed_curve(values: Sequence[float], window: int = constants.CONVERGENCE_WINDOW) -> np.ndarray:
    """Trailing moving average of the same length; the first points average what exists so far."""
    values = np.asarray(values, dtype=np.float64)
    csum = np.concatenate(([0.0], np.cumsum(values)))
    end = np.arange(1, len(values) + 1)
    start = np.maximum(0, end - window)
    return (csum[end] - csum[start]) / (end - start)


def steps_to_converge(rewards: Sequence[float], threshold: float,
                      window: int = constants.CONVERGENCE_WINDOW) -> Optional[int]:
    """
    First step (1-based) whose trailing ``window`` average reaches
    ``threshold`` and never drops below it for the rest of the run.
    """
    averages = moving_average(rewards, window)
    if len(averages) == 0:
        return None
    below = np.flatnonzero(averages < threshold)
    if len(below) == 0:
        first = 0
    elif below[-1] == len(averages) - 1:
        return None
    else:
        first = below[-1] + 1
    return int(first + window)


def compute_run_metrics(rewards: Sequence[float], oracle_avg: float, weight_sum: float = 1.0,
                        action_source_counts: Optional[Dict[str, int]] = None,
                        transfer_source_counts: Optional[Dict[str, int]] = None,
                        initial_window: int = constants.INITIAL_REWARD_WINDOW,
                        window: int = constants.CONVERGENCE_WINDOW,
                        fraction: float = constants.CONVERGENCE_FRACTION) -> RunMetrics:
    rewards = np.asarray(rewards, dtype=np.float64)
    if len(rewards) == 0:
        raise ValueError("no rewards to summarize")
    return RunMetrics(
        initial_reward=float(rewards[:initial_window].mean()),
        reward_variance=float(rewards.var()),
        steps_to_converge=steps_to_converge(rewards, fraction * oracle_avg, window),
        avg_normalized_reward=float(rewards.mean() / weight_sum),
        action_source_counts=dict(action_source_counts or {}),
        transfer_source_counts=dict(transfer_source_counts or {}),
    )
