"""
The slicing environment: one ``step`` is one slicing window.
"""
import copy
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy.special import expit

from slicing.action_space import ActionSpace, enumerate_action_space
from slicing.scheduler import SliceQueue, simulate_window
from slicing.traffic import SliceTraffic, create_source
from slicing.types import ByteLedger, EnvConfig, Packet, SliceSpec, SlicingError, StepResult, Trace, WindowKpis

logger = logging.getLogger(__name__)


def compute_state(demands: Sequence[float]) -> np.ndarray:
    """Each slice's fraction of the total demand; all zeros when there is none."""
    demands = np.asarray(demands, dtype=np.float64)
    total = demands.sum()
    if total <= 0:
        return np.zeros_like(demands)
    return demands / total


def sigmoid_reward(latencies: Sequence[float], weights: Sequence[float],
                   c1: Sequence[float], c2: Sequence[float]) -> float:
    """R = sum_s w_s / (1 + exp(c1_s * (l_s - c2_s)))."""
    latencies = np.asarray(latencies, dtype=np.float64)
    slope = np.asarray(c1, dtype=np.float64)
    knee = np.asarray(c2, dtype=np.float64)
    return float(np.dot(np.asarray(weights, dtype=np.float64), expit(-slope * (latencies - knee))))


def compute_reward(kpis: WindowKpis, slices: Sequence[SliceSpec]) -> float:
    """Weighted sigmoid of each slice's average latency."""
    return sigmoid_reward(kpis.avg_latency_ms,
                          [s.weight for s in slices],
                          [s.c1 for s in slices],
                          [s.c2 for s in slices])


@dataclass
class WindowArrivals:
    """Active users and packets of one window, drawn before any allocation is applied."""
    active_users: List[int]
    packets: List[List[Packet]]


class SlicingEnv:
    """
    Tracks queues, arrival streams and RNG state of a base station with S
    slices. ``reset`` must be called before ``step``.

    Per window: sample user counts, generate arrivals, schedule, apply
    departures, then derive the state and reward from this window.
    Arrivals never depend on the allocation, so ``draw_arrivals`` followed
    by ``serve`` is the same as ``step``.
    """

    def __init__(self, config: EnvConfig, traces: Optional[dict] = None):
        self.config = config
        self.action_space: ActionSpace = enumerate_action_space(
            config.num_slices, config.action_granularity, config.min_share)
        self._traces = traces or {}
        self.queues: List[SliceQueue] = []
        self.traffic: List[SliceTraffic] = []
        self.users_rngs: List[np.random.Generator] = []
        self.window_index = 0
        self.ledger = ByteLedger()
        self._ready = False

    @property
    def num_actions(self) -> int:
        return len(self.action_space)

    @property
    def window_start(self) -> int:
        return self.window_index * self.config.window_len_slots

    def reset(self, seed: int) -> np.ndarray:
        """
        Clear all queues, reseed every RNG stream and return the state after
        one warm-up window under (nearly) equal shares.
        """
        num_slices = self.config.num_slices
        streams = np.random.SeedSequence(seed).spawn(2 * num_slices)
        self.users_rngs = [np.random.default_rng(streams[2 * s]) for s in range(num_slices)]
        self.traffic = []
        self.queues = []
        for spec in self.config.slices:
            trace: Optional[Trace] = self._traces.get(spec.slice_id)
            source = create_source(spec.traffic, trace)
            rng = np.random.default_rng(streams[2 * spec.slice_id + 1])
            self.traffic.append(SliceTraffic(spec.slice_id, source, rng))
            self.queues.append(SliceQueue(spec.slice_id, spec.traffic.user_max))
        self.window_index = 0
        self.ledger = ByteLedger()
        self._ready = True
        return self.step(self.action_space.equal_share_action()).state

    def step(self, action_id: int) -> StepResult:
        """Apply an allocation for one slicing window."""
        if not self._ready:
            raise SlicingError("step() called before reset()")
        self._check_action(action_id)
        return self.serve(action_id, self.draw_arrivals())

    def _check_action(self, action_id: int):
        if not self.action_space.contains(action_id):
            raise SlicingError(f"action id {action_id} outside [0, {self.num_actions})")

    def draw_arrivals(self) -> WindowArrivals:
        """Sample the next window's user counts and packets; queues are not touched."""
        if not self._ready:
            raise SlicingError("step() called before reset()")
        window_start = self.window_start
        active = [t.sample_user_count(rng) for t, rng in zip(self.traffic, self.users_rngs)]
        packets = [t.generate_window_arrivals(n, window_start, self.config.window_len_slots)
                   for t, n in zip(self.traffic, active)]
        return WindowArrivals(active, packets)

    def serve(self, action_id: int, arrivals: WindowArrivals, commit: bool = True) -> StepResult:
        """
        Schedule ``arrivals`` under one allocation. With ``commit=False`` the
        window is played on copies and the environment is left as it was.
        """
        self._check_action(action_id)
        config = self.config
        window_start = self.window_start
        queues = self.queues if commit else [q.copy() for q in self.queues]
        packets = arrivals.packets if commit else [[p.copy() for p in ps] for ps in arrivals.packets]
        kpis = simulate_window(queues, packets, self.action_space[action_id], config, window_start)
        kpis.active_users = np.array(arrivals.active_users, dtype=np.int64)
        self._apply_departures(queues, kpis, window_start + config.window_len_slots)
        state = compute_state(kpis.demand_bytes)
        kpis.reward = compute_reward(kpis, config.slices)

        if commit:
            self.ledger.arrived += int(kpis.demand_bytes.sum())
            self.ledger.served += int(kpis.bytes_served.sum())
            self.ledger.dropped += int(kpis.bytes_dropped.sum())
            for spec in config.slices:
                if kpis.users_departed[spec.slice_id]:
                    logger.debug("window %d: %d %s users left", self.window_index,
                                 kpis.users_departed[spec.slice_id], spec.name)
            self.window_index += 1
        return StepResult(state, kpis.reward, kpis)

    def _apply_departures(self, queues: Sequence[SliceQueue], kpis: WindowKpis, window_end: int):
        """A user with too many stale pending packets leaves and its queue is dropped."""
        config = self.config
        for spec, queue in zip(config.slices, queues):
            max_age = config.departure_age_factor * spec.c2
            for user in list(queue.backlogged):
                stale = sum(1 for p in queue.queues[user] if window_end - p.arrival_slot > max_age)
                if stale > config.departure_count:
                    kpis.bytes_dropped[spec.slice_id] += queue.drop_user(user)
                    kpis.users_departed[spec.slice_id] += 1
        kpis.packets_pending = np.array([sum(len(q) for q in queue.queues) for queue in queues],
                                        dtype=np.int64)

    def pending_bytes(self) -> int:
        return sum(queue.pending_bytes() for queue in self.queues)

    def copy(self) -> 'SlicingEnv':
        """Snapshot that replays identical arrivals for any action sequence."""
        new = SlicingEnv.__new__(SlicingEnv)
        new.config = self.config
        new.action_space = self.action_space
        new._traces = self._traces
        new.queues = [q.copy() for q in self.queues]
        new.traffic = [t.copy() for t in self.traffic]
        new.users_rngs = [copy.deepcopy(rng) for rng in self.users_rngs]
        new.window_index = self.window_index
        new.ledger = self.ledger.copy()
        new._ready = self._ready
        return new
