"""
Per-slot round-robin scheduling inside each slice.
"""
import bisect
from collections import defaultdict, deque
from dataclasses import dataclass
from typing import Deque, Dict, List, Sequence

import numpy as np

from slicing.types import Allocation, EnvConfig, Packet, WindowKpis


@dataclass
class SliceWindowStats:
    """Raw counters of one slice for one window."""
    latency_sum: int = 0
    completed: int = 0
    bytes_served: int = 0
    demand_bytes: int = 0


class SliceQueue:
    """
    FIFO queues of one slice's users plus the round-robin pointer.

    ``backlogged`` is the sorted list of users with a non-empty queue.
    """

    def __init__(self, slice_id: int, num_users: int):
        self.slice_id = slice_id
        self.num_users = num_users
        self.queues: List[Deque[Packet]] = [deque() for _ in range(num_users)]
        self.backlogged: List[int] = []
        self.pointer = 0

    def enqueue(self, packet: Packet):
        queue = self.queues[packet.user_id]
        if not queue:
            bisect.insort(self.backlogged, packet.user_id)
        queue.append(packet)

    def _next_backlogged(self) -> int:
        i = bisect.bisect_left(self.backlogged, self.pointer)
        return self.backlogged[i] if i < len(self.backlogged) else self.backlogged[0]

    def serve_slot(self, slot: int, budget: int, stats: SliceWindowStats):
        """Spend up to ``budget`` bytes on head-of-line packets in cyclic user order."""
        while budget > 0 and self.backlogged:
            user = self._next_backlogged()
            queue = self.queues[user]
            packet = queue[0]
            given = min(budget, packet.remaining)
            packet.remaining -= given
            budget -= given
            stats.bytes_served += given
            if packet.remaining > 0:
                self.pointer = user
                return
            queue.popleft()
            stats.latency_sum += slot - packet.arrival_slot + 1
            stats.completed += 1
            if not queue:
                self.backlogged.remove(user)
            self.pointer = (user + 1) % self.num_users

    def pending(self) -> List[Packet]:
        return [p for queue in self.queues for p in queue]

    def pending_bytes(self) -> int:
        return sum(p.remaining for queue in self.queues for p in queue)

    def drop_user(self, user: int) -> int:
        """Remove a user's queue; returns the unserved bytes dropped."""
        queue = self.queues[user]
        dropped = sum(p.remaining for p in queue)
        if queue:
            queue.clear()
            self.backlogged.remove(user)
        return dropped

    def copy(self) -> 'SliceQueue':
        new = SliceQueue.__new__(SliceQueue)
        new.slice_id = self.slice_id
        new.num_users = self.num_users
        new.queues = [deque(p.copy() for p in queue) for queue in self.queues]
        new.backlogged = list(self.backlogged)
        new.pointer = self.pointer
        return new


def simulate_window(queues: Sequence[SliceQueue], arrivals: Sequence[List[Packet]],
                    allocation: Allocation, env: EnvConfig, window_start: int) -> WindowKpis:
    """
    Run ``env.window_len_slots`` 1 ms slots of round-robin service.

    ``queues`` are updated in place. Average latency per slice covers packets
    completed in the window plus the age of packets still pending at its end;
    a slice with neither reports 0. The returned KPIs carry no reward yet.
    """
    num_slices = len(queues)
    window_end = window_start + env.window_len_slots
    budgets = allocation.budgets(env.total_capacity)
    stats = [SliceWindowStats() for _ in range(num_slices)]

    # arrivals bucketed per slot so a packet only becomes visible once it has arrived
    by_slot: List[Dict[int, List[Packet]]] = []
    for s in range(num_slices):
        buckets: Dict[int, List[Packet]] = defaultdict(list)
        for packet in arrivals[s]:
            buckets[packet.arrival_slot].append(packet)
            stats[s].demand_bytes += packet.size
        by_slot.append(buckets)

    for slot in range(window_start, window_end):
        for s in range(num_slices):
            for packet in by_slot[s].get(slot, ()):
                queues[s].enqueue(packet)
            if budgets[s] > 0:
                queues[s].serve_slot(slot, budgets[s], stats[s])

    avg_latency = np.zeros(num_slices)
    pending_counts = np.zeros(num_slices, dtype=np.int64)
    for s in range(num_slices):
        pending = queues[s].pending()
        pending_counts[s] = len(pending)
        total = stats[s].latency_sum + sum(window_end - p.arrival_slot for p in pending)
        counted = stats[s].completed + len(pending)
        avg_latency[s] = total / counted if counted else 0.0

    return WindowKpis(
        avg_latency_ms=avg_latency,
        packets_served=np.array([st.completed for st in stats], dtype=np.int64),
        packets_pending=pending_counts,
        bytes_served=np.array([st.bytes_served for st in stats], dtype=np.int64),
        demand_bytes=np.array([st.demand_bytes for st in stats], dtype=np.int64),
    )
