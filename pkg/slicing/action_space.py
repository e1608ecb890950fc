"""
Discrete PRB allocation space and allocation lookups.
"""
import hashlib
import itertools
from typing import Iterator, List, Sequence

import numpy as np

from slicing.types import Allocation, ConfigError


def grid_steps(num_slices: int, granularity: float, min_share: float) -> int:
    """
    Number of granularity steps left after every slice gets ``min_share``.

    Raises:
        ConfigError: if min_share * S > 1 or the granularity does not divide
        the remainder evenly.
    """
    free = 1.0 - num_slices * min_share
    if free < -1e-9:
        raise ConfigError(f"min_share {min_share} x {num_slices} slices exceeds 1")
    steps = round(free / granularity)
    if abs(steps * granularity - free) > 1e-9:
        raise ConfigError(f"granularity {granularity} does not divide {free:.12g}")
    return max(steps, 0)


def _compositions(total: int, parts: int) -> Iterator[tuple]:
    for head in itertools.product(range(total + 1), repeat=parts - 1):
        rest = total - sum(head)
        if rest >= 0:
            yield head + (rest,)


def enumerate_action_space(num_slices: int, granularity: float, min_share: float) -> 'ActionSpace':
    """All grid allocations summing to 1, sorted ascending lexicographically."""
    steps = grid_steps(num_slices, granularity, min_share)
    allocations = []
    for grid in _compositions(steps, num_slices):
        shares = tuple(round(min_share + k * granularity, 12) for k in grid)
        allocations.append(Allocation(shares, grid))
    if not allocations:
        raise ConfigError("action space is empty")
    allocations.sort(key=lambda a: a.grid)
    return ActionSpace(allocations, granularity, min_share)


class ActionSpace:
    """
    Ordered list of allocations; the index of an allocation is its action id.
    """

    def __init__(self, allocations: List[Allocation], granularity: float, min_share: float):
        self.allocations = list(allocations)
        self.granularity = granularity
        self.min_share = min_share
        self.shares = np.array([a.shares for a in self.allocations], dtype=np.float64)
        self.grid = np.array([a.grid for a in self.allocations], dtype=np.int64)
        self._index = {a.grid: i for i, a in enumerate(self.allocations)}

    def __len__(self) -> int:
        return len(self.allocations)

    def __getitem__(self, action_id: int) -> Allocation:
        return self.allocations[action_id]

    def __iter__(self) -> Iterator[Allocation]:
        return iter(self.allocations)

    @property
    def num_slices(self) -> int:
        return self.shares.shape[1]

    def index_of(self, shares: Sequence[float]) -> int:
        """Action id of an allocation given by its shares."""
        grid = tuple(int(round((b - self.min_share) / self.granularity)) for b in shares)
        if grid not in self._index:
            raise KeyError(f"{tuple(shares)} is not in the action space")
        return self._index[grid]

    def contains(self, action_id: int) -> bool:
        return 0 <= action_id < len(self.allocations)

    def nearest(self, point: Sequence[float]) -> int:
        """Action closest to ``point`` in Euclidean distance; ties to the lowest id."""
        d2 = np.sum((self.shares - np.asarray(point, dtype=np.float64)) ** 2, axis=1)
        return int(np.flatnonzero(d2 <= d2.min() + 1e-12)[0])

    def nearest_to_midpoint(self, first_id: int, second_id: int) -> int:
        """
        Action closest to the midpoint of two actions. Works in doubled grid
        units so distances are exact integers; ties go to the lowest id.
        """
        doubled_mid = self.grid[first_id] + self.grid[second_id]
        d2 = np.sum((2 * self.grid - doubled_mid) ** 2, axis=1)
        return int(np.argmin(d2))

    def equal_share_action(self) -> int:
        """The allocation nearest to an even split."""
        return self.nearest(np.full(self.num_slices, 1.0 / self.num_slices))

    def digest(self) -> str:
        """Stable hash of the ordered allocation list."""
        text = "\n".join(",".join(f"{b:.12f}" for b in a.shares) for a in self.allocations)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()
