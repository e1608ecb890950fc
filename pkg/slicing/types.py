"""
Core data types and enums for the slicing simulator.
"""
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

import constants


class SlicingError(Exception):
    """Root of every error raised by the simulator, learner and harness."""


class ConfigError(SlicingError, ValueError):
    """Invalid or infeasible configuration."""


class CalibrationError(SlicingError):
    """A traffic distribution cannot be calibrated to the requested mean."""


class TraceError(SlicingError):
    """A trace file is malformed."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TrafficKind(Enum):
    """Traffic models a slice can carry."""
    VIDEO = "video"
    VONR = "vonr"
    VR_SYNTHETIC = "vr_synthetic"
    VR_TRACE = "vr_trace"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class TrafficModel:
    """
    Parameters of one slice's traffic.

    Only the fields relevant to ``kind`` are read; the others keep their
    defaults. User counts are a Poisson draw clamped at ``user_max``.
    """
    kind: TrafficKind
    user_mean: float
    user_max: int
    # video
    interarrival_mean_ms: float = constants.VIDEO_INTERARRIVAL_MEAN_MS
    interarrival_max_ms: float = constants.VIDEO_INTERARRIVAL_MAX_MS
    size_mean_b: float = constants.VIDEO_SIZE_MEAN_B
    size_max_b: float = constants.VIDEO_SIZE_MAX_B
    pareto_shape: float = constants.PARETO_SHAPE
    # vonr
    interarrival_min_ms: float = constants.VONR_INTERARRIVAL_MIN_MS
    interarrival_upper_ms: float = constants.VONR_INTERARRIVAL_MAX_MS
    constant_size_b: int = constants.VONR_SIZE_B
    # vr_synthetic
    frame_period_ms: float = constants.VR_FRAME_PERIOD_MS
    frame_size_mean_b: float = constants.VR_SIZE_MEAN_B
    frame_size_std_b: float = constants.VR_SIZE_STD_B
    frame_size_min_b: int = constants.VR_SIZE_MIN_B
    frame_size_max_b: int = constants.VR_SIZE_MAX_B
    frame_packets: Optional[int] = constants.VR_FRAME_PACKETS
    # vr_trace
    trace_path: Optional[str] = None

    def __post_init__(self):
        if self.user_mean <= 0:
            raise ConfigError(f"user_mean must be > 0, got {self.user_mean}")
        if self.user_max < 1:
            raise ConfigError(f"user_max must be >= 1, got {self.user_max}")
        if self.kind == TrafficKind.VIDEO:
            if not 0 < self.interarrival_mean_ms < self.interarrival_max_ms:
                raise ConfigError("video interarrival needs 0 < mean < max")
            if not 0 < self.size_mean_b < self.size_max_b:
                raise ConfigError("video size needs 0 < mean < max")
        elif self.kind == TrafficKind.VONR:
            if not 0 <= self.interarrival_min_ms < self.interarrival_upper_ms:
                raise ConfigError("vonr interarrival needs 0 <= min < max")
            if self.constant_size_b < 1:
                raise ConfigError("vonr packet size must be >= 1 byte")
        elif self.kind == TrafficKind.VR_SYNTHETIC:
            if self.frame_period_ms <= 0 or self.frame_size_mean_b <= 0:
                raise ConfigError("vr frame period and mean size must be > 0")
            if not 1 <= self.frame_size_min_b <= self.frame_size_max_b:
                raise ConfigError("vr frame size bounds must satisfy 1 <= min <= max")
            if self.frame_packets is not None and self.frame_packets < 1:
                raise ConfigError(f"frame_packets must be >= 1, got {self.frame_packets}")
            if self.frame_size_min_b < self.packets_per_frame:
                raise ConfigError(f"smallest frame ({self.frame_size_min_b} B) cannot fill "
                                  f"{self.packets_per_frame} packets")
        elif self.kind == TrafficKind.VR_TRACE and not self.trace_path:
            raise ConfigError("vr_trace traffic needs a trace_path")

    @property
    def packets_per_frame(self) -> int:
        """Packets a synthetic VR frame is split into; one per whole ms of the period by default."""
        if self.frame_packets is not None:
            return self.frame_packets
        return max(1, int(self.frame_period_ms))


@dataclass(slots=True)
class Packet:
    """A queued downlink request; ``remaining`` shrinks as it is served."""
    arrival_slot: int
    size: int
    remaining: int
    user_id: int
    slice_id: int

    def copy(self) -> 'Packet':
        return Packet(self.arrival_slot, self.size, self.remaining, self.user_id, self.slice_id)


@dataclass(frozen=True)
class Trace:
    """Packet timestamps (ms) and sizes (bytes) of a recorded stream."""
    times_ms: Tuple[float, ...] = ()
    sizes: Tuple[int, ...] = ()

    def __post_init__(self):
        if len(self.times_ms) != len(self.sizes):
            raise TraceError("times and sizes differ in length")

    def __len__(self) -> int:
        return len(self.times_ms)


@dataclass(frozen=True)
class SliceSpec:
    """SLA constants and traffic of one slice."""
    slice_id: int
    name: str
    weight: float
    c1: float
    c2: float
    traffic: TrafficModel

    def __post_init__(self):
        if self.weight <= 0:
            raise ConfigError(f"slice {self.name}: weight must be > 0")
        if self.c1 <= 0 or self.c2 <= 0:
            raise ConfigError(f"slice {self.name}: c1 and c2 must be > 0")


@dataclass(frozen=True)
class EnvConfig:
    """Everything needed to build a slicing environment."""
    slices: Tuple[SliceSpec, ...]
    total_capacity: int = constants.TOTAL_CAPACITY_BYTES
    window_len_slots: int = constants.WINDOW_LEN_SLOTS
    action_granularity: float = constants.ACTION_GRANULARITY
    min_share: float = constants.MIN_SHARE
    departure_age_factor: float = constants.DEPARTURE_AGE_FACTOR
    departure_count: int = constants.DEPARTURE_COUNT

    def __post_init__(self):
        if len(self.slices) < 2:
            raise ConfigError("at least two slices are required")
        if [s.slice_id for s in self.slices] != list(range(len(self.slices))):
            raise ConfigError("slice ids must be 0..S-1 in order")
        if abs(sum(s.weight for s in self.slices) - 1.0) > 1e-9:
            raise ConfigError("slice weights must sum to 1")
        if self.window_len_slots < 1:
            raise ConfigError("window_len_slots must be >= 1")
        if self.total_capacity < 1:
            raise ConfigError("total_capacity must be >= 1 byte per slot")
        if self.action_granularity <= 0 or self.min_share < 0:
            raise ConfigError("granularity must be > 0 and min_share >= 0")
        if self.departure_count < 0 or self.departure_age_factor <= 0:
            raise ConfigError("departure parameters must be positive")

    @property
    def num_slices(self) -> int:
        return len(self.slices)

    @property
    def weight_sum(self) -> float:
        return sum(s.weight for s in self.slices)


@dataclass(frozen=True)
class Allocation:
    """
    A PRB share vector. ``grid`` holds the integer number of granularity
    steps above ``min_share`` for each slice, which makes distance
    comparisons exact.
    """
    shares: Tuple[float, ...]
    grid: Tuple[int, ...]

    def budgets(self, total_capacity: int) -> List[int]:
        """Byte budget per slot for each slice."""
        return [int(math.floor(b * total_capacity + constants.BUDGET_EPSILON)) for b in self.shares]

    def __str__(self) -> str:
        return "(" + ", ".join(f"{b:.2f}" for b in self.shares) + ")"


@dataclass
class WindowKpis:
    """Per-slice measurements of one slicing window plus its reward."""
    avg_latency_ms: np.ndarray
    packets_served: np.ndarray
    packets_pending: np.ndarray
    bytes_served: np.ndarray
    demand_bytes: np.ndarray
    bytes_dropped: np.ndarray = None
    users_departed: np.ndarray = None
    active_users: np.ndarray = None
    reward: float = 0.0

    def __post_init__(self):
        n = len(self.avg_latency_ms)
        for name in ("bytes_dropped", "users_departed", "active_users"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(n, dtype=np.int64))


@dataclass
class StepResult:
    """What ``SlicingEnv.step`` returns."""
    state: np.ndarray
    reward: float
    kpis: WindowKpis


@dataclass
class ByteLedger:
    """Running byte totals used to check conservation."""
    arrived: int = 0
    served: int = 0
    dropped: int = 0

    def copy(self) -> 'ByteLedger':
        return ByteLedger(self.arrived, self.served, self.dropped)
