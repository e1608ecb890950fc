"""
Per-slice packet arrival generation.

Each slice owns a ``SliceTraffic`` with one ``UserStream`` per possible user.
Streams above the window's active-user count are paused: their time to the
next arrival is frozen until they become active again.
"""
import copy
import csv
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
from scipy import optimize

from slicing.types import CalibrationError, Packet, Trace, TraceError, TrafficKind, TrafficModel

logger = logging.getLogger(__name__)

TRACE_HEADER = ["time_ms", "size_bytes"]


def clamped_pareto_mean(shape: float, scale: float, max_value: float) -> float:
    """Closed-form E[min(X, max_value)] for X ~ Pareto(shape, scale), shape > 1."""
    if scale >= max_value:
        return max_value
    tail = scale - scale ** shape * max_value ** (1.0 - shape)
    return scale + tail / (shape - 1.0)


def calibrate_truncated_pareto(shape: float, target_mean: float, max_value: float) -> float:
    """
    Find the Pareto scale whose clamped mean equals ``target_mean``.

    The clamped mean increases with the scale from 0 to ``max_value``, so a
    root exists in (0, target_mean] whenever 0 < target_mean < max_value.

    Raises:
        CalibrationError: if the target is infeasible for the given shape/max.
    """
    if shape <= 1.0:
        raise CalibrationError(f"Pareto shape must be > 1, got {shape}")
    if not 0.0 < target_mean < max_value:
        raise CalibrationError(
            f"infeasible calibration: need 0 < mean ({target_mean}) < max ({max_value})")

    def gap(scale: float) -> float:
        return clamped_pareto_mean(shape, scale, max_value) - target_mean

    lower = target_mean * 1e-12
    if gap(lower) > 0 or gap(target_mean) < 0:
        raise CalibrationError(f"no root in (0, {target_mean}] for shape {shape}, max {max_value}")
    return optimize.bisect(gap, lower, target_mean, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)


def pareto_from_uniform(u, shape: float, scale: float, max_value: float):
    """Inverse-CDF transform of U in (0, 1] into a clamped Pareto value."""
    return np.minimum(scale * np.power(u, -1.0 / shape), max_value)


def sample_truncated_pareto(rng: np.random.Generator, shape: float, scale: float,
                            max_value: float, size: Optional[int] = None):
    """Draw min(scale * U^(-1/shape), max_value) with U uniform on (0, 1]."""
    u = 1.0 - rng.random(size)
    value = pareto_from_uniform(u, shape, scale, max_value)
    return float(value) if size is None else value


def sample_user_count(rng: np.random.Generator, mean: float, max_users: int, size: Optional[int] = None):
    """Poisson(mean) user count clamped at ``max_users``."""
    draw = np.minimum(rng.poisson(mean, size), max_users)
    return int(draw) if size is None else draw


def load_trace(path: Union[str, Path]) -> Trace:
    """
    Parse a ``time_ms,size_bytes`` CSV into a Trace.

    Line numbers in errors count the header as line 1.
    """
    times: List[float] = []
    sizes: List[int] = []
    with open(path, newline='', encoding='utf-8') as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != TRACE_HEADER:
            raise TraceError(f"expected header {','.join(TRACE_HEADER)}", line=1)
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise TraceError(f"expected 2 fields, got {len(row)}", line=line_no)
            try:
                time_ms = float(row[0])
                size = int(row[1])
            except ValueError as exc:
                raise TraceError(f"cannot parse {row!r}: {exc}", line=line_no) from exc
            if not math.isfinite(time_ms) or time_ms < 0:
                raise TraceError(f"invalid timestamp {row[0]}", line=line_no)
            if size < 1:
                raise TraceError(f"packet size must be >= 1, got {size}", line=line_no)
            if times and time_ms < times[-1]:
                raise TraceError(f"timestamps not monotone ({time_ms} < {times[-1]})", line=line_no)
            times.append(time_ms)
            sizes.append(size)
    return Trace(tuple(times), tuple(sizes))


@dataclass
class UserStream:
    """
    Traffic state of one user: next arrival time (absolute ms), trace
    cursor, and the unsent bytes and packets of a paced VR frame.
    """
    user_id: int
    next_arrival_ms: float
    cursor: int = 0
    frame_left: int = 0
    packets_left: int = 0

    def copy(self) -> 'UserStream':
        return UserStream(self.user_id, self.next_arrival_ms, self.cursor, self.frame_left, self.packets_left)


class TrafficSource(ABC):
    """Abstract base class for all traffic models."""

    def __init__(self, model: TrafficModel):
        self.model = model

    @abstractmethod
    def open_stream(self, user_id: int, rng: np.random.Generator) -> UserStream:
        """Fresh stream for one user, holding the time of its first packet."""
        pass

    @abstractmethod
    def packet_size(self, stream: UserStream, rng: np.random.Generator) -> int:
        """Size in bytes of the packet arriving now on ``stream``."""
        pass

    @abstractmethod
    def advance(self, stream: UserStream, rng: np.random.Generator, window_end_ms: float):
        """Move ``stream`` on to its next arrival."""
        pass


class RenewalSource(TrafficSource):
    """Independent interarrival time and size draws for every packet."""

    @abstractmethod
    def next_interarrival(self, rng: np.random.Generator) -> float:
        pass

    @abstractmethod
    def next_size(self, rng: np.random.Generator) -> int:
        pass

    def open_stream(self, user_id: int, rng: np.random.Generator) -> UserStream:
        return UserStream(user_id, self.next_interarrival(rng))

    def packet_size(self, stream: UserStream, rng: np.random.Generator) -> int:
        return self.next_size(rng)

    def advance(self, stream: UserStream, rng: np.random.Generator, window_end_ms: float):
        stream.next_arrival_ms += self.next_interarrival(rng)


class VideoSource(RenewalSource):
    """Truncated-Pareto interarrival times and packet sizes."""

    def __init__(self, model: TrafficModel):
        super().__init__(model)
        self.interarrival_scale = calibrate_truncated_pareto(
            model.pareto_shape, model.interarrival_mean_ms, model.interarrival_max_ms)
        self.size_scale = calibrate_truncated_pareto(
            model.pareto_shape, model.size_mean_b, model.size_max_b)

    def next_interarrival(self, rng: np.random.Generator) -> float:
        return sample_truncated_pareto(rng, self.model.pareto_shape, self.interarrival_scale,
                                       self.model.interarrival_max_ms)

    def next_size(self, rng: np.random.Generator) -> int:
        size = sample_truncated_pareto(rng, self.model.pareto_shape, self.size_scale, self.model.size_max_b)
        return max(1, int(round(size)))


class VonrSource(RenewalSource):
    """Uniform interarrival times, constant packet size."""

    def next_interarrival(self, rng: np.random.Generator) -> float:
        return float(rng.uniform(self.model.interarrival_min_ms, self.model.interarrival_upper_ms))

    def next_size(self, rng: np.random.Generator) -> int:
        return self.model.constant_size_b


class VrSyntheticSource(TrafficSource):
    """
    Frames at a fixed period with a random phase per user and clipped
    Gaussian sizes. A frame leaves as ``packets_per_frame`` near-equal
    packets spaced evenly over the period.
    """

    def __init__(self, model: TrafficModel):
        super().__init__(model)
        self.packets_per_frame = model.packets_per_frame
        self.spacing_ms = model.frame_period_ms / self.packets_per_frame

    def open_stream(self, user_id: int, rng: np.random.Generator) -> UserStream:
        return UserStream(user_id, float(rng.uniform(0.0, self.model.frame_period_ms)))

    def frame_size(self, rng: np.random.Generator) -> int:
        size = rng.normal(self.model.frame_size_mean_b, self.model.frame_size_std_b)
        return int(np.clip(round(size), self.model.frame_size_min_b, self.model.frame_size_max_b))

    def packet_size(self, stream: UserStream, rng: np.random.Generator) -> int:
        if stream.packets_left == 0:
            stream.frame_left = self.frame_size(rng)
            stream.packets_left = self.packets_per_frame
        size = -(-stream.frame_left // stream.packets_left)
        stream.frame_left -= size
        stream.packets_left -= 1
        return size

    def advance(self, stream: UserStream, rng: np.random.Generator, window_end_ms: float):
        stream.next_arrival_ms += self.spacing_ms


class TraceSource(TrafficSource):
    """
    Replays a recorded trace. Stream ``u`` starts at row ``u * n // user_max``;
    an exhausted stream restarts the trace at the next window boundary.
    """

    def __init__(self, model: TrafficModel, trace: Trace):
        super().__init__(model)
        self.trace = trace
        self.wrapped = False

    def open_stream(self, user_id: int, rng: np.random.Generator) -> UserStream:
        times = self.trace.times_ms
        if not times:
            return UserStream(user_id, math.inf)
        cursor = user_id * len(times) // self.model.user_max
        first = times[cursor] - times[cursor - 1] if cursor > 0 else times[0]
        return UserStream(user_id, first, cursor)

    def packet_size(self, stream: UserStream, rng: np.random.Generator) -> int:
        return self.trace.sizes[stream.cursor]

    def advance(self, stream: UserStream, rng: np.random.Generator, window_end_ms: float):
        times = self.trace.times_ms
        stream.cursor += 1
        if stream.cursor < len(times):
            stream.next_arrival_ms += times[stream.cursor] - times[stream.cursor - 1]
            return
        if not self.wrapped:
            logger.warning("trace %s exhausted, wrapping to its start", self.model.trace_path)
            self.wrapped = True
        stream.cursor = 0
        stream.next_arrival_ms = window_end_ms + times[0]


def create_source(model: TrafficModel, trace: Optional[Trace] = None) -> TrafficSource:
    """Factory function to build the source for a traffic model."""
    if model.kind == TrafficKind.VR_TRACE:
        if trace is None:
            trace = load_trace(model.trace_path)
        return TraceSource(model, trace)
    source_classes = {
        TrafficKind.VIDEO: VideoSource,
        TrafficKind.VONR: VonrSource,
        TrafficKind.VR_SYNTHETIC: VrSyntheticSource,
    }
    return source_classes[model.kind](model)


class SliceTraffic:
    """
    Arrival process of one slice: a source shared by ``user_max`` streams
    drawing from the slice's own generator.
    """

    def __init__(self, slice_id: int, source: TrafficSource, rng: np.random.Generator):
        self.slice_id = slice_id
        self.source = source
        self.rng = rng
        self.streams = [source.open_stream(u, rng) for u in range(source.model.user_max)]

    @property
    def model(self) -> TrafficModel:
        return self.source.model

    def sample_user_count(self, users_rng: np.random.Generator) -> int:
        return sample_user_count(users_rng, self.model.user_mean, self.model.user_max)

    def generate_window_arrivals(self, active_users: int, window_start_slot: int,
                                 window_len_slots: int) -> List[Packet]:
        """
        Emit the packets of the first ``active_users`` streams that arrive in
        [window_start_slot, window_start_slot + window_len_slots).
        """
        if window_len_slots < 1:
            raise ValueError("window_len_slots must be >= 1")
        window_end = float(window_start_slot + window_len_slots)
        packets: List[Packet] = []
        for stream in self.streams:
            if stream.user_id >= active_users:
                stream.next_arrival_ms += window_len_slots
                continue
            while stream.next_arrival_ms < window_end:
                slot = max(int(math.floor(stream.next_arrival_ms)), window_start_slot)
                size = self.source.packet_size(stream, self.rng)
                packets.append(Packet(slot, size, size, stream.user_id, self.slice_id))
                self.source.advance(stream, self.rng, window_end)
        packets.sort(key=lambda p: (p.arrival_slot, p.user_id))
        return packets

    def copy(self) -> 'SliceTraffic':
        """Independent copy that will produce the same future arrivals."""
        new = SliceTraffic.__new__(SliceTraffic)
        new.slice_id = self.slice_id
        new.source = self.source
        new.rng = copy.deepcopy(self.rng)
        new.streams = [s.copy() for s in self.streams]
        return new
