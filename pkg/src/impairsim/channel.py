"""Impaired forward path: Gilbert-Elliott loss, rate shaping, normal jitter.

Simulation time is integer nanoseconds. Each packet consumes exactly one
uniform from the loss stream and one standard normal from the delay stream,
whatever its fate, so the per-packet path (:class:`Channel`) and the batch
path (:func:`transmit_batch`) yield identical outcomes for the same seed.
Both streams are PCG64 generators spawned from one ``SeedSequence``;
normals come from numpy's ziggurat sampler.
"""
from __future__ import annotations

import enum
import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import kernels

log = logging.getLogger(__name__)

NS_PER_S = 1_000_000_000
NS_PER_MS = 1_000_000

DEFAULT_QUEUE_CAPACITY = 1000
DEFAULT_OVERHEAD_BYTES = 28


class ChannelError(ValueError):
    pass


@dataclass(frozen=True)
class GilbertElliottParams:
    p: float  # Good -> Bad, per packet
    r: float  # Bad -> Good, per packet

    def __post_init__(self):
        if not 0.0 <= self.p < 1.0:
            raise ChannelError(f"p must lie in [0, 1), got {self.p}")
        if not 0.0 < self.r <= 1.0:
            raise ChannelError(f"r must lie in (0, 1], got {self.r}")


def ge_from_targets(p_e: float, l_b: float) -> GilbertElliottParams:
    """Transition probabilities giving steady-state loss ``p_e`` and mean burst ``l_b``."""
    if not 0.0 <= p_e < 1.0:
        raise ChannelError(f"loss fraction must lie in [0, 1), got {p_e}")
    if not l_b >= 1.0:
        raise ChannelError(f"mean burst length must be >= 1 packet, got {l_b}")
    r = 1.0 / l_b
    return GilbertElliottParams(p=p_e * r / (1.0 - p_e), r=r)


def ge_steady_state(params: GilbertElliottParams) -> float:
    if params.p + params.r <= 0.0:
        raise ChannelError("steady state undefined for p = r = 0")
    return params.p / (params.p + params.r)


def ge_mean_burst(params: GilbertElliottParams) -> float:
    if params.r <= 0.0:
        raise ChannelError("mean burst undefined for r = 0")
    return 1.0 / params.r


@dataclass(frozen=True)
class ImpairmentProfile:
    bandwidth_bps: float
    nominal_delay_ns: int
    jitter_std_ns: float
    ge: GilbertElliottParams
    queue_capacity: int = DEFAULT_QUEUE_CAPACITY
    overhead_bytes: int = DEFAULT_OVERHEAD_BYTES

    def __post_init__(self):
        if not self.bandwidth_bps > 0:
            raise ChannelError("bandwidth must be strictly positive")
        if self.nominal_delay_ns < 0 or self.jitter_std_ns < 0:
            raise ChannelError("delay and jitter must be non-negative")
        if self.queue_capacity < 1:
            raise ChannelError("queue capacity must be at least one packet")
        if self.overhead_bytes < 0:
            raise ChannelError("overhead must be non-negative")

    def serialization_ns(self, size_bytes):
        """Transmission time of ``size_bytes`` (plus link overhead), rounded to the ns."""
        bits = (np.asarray(size_bytes, dtype=np.int64) + self.overhead_bytes) * 8
        return np.rint(bits * (NS_PER_S / self.bandwidth_bps)).astype(np.int64)


class GEState(enum.Enum):
    GOOD = "good"
    BAD = "bad"


class Outcome(enum.Enum):
    DELIVERED = "delivered"
    LOST_GE = "lost_ge"
    DROPPED_OVERFLOW = "dropped_overflow"


@dataclass(frozen=True)
class ScheduledDelivery:
    outcome: Outcome
    send_time: int
    serialization_delay: int = 0
    sampled_network_delay: int = 0
    departure_time: int | None = None
    delivery_time: int | None = None


def _streams(seed):
    loss_ss, delay_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.Generator(np.random.PCG64(loss_ss)), np.random.Generator(np.random.PCG64(delay_ss))


@dataclass
class ChannelState:
    seed: int
    ge_state: GEState = GEState.GOOD
    last_departure_time: int | None = None
    _departures: deque = field(default_factory=deque, repr=False)
    _loss_rng: np.random.Generator = field(init=False, repr=False)
    _delay_rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self._loss_rng, self._delay_rng = _streams(self.seed)

    @property
    def queued_packets(self):
        return len(self._departures)


def sample_loss(state: ChannelState, ge: GilbertElliottParams) -> bool:
    """Loss decided by the state the packet finds; the transition follows."""
    u = state._loss_rng.random()
    if state.ge_state is GEState.BAD:
        if u < ge.r:
            state.ge_state = GEState.GOOD
        return True
    if u < ge.p:
        state.ge_state = GEState.BAD
    return False


def _network_delay(profile, z):
    return max(0, int(np.rint(profile.nominal_delay_ns + profile.jitter_std_ns * z)))


def enqueue_packet(state: ChannelState, profile: ImpairmentProfile, size_bytes: int, send_time: int) -> ScheduledDelivery:
    if size_bytes < 1:
        raise ChannelError("packet size must be at least one byte")
    send_time = int(send_time)
    lost = sample_loss(state, profile.ge)
    z = state._delay_rng.standard_normal()
    if lost:
        return ScheduledDelivery(Outcome.LOST_GE, send_time)

    while state._departures and state._departures[0] <= send_time:
        state._departures.popleft()
    if len(state._departures) >= profile.queue_capacity:
        log.debug("queue overflow at t=%d ns (%d queued)", send_time, len(state._departures))
        return ScheduledDelivery(Outcome.DROPPED_OVERFLOW, send_time)

    ser = int(profile.serialization_ns(size_bytes))
    start = send_time if state.last_departure_time is None else max(send_time, state.last_departure_time)
    departure = start + ser
    state.last_departure_time = departure
    state._departures.append(departure)
    delay = _network_delay(profile, z)
    return ScheduledDelivery(
        Outcome.DELIVERED,
        send_time,
        serialization_delay=ser,
        sampled_network_delay=delay,
        departure_time=departure,
        delivery_time=departure + delay,
    )


class Channel:
    """Per-packet channel bound to one profile."""

    def __init__(self, profile: ImpairmentProfile, seed: int):
        self.profile = profile
        self.state = ChannelState(seed)

    def send(self, size_bytes, send_time):
        return enqueue_packet(self.state, self.profile, size_bytes, send_time)


@dataclass
class BatchResult:
    """Column-wise outcomes of :func:`transmit_batch` for a fresh channel."""

    send_ns: np.ndarray
    lost_ge: np.ndarray
    overflow: np.ndarray
    departure_ns: np.ndarray  # -1 where not delivered
    delivery_ns: np.ndarray  # -1 where not delivered
    network_delay_ns: np.ndarray  # 0 where not delivered

    @property
    def delivered(self):
        return ~(self.lost_ge | self.overflow)


def transmit_batch(profile: ImpairmentProfile, seed: int, sizes, send_ns) -> BatchResult:
    """Push a whole packet schedule through a fresh channel in one pass."""
    sizes = np.asarray(sizes, dtype=np.int64)
    send_ns = np.asarray(send_ns, dtype=np.int64)
    if sizes.shape != send_ns.shape:
        raise ChannelError("sizes and send times must have equal length")
    if sizes.size and sizes.min() < 1:
        raise ChannelError("packet size must be at least one byte")
    n = sizes.shape[0]
    loss_rng, delay_rng = _streams(seed)
    lost, _ = kernels.ge_chain(loss_rng.random(n), profile.ge.p, profile.ge.r, False)
    z = delay_rng.standard_normal(n)

    survivors = np.flatnonzero(~lost)
    dep_s, over_s = kernels.rate_queue(
        send_ns[survivors], profile.serialization_ns(sizes[survivors]), profile.queue_capacity
    )
    overflow = np.zeros(n, dtype=bool)
    overflow[survivors] = over_s
    departure = np.full(n, -1, dtype=np.int64)
    departure[survivors] = dep_s
    ok = ~(lost | overflow)
    delay = np.zeros(n, dtype=np.int64)
    raw = np.rint(profile.nominal_delay_ns + profile.jitter_std_ns * z[ok])
    delay[ok] = np.maximum(raw, 0).astype(np.int64)
    delivery = np.where(ok, departure + delay, -1)
    return BatchResult(send_ns, lost, overflow, departure, delivery, delay)


def loss_runs(lost) -> np.ndarray:
    return kernels.run_lengths(lost)
