"""Datagram protocol: 16-byte header, chunking, reassembly, concealment.

Wire header (big-endian, 16 bytes)::

    u32 frame_id | u16 chunk_index | u16 chunk_total | u64 capture_timestamp_us
"""
from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field

from .videomodel import EncodedFrame, FrameKind

HEADER = struct.Struct(">IHHQ")
HEADER_SIZE = HEADER.size
MAX_PAYLOAD = 1200

NS_PER_US = 1000
NS_PER_MS = 1_000_000

DEFAULT_MIN_TIMEOUT_NS = 33_333_333
DEFAULT_MAX_TIMEOUT_NS = 500 * NS_PER_MS
DEFAULT_EWMA_ALPHA = 0.125
DEFAULT_SIGMA_MULT = 4.0


class MalformedDatagram(ValueError):
    pass


@dataclass(frozen=True)
class DatagramHeader:
    frame_id: int
    chunk_index: int
    chunk_total: int
    capture_timestamp_us: int

    def validate(self):
        if not 0 <= self.frame_id < 2**32:
            raise MalformedDatagram(f"frame_id out of range: {self.frame_id}")
        if not 1 <= self.chunk_total < 2**16:
            raise MalformedDatagram(f"chunk_total out of range: {self.chunk_total}")
        if not 0 <= self.chunk_index < self.chunk_total:
            raise MalformedDatagram(f"chunk_index {self.chunk_index} not below chunk_total {self.chunk_total}")
        if not 0 <= self.capture_timestamp_us < 2**64:
            raise MalformedDatagram(f"timestamp out of range: {self.capture_timestamp_us}")


def encode_header(header: DatagramHeader) -> bytes:
    try:
        return HEADER.pack(header.frame_id, header.chunk_index, header.chunk_total, header.capture_timestamp_us)
    except struct.error as exc:
        raise MalformedDatagram(str(exc)) from None


def decode_header(data: bytes) -> DatagramHeader:
    if len(data) < HEADER_SIZE:
        raise MalformedDatagram(f"need {HEADER_SIZE} header bytes, got {len(data)}")
    return DatagramHeader(*HEADER.unpack_from(data))


@dataclass(frozen=True)
class VideoDatagram:
    header: DatagramHeader
    payload: bytes

    def __post_init__(self):
        if not 1 <= len(self.payload) <= MAX_PAYLOAD:
            raise MalformedDatagram(f"payload length {len(self.payload)} outside 1..{MAX_PAYLOAD}")

    def to_bytes(self) -> bytes:
        return encode_header(self.header) + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> VideoDatagram:
        header = decode_header(data)
        return cls(header, bytes(data[HEADER_SIZE:]))

    def __len__(self):
        return HEADER_SIZE + len(self.payload)


def format_datagram(dgram: VideoDatagram) -> str:
    """One-line debug dump: ``frame_id chunk_index/chunk_total ts_us len``."""
    h = dgram.header
    return f"{h.frame_id} {h.chunk_index}/{h.chunk_total} {h.capture_timestamp_us} {len(dgram)}"


def packetize(frame: EncodedFrame, epoch_ns: int = 0) -> list[VideoDatagram]:
    """Split one access unit into consecutive <=1200-byte chunks.

    ``frame.capture_timestamp_us`` is absolute simulation time; the header
    carries it relative to ``epoch_ns``.
    """
    payload = frame.payload
    if not payload:
        raise ValueError("cannot packetize an empty encoded frame")
    total = math.ceil(len(payload) / MAX_PAYLOAD)
    ts = frame.capture_timestamp_us - epoch_ns // NS_PER_US
    return [
        VideoDatagram(
            DatagramHeader(frame.frame_id, i, total, ts),
            payload[i * MAX_PAYLOAD:(i + 1) * MAX_PAYLOAD],
        )
        for i in range(total)
    ]


class JitterEstimator:
    """EWMA mean and variance of absolute inter-arrival deviation (ns)."""

    def __init__(self, alpha=DEFAULT_EWMA_ALPHA):
        self.alpha = alpha
        self.mean = 0.0
        self.var = 0.0
        self._last = None  # (arrival_ns, capture_us)

    def update(self, arrival_ns, capture_us):
        if self._last is not None:
            prev_arrival, prev_capture = self._last
            deviation = abs((arrival_ns - prev_arrival) - (capture_us - prev_capture) * NS_PER_US)
            diff = deviation - self.mean
            self.mean += self.alpha * diff
            self.var = (1.0 - self.alpha) * (self.var + self.alpha * diff * diff)
        self._last = (arrival_ns, capture_us)

    @property
    def std(self):
        return math.sqrt(self.var)


@dataclass
class _Pending:
    chunks: dict
    first_arrival: int
    chunk_total: int
    capture_timestamp_us: int


@dataclass
class ReassemblyStats:
    datagrams: int = 0
    duplicates: int = 0
    discarded_late: int = 0
    malformed: int = 0
    frames_released: int = 0
    frames_expired: int = 0
    frames_superseded: int = 0


@dataclass
class ReassemblyBuffer:
    min_timeout_ns: int = DEFAULT_MIN_TIMEOUT_NS
    max_timeout_ns: int = DEFAULT_MAX_TIMEOUT_NS
    sigma_mult: float = DEFAULT_SIGMA_MULT
    alpha: float = DEFAULT_EWMA_ALPHA
    pending: dict = field(default_factory=dict)
    highest_released_frame_id: int | None = None
    stats: ReassemblyStats = field(default_factory=ReassemblyStats)

    def __post_init__(self):
        self.jitter = JitterEstimator(self.alpha)
        self._closed = set()  # expired or superseded ids above the release mark

    def timeout_ns(self) -> float:
        t = self.jitter.mean + self.sigma_mult * self.jitter.std
        return min(max(t, self.min_timeout_ns), self.max_timeout_ns)

    def _is_late(self, frame_id):
        if frame_id in self._closed:
            return True
        return self.highest_released_frame_id is not None and frame_id <= self.highest_released_frame_id

    def ingest_datagram(self, dgram: VideoDatagram, arrival_ns: int) -> EncodedFrame | None:
        self.stats.datagrams += 1
        h = dgram.header
        try:
            h.validate()
        except MalformedDatagram:
            self.stats.malformed += 1
            return None
        self.jitter.update(arrival_ns, h.capture_timestamp_us)
        if self._is_late(h.frame_id):
            self.stats.discarded_late += 1
            return None

        entry = self.pending.get(h.frame_id)
        if entry is None:
            entry = _Pending({}, arrival_ns, h.chunk_total, h.capture_timestamp_us)
            self.pending[h.frame_id] = entry
        elif h.chunk_total != entry.chunk_total:
            self.stats.malformed += 1
            return None
        if h.chunk_index in entry.chunks:
            self.stats.duplicates += 1
            return None
        entry.chunks[h.chunk_index] = dgram.payload
        if len(entry.chunks) < entry.chunk_total:
            return None

        del self.pending[h.frame_id]
        self.highest_released_frame_id = h.frame_id
        self.stats.frames_released += 1
        for older in [fid for fid in self.pending if fid < h.frame_id]:
            del self.pending[older]
            self.stats.frames_superseded += 1
        self._closed = {fid for fid in self._closed if fid > h.frame_id}
        payload = b"".join(entry.chunks[i] for i in range(entry.chunk_total))
        return EncodedFrame.from_payload(h.frame_id, payload, entry.capture_timestamp_us)

    def expire_frames(self, now_ns: int) -> list[int]:
        limit = self.timeout_ns()
        expired = sorted(fid for fid, e in self.pending.items() if now_ns - e.first_arrival > limit)
        for fid in expired:
            del self.pending[fid]
            self._closed.add(fid)
        self.stats.frames_expired += len(expired)
        return expired

    def deadline_ns(self, frame_id) -> int | None:
        """Earliest time at which ``frame_id`` would expire under the current timeout."""
        entry = self.pending.get(frame_id)
        if entry is None:
            return None
        return entry.first_arrival + int(math.floor(self.timeout_ns())) + 1


class DisplayKind(enum.Enum):
    FRESH = "fresh"
    CONCEALED = "concealed"


@dataclass(frozen=True)
class DisplayRecord:
    tick_time: int
    frame_id: int
    kind: DisplayKind
    one_way_delay: int | None = None  # ns, Fresh only


@dataclass
class DisplayState:
    last_frame_id: int | None = None
    records: list = field(default_factory=list)


def display_tick(state: DisplayState, now_ns: int, newly_decoded=None) -> DisplayRecord | None:
    """Show ``newly_decoded`` if given, else repeat the last frame.

    ``newly_decoded`` is anything with ``frame_id`` and
    ``capture_timestamp_us``. Returns None before the first decoded frame.
    """
    if newly_decoded is not None:
        record = DisplayRecord(
            now_ns,
            newly_decoded.frame_id,
            DisplayKind.FRESH,
            now_ns - newly_decoded.capture_timestamp_us * NS_PER_US,
        )
    elif state.last_frame_id is None:
        return None
    else:
        record = DisplayRecord(now_ns, state.last_frame_id, DisplayKind.CONCEALED)
    state.last_frame_id = record.frame_id
    state.records.append(record)
    return record


def freeze_events(records) -> int:
    """Number of maximal runs of concealed ticks."""
    events = 0
    prev_concealed = False
    for rec in records:
        concealed = rec.kind is DisplayKind.CONCEALED
        if concealed and not prev_concealed:
            events += 1
        prev_concealed = concealed
    return events


__all__ = [
    "HEADER_SIZE",
    "MAX_PAYLOAD",
    "DatagramHeader",
    "DisplayKind",
    "DisplayRecord",
    "DisplayState",
    "FrameKind",
    "JitterEstimator",
    "MalformedDatagram",
    "ReassemblyBuffer",
    "VideoDatagram",
    "decode_header",
    "display_tick",
    "encode_header",
    "format_datagram",
    "freeze_events",
    "packetize",
]
