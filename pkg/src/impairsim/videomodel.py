"""Deterministic frame sources and a GOP-structured diff codec.

Intra payload::

    b"I" | mode (0 raw, 1 run-length) | data
    run-length data: u32 n_runs | n_runs x u16 count | n_runs x 3 bytes RGB

Predicted payload (diff against the previous *source* frame)::

    b"P" | u32 n_records | n x u32 pixel offset | n x u16 pixel count | RGB bytes

A Predicted frame decodes only on top of the immediately preceding frame.
"""
from __future__ import annotations

import enum
import os
import struct
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

WIDTH = 640
HEIGHT = 480
FPS = 30
GOP = 15
FRAME_BYTES = WIDTH * HEIGHT * 3

INTRA_RAW = 0
INTRA_RLE = 1
_MAX_RUN = 0xFFFF


class CodecError(ValueError):
    pass


class DecodeFailure(Exception):
    """Frame could not be decoded; drives concealment, never fatal."""


class FrameKind(enum.Enum):
    INTRA = "I"
    PREDICTED = "P"


def capture_time_ns(frame_index: int, fps: int = FPS) -> int:
    return frame_index * 1_000_000_000 // fps


@dataclass
class RawFrame:
    pixels: np.ndarray  # (height, width, 3) uint8
    frame_index: int
    capture_timestamp_us: int = 0

    def __post_init__(self):
        px = self.pixels
        if px.dtype != np.uint8 or px.ndim != 3 or px.shape[2] != 3:
            raise CodecError(f"expected (h, w, 3) uint8 pixels, got {px.shape} {px.dtype}")

    @property
    def frame_id(self):
        return self.frame_index

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()


@dataclass(frozen=True)
class EncodedFrame:
    frame_id: int
    kind: FrameKind
    payload: bytes
    capture_timestamp_us: int

    @classmethod
    def from_payload(cls, frame_id, payload, capture_timestamp_us):
        try:
            kind = FrameKind(chr(payload[0]))
        except (IndexError, ValueError):
            raise CodecError(f"frame {frame_id}: unknown payload tag") from None
        return cls(frame_id, kind, payload, capture_timestamp_us)


# ---------------------------------------------------------------------------
# Sources
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MotionParams:
    rect_w: int = 96
    rect_h: int = 72
    amp_x: float = 220.0
    amp_y: float = 150.0
    period_x: float = 180.0  # frames
    period_y: float = 130.0
    bands: int = 8


@lru_cache(maxsize=8)
def _scene(seed: int, width: int, height: int, motion: MotionParams):
    rng = np.random.default_rng(seed)
    band_colors = rng.integers(40, 200, size=(motion.bands, 3))
    slope = rng.uniform(-0.12, 0.12, size=3)
    band = np.minimum(np.arange(width) * motion.bands // width, motion.bands - 1)
    rows = np.arange(height)[:, None, None] * slope[None, None, :]
    bg = np.clip(np.rint(band_colors[band][None, :, :] + rows), 0, 255).astype(np.uint8)
    bg.setflags(write=False)
    rect_color = rng.integers(0, 256, size=3).astype(np.uint8)
    phase = rng.uniform(0, 2 * np.pi, size=2)
    return bg, rect_color, phase


def rect_position(seed, frame_index, width=WIDTH, height=HEIGHT, motion=MotionParams()):
    _, _, phase = _scene(seed, width, height, motion)
    cx = width / 2 + motion.amp_x * np.sin(2 * np.pi * frame_index / motion.period_x + phase[0])
    cy = height / 2 + motion.amp_y * np.sin(2 * np.pi * frame_index / motion.period_y + phase[1])
    x0 = int(np.clip(round(cx - motion.rect_w / 2), 0, width - motion.rect_w))
    y0 = int(np.clip(round(cy - motion.rect_h / 2), 0, height - motion.rect_h))
    return x0, y0


def synth_frame(source_seed: int, frame_index: int, width=WIDTH, height=HEIGHT, motion=MotionParams(), fps=FPS) -> RawFrame:
    """Banded gradient background with one rectangle on a seeded Lissajous path."""
    bg, color, _ = _scene(source_seed, width, height, motion)
    px = bg.copy()
    x0, y0 = rect_position(source_seed, frame_index, width, height, motion)
    px[y0:y0 + motion.rect_h, x0:x0 + motion.rect_w] = color
    return RawFrame(px, frame_index, capture_time_ns(frame_index, fps) // 1000)


class SyntheticSource:
    def __init__(self, seed=0, width=WIDTH, height=HEIGHT, motion=MotionParams(), fps=FPS):
        self.seed = seed
        self.width = width
        self.height = height
        self.motion = motion
        self.fps = fps

    @property
    def key(self):
        return ("synthetic", self.seed, self.width, self.height, self.motion, self.fps)

    def __len__(self):
        return 2**31

    def frame(self, index: int) -> RawFrame:
        return synth_frame(self.seed, index, self.width, self.height, self.motion, self.fps)


class RawFileSource:
    """Header-less concatenated RGB24 frames."""

    def __init__(self, path, width=WIDTH, height=HEIGHT, fps=FPS):
        self.path = os.fspath(path)
        self.width = width
        self.height = height
        self.fps = fps
        frame_bytes = width * height * 3
        size = os.path.getsize(self.path)
        if size == 0 or size % frame_bytes:
            raise CodecError(
                f"{self.path}: size {size} is not a positive multiple of the {frame_bytes}-byte frame size"
            )
        self._data = np.memmap(self.path, dtype=np.uint8, mode="r").reshape(-1, height, width, 3)
        stat = os.stat(self.path)
        self.key = ("raw", os.path.abspath(self.path), stat.st_size, stat.st_mtime_ns, width, height, fps)

    def __len__(self):
        return self._data.shape[0]

    def frame(self, index: int) -> RawFrame:
        if index >= len(self):
            raise CodecError(f"source exhausted: frame {index} requested, file holds {len(self)}")
        return RawFrame(np.array(self._data[index]), index, capture_time_ns(index, self.fps) // 1000)


# ---------------------------------------------------------------------------
# Codec
# ---------------------------------------------------------------------------


def _pack_rgb(px):
    flat = px.reshape(-1, 3).astype(np.uint32)
    return (flat[:, 0] << 16) | (flat[:, 1] << 8) | flat[:, 2]


def _rle_encode(px: np.ndarray) -> bytes:
    packed = _pack_rgb(px)
    change = np.flatnonzero(packed[1:] != packed[:-1]) + 1
    starts = np.concatenate(([0], change))
    lengths = np.diff(np.concatenate((starts, [packed.size])))
    # split runs longer than the u16 count field
    reps = (lengths + _MAX_RUN - 1) // _MAX_RUN
    run_starts = np.repeat(starts, reps)
    sub = np.arange(reps.sum()) - np.repeat(np.cumsum(reps) - reps, reps)
    counts = np.minimum(np.repeat(lengths, reps) - sub * _MAX_RUN, _MAX_RUN)
    colors = px.reshape(-1, 3)[run_starts + sub * _MAX_RUN]
    return (
        struct.pack(">I", counts.size)
        + counts.astype(">u2").tobytes()
        + np.ascontiguousarray(colors, dtype=np.uint8).tobytes()
    )


def _rle_decode(data: bytes, n_pixels: int) -> np.ndarray:
    (n_runs,) = struct.unpack_from(">I", data)
    counts = np.frombuffer(data, dtype=">u2", count=n_runs, offset=4).astype(np.int64)
    colors = np.frombuffer(data, dtype=np.uint8, count=3 * n_runs, offset=4 + 2 * n_runs).reshape(-1, 3)
    if counts.sum() != n_pixels:
        raise DecodeFailure("run-length data does not cover the frame")
    return np.repeat(colors, counts, axis=0)


def _diff_encode(prev: np.ndarray, cur: np.ndarray) -> bytes:
    ne = prev != cur
    changed = (ne[..., 0] | ne[..., 1] | ne[..., 2]).ravel()
    padded = np.concatenate(([False], changed, [False])).astype(np.int8)
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    lengths = np.flatnonzero(edges == -1) - starts
    reps = (lengths + _MAX_RUN - 1) // _MAX_RUN
    sub = np.arange(reps.sum()) - np.repeat(np.cumsum(reps) - reps, reps)
    offsets = np.repeat(starts, reps) + sub * _MAX_RUN
    counts = np.minimum(np.repeat(lengths, reps) - sub * _MAX_RUN, _MAX_RUN)
    pixels = cur.reshape(-1, 3)[changed]
    return (
        b"P"
        + struct.pack(">I", offsets.size)
        + offsets.astype(">u4").tobytes()
        + counts.astype(">u2").tobytes()
        + pixels.tobytes()
    )


def _diff_apply(base: np.ndarray, payload: bytes) -> np.ndarray:
    (n,) = struct.unpack_from(">I", payload, 1)
    pos = 5
    offsets = np.frombuffer(payload, dtype=">u4", count=n, offset=pos).astype(np.int64)
    counts = np.frombuffer(payload, dtype=">u2", count=n, offset=pos + 4 * n).astype(np.int64)
    pos += 6 * n
    total = int(counts.sum())
    if len(payload) - pos != 3 * total:
        raise DecodeFailure("diff payload length mismatch")
    out = base.copy()
    flat = out.reshape(-1, 3)
    if total:
        idx = np.repeat(offsets - np.concatenate(([0], np.cumsum(counts)[:-1])), counts) + np.arange(total)
        if idx.max() >= flat.shape[0]:
            raise DecodeFailure("diff record outside the frame")
        flat[idx] = np.frombuffer(payload, dtype=np.uint8, offset=pos).reshape(-1, 3)
    return out


@dataclass
class EncoderState:
    gop: int = GOP
    intra_mode: int = INTRA_RLE
    last_source: RawFrame | None = None


def encode(state: EncoderState, raw: RawFrame) -> EncodedFrame:
    prev = state.last_source
    expected = 0 if prev is None else prev.frame_index + 1
    if raw.frame_index != expected:
        raise CodecError(f"non-consecutive frame index {raw.frame_index}, expected {expected}")
    if raw.frame_index % state.gop == 0:
        if state.intra_mode == INTRA_RLE:
            body = _rle_encode(raw.pixels)
        elif state.intra_mode == INTRA_RAW:
            body = raw.tobytes()
        else:
            raise CodecError(f"unknown intra mode {state.intra_mode}")
        payload = b"I" + bytes([state.intra_mode]) + body
        kind = FrameKind.INTRA
    else:
        if prev.pixels.shape != raw.pixels.shape:
            raise CodecError("frame dimensions changed mid-stream")
        payload = _diff_encode(prev.pixels, raw.pixels)
        kind = FrameKind.PREDICTED
    state.last_source = raw
    return EncodedFrame(raw.frame_index, kind, payload, raw.capture_timestamp_us)


@dataclass
class CodecState:
    width: int = WIDTH
    height: int = HEIGHT
    last_decoded: RawFrame | None = None
    frames_since_intra: int = 0
    corrupt: bool = False
    failures: int = field(default=0)


def decode(state: CodecState, encoded: EncodedFrame) -> RawFrame:
    """Decode one access unit or raise :class:`DecodeFailure`."""
    shape = (state.height, state.width, 3)
    payload = encoded.payload
    try:
        if encoded.kind is FrameKind.INTRA:
            mode = payload[1]
            body = payload[2:]
            if mode == INTRA_RAW:
                if len(body) != shape[0] * shape[1] * 3:
                    raise DecodeFailure("raw intra payload has the wrong size")
                pixels = np.frombuffer(body, dtype=np.uint8).reshape(shape).copy()
            elif mode == INTRA_RLE:
                pixels = _rle_decode(body, shape[0] * shape[1]).reshape(shape)
            else:
                raise DecodeFailure(f"unknown intra mode {mode}")
            state.corrupt = False
            state.frames_since_intra = 0
        else:
            ref = state.last_decoded
            if ref is None:
                raise DecodeFailure(f"frame {encoded.frame_id}: no reference frame")
            if state.corrupt:
                raise DecodeFailure(f"frame {encoded.frame_id}: reference chain corrupt")
            if ref.frame_index != encoded.frame_id - 1:
                raise DecodeFailure(f"frame {encoded.frame_id}: reference gap after {ref.frame_index}")
            pixels = _diff_apply(ref.pixels, payload)
            state.frames_since_intra += 1
    except DecodeFailure:
        state.corrupt = True
        state.failures += 1
        raise
    except (struct.error, ValueError, IndexError) as exc:
        state.corrupt = True
        state.failures += 1
        raise DecodeFailure(f"frame {encoded.frame_id}: {exc}") from None
    frame = RawFrame(pixels, encoded.frame_id, encoded.capture_timestamp_us)
    state.last_decoded = frame
    return frame


def encode_sequence(source, count: int, gop: int = GOP, intra_mode: int = INTRA_RLE) -> list[EncodedFrame]:
    if count > len(source):
        raise CodecError(f"source exhausted: {count} frames requested, source holds {len(source)}")
    state = EncoderState(gop=gop, intra_mode=intra_mode)
    return [encode(state, source.frame(i)) for i in range(count)]


_STREAM_CACHE: dict = {}


def cached_stream(source, count: int, gop: int = GOP, intra_mode: int = INTRA_RLE) -> list[EncodedFrame]:
    """Encoded stream for ``source``, reused across trials sharing the source."""
    key = (source.key, gop, intra_mode)
    frames = _STREAM_CACHE.get(key)
    if frames is None or len(frames) < count:
        frames = encode_sequence(source, count, gop, intra_mode)
        if len(_STREAM_CACHE) >= 4:
            _STREAM_CACHE.pop(next(iter(_STREAM_CACHE)))
        _STREAM_CACHE[key] = frames
    return frames[:count]
