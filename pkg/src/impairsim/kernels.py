"""Hot numeric loops, each with a numba and a pure-numpy implementation.

Both implementations of a kernel are exposed (``*_numba`` / ``*_numpy``) so
tests can check them against each other; the unsuffixed name dispatches to
the backend chosen in :mod:`impairsim._accel`.

Integer kernels (loss chain, rate queue) agree bit-for-bit across backends.
The Gaussian filter agrees to floating-point summation order only.
"""
import numpy as np

from ._accel import BACKEND, njit

# ---------------------------------------------------------------------------
# Gilbert-Elliott chain
# ---------------------------------------------------------------------------


@njit(cache=True)
def ge_chain_numba(u, p, r, bad0):
    n = u.shape[0]
    lost = np.empty(n, dtype=np.bool_)
    bad = bad0
    for i in range(n):
        lost[i] = bad
        if bad:
            bad = not (u[i] < r)
        else:
            bad = u[i] < p
    return lost, bad


def ge_chain_numpy(u, p, r, bad0):
    u = np.asarray(u, dtype=np.float64)
    n = u.shape[0]
    if n == 0:
        return np.empty(0, dtype=bool), bool(bad0)
    # Each step maps {Good, Bad} -> {Good, Bad}: constant, identity or swap.
    # The state after step i is the value set by the last constant map,
    # flipped once per swap since then.
    nxt_if_good = u < p
    nxt_if_bad = u >= r
    const = nxt_if_good == nxt_if_bad
    swap = nxt_if_good & ~nxt_if_bad
    idx = np.where(const, np.arange(n), -1)
    last_const = np.maximum.accumulate(idx)
    swaps = np.cumsum(swap, dtype=np.int64)
    has_const = last_const >= 0
    safe = np.where(has_const, last_const, 0)
    base = np.where(has_const, nxt_if_good[safe], bool(bad0))
    flips = np.where(has_const, swaps - swaps[safe], swaps)
    after = base ^ (flips & 1).astype(bool)
    lost = np.empty(n, dtype=bool)
    lost[0] = bool(bad0)
    lost[1:] = after[:-1]
    return lost, bool(after[-1])


# ---------------------------------------------------------------------------
# Rate-limited FIFO with tail drop
# ---------------------------------------------------------------------------


@njit(cache=True)
def rate_queue_numba(send_ns, ser_ns, capacity):
    n = send_ns.shape[0]
    departure = np.empty(n, dtype=np.int64)
    overflow = np.zeros(n, dtype=np.bool_)
    ring = np.empty(max(capacity, 1), dtype=np.int64)
    head = 0
    count = 0
    last = np.int64(-(2**62))
    for i in range(n):
        t = send_ns[i]
        while count > 0 and ring[head] <= t:
            head = (head + 1) % capacity
            count -= 1
        if count >= capacity:
            overflow[i] = True
            departure[i] = -1
            continue
        start = t if t > last else last
        last = start + ser_ns[i]
        departure[i] = last
        ring[(head + count) % capacity] = last
        count += 1
    return departure, overflow


def _rate_queue_loop(send_ns, ser_ns, capacity):
    from collections import deque

    n = len(send_ns)
    departure = np.empty(n, dtype=np.int64)
    overflow = np.zeros(n, dtype=bool)
    queue = deque()
    last = -(2**62)
    for i in range(n):
        t = int(send_ns[i])
        while queue and queue[0] <= t:
            queue.popleft()
        if len(queue) >= capacity:
            overflow[i] = True
            departure[i] = -1
            continue
        last = max(t, last) + int(ser_ns[i])
        departure[i] = last
        queue.append(last)
    return departure, overflow


def rate_queue_numpy(send_ns, ser_ns, capacity):
    send_ns = np.asarray(send_ns, dtype=np.int64)
    ser_ns = np.asarray(ser_ns, dtype=np.int64)
    n = send_ns.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64), np.zeros(0, dtype=bool)
    # Without drops: dep_k = C_k + max_{j<=k}(send_j - C_{j-1}).
    csum = np.cumsum(ser_ns)
    prev = np.concatenate(([0], csum[:-1]))
    departure = csum + np.maximum.accumulate(send_ns - prev)
    backlog = np.arange(n) - np.searchsorted(departure, send_ns, side="right")
    if backlog.max() < capacity:
        return departure, np.zeros(n, dtype=bool)
    return _rate_queue_loop(send_ns, ser_ns, capacity)


# ---------------------------------------------------------------------------
# Separable 'valid' correlation (SSIM window statistics)
# ---------------------------------------------------------------------------


@njit(cache=True)
def filter_valid_numba(img, taps):
    h, w = img.shape
    k = taps.shape[0]
    ow = w - k + 1
    oh = h - k + 1
    rows = np.empty((h, ow))
    for y in range(h):
        for x in range(ow):
            acc = 0.0
            for t in range(k):
                acc += img[y, x + t] * taps[t]
            rows[y, x] = acc
    out = np.empty((oh, ow))
    for y in range(oh):
        for x in range(ow):
            acc = 0.0
            for t in range(k):
                acc += rows[y + t, x] * taps[t]
            out[y, x] = acc
    return out


def filter_valid_numpy(img, taps):
    from numpy.lib.stride_tricks import sliding_window_view

    k = taps.shape[0]
    rows = sliding_window_view(img, k, axis=1) @ taps
    return sliding_window_view(rows, k, axis=0) @ taps


if BACKEND == "numba":
    ge_chain = ge_chain_numba
    rate_queue = rate_queue_numba
    filter_valid = filter_valid_numba
else:
    ge_chain = ge_chain_numpy
    rate_queue = rate_queue_numpy
    filter_valid = filter_valid_numpy


def run_lengths(flags):
    """Lengths of maximal runs of True in a boolean sequence."""
    flags = np.asarray(flags, dtype=bool)
    if flags.size == 0:
        return np.empty(0, dtype=np.int64)
    padded = np.concatenate(([False], flags, [False])).astype(np.int8)
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    return (stops - starts).astype(np.int64)
