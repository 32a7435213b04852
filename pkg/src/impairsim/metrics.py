"""Video quality, temporal continuity, QoS and trial aggregation."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import kernels
from .transport import DisplayKind

PSNR_CAP_DB = 100.0
PSNR_LABEL = "rgb"  # computed over all R, G, B samples

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_L = 255.0


class MetricError(ValueError):
    pass


def _pixels(frame):
    return getattr(frame, "pixels", frame)


def _check_pair(a, b):
    if a.shape != b.shape:
        raise MetricError(f"dimension mismatch: {a.shape} vs {b.shape}")


def psnr(reference, test, cap: float = PSNR_CAP_DB) -> float:
    a = _pixels(reference)
    b = _pixels(test)
    _check_pair(a, b)
    diff = a.astype(np.float64) - b.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return cap
    return min(cap, 10.0 * math.log10(255.0**2 / mse))


def luma(pixels) -> np.ndarray:
    """BT.601 luma as float64."""
    px = np.asarray(pixels, dtype=np.float64)
    return 0.299 * px[..., 0] + 0.587 * px[..., 1] + 0.114 * px[..., 2]


def gaussian_taps(size=SSIM_WINDOW, sigma=SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def ssim(reference, test) -> float:
    """Mean SSIM over all valid 11x11 Gaussian window positions on luma."""
    a = _pixels(reference)
    b = _pixels(test)
    _check_pair(a, b)
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise MetricError(f"frames must be at least {SSIM_WINDOW} pixels on each side")
    x = luma(a)
    y = luma(b)
    taps = gaussian_taps()
    f = kernels.filter_valid
    mu_x = f(x, taps)
    mu_y = f(y, taps)
    sxx = f(x * x, taps) - mu_x * mu_x
    syy = f(y * y, taps) - mu_y * mu_y
    sxy = f(x * y, taps) - mu_x * mu_y
    c1 = (SSIM_K1 * SSIM_L) ** 2
    c2 = (SSIM_K2 * SSIM_L) ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


@dataclass
class FrameScore:
    """Quality of one display slot.

    ``frame_id`` is the source frame the slot is aligned to; ``shown_id`` is
    the frame actually on screen.
    """

    frame_id: int
    shown_id: int
    concealed: bool
    psnr_db: float | None = None
    ssim: float | None = None
    vmaf: float | None = None


def freeze_rate(records, trial_duration_s: float) -> float:
    """Maximal concealed runs per minute."""
    if not trial_duration_s > 0:
        raise MetricError("trial duration must be positive")
    concealed = [r.kind is DisplayKind.CONCEALED for r in records]
    return len(kernels.run_lengths(concealed)) * 60.0 / trial_duration_s


@dataclass(frozen=True)
class AggregateStat:
    mean: float
    ci95_half_width: float  # math.inf when n < 2
    n: int

    @property
    def finite(self):
        return math.isfinite(self.ci95_half_width)


def aggregate(values) -> AggregateStat:
    vals = np.asarray(list(values), dtype=np.float64)
    n = vals.size
    if n == 0:
        raise MetricError("cannot aggregate an empty sample")
    mean = float(vals.mean())
    if n < 2:
        return AggregateStat(mean, math.inf, 1)
    s = float(vals.std(ddof=1))
    half = float(stats.t.ppf(0.975, n - 1)) * s / math.sqrt(n)
    return AggregateStat(mean, half, n)


@dataclass
class QosObservation:
    sent_packets: int = 0
    delivered: int = 0
    lost_ge: int = 0
    dropped_overflow: int = 0
    discarded_late: int = 0
    observed_loss_fraction: float = 0.0
    observed_mean_burst: float = 0.0
    delay_mean_ms: float | None = None
    delay_std_ms: float | None = None

    def conserved(self):
        return self.sent_packets == self.delivered + self.lost_ge + self.dropped_overflow


def observe_qos(lost_flags, overflow_flags, delays_ns, discarded_late=0) -> QosObservation:
    lost = np.asarray(lost_flags, dtype=bool)
    overflow = np.asarray(overflow_flags, dtype=bool)
    delays = np.asarray(delays_ns, dtype=np.float64)
    runs = kernels.run_lengths(lost)
    sent = int(lost.size)
    return QosObservation(
        sent_packets=sent,
        delivered=int(sent - lost.sum() - overflow.sum()),
        lost_ge=int(lost.sum()),
        dropped_overflow=int(overflow.sum()),
        discarded_late=int(discarded_late),
        observed_loss_fraction=float(lost.mean()) if sent else 0.0,
        observed_mean_burst=float(runs.mean()) if runs.size else 0.0,
        delay_mean_ms=float(delays.mean() / 1e6) if delays.size else None,
        delay_std_ms=float(delays.std() / 1e6) if delays.size else None,
    )


@dataclass
class VmafMergeReport:
    merged: int
    errors: list  # (line number, frame_id or None, reason)


def ingest_vmaf(csv_path, scores: list[FrameScore]) -> VmafMergeReport:
    """Attach per-frame VMAF from a ``frame_id,vmaf`` CSV onto ``scores``."""
    by_id = {s.frame_id: s for s in scores}
    errors = []
    merged = 0
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return VmafMergeReport(0, [])
        if [c.strip() for c in header] != ["frame_id", "vmaf"]:
            return VmafMergeReport(0, [(1, None, f"expected header 'frame_id,vmaf', got {','.join(header)!r}")])
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                errors.append((lineno, None, f"expected 2 columns, got {len(row)}"))
                continue
            try:
                fid = int(row[0])
                value = float(row[1])
            except ValueError:
                errors.append((lineno, None, f"unparseable row {row!r}"))
                continue
            if not math.isfinite(value):
                errors.append((lineno, fid, "non-finite score"))
                continue
            target = by_id.get(fid)
            if target is None:
                errors.append((lineno, fid, "unknown frame_id"))
            elif target.concealed:
                errors.append((lineno, fid, "frame was concealed; excluded from quality metrics"))
            else:
                target.vmaf = value
                merged += 1
    return VmafMergeReport(merged, errors)


def mean_fresh(scores: list[FrameScore], attr: str) -> float | None:
    vals = [getattr(s, attr) for s in scores if not s.concealed and getattr(s, attr) is not None]
    return float(np.mean(vals)) if vals else None
