"""Virtual-clock trial runner and multi-tier suites.

A trial wires source -> codec -> packetizer -> channel -> reassembly ->
decoder -> display on one integer-nanosecond clock. Events at equal times run
in the order capture < delivery < timeout < display.

Display ticks start half a frame period after the first decoded frame (the
trial anchor) and run at the capture rate. Tick ``i`` is aligned to source
frame ``first_id + i``: it shows the newest decoded frame not newer than
that (early frames wait for their slot), or conceals. Fresh ticks are scored
against the aligned source frame, so a frame shown late is scored against the
frame it stands in for. With ``hold_early=False`` the display shows whatever
was decoded last, early or not.
"""
from __future__ import annotations

import csv
import dataclasses
import heapq
import io
import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import channel as ch
from . import metrics as mt
from . import transport as tp
from . import videomodel as vm
from .tiers import BUILTIN_TIERS, TIER_ORDER, TierSpec, tier_profile

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

CAPTURE, DELIVERY, TIMEOUT, DISPLAY = range(4)


class TrialError(RuntimeError):
    pass


class SuiteError(RuntimeError):
    def __init__(self, tier, seed, cause):
        super().__init__(f"trial failed for tier={tier} seed={seed}: {cause}")
        self.tier = tier
        self.seed = seed
        self.cause = cause


@dataclass
class TrialConfig:
    tier: TierSpec = field(default_factory=lambda: BUILTIN_TIERS["HospitalLAN"])
    seed: int = 0
    frame_count: int = 900
    source: str = "synthetic"  # or a raw RGB24 file path
    source_seed: int = 0
    fps: int = vm.FPS
    width: int = vm.WIDTH
    height: int = vm.HEIGHT
    gop: int = vm.GOP
    intra_mode: int = vm.INTRA_RLE
    playout_delay_ms: float | None = None  # default: half a frame period
    hold_early: bool = True  # keep frames newer than the tick's slot for later ticks
    psnr_cap_db: float = mt.PSNR_CAP_DB
    queue_capacity: int = ch.DEFAULT_QUEUE_CAPACITY
    overhead_bytes: int = ch.DEFAULT_OVERHEAD_BYTES
    min_timeout_ms: float = tp.DEFAULT_MIN_TIMEOUT_NS / 1e6
    max_timeout_ms: float = tp.DEFAULT_MAX_TIMEOUT_NS / 1e6
    profile: ch.ImpairmentProfile | None = None  # overrides the tier's impairments

    def validate(self):
        if self.frame_count < self.gop:
            raise TrialError(f"frame_count must cover at least one GOP ({self.gop} frames)")
        if self.seed < 0:
            raise TrialError("seed must be non-negative")
        if self.fps <= 0:
            raise TrialError("fps must be positive")
        return self

    @property
    def frame_period_ns(self):
        return 1_000_000_000 // self.fps

    @property
    def playout_delay_ns(self):
        if self.playout_delay_ms is None:
            return self.frame_period_ns // 2
        return int(round(self.playout_delay_ms * 1e6))

    def impairments(self) -> ch.ImpairmentProfile:
        if self.profile is not None:
            return self.profile
        return tier_profile(self.tier, self.queue_capacity, self.overhead_bytes)

    def make_source(self):
        if self.source == "synthetic":
            return vm.SyntheticSource(self.source_seed, self.width, self.height, fps=self.fps)
        return vm.RawFileSource(self.source, self.width, self.height, self.fps)


@dataclass
class TrialRecord:
    schema_version: int
    tier: dict
    impairments: dict
    seed: int
    source: str
    frame_count: int
    fps: int
    width: int
    height: int
    gop: int
    qos: dict
    mean_psnr_db: float | None
    psnr_kind: str
    psnr_cap_db: float
    mean_ssim: float | None
    mean_vmaf: float | None
    freeze_events: int
    freeze_rate_per_min: float
    concealed_fraction: float
    display_ticks: int
    one_way_delay_mean_ms: float | None
    one_way_delay_std_ms: float | None
    one_way_delay_min_ms: float | None
    trial_start_ms: float
    first_frame_id: int
    alignment_offset_ms: float
    first_capture_to_anchor_ms: float
    trial_duration_s: float
    frames_captured: int
    frames_fresh: int
    frames_concealed_over: int
    frames_in_flight: int
    frames_fresh_exact: int
    frames_skipped: int
    decode_failures: int
    reassembly: dict
    frames: list
    display_records: list = field(default_factory=list, repr=False, compare=False)

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "display_records"}
        return _jsonable(d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d.setdefault("display_records", [])
        return cls(**d)


def _jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


# Quality of (shown source frame, aligned source frame) pairs, shared across
# trials that use the same source.
_PAIR_CACHE: dict = {}
_PAIR_CACHE_LIMIT = 50_000


def _score(source, shown: vm.RawFrame, target_id: int, cap: float):
    target = source.frame(target_id).pixels
    if shown.frame_index == target_id:
        if np.array_equal(shown.pixels, target):
            return cap, 1.0, True
        return mt.psnr(target, shown.pixels, cap), mt.ssim(target, shown.pixels), False
    exact = np.array_equal(shown.pixels, source.frame(shown.frame_index).pixels)
    key = (source.key, shown.frame_index, target_id, cap)
    if exact and key in _PAIR_CACHE:
        return (*_PAIR_CACHE[key], True)
    result = mt.psnr(target, shown.pixels, cap), mt.ssim(target, shown.pixels)
    if exact:
        if len(_PAIR_CACHE) >= _PAIR_CACHE_LIMIT:
            _PAIR_CACHE.clear()
        _PAIR_CACHE[key] = result
    return (*result, exact)


def run_trial(config: TrialConfig) -> TrialRecord:
    config.validate()
    profile = config.impairments()
    source = config.make_source()
    stream = vm.cached_stream(source, config.frame_count, config.gop, config.intra_mode)
    n_frames = config.frame_count
    period = config.frame_period_ns

    link = ch.Channel(profile, config.seed)
    buf = tp.ReassemblyBuffer(
        min_timeout_ns=int(round(config.min_timeout_ms * 1e6)),
        max_timeout_ns=int(round(config.max_timeout_ms * 1e6)),
    )
    codec = vm.CodecState(width=config.width, height=config.height)
    display = tp.DisplayState()

    lost_flags, overflow_flags, net_delays = [], [], []
    outstanding = [0] * n_frames
    timeout_armed = set()
    ready: dict[int, vm.RawFrame] = {}
    scores: list[mt.FrameScore] = []
    displayed = set()
    fresh_exact = 0
    skipped = 0
    anchor = None
    first_id = None
    last_tick = None

    events = []
    seq = 0

    def push(time, kind, payload):
        nonlocal seq
        heapq.heappush(events, (time, kind, seq, payload))
        seq += 1

    for k in range(n_frames):
        push(vm.capture_time_ns(k, config.fps), CAPTURE, k)

    def tick_time(i):
        return anchor + config.playout_delay_ns + (i * 1_000_000_000) // config.fps

    while events:
        now, kind, _, payload = heapq.heappop(events)

        if kind == CAPTURE:
            for dgram in tp.packetize(stream[payload]):
                res = link.send(len(dgram), now)
                lost_flags.append(res.outcome is ch.Outcome.LOST_GE)
                overflow_flags.append(res.outcome is ch.Outcome.DROPPED_OVERFLOW)
                if res.outcome is ch.Outcome.DELIVERED:
                    net_delays.append(res.delivery_time - now)
                    outstanding[payload] += 1
                    push(res.delivery_time, DELIVERY, dgram)

        elif kind == DELIVERY:
            fid = payload.header.frame_id
            outstanding[fid] -= 1
            encoded = buf.ingest_datagram(payload, now)
            if fid in buf.pending and fid not in timeout_armed:
                timeout_armed.add(fid)
                push(buf.deadline_ns(fid), TIMEOUT, fid)
            if encoded is None:
                continue
            try:
                frame = vm.decode(codec, encoded)
            except vm.DecodeFailure as exc:
                log.debug("decode failure: %s", exc)
                continue
            ready[frame.frame_index] = frame
            if anchor is None:
                anchor = now
                first_id = frame.frame_index
                push(tick_time(0), DISPLAY, 0)

        elif kind == TIMEOUT:
            if payload in buf.pending:
                buf.expire_frames(now)
                if payload in buf.pending:
                    push(buf.deadline_ns(payload), TIMEOUT, payload)

        else:  # DISPLAY
            i = payload
            target = first_id + i
            shown = None
            eligible = [fid for fid in ready if fid <= target] if config.hold_early else list(ready)
            if eligible:
                best = max(eligible)
                shown = ready.pop(best)
                for fid in eligible:
                    if fid != best:
                        del ready[fid]
                        skipped += 1
            rec = tp.display_tick(display, now, shown)
            if shown is None:
                scores.append(mt.FrameScore(target, rec.frame_id, True))
            else:
                displayed.add(shown.frame_index)
                p, s, exact = _score(source, shown, target, config.psnr_cap_db)
                fresh_exact += exact
                scores.append(mt.FrameScore(target, shown.frame_index, False, p, s))
            last_tick = now
            if target + 1 < n_frames:
                push(tick_time(i + 1), DISPLAY, i + 1)
            else:
                break

    if anchor is None:
        raise TrialError("no frame was ever decoded; the trial never started")

    records = display.records
    duration_ns = last_tick + period - anchor
    duration_s = duration_ns / 1e9
    concealed = sum(r.kind is tp.DisplayKind.CONCEALED for r in records)
    owd = np.array([r.one_way_delay for r in records if r.kind is tp.DisplayKind.FRESH], dtype=np.float64) / 1e6

    highest = buf.highest_released_frame_id
    in_flight = 0
    for fid in range(n_frames):
        if fid in displayed:
            continue
        if fid in ready or fid in buf.pending:
            in_flight += 1
        elif outstanding[fid] > 0 and (highest is None or fid > highest) and fid not in buf._closed:
            in_flight += 1
    fresh = len(displayed)

    qos = mt.observe_qos(lost_flags, overflow_flags, net_delays, buf.stats.discarded_late)
    tier = dataclasses.asdict(config.tier) if config.profile is None else {"name": "custom"}
    return TrialRecord(
        schema_version=SCHEMA_VERSION,
        tier=tier,
        impairments=_profile_dict(profile),
        seed=config.seed,
        source=config.source if config.source != "synthetic" else f"synthetic:{config.source_seed}",
        frame_count=n_frames,
        fps=config.fps,
        width=config.width,
        height=config.height,
        gop=config.gop,
        qos=dataclasses.asdict(qos),
        mean_psnr_db=mt.mean_fresh(scores, "psnr_db"),
        psnr_kind=mt.PSNR_LABEL,
        psnr_cap_db=config.psnr_cap_db,
        mean_ssim=mt.mean_fresh(scores, "ssim"),
        mean_vmaf=None,
        freeze_events=tp.freeze_events(records),
        freeze_rate_per_min=mt.freeze_rate(records, duration_s),
        concealed_fraction=concealed / len(records),
        display_ticks=len(records),
        one_way_delay_mean_ms=float(owd.mean()) if owd.size else None,
        one_way_delay_std_ms=float(owd.std()) if owd.size else None,
        one_way_delay_min_ms=float(owd.min()) if owd.size else None,
        trial_start_ms=anchor / 1e6,
        first_frame_id=first_id,
        alignment_offset_ms=(records[0].tick_time - anchor) / 1e6,
        first_capture_to_anchor_ms=(anchor - vm.capture_time_ns(first_id, config.fps)) / 1e6,
        trial_duration_s=duration_s,
        frames_captured=n_frames,
        frames_fresh=fresh,
        frames_concealed_over=n_frames - fresh - in_flight,
        frames_in_flight=in_flight,
        frames_fresh_exact=fresh_exact,
        frames_skipped=skipped,
        decode_failures=codec.failures,
        reassembly=dataclasses.asdict(buf.stats),
        frames=[dataclasses.asdict(s) for s in scores],
        display_records=records,
    )


def _profile_dict(profile: ch.ImpairmentProfile):
    return {
        "bandwidth_bps": profile.bandwidth_bps,
        "nominal_delay_ms": profile.nominal_delay_ns / 1e6,
        "jitter_std_ms": profile.jitter_std_ns / 1e6,
        "ge_p": profile.ge.p,
        "ge_r": profile.ge.r,
        "queue_capacity": profile.queue_capacity,
        "overhead_bytes": profile.overhead_bytes,
    }


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------

SUITE_METRICS = [
    "mean_psnr_db",
    "mean_ssim",
    "mean_vmaf",
    "freeze_rate_per_min",
    "concealed_fraction",
    "one_way_delay_mean_ms",
    "qos.observed_loss_fraction",
    "qos.observed_mean_burst",
    "qos.delay_mean_ms",
]


def metric_value(record: TrialRecord, name: str):
    if name.startswith("qos."):
        return record.qos[name[4:]]
    return getattr(record, name)


@dataclass
class SuiteReport:
    records: list  # TrialRecord, ordered by (tier order, seed)
    aggregates: dict  # tier -> metric -> AggregateStat

    def rows(self):
        for tier, stats in self.aggregates.items():
            for metric, agg in stats.items():
                yield tier, metric, agg


def run_suite(tiers, seeds, base_config: TrialConfig | None = None) -> SuiteReport:
    """Run every (tier, seed) pair; ``seeds`` is a count or an explicit list."""
    base = base_config or TrialConfig()
    tiers = list(tiers)
    if not tiers:
        raise TrialError("a suite needs at least one tier")
    seed_list = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    if not seed_list:
        raise TrialError("a suite needs at least one seed")

    records = []
    aggregates = {}
    for tier in tiers:
        per_tier = []
        for seed in seed_list:
            cfg = dataclasses.replace(base, tier=tier, seed=seed, profile=None)
            try:
                per_tier.append(run_trial(cfg))
            except Exception as exc:
                raise SuiteError(tier.name, seed, exc) from exc
        records.extend(per_tier)
        stats = {}
        for metric in SUITE_METRICS:
            values = [metric_value(r, metric) for r in per_tier]
            values = [v for v in values if v is not None]
            if values:
                stats[metric] = mt.aggregate(values)
        aggregates[tier.name] = stats
    return SuiteReport(records, aggregates)


TRIAL_CSV_FIELDS = [
    "tier",
    "seed",
    "frame_count",
    "mean_psnr_db",
    "mean_ssim",
    "mean_vmaf",
    "freeze_events",
    "freeze_rate_per_min",
    "concealed_fraction",
    "one_way_delay_mean_ms",
    "one_way_delay_std_ms",
    "trial_start_ms",
    "alignment_offset_ms",
    "frames_fresh",
    "frames_concealed_over",
    "frames_in_flight",
    "sent_packets",
    "delivered",
    "lost_ge",
    "dropped_overflow",
    "discarded_late",
    "observed_loss_fraction",
    "observed_mean_burst",
]


def trial_csv_row(record: TrialRecord) -> dict:
    row = {"tier": record.tier["name"]}
    for key in TRIAL_CSV_FIELDS[1:]:
        row[key] = record.qos[key] if key in record.qos else getattr(record, key)
    return row


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else "inf"
    return str(v)


def write_suite(report: SuiteReport, out_dir) -> list[str]:
    """Write per-trial JSON, ``trials.csv``, ``summary.csv`` and ``summary.json``."""
    out_dir = os.fspath(out_dir)
    trial_dir = os.path.join(out_dir, "trials")
    os.makedirs(trial_dir, exist_ok=True)
    written = []
    for rec in report.records:
        path = os.path.join(trial_dir, f"{rec.tier['name']}_seed{rec.seed}.json")
        with open(path, "w") as fh:
            fh.write(rec.to_json())
        written.append(path)

    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["schema_version"] + TRIAL_CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for rec in report.records:
        w.writerow({"schema_version": SCHEMA_VERSION, **{k: _fmt(v) for k, v in trial_csv_row(rec).items()}})
    written.append(_write(os.path.join(out_dir, "trials.csv"), buf.getvalue()))

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["schema_version", "tier", "metric", "mean", "ci95_half_width", "n"])
    summary = {}
    for tier, metric, agg in report.rows():
        w.writerow([SCHEMA_VERSION, tier, metric, _fmt(agg.mean), _fmt(agg.ci95_half_width), agg.n])
        summary.setdefault(tier, {})[metric] = {
            "mean": agg.mean,
            "ci95_half_width": agg.ci95_half_width if agg.finite else None,
            "n": agg.n,
        }
    written.append(_write(os.path.join(out_dir, "summary.csv"), buf.getvalue()))
    doc = {"schema_version": SCHEMA_VERSION, "tiers": summary}
    written.append(_write(os.path.join(out_dir, "summary.json"), json.dumps(doc, indent=2) + "\n"))
    return written


def _write(path, text):
    with open(path, "w") as fh:
        fh.write(text)
    return path


def all_tiers():
    return [BUILTIN_TIERS[name] for name in TIER_ORDER]


# ---------------------------------------------------------------------------
# Loss-model verification
# ---------------------------------------------------------------------------


def verify_ge(p_e: float, l_b: float, n_packets: int, seed: int = 0, tolerance: float = 0.05, chunk: int = 1_000_000) -> dict:
    """Monte-Carlo check of the loss chain against its targets."""
    if n_packets < 10_000:
        raise ValueError("n_packets must be at least 10^4")
    params = ch.ge_from_targets(p_e, l_b)
    rng, _ = ch._streams(seed)
    losses = 0
    bursts = 0
    bad = False
    prev_lost = False
    done = 0
    while done < n_packets:
        m = min(chunk, n_packets - done)
        lost, bad = ch.kernels.ge_chain(rng.random(m), params.p, params.r, bad)
        losses += int(lost.sum())
        starts = lost.copy()
        starts[1:] &= ~lost[:-1]
        if prev_lost:
            starts[0] = False
        bursts += int(starts.sum())
        prev_lost = bool(lost[-1])
        done += m

    loss = losses / n_packets
    mean_burst = losses / bursts if bursts else None
    if p_e == 0:
        loss_err = 0.0 if losses == 0 else math.inf
        burst_err = 0.0
    else:
        loss_err = abs(loss - p_e) / p_e
        burst_err = abs(mean_burst - l_b) / l_b if mean_burst is not None else math.inf
    return {
        "p_e": p_e,
        "l_b": l_b,
        "p": params.p,
        "r": params.r,
        "n_packets": n_packets,
        "seed": seed,
        "empirical_loss": loss,
        "empirical_mean_burst": mean_burst,
        "bursts": bursts,
        "loss_rel_error": loss_err,
        "burst_rel_error": burst_err,
        "tolerance": tolerance,
        "loss_pass": loss_err <= tolerance,
        "burst_pass": burst_err <= tolerance,
        "pass": loss_err <= tolerance and burst_err <= tolerance,
    }
