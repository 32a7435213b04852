"""One test per acceptance criterion; each records a PASS/FAIL line."""
import filecmp
import os
import random
import time

import numpy as np
import pytest

from conftest import record_criterion
from impairsim import harness as hn
from impairsim import transport as tp
from impairsim import videomodel as vm
from impairsim.channel import GilbertElliottParams, ImpairmentProfile, transmit_batch
from impairsim.cli import main as cli_main
from impairsim.metrics import aggregate, psnr, ssim
from impairsim.tiers import BUILTIN_TIERS, format_percent, gemodel_params, tier_profile

from test_metrics import naive_ssim


def check(number, ok, detail):
    print(record_criterion(number, ok, detail))
    assert ok, detail


def test_criterion_01_ge_inversion_percentages():
    expected = {
        "HospitalLAN": ("0.005", "50.0"),
        "FiveGUrban": ("0.167", "33.3"),
        "FourGRural": ("0.341", "16.7"),
        "LEOSatellite": ("0.305", "20.0"),
        "GEOSatellite": ("0.251", "50.0"),
    }
    got = {}
    for name in expected:
        ge = gemodel_params(BUILTIN_TIERS[name])
        got[name] = (format_percent(ge.p * 100), format_percent(ge.r * 100))
    bad = {k: (got[k], v) for k, v in expected.items() if got[k] != v}
    check(1, not bad, f"p/r percent for 5 tiers {'match' if not bad else bad}")


def test_criterion_02_ge_statistics():
    t0 = time.perf_counter()
    fourg = hn.verify_ge(0.02, 6, 1_000_000, seed=0, tolerance=0.05)
    lan = hn.verify_ge(0.0001, 2, 1_000_000, seed=0, tolerance=0.10)
    # 10^6 packets hold only ~50 LAN bursts (~17 % relative sd); a larger
    # run confirms the rate is right rather than lucky.
    lan_big = hn.verify_ge(0.0001, 2, 20_000_000, seed=0, tolerance=0.10)
    elapsed = time.perf_counter() - t0
    ok = fourg["pass"] and lan["loss_pass"] and lan_big["loss_pass"] and elapsed < 10
    check(2, ok,
          f"4G loss err {fourg['loss_rel_error']:.3%} burst err {fourg['burst_rel_error']:.3%} (<=5%); "
          f"LAN loss err {lan['loss_rel_error']:.2%} @1e6, {lan_big['loss_rel_error']:.2%} @2e7 (<=10%); "
          f"{elapsed:.1f}s")


def test_criterion_03_delay_and_rate():
    geo = tier_profile(BUILTIN_TIERS["GEOSatellite"])
    n = 100_000
    res = transmit_batch(geo, 0, np.full(n, 1216), np.arange(n, dtype=np.int64) * 10_000_000)
    d = res.network_delay_ns[res.delivered] / 1e6
    mean_ok = abs(d.mean() - 600) <= 2
    std_ok = abs(d.std() - 50) / 50 <= 0.05

    lan5 = ImpairmentProfile(5e6, 0, 0.0, GilbertElliottParams(0.0, 1.0))
    burst = transmit_batch(lan5, 0, np.full(200, 1216), np.zeros(200, dtype=np.int64))
    spacing = np.diff(burst.departure_ns)
    spacing_ok = bool(np.all(np.abs(spacing - 1_990_400) <= 1_000))
    check(3, mean_ok and std_ok and spacing_ok,
          f"GEO delay mean {d.mean():.2f} ms std {d.std():.2f} ms; "
          f"5 Mbps spacing {spacing.min()}..{spacing.max()} ns")


def test_criterion_04_wire_contract(monkeypatch):
    rnd = random.Random(4)
    bad = 0
    for _ in range(100_000):
        total = rnd.randrange(1, 2**16)
        h = tp.DatagramHeader(rnd.randrange(2**32), rnd.randrange(total), total, rnd.randrange(2**64))
        raw = tp.encode_header(h)
        if len(raw) != 16 or tp.decode_header(raw) != h or tp.encode_header(tp.decode_header(raw)) != raw:
            bad += 1

    sizes = []
    real = tp.packetize

    def spy(frame, epoch_ns=0):
        out = real(frame, epoch_ns)
        sizes.extend(len(d.payload) for d in out)
        return out

    monkeypatch.setattr(hn.tp, "packetize", spy)
    hn.run_trial(hn.TrialConfig(tier=BUILTIN_TIERS["FourGRural"], seed=0))
    check(4, bad == 0 and sizes and max(sizes) <= 1200,
          f"{bad} header mismatches in 1e5; {len(sizes)} datagrams in a 4G trial, max payload {max(sizes)} B")


def test_criterion_05_gop_propagation():
    source = vm.SyntheticSource(0)
    stream = vm.encode_sequence(source, 30)
    worst = 0
    ok = True
    for lost in range(30):
        state = vm.CodecState()
        failed = []
        for enc in stream:
            if enc.frame_id == lost:
                continue
            try:
                vm.decode(state, enc)
            except vm.DecodeFailure:
                failed.append(enc.frame_id)
        next_intra = (lost // vm.GOP + 1) * vm.GOP
        ok &= failed == list(range(lost + 1, min(next_intra, 30)))
        worst = max(worst, len(failed))
    check(5, ok and worst <= 14, f"max {worst} failures after a single drop; recovery at next intra for all 30 drops")


def test_criterion_06_lossless_identity():
    clean = ImpairmentProfile(1e12, 0, 0.0, GilbertElliottParams(0.0, 1.0))
    rec = hn.run_trial(hn.TrialConfig(profile=clean))
    all_ssim = all(f["ssim"] == 1.0 for f in rec.frames)
    all_cap = all(f["psnr_db"] == rec.psnr_cap_db for f in rec.frames)
    exact = rec.frames_fresh_exact == rec.frame_count == len(rec.frames)
    check(6, all_ssim and all_cap and exact and rec.freeze_rate_per_min == 0.0,
          f"{len(rec.frames)} ticks, SSIM=1 {all_ssim}, PSNR cap {all_cap}, "
          f"bit-exact {rec.frames_fresh_exact}/{rec.frame_count}, freeze {rec.freeze_rate_per_min}")


def test_criterion_07_metric_oracles():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(20):
        a = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
        b = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
        worst = max(worst, abs(ssim(a, b) - naive_ssim(a, b)))
    a = rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)
    b = rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)
    mse = np.mean((a.astype(float) - b.astype(float)) ** 2)
    psnr_err = abs(psnr(a, b) - 10 * np.log10(255**2 / mse))
    half = aggregate([1, 2, 3, 4, 5]).ci95_half_width
    check(7, worst < 1e-6 and psnr_err < 1e-9 and abs(half - 1.963) < 1e-3,
          f"SSIM max err {worst:.2e}; PSNR err {psnr_err:.2e} dB; CI half-width {half:.4f}")


@pytest.mark.slow
def test_criterion_08_monotone_degradation():
    t0 = time.perf_counter()
    names = ["HospitalLAN", "FiveGUrban", "FourGRural"]
    report = hn.run_suite([BUILTIN_TIERS[n] for n in names], 20)
    elapsed = time.perf_counter() - t0
    p = [report.aggregates[n]["mean_psnr_db"].mean for n in names]
    f = [report.aggregates[n]["freeze_rate_per_min"].mean for n in names]
    psnr_ok = p[0] > p[1] > p[2]
    freeze_ok = f[0] < f[1] < f[2]
    check(8, psnr_ok and freeze_ok and elapsed < 120,
          f"PSNR {' > '.join(f'{x:.3f}' for x in p)} dB ({'strict' if psnr_ok else 'NOT strict'}); "
          f"freeze {' < '.join(f'{x:.2f}' for x in f)} /min ({'strict' if freeze_ok else 'NOT strict'}); "
          f"20 seeds in {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_09_determinism(tmp_path, capsys):
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        assert cli_main(["suite", "--tiers", "all", "--seeds", "3", "--out-dir", str(d)]) == 0
    capsys.readouterr()
    mismatched = []
    count = 0
    for root, _, files in os.walk(dirs[0]):
        rel = os.path.relpath(root, dirs[0])
        for name in files:
            count += 1
            if not filecmp.cmp(os.path.join(root, name), os.path.join(dirs[1], rel, name), shallow=False):
                mismatched.append(os.path.join(rel, name))
    with capsys.disabled():
        check(9, count == 18 and not mismatched, f"{count} files compared, {len(mismatched)} differ")


def test_criterion_10_declared_out_of_scope():
    # Human-operator task outcomes and absolute quality numbers from a real
    # x264 pipeline have no desk-scale counterpart; criteria 6 to 8 stand in.
    rec = hn.run_trial(hn.TrialConfig(frame_count=30))
    ok = rec.mean_vmaf is None and rec.psnr_kind == "rgb"
    check(10, ok, "not reproducible by design; VMAF left empty unless merged, quality judged by properties 6-8")
