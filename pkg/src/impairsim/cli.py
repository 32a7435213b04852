"""Command-line entry point.

Every subcommand accepts ``--config FILE``: plain ``key = value`` lines whose
keys are the long flag names (dashes or underscores). Flags given on the
command line override the file.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

from . import harness, metrics, tiers


class CliError(Exception):
    pass


def read_config_file(path) -> dict:
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


def _base_config(args) -> harness.TrialConfig:
    extra = tiers.load_tier_file(args.tier_file) if getattr(args, "tier_file", None) else None
    cfg = harness.TrialConfig(frame_count=args.frames, source=args.source, source_seed=args.source_seed)
    if args.playout_delay_ms is not None:
        cfg.playout_delay_ms = args.playout_delay_ms
    return cfg, extra


def cmd_run(args):
    cfg, extra = _base_config(args)
    cfg.tier = tiers.get_tier(args.tier, extra)
    cfg.seed = args.seed
    record = harness.run_trial(cfg)
    text = record.to_json()
    if args.out == "-":
        sys.stdout.write(text)
    else:
        with open(args.out, "w") as fh:
            fh.write(text)
        print(json.dumps({"out": args.out, "freeze_rate_per_min": record.freeze_rate_per_min,
                          "mean_psnr_db": record.mean_psnr_db, "mean_ssim": record.mean_ssim}))


def cmd_suite(args):
    cfg, extra = _base_config(args)
    if args.tiers.strip().lower() == "all":
        selected = harness.all_tiers()
    else:
        selected = [tiers.get_tier(name, extra) for name in args.tiers.split(",") if name.strip()]
    seeds = range(args.seed_base, args.seed_base + args.seeds)
    report = harness.run_suite(selected, seeds, cfg)
    written = harness.write_suite(report, args.out_dir)
    print(json.dumps({"trials": len(report.records), "files": len(written), "out_dir": args.out_dir}))


def cmd_tiers(args):
    pool = dict(tiers.BUILTIN_TIERS)
    if args.tier_file:
        pool.update(tiers.load_tier_file(args.tier_file))
    specs = list(pool.values())
    print(tiers.tier_table(specs))
    if args.netem:
        print()
        for spec in specs:
            for line in tiers.render_netem_commands(spec, args.dev):
                print(f"# {spec.name}")
                print(line)


def cmd_verify_ge(args):
    report = harness.verify_ge(args.p_e / 100.0, args.burst, args.packets, seed=args.seed, tolerance=args.tolerance)
    print(json.dumps(report, indent=2))
    return 0 if report["pass"] else 1


def cmd_vmaf_merge(args):
    with open(args.trial) as fh:
        doc = json.load(fh)
    scores = [metrics.FrameScore(**f) for f in doc["frames"]]
    report = metrics.ingest_vmaf(args.csv, scores)
    doc["frames"] = [dataclasses.asdict(s) for s in scores]
    doc["mean_vmaf"] = metrics.mean_fresh(scores, "vmaf")
    out = args.out or args.trial
    with open(out, "w") as fh:
        fh.write(json.dumps(doc, indent=2) + "\n")
    print(json.dumps({
        "out": out,
        "merged": report.merged,
        "rejected": [{"line": ln, "frame_id": fid, "reason": why} for ln, fid, why in report.errors],
        "mean_vmaf": doc["mean_vmaf"],
    }, indent=2))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="impairsim", description="Impaired video path simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, trial=True):
        p.add_argument("--config", help="key = value file supplying defaults for any flag")
        p.add_argument("--tier-file", help="INI file of [Tier] sections overriding or adding tiers")
        if trial:
            p.add_argument("--frames", type=int, default=900)
            p.add_argument("--source", default="synthetic", help="'synthetic' or a raw RGB24 640x480 file")
            p.add_argument("--source-seed", type=int, default=0)
            p.add_argument("--playout-delay-ms", type=float, default=None)

    p = sub.add_parser("run", help="run one trial")
    common(p)
    p.add_argument("--tier", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("suite", help="run tiers x seeds and aggregate")
    common(p)
    p.add_argument("--tiers", default="all", help="'all' or comma-separated tier names")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--seed-base", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("tiers", help="print the tier table and NetEm commands")
    common(p, trial=False)
    p.add_argument("--netem", action="store_true")
    p.add_argument("--dev", default="veth-host")
    p.set_defaults(func=cmd_tiers)

    p = sub.add_parser("verify-ge", help="Monte-Carlo check of loss targets")
    common(p, trial=False)
    p.add_argument("--p-e", type=float, required=True, help="target loss, percent")
    p.add_argument("--burst", type=float, required=True, help="mean burst length, packets")
    p.add_argument("--packets", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=0.05)
    p.set_defaults(func=cmd_verify_ge)

    p = sub.add_parser("vmaf-merge", help="attach per-frame VMAF scores to a trial record")
    common(p, trial=False)
    p.add_argument("--trial", required=True)
    p.add_argument("--csv", required=True)
    p.add_argument("--out", default=None, help="defaults to rewriting --trial")
    p.set_defaults(func=cmd_vmaf_merge)
    return parser


def _apply_config(parser, argv):
    """Parse ``argv`` with defaults taken from ``--config`` so explicit flags win."""
    argv = sys.argv[1:] if argv is None else list(argv)
    choices = parser._subparsers._group_actions[0].choices
    command = next((tok for tok in argv if tok in choices), None)
    if command is None:
        return parser.parse_args(argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv[argv.index(command) + 1:])
    if not known.config:
        return parser.parse_args(argv)
    values = read_config_file(known.config)
    subparser = choices[command]
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None or key in ("config", "help"):
            raise CliError(f"{known.config}: unknown key {key!r} for '{command}'")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        else:
            defaults[key] = action.type(raw) if action.type else raw
        action.required = False
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
        return args.func(args) or 0
    except (CliError, tiers.TierError, harness.TrialError, harness.SuiteError, ValueError, OSError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, harness.SuiteError):
            err.update(tier=exc.tier, seed=exc.seed)
        print(json.dumps(err), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
