"""Command-line front end.

    fuzz run    one campaign at a fixed processor count
    fuzz sweep  the same campaign across a list of processor counts
    fuzz report rebuild a sweep's speedup table from its stored CSVs

Exit codes: 0 success, 1 configuration error, 2 component failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .campaign import (
    CampaignConfig,
    CampaignConfigError,
    ComponentFailure,
    experiment_sweep,
    load_sweep_report,
    run_campaign,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_COMPONENT = 2


def _add_campaign_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--target", required=True,
                   help="harness target: magic, delay[:D], or kvparse")
    p.add_argument("--processors", type=int, default=1, metavar="N")
    p.add_argument("--duration", type=float, default=None, metavar="S",
                   help="campaign duration in seconds")
    p.add_argument("--max-execs", type=int, default=None, metavar="K",
                   help="stop each processor after K executions (reproducible runs)")
    p.add_argument("--link", choices=["stream", "serial-sim"], default="stream")
    p.add_argument("--latency-ms", type=float, default=5.0, metavar="L")
    p.add_argument("--bandwidth-bps", type=float, default=64000.0, metavar="B")
    p.add_argument("--chunk", type=int, default=64, metavar="C")
    p.add_argument("--map-size", type=int, default=65536, metavar="M")
    p.add_argument("--max-payload", type=int, default=512)
    p.add_argument("--timeout-ms", type=float, default=1000.0, metavar="T")
    p.add_argument("--checksum", choices=["on", "off"], default="on")
    p.add_argument("--map-mode", choices=["per-proc", "shared"], default="per-proc")
    p.add_argument("--seeds", type=Path, required=True, metavar="DIR")
    p.add_argument("--out", type=Path, required=True, metavar="DIR")
    p.add_argument("--rng-seed", type=int, default=0, metavar="K")
    p.add_argument("--mode", choices=["procs", "threads"], default="procs",
                   help="launch components as processes (realistic) or threads (loopback)")
    p.add_argument("--energy", type=int, default=32,
                   help="mutated children per scheduled corpus entry")
    p.add_argument("--retention", choices=["on", "off"], default="on",
                   help="off disables novelty-based corpus growth (control runs)")
    p.add_argument("--stop-on-crash", action="store_true")
    p.add_argument("--reset-on-crash", action="store_true",
                   help="re-run harness init after each crash (device-reset cost)")
    p.add_argument("--debug-dump", action="store_true",
                   help="dump raw coverage per execution (test-only, large)")
    p.add_argument("--log-frames", action="store_true",
                   help="write per-frame device link events to events.jsonl")


def _config_from_args(args: argparse.Namespace) -> CampaignConfig:
    return CampaignConfig(
        target=args.target,
        out_dir=args.out,
        seed_dir=args.seeds,
        processors=args.processors,
        duration_s=args.duration,
        max_execs=args.max_execs,
        link=args.link,
        latency_ms=args.latency_ms,
        bandwidth_bps=args.bandwidth_bps,
        chunk=args.chunk,
        map_size=args.map_size,
        max_payload=args.max_payload,
        timeout_ms=args.timeout_ms,
        checksum_enabled=args.checksum == "on",
        map_mode=0 if args.map_mode == "per-proc" else 1,
        rng_seed=args.rng_seed,
        mode=args.mode,
        energy=args.energy,
        retention=args.retention == "on",
        stop_on_crash=args.stop_on_crash,
        reset_on_crash=args.reset_on_crash,
        debug_dump=args.debug_dump,
        log_frames=args.log_frames,
    )


def _cmd_run(args: argparse.Namespace) -> int:
    result = run_campaign(_config_from_args(args))
    print(f"campaign finished: {result.execs_total} execs in {result.elapsed_s:.1f}s "
          f"({result.execs_per_s:.2f} exec/s)")
    print(f"  crashes: {result.crashes_total} ({result.unique_crashes} unique), "
          f"hangs: {result.hangs_total}, corpus: {result.corpus_total}")
    print(f"  counters reconciled: {result.conservation['reconciled']}")
    print(f"  outputs in {result.out_dir}")
    return EXIT_OK


def _cmd_sweep(args: argparse.Namespace) -> int:
    n_values = [int(x) for x in args.n_list.split(",") if x.strip()]
    base = _config_from_args(args)
    targets = args.targets.split(",") if args.targets else None
    report = experiment_sweep(base, n_values, targets=targets, repeats=args.repeat)
    print(report.format_table())
    print(f"sweep outputs in {base.out_dir}")
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    report = load_sweep_report(args.dir)
    print(report.format_table())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fuzz",
        description="many-producer / single-executor fuzzing over constrained links",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one campaign")
    _add_campaign_args(run_p)
    run_p.set_defaults(func=_cmd_run)

    sweep_p = sub.add_parser("sweep", help="run a campaign per processor count")
    _add_campaign_args(sweep_p)
    sweep_p.add_argument("--n-list", default="1,2,3,4", metavar="N1,N2,...",
                         help="processor counts to sweep")
    sweep_p.add_argument("--targets", default=None,
                         help="comma-separated targets (rows); default is --target")
    sweep_p.add_argument("--repeat", type=int, default=1,
                         help="repetitions per cell, exec/s is their arithmetic mean")
    sweep_p.set_defaults(func=_cmd_sweep)

    report_p = sub.add_parser("report", help="recompute a sweep table from stored CSVs")
    report_p.add_argument("--dir", type=Path, required=True,
                          help="sweep output directory (holds sweep.json)")
    report_p.set_defaults(func=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except CampaignConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ComponentFailure as exc:
        print(f"component failure: {exc}", file=sys.stderr)
        return EXIT_COMPONENT


if __name__ == "__main__":
    sys.exit(main())
