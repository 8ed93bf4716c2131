"""Command-line front end.

    svsim run --scenario FILE [--runs N] [--seed S] [--out DIR]
              [--format csv|jsonl] [--trace]
    svsim validate --scenario FILE
    svsim topo --dump

Exit codes: 0 success, 2 validation failure, 3 runtime failure.
"""

import argparse
import os
import sys

from .model import ScenarioError, nsfnet14
from .runner import bundled_scenario_path, emit_report, load_scenario, run_replications

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svsim",
                                     description="Adaptive video delivery simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and emit reports")
    run.add_argument("--scenario", required=True, help="scenario file path")
    run.add_argument("--runs", type=int, default=None, help="replication count")
    run.add_argument("--seed", type=int, default=None, help="base seed")
    run.add_argument("--out", default=None,
                     help="output directory (default: $SVSIM_OUT or ./svsim_out)")
    run.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    run.add_argument("--trace", action="store_true",
                     help="dump per-run kernel event traces")

    val = sub.add_parser("validate", help="validate a scenario file")
    val.add_argument("--scenario", required=True, help="scenario file path")

    topo = sub.add_parser("topo", help="inspect bundled topology")
    topo.add_argument("--dump", action="store_true", help="print the NSFNET-14 edge list")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "topo":
        nodes, edges = nsfnet14()
        print(f"nodes {' '.join(str(n) for n in nodes)}")
        for a, b in edges:
            print(f"link {a} {b}")
        return EXIT_OK

    scenario_path = args.scenario
    if scenario_path == "paper_nsfnet14":
        scenario_path = bundled_scenario_path()
    try:
        config = load_scenario(scenario_path)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ScenarioError as exc:
        for violation in exc.violations:
            print(f"invalid scenario: {violation}", file=sys.stderr)
        return EXIT_VALIDATION

    if args.command == "validate":
        print(f"scenario OK: {len(config.assets)} method(s), "
              f"{len(config.topology.nodes)} nodes, "
              f"{len(config.topology.links)} links")
        return EXIT_OK

    out_dir = args.out or os.environ.get("SVSIM_OUT") or "svsim_out"
    try:
        report = run_replications(config, args.runs, args.seed, trace=args.trace)
        paths = emit_report(report, out_dir, args.format)
    except Exception as exc:  # noqa: BLE001 - boundary: report and set exit code
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"fingerprint {report.fingerprint}")
    for method, agg in report.aggregates.items():
        print(f"{method}: psnr {agg.mean_psnr_db:.2f} dB, "
              f"delay {agg.mean_delay_s * 1000:.1f} ms, "
              f"loss {agg.loss_pct:.2f}%, "
              f"throughput {agg.mean_throughput_bps / 1000:.1f} Kbps")
    for path in paths:
        print(f"wrote {path}")
    return EXIT_OK


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
