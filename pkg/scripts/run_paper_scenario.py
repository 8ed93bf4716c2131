#!/usr/bin/env python3
"""Run the bundled NSFNET-14 scenario and print the per-method result table.

Usage: python scripts/run_paper_scenario.py [--runs N] [--seed S] [--out DIR]
"""

import argparse

from svsim.runner import (bundled_scenario_path, emit_report, load_scenario,
                          run_replications)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--runs", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default=None, help="also write CSV reports here")
    args = parser.parse_args()

    config = load_scenario(bundled_scenario_path())
    report = run_replications(config, args.runs, args.seed)

    print(f"scenario fingerprint: {report.fingerprint[:16]}...")
    print(f"replications: {report.replications}\n")
    header = (f"{'method':8} {'psnr dB':>9} {'delay s':>9} {'tput Kbps':>10} "
              f"{'sent':>8} {'recv':>8} {'lost':>7} {'loss %':>7}")
    print(header)
    print("-" * len(header))
    for method, agg in report.aggregates.items():
        print(f"{method:8} {agg.mean_psnr_db:9.2f} {agg.mean_delay_s:9.4f} "
              f"{agg.mean_throughput_bps / 1000:10.1f} {agg.sent:8.1f} "
              f"{agg.received:8.1f} {agg.lost:7.1f} {agg.loss_pct:7.2f}")

    if args.out:
        for path in emit_report(report, args.out, "csv"):
            print(f"wrote {path}")


if __name__ == "__main__":
    main()
