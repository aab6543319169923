#!/usr/bin/env python3
"""End-to-end trade-off experiment on the simulator.

Builds a two-difficulty world where slow thinking wins on hard cases and fast
judging holds its own on easy ones, calibrates dual-confidence thresholds,
runs all three modes, sweeps a threshold grid offline, and writes reports.

Usage:
    python3 scripts/tradeoff_experiment.py --out runs/tradeoff --n 2000 --seed 88
"""

from __future__ import annotations

import argparse
from pathlib import Path

from fsrm.backends import SimSpec, StratumSpec, sim_configure
from fsrm.harness import (
    RunConfig,
    calibrate,
    emit_report,
    run,
    sweep_thresholds,
    write_benchmark,
    write_sweep_csv,
)
from fsrm.confidence import ThresholdPair
from fsrm.metrics import ALL, StratumKey, accuracy, fast_rate, token_savings
from fsrm.router import Mode
from fsrm.synthetic import make_samples


def build_world(n: int, seed: int):
    samples = make_samples(n, domains=("general",), difficulties=("easy", "hard"), seed=seed)
    spec = SimSpec(
        strata={
            ("general", "easy"): StratumSpec(
                fast_accuracy=0.92, slow_accuracy=0.90,
                mean_intuition_conf=0.85, intuition_spread=0.1,
                mean_token_conf=20.0, token_conf_spread=1.5,
                slow_tokens_lo=120, slow_tokens_hi=500,
            ),
            ("general", "hard"): StratumSpec(
                fast_accuracy=0.60, slow_accuracy=0.92,
                mean_intuition_conf=0.25, intuition_spread=0.1,
                mean_token_conf=8.0, token_conf_spread=1.5,
                slow_tokens_lo=200, slow_tokens_hi=700,
            ),
        },
        seed=seed,
    )
    return samples, sim_configure(spec, samples)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/tradeoff")
    parser.add_argument("--n", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=88)
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    samples, backend = build_world(args.n, args.seed)
    write_benchmark(samples, out / "dataset.jsonl")

    calibration = calibrate(samples, backend, k=20, out_path=out / "calibration.json")
    thresholds = calibration.thresholds
    print(f"calibrated thresholds: tau_intuition={thresholds.tau_intuition:.4f} "
          f"tau_token={thresholds.tau_token:.4f} "
          f"({calibration.n_correct}/{calibration.n_total} correct)")

    _, fast = run(samples, RunConfig(mode=Mode.FAST), backend, out_dir=out / "fast")
    _, slow = run(samples, RunConfig(mode=Mode.SLOW), backend, out_dir=out / "slow")
    _, hybrid = run(
        samples, RunConfig(mode=Mode.HYBRID, thresholds=thresholds), backend,
        out_dir=out / "hybrid",
    )

    print(f"{'stratum':<10} {'fast':>7} {'slow':>7} {'hybrid':>7} {'fast rate':>10}")
    for key in (ALL, StratumKey(None, "easy"), StratumKey(None, "hard")):
        name = key.describe()
        print(
            f"{name:<10} {accuracy(fast, key):>7.4f} {accuracy(slow, key):>7.4f} "
            f"{accuracy(hybrid, key):>7.4f} {fast_rate(hybrid, key):>10.3f}"
        )
    print(f"token savings vs slow-only: {token_savings(hybrid, slow, ALL):.1%}")

    emit_report(hybrid, out / "report", slow_records=slow)

    inf = ThresholdPair(float("inf"), float("inf"))
    _, full = run(samples, RunConfig(mode=Mode.HYBRID, thresholds=inf), backend)
    grid = [0.35, 0.45, 0.55, 0.65, 0.75], [10.0, 12.0, 14.0, 16.0, 18.0]
    rows = sweep_thresholds(full, *grid)
    write_sweep_csv(rows, out / "sweep.csv")
    grid_rows = [r for r in rows if r.source == "grid"]
    spread = max(r.accuracy for r in grid_rows) - min(r.accuracy for r in grid_rows)
    print(f"sweep: {len(grid_rows)} grid points, accuracy spread {spread:.4f}, "
          f"files in {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
