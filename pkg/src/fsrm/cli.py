"""Command-line entry point: route, run, calibrate, sweep, report, train-toy, selfcheck.

Exit codes: 0 on success, 1 on usage errors, 2 on runtime failures.
Option precedence is flags > config file > environment > defaults; the
resolved configuration lands in the run manifest.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import harness
from .backends import (
    ENV_API_KEY,
    HttpBackend,
    HttpConfig,
    RecordingBackend,
    ReplayBackend,
    SamplingParams,
    SimSpec,
    StratumSpec,
    load_sim_spec,
    sim_configure,
)
from .confidence import DEFAULT_CONFIDENCE_K, ThresholdPair, load_calibration
from .errors import FsrmError
from .harness import RunConfig, load_benchmark
from .kernels import SftConfig, make_separable_judgments, toy_train_fast
from .router import Mode, Strategy, judge_fast, judge_hybrid, judge_slow
from .selfcheck import run_all

_STRATEGIES = {"dual": Strategy.DUAL, "ci": Strategy.INTUITION_ONLY, "ct": Strategy.TOKEN_ONLY}

_DEFAULT_SIM_STRATUM = StratumSpec(
    fast_accuracy=0.8,
    slow_accuracy=0.92,
    mean_intuition_conf=0.6,
    mean_token_conf=14.0,
    slow_tokens_lo=80,
    slow_tokens_hi=480,
    intuition_spread=0.3,
    token_conf_spread=3.0,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # exit 1 on usage errors, not argparse's 2
        raise _UsageError(message)


def _parse_thresholds(text: str, k: int) -> ThresholdPair:
    try:
        ti, tt = (float(part) for part in text.split(","))
    except ValueError as exc:
        raise _UsageError(f"--thresholds expects 'tauI,tauT', got {text!r}") from exc
    return ThresholdPair(tau_intuition=ti, tau_token=tt, k=k)


def _parse_grid_axis(text: str) -> list[float]:
    try:
        start, step, stop = (float(part) for part in text.split(":"))
    except ValueError as exc:
        raise _UsageError(f"grid axis expects 'start:step:stop', got {text!r}") from exc
    if step <= 0 or stop < start:
        raise _UsageError(f"bad grid axis {text!r}")
    values = []
    value = start
    while value <= stop + 1e-12:
        values.append(round(value, 12))
        value += step
    return values


def _parse_grid(text: str) -> tuple[list[float], list[float]]:
    parts = text.split(",")
    if len(parts) != 2:
        raise _UsageError("--grid expects 'start:step:stop,start:step:stop'")
    return _parse_grid_axis(parts[0]), _parse_grid_axis(parts[1])


def _apply_config_file(args: argparse.Namespace) -> None:
    """Fill unset flags from a JSON config file (flags win)."""
    if not getattr(args, "config", None):
        return
    overrides = json.loads(Path(args.config).read_text(encoding="utf-8"))
    for key, value in overrides.items():
        attr = key.replace("-", "_")
        if getattr(args, attr, None) is None:
            setattr(args, attr, value)


def _build_backend(args: argparse.Namespace, samples):
    name = args.backend or "sim"
    if name == "sim":
        if getattr(args, "sim_spec", None):
            spec = load_sim_spec(args.sim_spec)
            if args.seed is not None:
                spec = SimSpec(strata=spec.strata, seed=args.seed)
        else:
            spec = SimSpec.single(_DEFAULT_SIM_STRATUM, seed=args.seed or 0)
        backend = sim_configure(spec, samples)
    elif name == "replay":
        if not getattr(args, "replay_file", None):
            raise _UsageError("--backend replay needs --replay-file")
        backend = ReplayBackend(args.replay_file)
    elif name == "http":
        api_key = os.environ.get(args.api_key_env or ENV_API_KEY)
        config = HttpConfig.from_env(
            model=args.model or "default",
            base_url=args.base_url,
            api_key=api_key,
            supports_prefill=not args.no_prefill,
        )
        backend = HttpBackend(config)
    else:
        raise _UsageError(f"unknown backend {name!r}")
    if getattr(args, "record", None):
        backend = RecordingBackend(backend, args.record)
    return backend


def _resolve_thresholds(args: argparse.Namespace) -> ThresholdPair | None:
    k = args.k or DEFAULT_CONFIDENCE_K
    if getattr(args, "thresholds", None):
        return _parse_thresholds(args.thresholds, k)
    if getattr(args, "calib", None):
        return load_calibration(args.calib).thresholds
    return None


def _run_config(args: argparse.Namespace, mode: Mode) -> RunConfig:
    thresholds = _resolve_thresholds(args)
    if mode is Mode.HYBRID and thresholds is None:
        raise _UsageError("hybrid mode needs --calib or --thresholds")
    return RunConfig(
        mode=mode,
        thresholds=thresholds,
        sampling=SamplingParams(),
        backend_name=args.backend or "sim",
        concurrency=args.concurrency or 4,
        seed=args.seed or 0,
        position_swap=bool(args.swap_positions),
        strategy=_STRATEGIES[args.strategy or "dual"],
        k=args.k or DEFAULT_CONFIDENCE_K,
        template_path=args.template,
    )


def _add_backend_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--backend", choices=("http", "sim", "replay"), default=None)
    parser.add_argument("--base-url", default=None, help="chat-completions base URL")
    parser.add_argument("--api-key-env", default=None,
                        help=f"env var holding the API key (default {ENV_API_KEY})")
    parser.add_argument("--model", default=None, help="model name for the http backend")
    parser.add_argument("--no-prefill", action="store_true",
                        help="deliver the trigger inline instead of as an assistant prefill")
    parser.add_argument("--sim-spec", default=None, help="JSON simulator spec")
    parser.add_argument("--replay-file", default=None, help="recorded session to replay")
    parser.add_argument("--record", default=None, help="record every response to this file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--concurrency", type=int, default=None)


def _add_routing_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--mode", choices=("fast", "slow", "hybrid"), default="hybrid")
    parser.add_argument("--calib", default=None, help="calibration file with thresholds")
    parser.add_argument("--thresholds", default=None, help="literal 'tauI,tauT' pair")
    parser.add_argument("--strategy", choices=tuple(_STRATEGIES), default=None)
    parser.add_argument("--k", type=int, default=None)
    parser.add_argument("--template", default=None, help="judge prompt template file")
    parser.add_argument("--swap-positions", action="store_true")


def _build_parser() -> _Parser:
    parser = _Parser(prog="fsrm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_route = sub.add_parser("route", help="judge one sample and print the record")
    p_route.add_argument("--data", required=True)
    p_route.add_argument("--id", default=None, help="sample id (default: first sample)")
    p_route.add_argument("--config", default=None)
    _add_routing_flags(p_route)
    _add_backend_flags(p_route)

    p_run = sub.add_parser("run", help="judge a dataset, writing records and a manifest")
    p_run.add_argument("--data", required=True)
    p_run.add_argument("--out", default="run_out")
    p_run.add_argument("--config", default=None)
    _add_routing_flags(p_run)
    _add_backend_flags(p_run)

    p_cal = sub.add_parser("calibrate", help="derive thresholds from a labeled dataset")
    p_cal.add_argument("--data", required=True)
    p_cal.add_argument("--out", default="calibration.json")
    p_cal.add_argument("--k", type=int, default=None)
    p_cal.add_argument("--template", default=None)
    p_cal.add_argument("--config", default=None)
    _add_backend_flags(p_cal)

    p_sweep = sub.add_parser("sweep", help="offline threshold sweep over recorded runs")
    p_sweep.add_argument("--records", required=True, help="full-activation hybrid records")
    p_sweep.add_argument("--grid", required=True, help="'start:step:stop,start:step:stop'")
    p_sweep.add_argument("--out", default="sweep.csv")
    p_sweep.add_argument("--k", type=int, default=None)
    p_sweep.add_argument("--strategy", choices=tuple(_STRATEGIES), default=None)

    p_rep = sub.add_parser("report", help="per-stratum tables from persisted records")
    p_rep.add_argument("--records", required=True)
    p_rep.add_argument("--slow-records", default=None,
                       help="paired slow-run records for savings and deltas")
    p_rep.add_argument("--out", default="report_out")

    p_toy = sub.add_parser("train-toy", help="train the synthetic linear fast judge")
    p_toy.add_argument("--seed", type=int, default=0)
    p_toy.add_argument("--steps", type=int, default=2000)
    p_toy.add_argument("--n", type=int, default=512)
    p_toy.add_argument("--action-weight", type=float, default=1.0)
    p_toy.add_argument("--out", default="toy_curve.csv")

    p_check = sub.add_parser("selfcheck", help="run the built-in oracle suites")
    p_check.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_route(args: argparse.Namespace) -> int:
    samples = load_benchmark(args.data)
    if args.id is not None:
        matches = [s for s in samples if s.id == args.id]
        if not matches:
            raise FsrmError(f"no sample with id {args.id!r} in {args.data}")
        sample = matches[0]
    else:
        sample = samples[0]
    backend = _build_backend(args, samples)
    mode = Mode(args.mode)
    config = _run_config(args, mode)
    template = harness.load_template(args.template) if args.template else None
    if mode is Mode.FAST:
        record = judge_fast(sample, backend, k=config.k, template=template)
    elif mode is Mode.SLOW:
        record = judge_slow(sample, backend, template=template)
    else:
        record = judge_hybrid(
            sample, backend, config.thresholds, strategy=config.strategy, template=template
        )
    print(record.to_json_line())
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    samples = load_benchmark(args.data)
    config = _run_config(args, Mode(args.mode))
    backend = _build_backend(args, samples)
    manifest, records = harness.run(samples, config, backend, out_dir=args.out)
    n_correct = sum(1 for r in records if r.correct)
    print(f"run {manifest.run_id}: {manifest.record_count} records, "
          f"accuracy {n_correct / max(1, len(records)):.4f}, "
          f"errors {manifest.error_count}, out={args.out}")
    return 0


def _cmd_calibrate(args: argparse.Namespace) -> int:
    samples = load_benchmark(args.data)
    backend = _build_backend(args, samples)
    result = harness.calibrate(
        samples,
        backend,
        k=args.k or DEFAULT_CONFIDENCE_K,
        out_path=args.out,
        concurrency=args.concurrency or 4,
    )
    print(f"calibrated on {result.n_correct}/{result.n_total} correct samples: "
          f"tau_intuition={result.thresholds.tau_intuition:.6g} "
          f"tau_token={result.thresholds.tau_token:.6g} k={result.thresholds.k} -> {args.out}")
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    records = harness.load_records(args.records)
    grid_i, grid_t = _parse_grid(args.grid)
    rows = harness.sweep_thresholds(
        records,
        grid_i,
        grid_t,
        k=args.k or DEFAULT_CONFIDENCE_K,
        strategy=_STRATEGIES[args.strategy or "dual"],
    )
    harness.write_sweep_csv(rows, args.out)
    print(f"swept {len(grid_i)}x{len(grid_t)} grid (+4 quantile points) -> {args.out}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    records = harness.load_records(args.records)
    slow_records = harness.load_records(args.slow_records) if args.slow_records else None
    md_path, csv_path = harness.emit_report(records, args.out, slow_records)
    print(f"wrote {md_path} and {csv_path}")
    return 0


def _cmd_train_toy(args: argparse.Namespace) -> int:
    features, labels = make_separable_judgments(args.n, seed=args.seed)
    cfg = SftConfig(action_weight=args.action_weight, steps=args.steps)
    result = toy_train_fast(features, labels, cfg, seed=args.seed, curve_path=args.out)
    print(f"trained {args.steps} steps: accuracy {result.final_accuracy:.4f}, "
          f"label mass {result.final_action_mass:.4f}, curve -> {args.out}")
    return 0


def _cmd_selfcheck(args: argparse.Namespace) -> int:
    results = run_all(seed=args.seed)
    for result in results:
        print(f"{'PASS' if result.passed else 'FAIL'} {result.name}: {result.detail}")
    return 0 if all(r.passed for r in results) else 2


_COMMANDS = {
    "route": _cmd_route,
    "run": _cmd_run,
    "calibrate": _cmd_calibrate,
    "sweep": _cmd_sweep,
    "report": _cmd_report,
    "train-toy": _cmd_train_toy,
    "selfcheck": _cmd_selfcheck,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_config_file(args)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except FsrmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
