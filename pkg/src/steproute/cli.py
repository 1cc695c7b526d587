"""Command-line entry points: run, sweep, simulate, analyze, serve."""

from __future__ import annotations

import argparse
import os
import sys
import uuid
from pathlib import Path

from .analysis import bimodality_coefficient, histogram, sweep_table, write_histogram_data
from .config import ConfigError, build_backend, load_config
from .routing import (
    Action,
    Policy,
    PolicyConfig,
    TraceFailure,
    run_trace,
    sweep,
)
from .simulation import (
    ScenarioError,
    load_scenario,
    scenario_sweep_case,
    scripted_pair,
    simulate_latency,
)
from .tracelog import TraceRecord, TraceSink, metric_values, read_records


def _parse_thresholds(raw: str) -> list[float]:
    try:
        return [float(part) for part in raw.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad threshold list {raw!r}: {exc}") from exc


def _policy_config(args, default_threshold: float = 0.9) -> PolicyConfig:
    return PolicyConfig(
        policy=Policy(args.policy),
        threshold=args.tau if args.tau is not None else default_threshold,
        rng_seed=getattr(args, "seed", 0) or 0,
        budget_tokens=getattr(args, "budget", None) or 8192,
    )


def _print_trace_summary(trace, latency_ms=None) -> None:
    print(f"question: {trace.question[:90]}")
    print(f"{'step':>4}  {'action':<9}  {'model':<5}  {'score':>8}  tokens")
    for step, decision in zip(trace.steps, trace.decisions):
        marker = "*" if decision.action is Action.INTERVENE else " "
        print(
            f"{decision.step_index:>4}{marker} {decision.action.value:<9}  "
            f"{step.generator:<5}  {decision.score:>8.4f}  {step.token_count}"
        )
    acct = trace.accounting
    print(
        f"steps={len(trace.steps)} intervention_rate={acct.intervention_rate:.2%} "
        f"probes={acct.probe_count} small_tokens={acct.small_tokens} large_tokens={acct.large_tokens}"
    )
    if latency_ms is not None:
        print(f"simulated_latency_ms={latency_ms}")
    print(f"answer: {trace.final_answer}")


def cmd_run(args) -> int:
    config = load_config(args.config, {"policy.threshold": args.tau})
    if args.question:
        question = args.question
    else:
        question = Path(args.question_file).read_text().strip()
    small = build_backend(config.small, config, "small")
    large = build_backend(config.large, config, "large")
    try:
        trace = run_trace(
            question,
            small,
            large,
            config.policy_config(),
            think_open=config.segmenter.think_open,
            think_close=config.segmenter.think_close,
        )
    except TraceFailure as failure:
        print(f"backend failure: {failure}", file=sys.stderr)
        TraceSink(args.sink or config.trace_sink).append(
            TraceRecord.from_trace(failure.partial_trace, uuid.uuid4().hex, failure=str(failure))
        )
        return 1
    _print_trace_summary(trace)
    if args.sink or config.trace_sink:
        TraceSink(args.sink or config.trace_sink).append(TraceRecord.from_trace(trace, uuid.uuid4().hex))
    return 0


def _scenario_paths(args) -> list[Path]:
    paths: list[Path] = []
    if args.scenario:
        paths.extend(Path(p) for p in args.scenario)
    if args.scenario_dir:
        paths.extend(sorted(Path(args.scenario_dir).glob("*.json")))
    if not paths:
        raise ConfigError("no scenarios given: pass --scenario or --scenario-dir")
    return paths


def cmd_sweep(args) -> int:
    thresholds = _parse_thresholds(args.thresholds)
    cases = [scenario_sweep_case(load_scenario(path)) for path in _scenario_paths(args)]
    config = _policy_config(args)
    report = sweep(cases, thresholds, config)
    csv_text, aligned = sweep_table(report)
    print(aligned)
    if args.csv_out:
        out = Path(args.csv_out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(csv_text)
        print(f"wrote {out}")
    return 0


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    config = _policy_config(args)
    small, large = scripted_pair(scenario)
    trace = run_trace(scenario.question, small, large, config)
    _print_trace_summary(trace, latency_ms=simulate_latency(trace, scenario.profile))
    if args.sink:
        TraceSink(args.sink).append(TraceRecord.from_trace(trace, uuid.uuid4().hex))
    return 0


def cmd_analyze(args) -> int:
    records = read_records(args.traces)
    if not records:
        print(f"no records in {args.traces}", file=sys.stderr)
        return 1
    values = metric_values(records, args.metric)
    if not values:
        print(f"no {args.metric} values in {args.traces}", file=sys.stderr)
        return 1
    hist = histogram(values, args.bins)
    out = Path(args.out or f"{args.traces}.{args.metric}.hist")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_histogram_data(hist, out)
    print(f"samples={len(values)} bins={args.bins} -> {out}")
    if len(values) >= 4:
        print(f"bimodality_coefficient={bimodality_coefficient(values):.4f} (bimodal above {5 / 9:.4f})")
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    host, port = args.host, args.port
    listen_env = os.environ.get("STEPROUTE_LISTEN", "")
    if listen_env and host is None and port is None:
        env_host, _, env_port = listen_env.rpartition(":")
        host = env_host or None
        port = int(env_port) if env_port.isdigit() else None
    overrides = {"host": host, "port": port}
    config = load_config(args.config, {k: v for k, v in overrides.items() if v is not None})
    serve(config)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="steproute", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    policy_names = [p.value for p in Policy]

    run_p = sub.add_parser("run", help="route one question through configured backends")
    run_p.add_argument("--config", required=True)
    group = run_p.add_mutually_exclusive_group(required=True)
    group.add_argument("--question")
    group.add_argument("--question-file")
    run_p.add_argument("--tau", type=float, default=None, help="override policy threshold")
    run_p.add_argument("--sink", default=None, help="override trace sink path")
    run_p.set_defaults(func=cmd_run)

    sweep_p = sub.add_parser("sweep", help="threshold sweep over scenario files")
    sweep_p.add_argument("--thresholds", default="0.01,0.1,0.6,0.9,1.8")
    sweep_p.add_argument("--scenario", action="append", default=None)
    sweep_p.add_argument("--scenario-dir", default=None)
    sweep_p.add_argument("--policy", choices=policy_names, default="init_entropy")
    sweep_p.add_argument("--tau", type=float, default=None, help=argparse.SUPPRESS)
    sweep_p.add_argument("--seed", type=int, default=0)
    sweep_p.add_argument("--budget", type=int, default=None)
    sweep_p.add_argument("--csv-out", default=None)
    sweep_p.set_defaults(func=cmd_sweep)

    sim_p = sub.add_parser("simulate", help="route one scripted scenario")
    sim_p.add_argument("--scenario", required=True)
    sim_p.add_argument("--tau", type=float, default=0.9)
    sim_p.add_argument("--policy", choices=policy_names, default="init_entropy")
    sim_p.add_argument("--seed", type=int, default=0)
    sim_p.add_argument("--budget", type=int, default=None)
    sim_p.add_argument("--sink", default=None)
    sim_p.set_defaults(func=cmd_simulate)

    an_p = sub.add_parser("analyze", help="histogram a metric from a trace JSONL file")
    an_p.add_argument("--traces", required=True)
    an_p.add_argument("--metric", choices=["h_init", "h_step", "ppl_step"], default="h_init")
    an_p.add_argument("--bins", type=int, default=40)
    an_p.add_argument("--out", default=None)
    an_p.set_defaults(func=cmd_analyze)

    serve_p = sub.add_parser("serve", help="run the routed-inference HTTP proxy")
    serve_p.add_argument("--config", required=True)
    serve_p.add_argument("--host", default=None)
    serve_p.add_argument("--port", type=int, default=None)
    serve_p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TraceFailure as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
