"""Command-line entry points.

Exit codes: 0 success, 1 configuration error, 2 runtime fault, 3 I/O.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .errors import ConfigError, RailError, TraceFormatError
from .protocol import LinkClient, LinkServer
from .runtime import LiveLinker
from .sim.metrics import discontinuity_report, smoothness_report
from .sim.policy import SyntheticPolicy
from .sim.robot import SimulatedRobot
from .sim.scenario import ScenarioConfig, run_scenario
from .sim.trace import RunTrace, TraceEvent

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_IO = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rail",
        description="Asynchronous action-chunk linker: simulate, report, serve, drive.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate one scenario and export its trace")
    run.add_argument("--scenario", required=True, help="scenario key=value file")
    run.add_argument("--strategy", choices=["raw", "naive", "rail"], default=None)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", required=True, help="trace CSV destination")

    report = sub.add_parser("report", help="smoothness and discontinuity summary of a trace")
    report.add_argument("--trace", required=True)
    report.add_argument("--compare", default=None, help="second trace to report side by side")
    report.add_argument("--csv", default=None, help="also write per-window stds as CSV")

    serve = sub.add_parser("serve", help="host the synthetic policy behind a socket")
    serve.add_argument("--policy", choices=["synthetic"], default="synthetic")
    serve.add_argument("--config", required=True, help="scenario file supplying policy params")
    serve.add_argument("--bind", default="127.0.0.1:7465", help="host:port to listen on")

    client = sub.add_parser("client", help="drive a live control loop against a server")
    client.add_argument("--connect", required=True, help="host:port of a rail server")
    client.add_argument("--scenario", required=True)
    client.add_argument("--strategy", choices=["raw", "naive", "rail"], default=None)
    client.add_argument("--duration", type=float, default=None, help="override run length (s)")
    client.add_argument("--out", default=None, help="trace CSV destination")
    return parser


def _parse_bind(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ConfigError(f"expected host:port, got {text!r}")
    return host, int(port)


def _cmd_run(args) -> int:
    sc = ScenarioConfig.from_file(args.scenario)
    trace = run_scenario(sc, strategy=args.strategy, seed=args.seed)
    trace.export_csv(args.out)
    counters = trace.meta["counters"]
    print(
        f"{trace.meta['strategy']} run: {len(trace.times)} ticks over "
        f"{trace.duration:.9g}s, chunks installed={counters['installed']} "
        f"fused={counters['fused']} discarded={counters['discarded']}"
    )
    print(f"trace written to {args.out}")
    return EXIT_OK


def _report_one(path: str) -> list[str]:
    trace = RunTrace.from_csv(path)
    rep = smoothness_report(trace)
    lines = rep.lines(label=path)
    switches = discontinuity_report(trace)
    if switches:
        worst = max(switches, key=lambda s: float(np.abs(s.jump).max()))
        flag = " (estimated)" if worst.estimated else ""
        lines.append(
            f"  worst switch at t={worst.time:.6g}: |jump|={np.abs(worst.jump).max():.6g}{flag}"
        )
    return lines


def _cmd_report(args) -> int:
    for line in _report_one(args.trace):
        print(line)
    if args.compare:
        print()
        for line in _report_one(args.compare):
            print(line)
    if args.csv:
        trace = RunTrace.from_csv(args.trace)
        rep = smoothness_report(trace)
        with open(args.csv, "w", encoding="utf-8") as fh:
            cols = ["window_start"]
            for c in range(trace.dim):
                cols += [f"ch{c}_std_pos", f"ch{c}_std_vel", f"ch{c}_std_acc"]
            fh.write(",".join(cols) + "\n")
            for w in range(len(rep.window_starts)):
                cells = [f"{rep.window_starts[w]:.9g}"]
                for c in range(trace.dim):
                    cells += [
                        f"{rep.std_pos[w, c]:.9g}",
                        f"{rep.std_vel[w, c]:.9g}",
                        f"{rep.std_acc[w, c]:.9g}",
                    ]
                fh.write(",".join(cells) + "\n")
        print(f"per-window stds written to {args.csv}")
    return EXIT_OK


def _cmd_serve(args) -> int:
    sc = ScenarioConfig.from_file(args.config)
    host, port = _parse_bind(args.bind)
    rng = np.random.default_rng(sc.seed)
    policy = SyntheticPolicy(
        sc.make_generator(), sc.chunk_horizon, sc.f_act, sc.noise_amp,
        np.random.default_rng(sc.seed), sc.policy_mode,
    )
    latency = sc.make_latency()
    server = LinkServer(
        policy, host=host, port=port, infer_delay=lambda: latency.infer.sample(rng)
    )
    bound = server.address
    print(f"serving synthetic policy on {bound[0]}:{bound[1]} (ctrl-c to stop)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.stop()
    return EXIT_OK


def _cmd_client(args) -> int:
    sc = ScenarioConfig.from_file(args.scenario).with_overrides(strategy=args.strategy)
    host, port = _parse_bind(args.connect)
    duration = args.duration if args.duration is not None else sc.duration
    generator = sc.make_generator()
    initial = generator.value(0.0) if sc.robot_init == "generator" else np.zeros(sc.channels)
    robot = SimulatedRobot(initial, sc.robot_model, sc.robot_lag_tau)
    link = LinkClient.connect(host, port)
    try:
        linker = LiveLinker(sc.linker_config(), link, robot, strategy=sc.strategy)
        result = linker.run(duration)
    finally:
        link.close()
    print(
        f"live run complete: {len(result.times)} ticks, chunks "
        f"installed={result.counters.get('installed', 0)} "
        f"fused={result.counters.get('fused', 0)} "
        f"discarded={result.counters.get('discarded', 0)}"
    )
    if args.out:
        trace = _live_trace(result, sc)
        trace.export_csv(args.out)
        print(f"trace written to {args.out}")
    return EXIT_OK


def _live_trace(result, sc: ScenarioConfig) -> RunTrace:
    records = result.records
    events = []
    for tick, out in result.events:
        events.append(TraceEvent(tick, "recv", out.k_star, out.t_a))
        if out.kind == "fused":
            events.append(TraceEvent(tick, "fuse", out.k_star, out.t_a, out.jump))
        elif out.kind == "discarded":
            events.append(TraceEvent(tick, "discard", out.k_star, out.t_a))
    return RunTrace(
        times=np.asarray(result.times),
        positions=np.stack([r.command for r in records]),
        velocities=np.stack([r.velocity for r in records]),
        accelerations=np.stack([r.acceleration for r in records]),
        segments=[r.segment for r in records],
        events=events,
        meta={"strategy": sc.strategy, "live": True, "counters": result.counters},
    )


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    handlers = {
        "run": _cmd_run,
        "report": _cmd_report,
        "serve": _cmd_serve,
        "client": _cmd_client,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (TraceFormatError, OSError) as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return EXIT_IO
    except RailError as err:
        print(f"runtime fault: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
