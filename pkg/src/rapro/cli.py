"""Command-line entry points: emulate, serve, budget, score, dump-constellation.

Reports go to stdout (or --report <path>) as JSON; failures exit nonzero with
a machine-readable JSON error on stderr.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import signal
import sys

from . import analytics, frontend, server as server_mod
from .config import RunConfig, example_config, load_config


def _endpoint(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected ip:port, got {text!r}")
    return host, int(port)


def _endpoints(text: str) -> list[tuple[str, int]]:
    return [_endpoint(part) for part in text.split(",") if part]


def _emit(doc: dict, path: str | None) -> None:
    rendered = json.dumps(doc, indent=2)
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(rendered + "\n")
    else:
        print(rendered)


def _load_run_config(path: str | None) -> RunConfig:
    return load_config(path) if path else RunConfig()


def cmd_emulate(args) -> int:
    run = _load_run_config(args.config)
    if args.realtime_factor is not None:
        run = dataclasses.replace(run, realtime_factor=args.realtime_factor)
    report = frontend.stream_frames(
        run,
        destinations=args.dest,
        num_frames=args.frames,
        master_seed=args.seed,
        first_frame_seq=args.first_frame,
    )
    _emit(report.to_dict(), args.report)
    return 0


def cmd_serve(args) -> int:
    run = _load_run_config(args.config)
    if args.realtime_factor is not None:
        run = dataclasses.replace(run, realtime_factor=args.realtime_factor)
    truth = analytics.load_json(args.truth) if args.truth else None
    srv = server_mod.BasebandServer(
        run,
        listen=args.listen,
        out_addr=args.out,
        frames=args.frames,
        duration=args.duration,
        capture_path=args.capture,
        ground_truth=truth,
    )
    signal.signal(signal.SIGINT, lambda *_: srv.stop())
    signal.signal(signal.SIGTERM, lambda *_: srv.stop())
    report = srv.run()
    _emit(report, args.report)
    return 0


def cmd_budget(args) -> int:
    run = _load_run_config(args.config)
    _emit(
        analytics.rate_budget(
            run.frame, num_ports=args.ports, num_antennas=args.antennas
        ),
        args.report,
    )
    return 0


def cmd_score(args) -> int:
    _emit(
        analytics.score_run(
            analytics.load_json(args.server_report),
            analytics.load_json(args.stream_report),
            capture_path=args.capture,
        ),
        args.report,
    )
    return 0


def cmd_dump_constellation(args) -> int:
    rows = analytics.dump_constellation(args.capture, args.user, args.out)
    _emit({"rows": rows, "out": args.out}, None)
    return 0


def cmd_example_config(args) -> int:
    print(example_config(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rapro",
        description="MIMO-OFDM uplink front-end emulator, baseband server, and analytics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("emulate", help="stream label-headed sample packets over UDP")
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--dest", type=_endpoints, required=True,
                   help="ip:port[,ip:port]; antennas split by parity across endpoints")
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--realtime-factor", type=float, default=None,
                   help="1.0 = true 10 ms frames; 0.1 = 10x slower")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--first-frame", type=int, default=0)
    p.add_argument("--report", help="write the stream report here instead of stdout")
    p.set_defaults(func=cmd_emulate)

    p = sub.add_parser("serve", help="run the baseband server")
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--listen", type=_endpoints, required=True,
                   help="ip:port[,ip:port], one per receive worker")
    p.add_argument("--out", type=_endpoint, default=None,
                   help="destination for demodulated-output datagrams")
    p.add_argument("--frames", type=int, default=None,
                   help="stop after this many frames have been seen and drained")
    p.add_argument("--duration", type=float, default=None, help="hard stop, seconds")
    p.add_argument("--realtime-factor", type=float, default=None)
    p.add_argument("--capture", help="append output datagrams to this capture file")
    p.add_argument("--truth", help="stream report JSON for in-run BER/EVM scoring")
    p.add_argument("--report", help="write the server report here instead of stdout")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("budget", help="rate budget for a configuration")
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--ports", type=int, default=2)
    p.add_argument("--antennas", type=int, default=None,
                   help="override the antenna count")
    p.add_argument("--report")
    p.set_defaults(func=cmd_budget)

    p = sub.add_parser("score", help="score a run against its ground truth")
    p.add_argument("--server-report", required=True)
    p.add_argument("--stream-report", required=True)
    p.add_argument("--capture", default=None)
    p.add_argument("--report")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("dump-constellation",
                       help="CSV of equalized (i, q) symbols for one user")
    p.add_argument("--capture", required=True)
    p.add_argument("--user", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_constellation)

    p = sub.add_parser("example-config", help="print the default YAML configuration")
    p.set_defaults(func=cmd_example_config)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # machine-readable failure
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
