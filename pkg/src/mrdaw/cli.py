"""Command line entry points.

`mrdaw-sim` replays control traces through the virtual-time simulator and
writes reports, WAV renders and figures. `mrdaw-server` runs the live
UDP/OSC + WebSocket session server. Both honor --log-level and the
MRDAW_LOG environment variable.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .session import SessionConfig
from .sim import (
    LATENCY_PRESETS,
    LatencyModel,
    TraceError,
    load_trace,
    simulate,
)

logger = logging.getLogger(__name__)


def _setup_logging(level: str | None) -> None:
    name = (level or os.environ.get("MRDAW_LOG") or "warning").upper()
    logging.basicConfig(
        level=getattr(logging, name, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _add_log_flag(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--log-level",
        choices=["debug", "info", "warning", "error"],
        help="logging verbosity (default from MRDAW_LOG, else warning)",
    )


def _session_config(args: argparse.Namespace) -> SessionConfig:
    return SessionConfig(
        num_users=args.users,
        tracks_per_user=args.tracks_per_user,
        sample_rate=args.sample_rate,
    )


def _print_summary(report) -> None:
    d = report.to_dict()
    m = d["model"]
    print(f"trace: {d['trace_events']} events, last at {d['last_event_ms']:.1f} ms")
    print(
        f"model: one-way {m['one_way_ms']} ms, jitter {m['jitter_ms']} ms, "
        f"loss {m['loss_pct']}%, seed {m['seed']}"
    )
    if d["loop_len"]:
        ms = d["loop_len"] * 1000.0 / d["config"]["sample_rate"]
        print(f"loop length: {d['loop_len']} samples ({ms:.1f} ms)")
    else:
        print("loop length: unset")
    print(f"final transport: {d['final']['transport']}")
    print(f"audio hash: sha256:{d['audio_hash']}")
    for uid in sorted(d["clients"], key=int):
        c = d["clients"][uid]
        if c["convergence_ms"] is None:
            status = "never converged"
        else:
            status = f"converged +{c['convergence_ms']:.1f} ms"
        print(
            f"client {uid}: {status} (bound {c['bound_ms']:.1f} ms), "
            f"{c['delivered']} delivered, {c['lost']} lost"
        )
    if d["violations"]:
        print(f"violations: {len(d['violations'])}")
        for item in d["violations"]:
            print(f"  - {item}")
    else:
        print("violations: none")


def sim_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="mrdaw-sim",
        description="Replay collaborative loop-session traces under network "
        "latency models and audit the results.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="simulate one trace")
    run_p.add_argument("--trace", required=True, help="JSONL control trace")
    lat = run_p.add_mutually_exclusive_group()
    lat.add_argument(
        "--latency",
        choices=sorted(LATENCY_PRESETS),
        help="one-way latency preset",
    )
    lat.add_argument(
        "--one-way", dest="one_way", type=float, help="one-way latency in ms"
    )
    run_p.add_argument("--jitter", type=float, default=0.0, help="uniform jitter half-width, ms")
    run_p.add_argument("--loss", type=float, default=0.0, help="snapshot loss percentage")
    run_p.add_argument("--seed", type=int, default=0, help="latency model RNG seed")
    run_p.add_argument("--report", help="write the JSON report here")
    run_p.add_argument("--emit-wav", dest="emit_wav", help="export per-user loop WAVs to this directory")
    run_p.add_argument("--plots", help="render figures and CSV to this directory")
    run_p.add_argument("--users", type=int, default=2)
    run_p.add_argument("--tracks-per-user", dest="tracks_per_user", type=int, default=4)
    run_p.add_argument("--sample-rate", dest="sample_rate", type=int, default=48000)
    run_p.add_argument(
        "--broadcast-interval",
        dest="broadcast_interval",
        type=float,
        default=50.0,
        help="snapshot broadcast interval, ms",
    )
    run_p.add_argument("--horizon", type=float, help="give up after this virtual time, ms")
    _add_log_flag(run_p)

    rep_p = sub.add_parser("report", help="render figures from a saved report")
    rep_p.add_argument("--report", required=True, help="report JSON from a previous run")
    rep_p.add_argument("--plots", required=True, help="output directory")
    _add_log_flag(rep_p)

    args = parser.parse_args(argv)
    _setup_logging(args.log_level)

    if args.command == "report":
        import json

        from .report import write_report_assets

        try:
            data = json.loads(Path(args.report).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            print(f"error: cannot read report: {e}", file=sys.stderr)
            return 2
        for path in write_report_assets(data, args.plots):
            print(f"wrote {path}")
        return 0

    try:
        trace = load_trace(args.trace)
    except (OSError, TraceError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    try:
        one_way = args.one_way
        if one_way is None:
            one_way = LATENCY_PRESETS[args.latency or "local"]
        model = LatencyModel(
            one_way_ms=one_way,
            jitter_ms=args.jitter,
            loss_pct=args.loss,
            seed=args.seed,
        )
        config = _session_config(args)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    report = simulate(
        trace,
        model,
        config,
        broadcast_interval_ms=args.broadcast_interval,
        horizon_ms=args.horizon,
    )
    _print_summary(report)
    if args.report:
        report.write(args.report)
        print(f"wrote {args.report}")
    if args.emit_wav:
        if report.loop_len:
            for path in report.host.export_wav(args.emit_wav):
                print(f"wrote {path}")
        else:
            print("no loop finalized; skipping WAV export", file=sys.stderr)
    if args.plots:
        from .report import write_report_assets

        for path in write_report_assets(report.to_dict(), args.plots):
            print(f"wrote {path}")
    return 1 if report.violations else 0


def server_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="mrdaw-server",
        description="Run the collaborative loop-session server "
        "(OSC control in, OSC + WebSocket state out).",
    )
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--osc-port", dest="osc_port", type=int, default=9000)
    parser.add_argument(
        "--broadcast-port", dest="osc_broadcast_port", type=int, default=9001,
        help="UDP port OSC clients listen on for state snapshots",
    )
    parser.add_argument("--ws-port", dest="ws_port", type=int, default=9002)
    parser.add_argument(
        "--backend", choices=["mock", "osc-out"], default="mock",
        help="audio destination: in-process looper or OSC to an external DAW",
    )
    parser.add_argument(
        "--osc-out-target", dest="osc_out_target", default="127.0.0.1:11000",
        metavar="HOST:PORT",
        help="where the osc-out backend sends its messages",
    )
    parser.add_argument("--users", type=int, default=2)
    parser.add_argument("--tracks-per-user", dest="tracks_per_user", type=int, default=4)
    parser.add_argument("--sample-rate", dest="sample_rate", type=int, default=48000)
    parser.add_argument("--block-size", dest="block_size", type=int, default=256)
    parser.add_argument(
        "--export-dir", dest="export_dir", default="exports",
        help="where POST /export writes loop WAVs",
    )
    parser.add_argument(
        "--input",
        action="append",
        default=[],
        metavar="USER:WAV",
        help="loop a WAV file as a user's live input (repeatable)",
    )
    parser.add_argument(
        "--static-dir", dest="static_dir", default=None,
        help="serve the track panel bundle from this directory",
    )
    _add_log_flag(parser)
    args = parser.parse_args(argv)
    _setup_logging(args.log_level)

    from .server import ServerConfig, run_server

    try:
        out_host, _, out_port = args.osc_out_target.rpartition(":")
        if not out_host or not out_port.isdigit():
            raise ValueError(
                f"--osc-out-target expects HOST:PORT, got {args.osc_out_target!r}"
            )
        inputs = {}
        for item in args.input:
            user_str, _, path = item.partition(":")
            if not user_str.isdigit() or not path:
                raise ValueError(f"--input expects USER:WAV, got {item!r}")
            inputs[int(user_str)] = path
        cfg = ServerConfig(
            session=_session_config(args),
            host=args.host,
            osc_port=args.osc_port,
            osc_broadcast_port=args.osc_broadcast_port,
            ws_port=args.ws_port,
            backend=args.backend,
            osc_out_host=out_host,
            osc_out_port=int(out_port),
            block_size=args.block_size,
            export_dir=args.export_dir,
            inputs=inputs,
            static_dir=args.static_dir,
        )
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    try:
        run_server(cfg)
    except KeyboardInterrupt:
        pass
    return 0
