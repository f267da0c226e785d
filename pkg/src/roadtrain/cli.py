"""Command-line front end.

``roadtrain simulate`` runs a scenario in-process and prints the summary;
``roadtrain node`` runs one vehicle as a UDP process; ``roadtrain report``
renders a results CSV as a table.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional

from . import udpnode
from .config import ConfigError, ScenarioConfig, load_config, validate
from .engine import Engine
from .metrics import CSV_HEADER, csv_line, format_summary

log = logging.getLogger(__name__)


def _add_scenario_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="scenario config file (key = value lines)")
    parser.add_argument("--mode", choices=("rba", "mpr"), help="dissemination scheme")
    parser.add_argument("--followers", type=int, dest="n_followers", metavar="N")
    parser.add_argument("--duration", type=float, dest="duration_s", metavar="SECONDS")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--x-offset", type=float, dest="x_offset", metavar="METERS")
    parser.add_argument("--leave-at", type=float, dest="leave_at_s", metavar="SECONDS")
    parser.add_argument("--echo-rate", type=int, dest="echo_rate", metavar="N")
    parser.add_argument("--follower-speed", type=float, dest="follower_speed", metavar="MPS")
    parser.add_argument(
        "--lengths",
        dest="follower_lengths",
        metavar="L1,L2,...",
        help="comma-separated follower lengths (5.0 or 10.0 each)",
    )
    parser.add_argument("--loss-max", type=float, metavar="P", help="loss at maximum range")
    parser.add_argument("--range", type=float, metavar="METERS", help="radio range")
    parser.add_argument("--no-script", action="store_true", help="no scripted joins/leaves")


def _build_config(args: argparse.Namespace) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    for name in (
        "mode",
        "n_followers",
        "duration_s",
        "seed",
        "x_offset",
        "leave_at_s",
        "echo_rate",
        "follower_speed",
    ):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    if getattr(args, "follower_lengths", None):
        cfg.follower_lengths = [float(v) for v in args.follower_lengths.split(",") if v.strip()]
    if getattr(args, "loss_max", None) is not None:
        cfg.medium.loss_max = args.loss_max
    if getattr(args, "range", None) is not None:
        cfg.medium.range_m = args.range
    if getattr(args, "no_script", False):
        cfg.scripted = False
    if getattr(args, "events", None):
        cfg.keep_events = True
    validate(cfg)
    return cfg


def _cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    engine = Engine(cfg)

    if args.serve:
        from . import control

        control.serve(engine, host=args.host, port=args.port, stdin=not args.no_stdin)
        report = engine.report()
    else:
        report = engine.run(realtime=args.realtime)

    print(format_summary(report))
    if args.csv:
        path = Path(args.csv)
        fresh = not path.exists() or path.stat().st_size == 0
        with open(path, "a", encoding="utf-8") as fh:
            if fresh:
                fh.write(CSV_HEADER + "\n")
            fh.write(csv_line(report) + "\n")
        print(f"appended results to {path}")
    if args.events:
        with open(args.events, "w", encoding="utf-8") as fh:
            fh.write(engine.metrics.dump_events())
        print(f"wrote event log to {args.events}")
    if args.dump_neighbors is not None:
        print(engine.neighbor_table_dump(args.dump_neighbors))
    return 0


def _cmd_node(args: argparse.Namespace) -> int:
    return udpnode.run_parsed(args)


def _cmd_report(args: argparse.Namespace) -> int:
    lines = Path(args.csv).read_text(encoding="utf-8").strip().splitlines()
    if not lines:
        print("empty results file", file=sys.stderr)
        return 1
    rows = [line.split(",") for line in lines]
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    for row in rows:
        print("  ".join(cell.rjust(width) for cell, width in zip(row, widths)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roadtrain", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a scenario in one process")
    _add_scenario_flags(sim)
    sim.add_argument("--csv", metavar="PATH", help="append a results row")
    sim.add_argument("--events", metavar="PATH", help="write the packet event log")
    sim.add_argument("--dump-neighbors", type=int, metavar="NODE", help="print a neighbor table")
    sim.add_argument("--realtime", action="store_true", help="pace the clock to wall time")
    sim.add_argument("--serve", action="store_true", help="realtime + WebSocket control API")
    sim.add_argument("--host", default="127.0.0.1")
    sim.add_argument("--port", type=int, default=8700)
    sim.add_argument("--no-stdin", action="store_true", help="serve without the stdin console")
    sim.set_defaults(fn=_cmd_simulate)

    node = sub.add_parser(
        "node",
        help="run one vehicle over UDP",
        parents=[udpnode.build_parser(add_help=False)],
    )
    node.set_defaults(fn=_cmd_node)

    rep = sub.add_parser("report", help="print a results CSV as a table")
    rep.add_argument("csv", help="results file written by simulate --csv")
    rep.set_defaults(fn=_cmd_report)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
