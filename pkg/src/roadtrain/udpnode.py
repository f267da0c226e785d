"""One vehicle as a standalone UDP process.

The lead truck (node 1) truncates the shared registry file and writes itself
in; followers refuse to start until that line exists.  Every node binds one
UDP socket, re-reads the registry every 50 ms for peer addresses/positions,
rewrites its own line every 5 s, and filters received datagrams on its own
side: a packet is dropped when the sender's registered position is out of
radio range of the receiver's live one, or loses the distance-based coin
toss.  Commands (``JOIN``, ``LEAVE``, ``TABLE``, ``QUIT``) arrive on stdin.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import random
import select
import socket
import sys
import time
from typing import Optional

from . import olsr, platoon, rba
from .config import ScenarioConfig, load_config, validate
from .medium import LANE_WIDTH_M, Position, loss_probability
from .olsr import Forwarding, OlsrConfig, OlsrState, RouteResult
from .packets import (
    BROADCAST,
    DecodeError,
    Lane,
    Packet,
    PacketKind,
    PlatoonMode,
    VehicleInfo,
    decode,
    encode,
)
from .platoon import LEAD_ID, LeadState, VehicleDynamics, VehicleState
from .registry import Registry, RegistryEntry

log = logging.getLogger(__name__)

DEFAULT_PORT_BASE = 47800
LEAD_START_X = 10.0
FOLLOWER_SLOT_M = 80.0


def start_position(node_id: int, x_offset: float) -> Position:
    if node_id == LEAD_ID:
        return Position(LEAD_START_X + x_offset, Lane.RIGHT)
    return Position(x_offset + FOLLOWER_SLOT_M * (node_id - 1), Lane.LEFT)


class UdpNode:
    def __init__(
        self,
        node_id: int,
        cfg: ScenarioConfig,
        registry_path: str,
        host: str = "127.0.0.1",
        port: Optional[int] = None,
        port_base: int = DEFAULT_PORT_BASE,
        join_at_s: Optional[float] = None,
    ):
        validate(cfg)
        self.id = node_id
        self.cfg = cfg
        self.registry = Registry(registry_path)
        self.host = host
        self.port = port if port is not None else port_base + node_id
        self.join_at_s = join_at_s
        self.rng = random.Random(cfg.seed * 1_000_003 + node_id)

        pos = start_position(node_id, cfg.x_offset)
        velocity = 30.0 if node_id == LEAD_ID else cfg.follower_speed
        length = 10.0 if node_id == LEAD_ID else 5.0
        self.state = VehicleState(
            node_id, VehicleDynamics(pos, velocity, length=length), cruise_mps=velocity
        )
        self.lead: Optional[LeadState] = LeadState() if node_id == LEAD_ID else None
        self.infos = {node_id: platoon.vehicle_info(self.state)}
        self.olsr: Optional[OlsrState] = None
        if cfg.mode == "mpr":
            self.olsr = OlsrState(
                node_id,
                OlsrConfig(
                    hello_period_ms=cfg.timers.hello_ms,
                    tc_period_ms=cfg.timers.tc_ms,
                    neighbor_hold_ms=5 * cfg.timers.hello_ms,
                    topology_hold_ms=3 * cfg.timers.tc_ms,
                    tc_dup_hold_ms=2 * cfg.timers.tc_ms,
                ),
            )
        self.rba_table: dict[int, rba.CacheEntry] = {}
        self.applied_specials: set[tuple[int, int]] = set()

        self.peers: dict[int, RegistryEntry] = {}
        # freshest heard position per peer: beacons carry it every 10 ms, while
        # registry entries go stale for seconds at highway speed
        self.live_pos: dict[int, tuple[float, float]] = {}
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._running = False

    # --- startup ordering ---------------------------------------------------

    def check_spawn_order(self) -> None:
        """Followers may only start once the lead truck has registered."""
        if self.id == LEAD_ID:
            self.registry.truncate()
            return
        if not any(e.node == LEAD_ID for e in self.registry.read()):
            raise SystemExit(f"node {self.id}: lead truck not registered; start node 1 first")

    # --- registry ------------------------------------------------------------

    def _write_registry(self) -> None:
        links = sorted(self._in_range_peers())
        if self.olsr is not None:
            links = sorted(olsr.data_neighbors(self.olsr))
        pos = self.state.dyn.pos
        self.registry.write_entry(
            RegistryEntry(self.id, self.host, self.port, pos.x, pos.lateral(), links)
        )

    def _read_registry(self) -> None:
        self.peers = {e.node: e for e in self.registry.read() if e.node != self.id}

    def _peer_distance(self, node: int) -> Optional[float]:
        """Distance to the best position estimate we hold for a peer."""
        mine = self.state.dyn.pos
        candidates = []
        heard = self.live_pos.get(node)
        if heard is not None:
            candidates.append(heard)
        entry = self.peers.get(node)
        if entry is not None:
            candidates.append((entry.x, entry.y))
        if not candidates:
            return None
        return min(math.hypot(x - mine.x, y - mine.lateral()) for x, y in candidates)

    def _in_range_peers(self) -> list[int]:
        out = []
        for node in self.peers:
            d = self._peer_distance(node)
            if d is not None and d <= self.cfg.medium.range_m:
                out.append(node)
        return out

    # --- sending ---------------------------------------------------------------

    def _send(self, pkt: Packet, to: int) -> None:
        entry = self.peers.get(to)
        if entry is None:
            log.debug("node %d: no address for %d", self.id, to)
            return
        self.sock.sendto(encode(pkt), (entry.host, entry.port))

    def _fanout(self, pkt: Packet, exclude: tuple[int, ...] = ()) -> None:
        targets = self._in_range_peers()
        if self.olsr is not None:
            targets = olsr.data_neighbors(self.olsr)
        for target in targets:
            if target not in exclude:
                self._send(pkt, target)

    def _dispatch(self, pkt: Packet) -> None:
        if self.cfg.mode == "rba":
            self._fanout(pkt)
            return
        result, next_hop = olsr.route_unicast(self.olsr, pkt, self._now_ms())
        if result == RouteResult.FORWARD:
            self._send(pkt, next_hop)
        else:
            # dropped attempt only: any pending admission retries on its timer
            log.debug("node %d: no route to %d for %s", self.id, pkt.dest, pkt.kind.name)

    # --- receiving ---------------------------------------------------------------

    def _admit(self, pkt: Packet) -> bool:
        """Receiver-side radio model: range and loss against the best position
        estimate for the transmitting hop."""
        d = self._peer_distance(pkt.prev_hop)
        if d is None or d > self.cfg.medium.range_m:
            return False
        return self.rng.random() >= loss_probability(d, self.cfg.medium)

    def _receive(self, raw: bytes) -> None:
        try:
            pkt = decode(raw)
        except DecodeError as exc:
            log.warning("node %d: dropping undecodable datagram: %s", self.id, exc)
            return
        if not self._admit(pkt):
            return
        if isinstance(pkt.payload, VehicleInfo):
            info = pkt.payload
            y = LANE_WIDTH_M if info.lane == Lane.LEFT else 0.0
            self.live_pos[pkt.source] = (info.x, y)
        if self.cfg.mode == "mpr":
            self._receive_mpr(pkt)
        else:
            self._receive_rba(pkt)

    def _receive_mpr(self, pkt: Packet) -> None:
        now = self._now_ms()
        if pkt.kind == PacketKind.HELLO:
            olsr.process_hello(self.olsr, pkt, now, self.rng)
            return
        if pkt.kind == PacketKind.TC:
            olsr.process_tc(self.olsr, pkt, now)
            if olsr.forward_decision(self.olsr, pkt, now) == Forwarding.CONSUME_AND_RETRANSMIT:
                copy = dataclasses.replace(pkt, prev_hop=self.id)
                self._fanout(copy, exclude=(pkt.prev_hop, pkt.source))
            return
        if pkt.kind == PacketKind.NORMAL:
            decision = olsr.forward_decision(self.olsr, pkt, now)
            if decision == Forwarding.DROP:
                return
            self.infos[pkt.source] = pkt.payload
            if decision == Forwarding.CONSUME_AND_RETRANSMIT:
                copy = dataclasses.replace(pkt, prev_hop=self.id)
                self._fanout(copy, exclude=(pkt.prev_hop, pkt.source))
            return
        if pkt.dest == self.id:
            self._consume_special(pkt)
            return
        result, next_hop = olsr.route_unicast(self.olsr, pkt, now)
        if result == RouteResult.FORWARD:
            self._send(dataclasses.replace(pkt, prev_hop=self.id), next_hop)

    def _receive_rba(self, pkt: Packet) -> None:
        if pkt.kind != PacketKind.NORMAL:
            if pkt.source == self.id:
                return
            key = (pkt.source, pkt.seq)
            if key in self.applied_specials:
                return
            self.applied_specials.add(key)
            if pkt.dest == self.id:
                self._consume_special(pkt)
            self._fanout(rba.forward_copy(pkt, self.id), exclude=(pkt.prev_hop,))
            return
        decision = rba.rba_on_receive(self.id, self.rba_table, pkt, self.rng)
        if decision == rba.Decision.FORWARD_NEW:
            self.infos[pkt.source] = pkt.payload
        if decision in (rba.Decision.FORWARD_NEW, rba.Decision.FORWARD_DUPLICATE):
            self._fanout(rba.forward_copy(pkt, self.id), exclude=(pkt.prev_hop,))

    def _consume_special(self, pkt: Packet) -> None:
        now = self._now_ms()
        out: list[Packet] = []
        merged = False
        if pkt.kind == PacketKind.JOIN and self.lead is not None:
            self.infos[pkt.source] = pkt.payload
            out = platoon.lead_on_join(self.lead, self.state, pkt, self.infos, now)
        elif pkt.kind == PacketKind.OK and self.lead is not None:
            out = platoon.lead_on_ok(self.lead, self.state, pkt, now)
        elif pkt.kind == PacketKind.LEAVE and self.lead is not None:
            out = platoon.lead_on_leave(self.lead, self.state, pkt)
        elif pkt.kind == PacketKind.ACK_JOIN:
            if self.lead is not None:
                out = platoon.lead_on_confirm(self.lead, self.state, pkt)
            else:
                out = platoon.follower_on_ack_join(self.state, pkt, self.infos)
                merged = self.state.mode == PlatoonMode.FOLLOW
        elif pkt.kind == PacketKind.NOTIFY:
            platoon.follower_on_notify(self.state, pkt)
        for reply in out:
            self._dispatch(reply)
        if merged:
            # advertise the merged position right away: peers filter on it
            self._write_registry()
            self.infos[self.id] = platoon.vehicle_info(self.state)

    # --- commands ----------------------------------------------------------------

    def command(self, verb: str) -> dict:
        verb = verb.upper()
        if self.id == LEAD_ID:
            return {"error": "IllegalState", "reason": "the lead truck takes no commands"}
        if verb == "JOIN":
            if self.state.mode != PlatoonMode.FREE:
                return {"error": "IllegalState", "reason": f"mode is {self.state.mode.name}"}
            packets = platoon.follower_request_join(self.state, self._now_ms())
        elif verb == "LEAVE":
            if self.state.mode != PlatoonMode.FOLLOW:
                return {"error": "IllegalState", "reason": f"mode is {self.state.mode.name}"}
            packets = platoon.follower_leave(self.state)
        else:
            return {"error": "UnknownVerb", "verb": verb}
        for pkt in packets:
            self._dispatch(pkt)
        return {"ok": True, "verb": verb, "node": self.id}

    def _handle_stdin_line(self, line: str) -> bool:
        parts = line.split()
        if not parts:
            return True
        verb = parts[0].upper()
        if verb == "QUIT":
            return False
        if verb == "TABLE":
            if self.olsr is None:
                print("(rba mode: no neighbor tables)", flush=True)
            else:
                print(olsr.format_neighbor_table(self.olsr), flush=True)
            return True
        print(json.dumps(self.command(verb)), flush=True)
        return True

    # --- main loop ------------------------------------------------------------------

    def _now_ms(self) -> int:
        return int((time.monotonic() - self._t0) * 1000)

    def summary(self) -> dict:
        out = {"node": self.id, "mode": self.state.mode.name, "x": round(self.state.dyn.pos.x, 2)}
        if self.lead is not None:
            out["mode"] = "LEAD"
            out["train"] = list(self.lead.train)
        return out

    def run(self, duration_s: Optional[float] = None) -> dict:
        self.check_spawn_order()
        self.sock.bind((self.host, self.port))
        self.sock.setblocking(False)
        self._t0 = time.monotonic()
        self._write_registry()
        self._read_registry()

        t = self.cfg.timers
        deadlines = {"tick": 0, "hello": 0, "tc": 0, "read": 0, "write": t.registry_write_s * 1000}
        use_stdin = sys.stdin is not None and not sys.stdin.closed
        self._running = True
        while self._running:
            now = self._now_ms()
            if duration_s is not None and now >= duration_s * 1000:
                break
            next_deadline = min(deadlines.values())
            timeout = max((next_deadline - now) / 1000.0, 0.0)
            readers = [self.sock]
            if use_stdin:
                readers.append(sys.stdin)
            try:
                ready, _, _ = select.select(readers, [], [], min(timeout, 0.05))
            except (OSError, ValueError):
                use_stdin = False
                continue
            for fd in ready:
                if fd is self.sock:
                    while True:
                        try:
                            raw, _ = self.sock.recvfrom(65535)
                        except BlockingIOError:
                            break
                        self._receive(raw)
                else:
                    line = sys.stdin.readline()
                    if not line:
                        use_stdin = False  # EOF: keep running headless
                    elif not self._handle_stdin_line(line):
                        self._running = False

            now = self._now_ms()
            if now >= deadlines["read"]:
                deadlines["read"] = now + t.registry_read_ms
                self._read_registry()
            if now >= deadlines["tick"]:
                deadlines["tick"] = now + t.normal_ms
                self._tick(t.normal_ms / 1000.0, now)
            if self.olsr is not None and now >= deadlines["hello"]:
                deadlines["hello"] = now + t.hello_ms
                olsr.purge_expired(self.olsr, now, self.rng)
                hello = olsr.generate_hello(self.olsr)
                for target in self._in_range_peers():
                    self._send(hello, target)
            if self.olsr is not None and now >= deadlines["tc"]:
                deadlines["tc"] = now + t.tc_ms
                tc = olsr.generate_tc(self.olsr)
                if tc is not None:
                    self._fanout(tc)
            if now >= deadlines["write"]:
                deadlines["write"] = now + t.registry_write_s * 1000
                self._write_registry()
            if self.join_at_s is not None:
                # keep nudging while FREE: each attempt parks us in FORM until
                # it is granted or expires, so this cannot flood the lead
                if now >= self.join_at_s * 1000 and self.state.mode == PlatoonMode.FREE:
                    self.command("JOIN")

        self.sock.close()
        return self.summary()

    def _tick(self, dt_s: float, now: int) -> None:
        for pkt in platoon.vehicle_tick(self.state, dt_s, self.infos, now, self.rng):
            self._dispatch(pkt)
        if self.lead is not None:
            for pkt in platoon.lead_tick(self.lead, self.state, now):
                self._dispatch(pkt)
        self.infos[self.id] = platoon.vehicle_info(self.state)
        beacon = Packet(
            PacketKind.NORMAL,
            self.state.seq.next_seq(PacketKind.NORMAL),
            self.id,
            self.id,
            BROADCAST,
            platoon.vehicle_info(self.state),
        )
        self._fanout(beacon)


def build_parser(add_help: bool = True) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roadtrain-node",
        description="run one vehicle as a UDP process",
        add_help=add_help,
    )
    parser.add_argument("--id", type=int, required=True, help="node id (1 = lead truck)")
    parser.add_argument("--registry", required=True, help="shared registry file path")
    parser.add_argument("--config", help="scenario config file")
    parser.add_argument("--mode", choices=("rba", "mpr"))
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, help="bind port (default: port base + id)")
    parser.add_argument("--port-base", type=int, default=DEFAULT_PORT_BASE)
    parser.add_argument("--duration", type=float, help="exit after this many seconds")
    parser.add_argument("--join-at", type=float, help="request a join this many seconds in")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--x-offset", type=float)
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def run_parsed(args: argparse.Namespace) -> int:
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    cfg.scripted = False
    if args.mode:
        cfg.mode = args.mode
    if args.seed is not None:
        cfg.seed = args.seed
    if args.x_offset is not None:
        cfg.x_offset = args.x_offset
    node = UdpNode(
        args.id,
        cfg,
        args.registry,
        host=args.host,
        port=args.port,
        port_base=args.port_base,
        join_at_s=args.join_at,
    )
    summary = node.run(duration_s=args.duration)
    print(json.dumps(summary), flush=True)
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    return run_parsed(build_parser().parse_args(argv))


if __name__ == "__main__":
    raise SystemExit(main())
