"""Deterministic in-process scenario engine.

A single virtual clock (1 ms resolution) drives every node's timers and all
packet deliveries from one event heap; ties resolve by insertion order, so a
run is a pure function of (config, seed, command trace).
"""

from __future__ import annotations

import dataclasses
import heapq
import logging
import random
import threading
import time
from typing import Callable, Iterable, Optional

from . import olsr, platoon, rba
from .config import (
    ScenarioConfig,
    effective_leave_at,
    follower_ids,
    resolved_lengths,
    validate,
)
from .medium import InProcessMedium, Position
from .metrics import EchoSampler, MetricsCollector, RunReport
from .olsr import Forwarding, OlsrConfig, OlsrState, RouteResult
from .packets import (
    BROADCAST,
    Lane,
    Packet,
    PacketKind,
    PlatoonMode,
    VehicleInfo,
    encoded_size,
)
from .platoon import (
    LEAD_ID,
    LeadState,
    ScenarioScript,
    VehicleDynamics,
    VehicleState,
)

log = logging.getLogger(__name__)

SCRIPT_PERIOD_MS = 500
LEAD_START_X = 10.0
FOLLOWER_SPAN_M = 300.0


class OverlapError(RuntimeError):
    """Two same-lane vehicles got closer than their half-length sum."""


class SimNode:
    """One vehicle's protocol state bundle inside the in-process engine."""

    def __init__(self, node_id: int, state: VehicleState, rng: random.Random):
        self.id = node_id
        self.state = state
        self.rng = rng
        self.infos: dict[int, VehicleInfo] = {node_id: platoon.vehicle_info(state)}
        self.olsr: Optional[OlsrState] = None
        self.rba_table: dict[int, rba.CacheEntry] = {}
        self.applied_specials: set[tuple[int, int]] = set()
        self.sampler: Optional[EchoSampler] = None
        self.lead: Optional[LeadState] = None


def _initial_nodes(cfg: ScenarioConfig) -> list[tuple[int, Position, float, float]]:
    """(node, position, velocity, length) rows; lead first, then id order.

    Lower follower ids start farther ahead: the script joins ids in order, so
    the farthest vehicle is admitted first and the radio chain between the
    remaining free vehicles and the train is never cut in the middle.
    """
    rows = [(LEAD_ID, Position(LEAD_START_X + cfg.x_offset, Lane.RIGHT), 30.0, 10.0)]
    lengths = resolved_lengths(cfg)
    n = cfg.n_followers
    # spacing capped below radio range so the initial relay chain never sits
    # float-exact on the boundary (300/(n+1) hits it at n=2)
    spacing = min(FOLLOWER_SPAN_M / (n + 1), 0.8 * cfg.medium.range_m)
    for i, node in enumerate(follower_ids(cfg)):
        x = cfg.x_offset + spacing * (n - i)
        rows.append((node, Position(x, Lane.LEFT), cfg.follower_speed, lengths[i]))
    return rows


class Engine:
    def __init__(
        self,
        cfg: ScenarioConfig,
        command_trace: Optional[Iterable[tuple[int, int, str]]] = None,
    ):
        validate(cfg)
        self.cfg = cfg
        self.now_ms = 0
        self._heap: list[tuple[int, int, Callable[[], None]]] = []
        self._counter = 0
        self._lock = threading.RLock()
        self._stop = False
        self._pause = threading.Event()
        self._dt_s = cfg.timers.normal_ms / 1000.0

        medium_cfg = cfg.medium
        if medium_cfg.rng_seed == 0:
            medium_cfg = dataclasses.replace(medium_cfg, rng_seed=cfg.seed * 1_000_003 + 999_983)
        self.medium = InProcessMedium(medium_cfg, self._on_delivery)
        self.metrics = MetricsCollector(
            lead=LEAD_ID, keep_events=cfg.keep_events, medium_cfg=medium_cfg
        )

        ocfg = OlsrConfig(
            hello_period_ms=cfg.timers.hello_ms,
            tc_period_ms=cfg.timers.tc_ms,
            neighbor_hold_ms=5 * cfg.timers.hello_ms,
            topology_hold_ms=3 * cfg.timers.tc_ms,
            tc_dup_hold_ms=2 * cfg.timers.tc_ms,
        )
        self.nodes: dict[int, SimNode] = {}
        for node_id, pos, velocity, length in _initial_nodes(cfg):
            state = VehicleState(
                node_id,
                VehicleDynamics(pos, velocity, length=length),
                cruise_mps=velocity,
            )
            node = SimNode(node_id, state, random.Random(cfg.seed * 1_000_003 + node_id))
            if cfg.mode == "mpr":
                node.olsr = OlsrState(node_id, ocfg)
                if node_id != LEAD_ID:
                    node.sampler = EchoSampler(rate=cfg.echo_rate, lead=LEAD_ID)
            if node_id == LEAD_ID:
                node.lead = LeadState()
            self.nodes[node_id] = node
            self.medium.register(node_id, pos)

        self.script: Optional[ScenarioScript] = None
        if cfg.scripted:
            self.script = ScenarioScript(follower_ids(cfg), leave_at_s=effective_leave_at(cfg))

        self._trace = sorted(command_trace or [])
        self._trace_idx = 0
        self.command_log: list[tuple[int, int, str]] = []
        self._snap_lock = threading.Lock()
        self._snapshot: dict = {}
        self._publish_snapshot()  # readable before the first step runs

        self._schedule(0, self._step)
        if cfg.mode == "mpr":
            self._schedule(0, self._hello_step)
            self._schedule(0, self._tc_step)
        if self.script is not None:
            self._schedule(0, self._script_step)

    # --- scheduling -------------------------------------------------------

    def _schedule(self, t_ms: int, fn: Callable[[], None]) -> None:
        self._counter += 1
        heapq.heappush(self._heap, (t_ms, self._counter, fn))

    def _on_delivery(self, receiver: int, pkt: Packet, t_ms: int) -> None:
        self._schedule(t_ms, lambda: self._receive(receiver, pkt))

    def run(self, realtime: bool = False) -> RunReport:
        end = int(self.cfg.duration_s * 1000)
        wall_start = time.monotonic()
        while self._heap and not self._stop:
            if self._pause.is_set():
                paused_at = time.monotonic()
                while self._pause.is_set() and not self._stop:
                    time.sleep(0.01)
                wall_start += time.monotonic() - paused_at
                continue
            t_ms = self._heap[0][0]
            if t_ms > end:
                break
            if realtime:
                lag = wall_start + t_ms / 1000.0 - time.monotonic()
                if lag > 0:
                    time.sleep(lag)
            _, _, fn = heapq.heappop(self._heap)
            with self._lock:
                self.now_ms = t_ms
                fn()
        self.now_ms = end
        return self.report()

    def stop(self) -> None:
        self._stop = True

    def pause(self) -> None:
        self._pause.set()

    def resume(self) -> None:
        self._pause.clear()

    def report(self) -> RunReport:
        return self.metrics.report(
            self.cfg.mode, self.cfg.n_followers + 1, self.cfg.duration_s
        )

    # --- recurring events ---------------------------------------------------

    def _step(self) -> None:
        t = self.now_ms
        self._drain_trace()
        for node_id in sorted(self.nodes):
            node = self.nodes[node_id]
            out = platoon.vehicle_tick(node.state, self._dt_s, node.infos, t, node.rng)
            self.medium.update_position(node_id, node.state.dyn.pos)
            node.infos[node_id] = platoon.vehicle_info(node.state)
            for pkt in out:
                self._dispatch(node, pkt)
            if node.lead is not None:
                for pkt in platoon.lead_tick(node.lead, node.state, t):
                    self._dispatch(node, pkt)
        self._assert_no_overlap()
        for node_id in sorted(self.nodes):
            self._originate_normal(self.nodes[node_id])
        self._publish_snapshot()
        self._schedule(t + self.cfg.timers.normal_ms, self._step)

    def _hello_step(self) -> None:
        for node_id in sorted(self.nodes):
            node = self.nodes[node_id]
            olsr.purge_expired(node.olsr, self.now_ms, node.rng)
            self._send(node_id, olsr.generate_hello(node.olsr), BROADCAST)
        self._schedule(self.now_ms + self.cfg.timers.hello_ms, self._hello_step)

    def _tc_step(self) -> None:
        for node_id in sorted(self.nodes):
            node = self.nodes[node_id]
            pkt = olsr.generate_tc(node.olsr)
            if pkt is None:
                continue
            for target in olsr.data_neighbors(node.olsr):
                self._send(node_id, pkt, target)
        self._schedule(self.now_ms + self.cfg.timers.tc_ms, self._tc_step)

    def _script_step(self) -> None:
        modes = {n: self.nodes[n].state.mode for n in self.nodes if n != LEAD_ID}
        for node_id, verb in self.script.commands(self.now_ms / 1000.0, modes):
            self.command_log.append((self.now_ms, node_id, verb.upper()))
            self._apply_command(node_id, verb)
        self._schedule(self.now_ms + SCRIPT_PERIOD_MS, self._script_step)

    def _drain_trace(self) -> None:
        while self._trace_idx < len(self._trace) and self._trace[self._trace_idx][0] <= self.now_ms:
            _, node_id, verb = self._trace[self._trace_idx]
            self._trace_idx += 1
            self.command_log.append((self.now_ms, node_id, verb))
            self._apply_command(node_id, verb)

    # --- commands -----------------------------------------------------------

    def submit_command(self, verb: str, node_id: int) -> dict:
        """Thread-safe entry point for the control server; runs under the engine lock."""
        with self._lock:
            result = self._apply_command(node_id, verb)
            if "error" not in result:
                self.command_log.append((self.now_ms, node_id, verb.upper()))
            return result

    def _apply_command(self, node_id: int, verb: str) -> dict:
        verb = verb.upper()
        node = self.nodes.get(node_id)
        if node is None:
            return {"error": "UnknownNode", "node": node_id}
        if node_id == LEAD_ID:
            return {"error": "IllegalState", "reason": "the lead truck takes no commands"}
        state = node.state
        if verb == "JOIN":
            if state.mode != PlatoonMode.FREE:
                return {"error": "IllegalState", "reason": f"mode is {state.mode.name}"}
            packets = platoon.follower_request_join(state, self.now_ms)
        elif verb == "LEAVE":
            if state.mode != PlatoonMode.FOLLOW:
                return {"error": "IllegalState", "reason": f"mode is {state.mode.name}"}
            packets = platoon.follower_leave(state)
            self.medium.update_position(node_id, state.dyn.pos)
        else:
            return {"error": "UnknownVerb", "verb": verb}
        for pkt in packets:
            self._dispatch(node, pkt)
        return {"ok": True, "verb": verb, "node": node_id, "t_ms": self.now_ms}

    # --- transmission paths ---------------------------------------------------

    def _send(self, sender: int, pkt: Packet, to: int) -> None:
        self.metrics.on_send(sender, pkt, encoded_size(pkt), self.now_ms)
        for outcome in self.medium.transmit(sender, to, pkt, self.now_ms):
            self.metrics.on_link_attempt(outcome.distance, outcome.delivered)

    def _originate_normal(self, node: SimNode) -> None:
        state = node.state
        pkt = Packet(
            PacketKind.NORMAL,
            state.seq.next_seq(PacketKind.NORMAL),
            node.id,
            node.id,
            BROADCAST,
            platoon.vehicle_info(state),
        )
        self.metrics.on_origination(pkt, self._reachable(node.id))
        for target in self._fanout_targets(node):
            self._send(node.id, pkt, target)

    def _fanout_targets(self, node: SimNode) -> list[int]:
        if self.cfg.mode == "mpr":
            return olsr.data_neighbors(node.olsr)
        return self.medium.neighbors_of(node.id)

    def _dispatch(self, node: SimNode, pkt: Packet) -> None:
        """Route a locally generated packet (all are unicast kinds)."""
        if self.cfg.mode == "rba":
            for target in self.medium.neighbors_of(node.id):
                self._send(node.id, pkt, target)
            return
        result, next_hop = olsr.route_unicast(node.olsr, pkt, self.now_ms)
        if result == RouteResult.FORWARD:
            self._send(node.id, pkt, next_hop)
            return
        # dropped attempt only: any pending admission retries on its timer
        log.debug("node %d: no route to %d for %s", node.id, pkt.dest, pkt.kind.name)

    # --- reception ------------------------------------------------------------

    def _receive(self, receiver: int, pkt: Packet) -> None:
        node = self.nodes[receiver]
        self.metrics.on_receive(receiver, pkt, encoded_size(pkt), self.now_ms)
        if self.cfg.mode == "mpr":
            self._receive_mpr(node, pkt)
        else:
            self._receive_rba(node, pkt)

    def _receive_mpr(self, node: SimNode, pkt: Packet) -> None:
        state = node.olsr
        if pkt.kind == PacketKind.HELLO:
            olsr.process_hello(state, pkt, self.now_ms, node.rng)
            return
        if pkt.kind == PacketKind.TC:
            olsr.process_tc(state, pkt, self.now_ms)
            if olsr.forward_decision(state, pkt, self.now_ms) == Forwarding.CONSUME_AND_RETRANSMIT:
                self._relay(node, pkt)
            return
        if pkt.kind == PacketKind.NORMAL:
            decision = olsr.forward_decision(state, pkt, self.now_ms)
            if decision == Forwarding.DROP:
                return
            self._consume_normal(node, pkt)
            if decision == Forwarding.CONSUME_AND_RETRANSMIT:
                self._relay(node, pkt)
            return
        if pkt.dest == node.id:
            self._consume_special(node, pkt)
            return
        result, next_hop = olsr.route_unicast(state, pkt, self.now_ms)
        if result == RouteResult.FORWARD:
            self._send(node.id, dataclasses.replace(pkt, prev_hop=node.id), next_hop)
        else:
            log.debug("node %d drops %s for %d: no route", node.id, pkt.kind.name, pkt.dest)

    def _receive_rba(self, node: SimNode, pkt: Packet) -> None:
        if pkt.kind != PacketKind.NORMAL:
            # one-shot control traffic floods once per node: probabilistic
            # thinning is for the beacon stream, whose next copy is 10 ms away
            if pkt.source == node.id:
                return
            key = (pkt.source, pkt.seq)
            if key in node.applied_specials:
                return
            node.applied_specials.add(key)
            if pkt.dest == node.id:
                self._consume_special(node, pkt)
            copy = rba.forward_copy(pkt, node.id)
            for target in self.medium.neighbors_of(node.id):
                if target != pkt.prev_hop:
                    self._send(node.id, copy, target)
            return
        decision = rba.rba_on_receive(node.id, node.rba_table, pkt, node.rng)
        if decision == rba.Decision.FORWARD_NEW:
            self._consume_normal(node, pkt)
        if decision in (rba.Decision.FORWARD_NEW, rba.Decision.FORWARD_DUPLICATE):
            copy = rba.forward_copy(pkt, node.id)
            for target in self.medium.neighbors_of(node.id):
                if target == pkt.prev_hop:
                    continue
                self._send(node.id, copy, target)

    def _relay(self, node: SimNode, pkt: Packet) -> None:
        copy = dataclasses.replace(pkt, prev_hop=node.id)
        for target in olsr.data_neighbors(node.olsr):
            if target == pkt.prev_hop or target == pkt.source:
                continue
            self._send(node.id, copy, target)

    def _consume_normal(self, node: SimNode, pkt: Packet) -> None:
        node.infos[pkt.source] = pkt.payload
        if node.sampler is not None and node.sampler.decide(pkt):
            echo = dataclasses.replace(pkt, prev_hop=node.id)
            self._send(node.id, echo, pkt.source)

    def _consume_special(self, node: SimNode, pkt: Packet) -> None:
        state, t = node.state, self.now_ms
        out: list[Packet] = []
        merged = False
        if pkt.kind == PacketKind.JOIN:
            if node.lead is None:
                log.debug("node %d ignores JOIN (not the lead)", node.id)
                return
            node.infos[pkt.source] = pkt.payload
            out = platoon.lead_on_join(node.lead, state, pkt, node.infos, t)
        elif pkt.kind == PacketKind.OK:
            if node.lead is not None:
                out = platoon.lead_on_ok(node.lead, state, pkt, t)
        elif pkt.kind == PacketKind.LEAVE:
            if node.lead is not None:
                out = platoon.lead_on_leave(node.lead, state, pkt)
        elif pkt.kind == PacketKind.ACK_JOIN:
            if node.lead is not None:
                out = platoon.lead_on_confirm(node.lead, state, pkt)
            else:
                out = platoon.follower_on_ack_join(state, pkt, node.infos)
                merged = state.mode == PlatoonMode.FOLLOW
        elif pkt.kind == PacketKind.NOTIFY:
            platoon.follower_on_notify(state, pkt)
        for reply in out:
            self._dispatch(node, reply)
        if merged:
            # radio moves only after the confirmation left the old spot;
            # otherwise the reply's first hop fails its own range check
            self.medium.update_position(node.id, state.dyn.pos)
            node.infos[node.id] = platoon.vehicle_info(state)

    # --- invariants and views ---------------------------------------------------

    def _reachable(self, source: int) -> int:
        seen = {source}
        stack = [source]
        while stack:
            for neighbor in self.medium.neighbors_of(stack.pop()):
                if neighbor not in seen:
                    seen.add(neighbor)
                    stack.append(neighbor)
        return len(seen) - 1

    def _assert_no_overlap(self) -> None:
        lanes: dict[Lane, list[SimNode]] = {}
        for node in self.nodes.values():
            lanes.setdefault(node.state.dyn.pos.lane, []).append(node)
        for members in lanes.values():
            members.sort(key=lambda n: n.state.dyn.pos.x)
            for back, front in zip(members, members[1:]):
                dx = front.state.dyn.pos.x - back.state.dyn.pos.x
                limit = (front.state.dyn.length + back.state.dyn.length) / 2
                if dx < limit:
                    raise OverlapError(
                        f"vehicles {back.id} and {front.id} overlap at t={self.now_ms} ms"
                        f" (dx={dx:.2f} < {limit:.2f})"
                    )

    def _publish_snapshot(self) -> None:
        vehicles = []
        for node_id in sorted(self.nodes):
            node = self.nodes[node_id]
            d = node.state.dyn
            vehicles.append(
                {
                    "id": node_id,
                    "x": round(d.pos.x, 3),
                    "lane": d.pos.lane.name,
                    "v": round(d.velocity, 3),
                    "mode": "LEAD" if node_id == LEAD_ID else node.state.mode.name,
                }
            )
        mpr_links = []
        if self.cfg.mode == "mpr":
            for node_id in sorted(self.nodes):
                for relay in sorted(self.nodes[node_id].olsr.mpr_set()):
                    mpr_links.append([node_id, relay])
        snap = {
            "t_ms": self.now_ms,
            "vehicles": vehicles,
            "train": list(self.nodes[LEAD_ID].lead.train),
            "mode": self.cfg.mode,
            "mpr_links": mpr_links,
        }
        with self._snap_lock:
            self._snapshot = snap

    def snapshot(self) -> dict:
        with self._snap_lock:
            return self._snapshot

    def neighbor_table_dump(self, node_id: int) -> str:
        node = self.nodes[node_id]
        if node.olsr is None:
            return "(rba mode: no neighbor tables)"
        return olsr.format_neighbor_table(node.olsr)
