"""Neighbor sensing, MPR selection, TC flooding and BFS unicast routing.

All tables live in one OlsrState owned by a single node's event loop.
Timestamps are milliseconds (virtual or wall, the math is the same).
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field
from enum import Enum, auto

from .packets import (
    HelloPayload,
    LinkStatus,
    Packet,
    PacketKind,
    TcPayload,
)


class IgnoreSelf(ValueError):
    """A node's own HELLO must never be processed by itself."""


class Forwarding(Enum):
    DROP = auto()
    CONSUME = auto()
    CONSUME_AND_RETRANSMIT = auto()


class RouteResult(Enum):
    DELIVER_LOCAL = auto()
    FORWARD = auto()
    NO_ROUTE = auto()


@dataclass(slots=True)
class OneHopEntry:
    neighbor: int
    status: LinkStatus
    expires_at: float


@dataclass(slots=True)
class TopologyEntry:
    originator: int
    selectors: set[int]
    last_seq: int
    expires_at: float


@dataclass(slots=True)
class RouteEntry:
    dest: int
    next_hop: int
    distance: int


@dataclass
class OlsrConfig:
    hello_period_ms: float = 20.0
    tc_period_ms: float = 30.0
    neighbor_hold_ms: float = 100.0  # 5x HELLO period
    topology_hold_ms: float = 90.0   # 3x TC period
    # Lets a stable topology's repeated TC (same seq) re-flood periodically,
    # otherwise remote topology entries would expire between seq bumps.
    tc_dup_hold_ms: float = 60.0
    deterministic_mpr: bool = False


class OlsrState:
    """Every table one node keeps: neighbors, selectors, topology, routes."""

    def __init__(self, self_id: int, cfg: OlsrConfig | None = None):
        self.self_id = self_id
        self.cfg = cfg or OlsrConfig()
        self.one_hop: dict[int, OneHopEntry] = {}
        self.two_hop: dict[int, set[int]] = {}
        self.table_seq = 0
        self.selectors: set[int] = set()
        self.topology: dict[int, TopologyEntry] = {}
        self.dup_normal: dict[int, int] = {}
        self.dup_tc: dict[int, tuple[int, float]] = {}
        self.routes: dict[int, RouteEntry] = {}
        self._routes_dirty = True

    def mpr_set(self) -> set[int]:
        return {n for n, e in self.one_hop.items() if e.status == LinkStatus.MPR}

    def bi_neighbors(self) -> list[int]:
        """BI and MPR one-hop neighbors, ascending; UNI links never carry data."""
        return sorted(
            n for n, e in self.one_hop.items() if e.status != LinkStatus.UNI
        )


def data_neighbors(state: OlsrState) -> list[int]:
    return state.bi_neighbors()


def _status_snapshot(state: OlsrState):
    return {n: e.status for n, e in state.one_hop.items()}


def _selection_inputs(state: OlsrState):
    bi = frozenset(n for n, e in state.one_hop.items() if e.status != LinkStatus.UNI)
    two = frozenset((m, frozenset(ats)) for m, ats in state.two_hop.items())
    return bi, two


def select_mprs(state: OlsrState, rng: random.Random, deterministic: bool | None = None) -> set[int]:
    """Cover every two-hop neighbor, fewest-access-through entries first."""
    if deterministic is None:
        deterministic = state.cfg.deterministic_mpr
    chosen: set[int] = set()
    order = sorted(state.two_hop.items(), key=lambda kv: (len(kv[1]), kv[0]))
    for _, access_through in order:
        if access_through & chosen:
            continue
        if deterministic:
            chosen.add(min(access_through))
        else:
            chosen.add(rng.choice(sorted(access_through)))
    return chosen


def _relabel_and_bump(
    state, status_before, mprs_before, selectors_before, rng, deterministic, inputs_before
):
    """Re-select MPRs if the structure moved, then bump table_seq on any change."""
    if _selection_inputs(state) != inputs_before:
        new_mprs = select_mprs(state, rng, deterministic)
        for n, entry in state.one_hop.items():
            if n in new_mprs:
                entry.status = LinkStatus.MPR
            elif entry.status == LinkStatus.MPR:
                entry.status = LinkStatus.BI
    changed = (
        _status_snapshot(state) != status_before
        or state.mpr_set() != mprs_before
        # the selector set is the TC body: re-announcing it under an unchanged
        # seq would let receivers discard the new membership as a duplicate
        or state.selectors != selectors_before
    )
    if changed:
        state.table_seq += 1
        state._routes_dirty = True
    return changed


def purge_expired(state: OlsrState, now: float, rng: random.Random,
                  deterministic: bool | None = None) -> bool:
    """Drop overdue neighbor and topology entries; reselect MPRs if needed."""
    expired = [n for n, e in state.one_hop.items() if e.expires_at <= now]
    topo_expired = [o for o, e in state.topology.items() if e.expires_at <= now]
    for orig in topo_expired:
        del state.topology[orig]
        state._routes_dirty = True
    if not expired:
        return False

    status_before = _status_snapshot(state)
    mprs_before = state.mpr_set()
    selectors_before = set(state.selectors)
    inputs_before = _selection_inputs(state)
    for n in expired:
        del state.one_hop[n]
        state.selectors.discard(n)
        for m in list(state.two_hop):
            state.two_hop[m].discard(n)
            if not state.two_hop[m]:
                del state.two_hop[m]
    return _relabel_and_bump(
        state, status_before, mprs_before, selectors_before, rng, deterministic, inputs_before
    )


def generate_hello(state: OlsrState) -> Packet:
    payload = HelloPayload(
        [(n, state.one_hop[n].status) for n in sorted(state.one_hop)]
    )
    return Packet(PacketKind.HELLO, 0, state.self_id, state.self_id, 0xFFFF, payload)


def process_hello(state: OlsrState, hello: Packet, now: float, rng: random.Random,
                  deterministic: bool | None = None) -> bool:
    """The neighbor-sensing procedure, in the published order of steps."""
    sender = hello.source
    if sender == state.self_id:
        raise IgnoreSelf(sender)
    purge_expired(state, now, rng, deterministic)

    status_before = _status_snapshot(state)
    mprs_before = state.mpr_set()
    selectors_before = set(state.selectors)
    inputs_before = _selection_inputs(state)
    listed: dict[int, LinkStatus] = dict(hello.payload.neighbors)

    # (1) the sender is one-hop from now on, never two-hop
    state.two_hop.pop(sender, None)

    # (2) link status from whether the sender hears us
    prior = state.one_hop.get(sender)
    if state.self_id not in listed:
        status = LinkStatus.UNI
    elif prior is not None and prior.status == LinkStatus.MPR:
        status = LinkStatus.MPR
    else:
        status = LinkStatus.BI
    state.one_hop[sender] = OneHopEntry(sender, status, now + state.cfg.neighbor_hold_ms)
    if listed.get(state.self_id) == LinkStatus.MPR:
        state.selectors.add(sender)
    else:
        state.selectors.discard(sender)

    sender_bi = status != LinkStatus.UNI
    listed_bi = {n for n, st in listed.items() if st != LinkStatus.UNI}

    # (3) drop stale access-through claims made via the sender
    for m in list(state.two_hop):
        if sender in state.two_hop[m] and (not sender_bi or m not in listed_bi):
            state.two_hop[m].discard(sender)
            if not state.two_hop[m]:
                del state.two_hop[m]

    # (4) the sender's bidirectional neighbors become our two-hop set
    if sender_bi:
        for n in listed_bi:
            if n == state.self_id or n in state.one_hop:
                continue
            state.two_hop.setdefault(n, set()).add(sender)

    # (5) reselect and relabel on any change
    changed = _relabel_and_bump(
        state, status_before, mprs_before, selectors_before, rng, deterministic, inputs_before
    )
    state.one_hop[sender].expires_at = now + state.cfg.neighbor_hold_ms
    return changed


def generate_tc(state: OlsrState) -> Packet | None:
    """TC declares only the MPR-selector set; silent when nobody selected us."""
    if not state.selectors:
        return None
    payload = TcPayload(sorted(state.selectors), state.table_seq)
    return Packet(
        PacketKind.TC, state.table_seq, state.self_id, state.self_id, 0xFFFF, payload
    )


def process_tc(state: OlsrState, tc: Packet, now: float) -> None:
    originator = tc.source
    payload: TcPayload = tc.payload
    entry = state.topology.get(originator)
    hold = now + state.cfg.topology_hold_ms
    if entry is None:
        state.topology[originator] = TopologyEntry(
            originator, set(payload.selectors), payload.tc_seq, hold
        )
        state._routes_dirty = True
    elif payload.tc_seq > entry.last_seq:
        entry.selectors = set(payload.selectors)
        entry.last_seq = payload.tc_seq
        entry.expires_at = hold
        state._routes_dirty = True
    elif payload.tc_seq == entry.last_seq:
        entry.expires_at = hold


def forward_decision(state: OlsrState, pkt: Packet, now: float) -> Forwarding:
    """Duplicate suppression plus the MPR retransmission rule for NORMAL/TC."""
    if pkt.source == state.self_id:
        return Forwarding.DROP
    if pkt.kind == PacketKind.NORMAL:
        last = state.dup_normal.get(pkt.source)
        if last is not None and pkt.seq <= last:
            return Forwarding.DROP
        state.dup_normal[pkt.source] = pkt.seq
    else:  # TC
        cached = state.dup_tc.get(pkt.source)
        if cached is not None:
            max_seq, fresh_until = cached
            if pkt.seq < max_seq:
                return Forwarding.DROP
            if pkt.seq == max_seq and now < fresh_until:
                return Forwarding.DROP
        state.dup_tc[pkt.source] = (pkt.seq, now + state.cfg.tc_dup_hold_ms)
    if pkt.prev_hop in state.selectors:
        return Forwarding.CONSUME_AND_RETRANSMIT
    return Forwarding.CONSUME


def compute_routes(state: OlsrState, now: float) -> dict[int, RouteEntry]:
    """BFS over the relay graph: TC selector edges plus our own BI links."""
    for orig in [o for o, e in state.topology.items() if e.expires_at <= now]:
        del state.topology[orig]

    self_id = state.self_id
    adj: dict[int, set[int]] = {}
    for orig, entry in state.topology.items():
        if orig == self_id:
            continue
        for sel in entry.selectors:
            if sel == self_id or sel == orig:
                continue
            adj.setdefault(orig, set()).add(sel)
            adj.setdefault(sel, set()).add(orig)
    # First hops may only use live bidirectional links of our own.
    adj[self_id] = set(state.bi_neighbors())

    routes: dict[int, RouteEntry] = {}
    dist = {self_id: 0}
    first_hop: dict[int, int] = {}
    queue = deque([self_id])
    while queue:
        u = queue.popleft()
        for v in sorted(adj.get(u, ())):
            if v in dist:
                continue
            dist[v] = dist[u] + 1
            first_hop[v] = v if u == self_id else first_hop[u]
            routes[v] = RouteEntry(v, first_hop[v], dist[v])
            queue.append(v)
    return routes


def route_unicast(state: OlsrState, pkt: Packet, now: float) -> tuple[RouteResult, int | None]:
    if pkt.dest == state.self_id:
        return RouteResult.DELIVER_LOCAL, None
    if state._routes_dirty:
        state.routes = compute_routes(state, now)
        state._routes_dirty = False
    entry = state.routes.get(pkt.dest)
    if entry is None:
        return RouteResult.NO_ROUTE, None
    return RouteResult.FORWARD, entry.next_hop


def format_neighbor_table(state: OlsrState) -> str:
    """Debug dump in the two-section layout: one-hop statuses, two-hop access."""
    lines = ["One hop neighbor   Link status"]
    for n in sorted(state.one_hop):
        lines.append(f"{n:<19}{state.one_hop[n].status.name}")
    lines.append("Two hop neighbor   Access through")
    for m in sorted(state.two_hop):
        access = ", ".join(str(a) for a in sorted(state.two_hop[m]))
        lines.append(f"{m:<19}{access}")
    return "\n".join(lines)
