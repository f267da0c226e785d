"""Reliable broadcast by probabilistic re-flooding.

Each node keeps one cache entry per source with the largest accepted
sequence number and a broadcast count; duplicates are re-sent with
exponentially decaying probability.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from enum import Enum, auto

from .packets import Packet


class Decision(Enum):
    DISCARD = auto()          # own packet came back
    FORWARD_NEW = auto()      # first sighting, forward to all but prev_hop
    FORWARD_DUPLICATE = auto()
    DROP_DUPLICATE = auto()


@dataclass(slots=True)
class CacheEntry:
    source: int
    max_seq: int
    broadcast_number: int


CacheTable = dict[int, CacheEntry]


def rebroadcast_probability(bn: int) -> float:
    """Chance of re-sending a packet that was already broadcast bn times."""
    return 2.0 ** -bn


def rba_on_receive(self_id: int, table: CacheTable, pkt: Packet, rng: random.Random) -> Decision:
    if pkt.source == self_id:
        return Decision.DISCARD
    entry = table.get(pkt.source)
    if entry is None or entry.max_seq < pkt.seq:
        table[pkt.source] = CacheEntry(pkt.source, pkt.seq, 1)
        return Decision.FORWARD_NEW
    # Anything with seq <= max_seq counts as heard again: stale copies bump bn too.
    entry.broadcast_number += 1
    if rng.random() < rebroadcast_probability(entry.broadcast_number - 1):
        return Decision.FORWARD_DUPLICATE
    return Decision.DROP_DUPLICATE


def forward_copy(pkt: Packet, self_id: int) -> Packet:
    """The retransmitted packet: same source and seq, prev_hop rewritten."""
    return replace(pkt, prev_hop=self_id)
