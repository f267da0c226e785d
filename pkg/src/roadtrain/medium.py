"""Emulated wireless medium: 100 m range cutoff and distance-proportional loss.

In-process mode filters at the medium and enqueues deliveries on the event
loop for determinism; the UDP path reuses `loss_probability` on the receiver
side (see udpnode).
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Callable

from .packets import BROADCAST, Lane, Packet

LANE_WIDTH_M = 5.0
HIGHWAY_LENGTH_M = 10_000.0


class UnknownNode(KeyError):
    """Sender or point-to-point receiver is not registered with the medium."""


@dataclass(slots=True)
class Position:
    x: float
    lane: Lane

    def lateral(self) -> float:
        return LANE_WIDTH_M if self.lane == Lane.LEFT else 0.0


@dataclass
class MediumConfig:
    range_m: float = 100.0
    loss_max: float = 0.2
    per_hop_delay_ms: int = 1
    rng_seed: int = 0


@dataclass(slots=True)
class DeliveryOutcome:
    receiver: int
    delivered: bool
    distance: float


def distance(a: Position, b: Position) -> float:
    return math.hypot(a.x - b.x, a.lateral() - b.lateral())


def loss_probability(d: float, cfg: MediumConfig) -> float:
    """Linear in distance up to the range, certain loss beyond it."""
    if d > cfg.range_m:
        return 1.0
    return cfg.loss_max * d / cfg.range_m


class InProcessMedium:
    """Single-owner medium for the event-loop transport.

    `deliver` is called as deliver(receiver, pkt, t_ms) for each successful
    outcome; the caller owns scheduling and metrics.
    """

    def __init__(self, cfg: MediumConfig, deliver: Callable[[int, Packet, int], None]):
        self.cfg = cfg
        self._deliver = deliver
        self._rng = random.Random(cfg.rng_seed)
        self._positions: dict[int, Position] = {}

    def register(self, node: int, position: Position) -> None:
        self._positions[node] = position

    def unregister(self, node: int) -> None:
        self._positions.pop(node, None)

    def update_position(self, node: int, position: Position) -> None:
        if node not in self._positions:
            raise UnknownNode(node)
        self._positions[node] = position

    def position_of(self, node: int) -> Position:
        try:
            return self._positions[node]
        except KeyError:
            raise UnknownNode(node) from None

    def nodes(self) -> list[int]:
        return sorted(self._positions)

    def neighbors_of(self, node: int) -> list[int]:
        """Nodes currently within radio range, ascending id."""
        own = self.position_of(node)
        return [
            other
            for other in sorted(self._positions)
            if other != node and distance(own, self._positions[other]) <= self.cfg.range_m
        ]

    def transmit(self, sender: int, to: int, pkt: Packet, now_ms: int) -> list[DeliveryOutcome]:
        src_pos = self.position_of(sender)
        if to == BROADCAST:
            candidates = [n for n in sorted(self._positions) if n != sender]
        else:
            if to not in self._positions:
                raise UnknownNode(to)
            candidates = [to]

        outcomes = []
        for receiver in candidates:
            d = distance(src_pos, self._positions[receiver])
            if d > self.cfg.range_m:
                outcomes.append(DeliveryOutcome(receiver, False, d))
                continue
            lost = self._rng.random() < loss_probability(d, self.cfg)
            outcomes.append(DeliveryOutcome(receiver, not lost, d))
            if not lost:
                self._deliver(receiver, pkt, now_ms + self.cfg.per_hop_delay_ms)
        return outcomes
