"""Run metrics: round-trip latency at the lead truck, throughput, loss rate.

Aggregates are maintained streaming so long runs never hold per-packet
state beyond the distinct-reception sets; full event logs are opt-in.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

from .medium import MediumConfig, loss_probability
from .packets import Packet, PacketKind

log = logging.getLogger(__name__)

CSV_HEADER = "mode,n,avg_latency_ms,throughput_Bps,loss_rate,total_tx"


class NoSamples(Exception):
    """No matched round-trip pairs were collected."""


class SendRecord(NamedTuple):
    node: int
    source: int
    seq: int
    kind: PacketKind
    t_ms: int
    size: int


class ReceiveRecord(NamedTuple):
    receiver: int
    source: int
    seq: int
    kind: PacketKind
    t_ms: int
    size: int


@dataclass
class RunReport:
    mode: str
    n_vehicles: int
    avg_latency_ms: float
    throughput_bytes_per_s: float
    loss_rate: float
    total_transmissions: int


def csv_line(report: RunReport) -> str:
    return (
        f"{report.mode},{report.n_vehicles},{report.avg_latency_ms:.6f},"
        f"{report.throughput_bytes_per_s:.6f},{report.loss_rate:.6f},"
        f"{report.total_transmissions}"
    )


def format_summary(report: RunReport) -> str:
    return (
        f"mode={report.mode} vehicles={report.n_vehicles}\n"
        f"  round-trip latency : {report.avg_latency_ms:.3f} ms\n"
        f"  throughput         : {report.throughput_bytes_per_s:.1f} B/s\n"
        f"  loss rate          : {report.loss_rate:.4f}\n"
        f"  transmissions      : {report.total_transmissions}\n"
    )


@dataclass
class EchoSampler:
    """Picks which lead-originated NORMALs a follower bounces back.

    Eligible packets are those heard straight from the lead (source and
    previous hop both the lead); the 1st, 11th, 21st... eligible one is
    echoed at the default rate of 1 in 10.
    """

    rate: int = 10
    lead: int = 1
    eligible: int = 0

    def decide(self, pkt: Packet) -> bool:
        if pkt.kind != PacketKind.NORMAL:
            return False
        if pkt.source != self.lead or pkt.prev_hop != self.lead:
            return False
        self.eligible += 1
        return (self.eligible - 1) % self.rate == 0


class MetricsCollector:
    """Per-run aggregate counters fed by the engine's send/receive hooks."""

    def __init__(
        self,
        lead: int = 1,
        keep_events: bool = False,
        medium_cfg: MediumConfig | None = None,
    ):
        self.lead = lead
        self.keep_events = keep_events
        self.medium_cfg = medium_cfg or MediumConfig()
        self.sends: list[SendRecord] = []
        self.receives: list[ReceiveRecord] = []
        self._event_lines: list[str] = []
        self.total_tx = 0
        self.rx_bytes = 0
        self.expected_receptions = 0
        self._distinct: dict[int, set[tuple[int, int]]] = {}
        self._send_times: dict[int, int] = {}  # lead NORMAL seq -> t_ms
        self._rtts: list[float] = []
        self.link_attempts = 0
        self.link_losses = 0
        self.expected_loss_sum = 0.0

    # --- feeding ---------------------------------------------------------

    def on_send(self, node: int, pkt: Packet, size: int, t_ms: int) -> None:
        self.total_tx += 1
        if node == self.lead and pkt.kind == PacketKind.NORMAL and pkt.source == self.lead:
            self._send_times.setdefault(pkt.seq, t_ms)
        if self.keep_events:
            self.sends.append(SendRecord(node, pkt.source, pkt.seq, pkt.kind, t_ms, size))
            self._event_lines.append(
                f"{t_ms} TX node={node} {pkt.kind.name} src={pkt.source} seq={pkt.seq} bytes={size}"
            )

    def on_origination(self, pkt: Packet, reachable: int) -> None:
        """Called once per freshly created NORMAL with the receiver count it should reach."""
        if pkt.kind == PacketKind.NORMAL:
            self.expected_receptions += reachable

    def on_receive(self, receiver: int, pkt: Packet, size: int, t_ms: int) -> None:
        self.rx_bytes += size
        if pkt.kind == PacketKind.NORMAL and receiver != pkt.source:
            self._distinct.setdefault(receiver, set()).add((pkt.source, pkt.seq))
        if (
            receiver == self.lead
            and pkt.kind == PacketKind.NORMAL
            and pkt.source == self.lead
            and pkt.seq in self._send_times
        ):
            # first returning copy only; flooding brings many back
            self._rtts.append(float(t_ms - self._send_times.pop(pkt.seq)))
        if self.keep_events:
            self.receives.append(
                ReceiveRecord(receiver, pkt.source, pkt.seq, pkt.kind, t_ms, size)
            )
            self._event_lines.append(
                f"{t_ms} RX node={receiver} {pkt.kind.name} src={pkt.source} seq={pkt.seq} bytes={size}"
            )

    def on_link_attempt(self, distance: float, delivered: bool) -> None:
        self.link_attempts += 1
        self.link_losses += 0 if delivered else 1
        self.expected_loss_sum += loss_probability(distance, self.medium_cfg)

    # --- reporting -------------------------------------------------------

    def avg_latency(self) -> float:
        if not self._rtts:
            raise NoSamples("no matched round-trip pairs")
        return sum(self._rtts) / len(self._rtts)

    def throughput(self, duration_s: float) -> float:
        return self.rx_bytes / duration_s

    def loss_rate(self) -> float:
        if self.expected_receptions == 0:
            return 0.0
        delivered = sum(len(s) for s in self._distinct.values())
        return min(1.0, max(0.0, 1.0 - delivered / self.expected_receptions))

    def observed_link_loss(self) -> float:
        return self.link_losses / self.link_attempts if self.link_attempts else 0.0

    def analytic_link_loss(self) -> float:
        return self.expected_loss_sum / self.link_attempts if self.link_attempts else 0.0

    def latency_samples(self) -> int:
        return len(self._rtts)

    def report(self, mode: str, n_vehicles: int, duration_s: float) -> RunReport:
        try:
            latency = self.avg_latency()
        except NoSamples:
            log.warning("no latency samples collected; reporting 0.0")
            latency = 0.0
        return RunReport(
            mode=mode,
            n_vehicles=n_vehicles,
            avg_latency_ms=latency,
            throughput_bytes_per_s=self.throughput(duration_s),
            loss_rate=self.loss_rate(),
            total_transmissions=self.total_tx,
        )

    def dump_events(self) -> str:
        # engine feeds hooks in deterministic order; insertion order is the log order
        return "\n".join(self._event_lines) + "\n" if self._event_lines else ""
