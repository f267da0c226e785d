"""Packet kinds, headers, payload types and the bit-exact wire codec.

Every transport (in-process scheduler or one UDP datagram per packet) carries
the same layout, documented in WIRE.md at the repository root.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum

MAGIC = b"VA"
WIRE_VERSION = 1
BROADCAST = 0xFFFF
HEADER_LEN = 16

_HEADER = struct.Struct(">2sBBIHHHH")
_VEHICLE_INFO = struct.Struct(">dBdddddB")
_HELLO_ENTRY = struct.Struct(">HB")
_TC_HEAD = struct.Struct(">IH")
_ACK_JOIN = struct.Struct(">H")
_NOTIFY = struct.Struct(">Hd")


class DecodeError(ValueError):
    """Raised for truncated input, bad magic/version, or unknown field values."""


class PacketKind(IntEnum):
    HELLO = 1
    TC = 2
    NORMAL = 3
    JOIN = 4
    LEAVE = 5
    ACK_JOIN = 6
    NOTIFY = 7
    OK = 8


# Kinds that are routed point-to-point via the next-hop table; everything
# else is broadcast traffic (HELLO never forwarded, TC/NORMAL MPR-forwarded).
UNICAST_KINDS = frozenset(
    {PacketKind.JOIN, PacketKind.LEAVE, PacketKind.ACK_JOIN, PacketKind.NOTIFY, PacketKind.OK}
)


class Lane(IntEnum):
    RIGHT = 0
    LEFT = 1


class PlatoonMode(IntEnum):
    FREE = 0
    FORM = 1
    FOLLOW = 2


class LinkStatus(IntEnum):
    UNI = 0
    BI = 1
    MPR = 2


@dataclass(slots=True)
class VehicleInfo:
    """Per-vehicle state carried in every NORMAL (and JOIN) payload."""

    x: float
    lane: Lane
    velocity: float
    acceleration: float
    brake: float
    throttle: float
    length: float
    mode: PlatoonMode


@dataclass(slots=True)
class HelloPayload:
    """One-hop neighbor list with link statuses, as advertised by the sender."""

    neighbors: list[tuple[int, LinkStatus]] = field(default_factory=list)


@dataclass(slots=True)
class TcPayload:
    """The sender's MPR selector set plus its neighbor-table sequence number."""

    selectors: list[int] = field(default_factory=list)
    tc_seq: int = 0


@dataclass(slots=True)
class AckJoinPayload:
    """Names the vehicle the requester must follow."""

    follow: int


@dataclass(slots=True)
class NotifyPayload:
    """Retarget and/or respacing order from the lead.

    follow == 0 keeps the current target; spacing == 0.0 keeps the current
    desired gap.
    """

    follow: int = 0
    spacing: float = 0.0


Payload = VehicleInfo | HelloPayload | TcPayload | AckJoinPayload | NotifyPayload | None


@dataclass(slots=True)
class Packet:
    kind: PacketKind
    seq: int
    source: int
    prev_hop: int
    dest: int
    payload: Payload = None


@dataclass
class SeqCounter:
    """Per-node sequence state; one shared counter for all data kinds.

    HELLO carries no sequence number (fixed 0 on the wire); TC reuses the
    neighbor-table sequence number, which repeats while topology is stable.
    """

    data: int = 0
    table_seq: int = 0

    def next_seq(self, kind: PacketKind) -> int:
        if kind == PacketKind.HELLO:
            return 0
        if kind == PacketKind.TC:
            return self.table_seq
        self.data += 1
        return self.data


def _encode_payload(pkt: Packet) -> bytes:
    kind, payload = pkt.kind, pkt.payload
    if kind in (PacketKind.NORMAL, PacketKind.JOIN):
        v = payload
        return _VEHICLE_INFO.pack(
            v.x, v.lane, v.velocity, v.acceleration, v.brake, v.throttle, v.length, v.mode
        )
    if kind == PacketKind.HELLO:
        parts = [struct.pack(">H", len(payload.neighbors))]
        parts += [_HELLO_ENTRY.pack(n, s) for n, s in payload.neighbors]
        return b"".join(parts)
    if kind == PacketKind.TC:
        head = _TC_HEAD.pack(payload.tc_seq, len(payload.selectors))
        return head + b"".join(struct.pack(">H", s) for s in payload.selectors)
    if kind == PacketKind.ACK_JOIN:
        return _ACK_JOIN.pack(payload.follow)
    if kind == PacketKind.NOTIFY:
        return _NOTIFY.pack(payload.follow, payload.spacing)
    return b""  # LEAVE, OK


def _decode_payload(kind: PacketKind, raw: bytes) -> Payload:
    try:
        if kind in (PacketKind.NORMAL, PacketKind.JOIN):
            x, lane, v, a, brake, throttle, length, mode = _VEHICLE_INFO.unpack(raw)
            return VehicleInfo(x, Lane(lane), v, a, brake, throttle, length, PlatoonMode(mode))
        if kind == PacketKind.HELLO:
            (count,) = struct.unpack_from(">H", raw, 0)
            if len(raw) != 2 + count * _HELLO_ENTRY.size:
                raise DecodeError("HELLO entry count does not match payload length")
            neighbors = [
                (nid, LinkStatus(status))
                for nid, status in _HELLO_ENTRY.iter_unpack(raw[2:])
            ]
            return HelloPayload(neighbors)
        if kind == PacketKind.TC:
            tc_seq, count = _TC_HEAD.unpack_from(raw, 0)
            body = raw[_TC_HEAD.size:]
            if len(body) != count * 2:
                raise DecodeError("TC selector count does not match payload length")
            return TcPayload([s for (s,) in struct.iter_unpack(">H", body)], tc_seq)
        if kind == PacketKind.ACK_JOIN:
            (follow,) = _ACK_JOIN.unpack(raw)
            return AckJoinPayload(follow)
        if kind == PacketKind.NOTIFY:
            follow, spacing = _NOTIFY.unpack(raw)
            return NotifyPayload(follow, spacing)
    except struct.error as exc:
        raise DecodeError(f"malformed {kind.name} payload: {exc}") from exc
    except ValueError as exc:
        raise DecodeError(str(exc)) from exc
    if raw:
        raise DecodeError(f"{kind.name} carries no payload but got {len(raw)} bytes")
    return None


def encode(pkt: Packet) -> bytes:
    """Serialize a packet; inverse of decode for every well-formed packet."""
    body = _encode_payload(pkt)
    header = _HEADER.pack(
        MAGIC, WIRE_VERSION, pkt.kind, pkt.seq, pkt.source, pkt.prev_hop, pkt.dest, len(body)
    )
    return header + body


def decode(raw: bytes) -> Packet:
    if len(raw) < HEADER_LEN:
        raise DecodeError(f"truncated header: {len(raw)} bytes")
    magic, version, kind_b, seq, source, prev_hop, dest, length = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise DecodeError(f"bad magic {magic!r}")
    if version != WIRE_VERSION:
        raise DecodeError(f"unsupported version {version}")
    try:
        kind = PacketKind(kind_b)
    except ValueError as exc:
        raise DecodeError(f"unknown kind byte {kind_b}") from exc
    if len(raw) != HEADER_LEN + length:
        raise DecodeError(f"payload length mismatch: header says {length}")
    payload = _decode_payload(kind, raw[HEADER_LEN:])
    return Packet(kind, seq, source, prev_hop, dest, payload)


def encoded_size(pkt: Packet) -> int:
    """Wire size in bytes without serializing (hot path helper)."""
    kind = pkt.kind
    if kind in (PacketKind.NORMAL, PacketKind.JOIN):
        return HEADER_LEN + _VEHICLE_INFO.size
    if kind == PacketKind.HELLO:
        return HEADER_LEN + 2 + len(pkt.payload.neighbors) * _HELLO_ENTRY.size
    if kind == PacketKind.TC:
        return HEADER_LEN + _TC_HEAD.size + 2 * len(pkt.payload.selectors)
    if kind == PacketKind.ACK_JOIN:
        return HEADER_LEN + _ACK_JOIN.size
    if kind == PacketKind.NOTIFY:
        return HEADER_LEN + _NOTIFY.size
    return HEADER_LEN
