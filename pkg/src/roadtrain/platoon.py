"""Road-train platooning: kinematics, join/leave admission, speed zones, script.

Vehicle x coordinates are front-bumper positions, so the gap to the vehicle
ahead is ``x_ahead - x_self - length_ahead``.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional, Sequence

from .medium import Position
from .packets import (
    AckJoinPayload,
    Lane,
    NotifyPayload,
    Packet,
    PacketKind,
    PlatoonMode,
    SeqCounter,
    VehicleInfo,
)

log = logging.getLogger(__name__)

LEAD_ID = 1
HIGHWAY_LENGTH_M = 10_000.0
CRUISE_SPEED_MPS = 30.0
ZONE_START_M = 4000.0
ZONE_END_M = 5000.0
ZONE_SPEED_MPS = 20.0

DESIRED_GAP_M = 15.0
GAP_BAND_M = 5.0  # steady band is desired_gap +- band, i.e. [10, 20]
ADJUST_MPS = 5.0
MAKE_SPACE_MARGIN_M = 3.0
OK_SLACK_M = 0.5
FORM_TIMEOUT_MS = 500
LEAD_TIMEOUT_MS = 2000
GRANT_RETRY_CAP = 20  # bounded so a granted slot is not reserved forever
PERTURBATION_CAP_MPS = 0.5


def speed_zone(x: float) -> float:
    """Nominal speed at highway position x."""
    if ZONE_START_M <= x < ZONE_END_M:
        return ZONE_SPEED_MPS
    return CRUISE_SPEED_MPS


@dataclass
class VehicleDynamics:
    pos: Position
    velocity: float
    acceleration: float = 0.0
    brake: float = 0.0
    throttle: float = 0.0
    length: float = 5.0


@dataclass
class VehicleState:
    """Everything one vehicle owns: dynamics, platoon mode, and counters."""

    node: int
    dyn: VehicleDynamics
    mode: PlatoonMode = PlatoonMode.FREE
    follow_target: int = 0
    desired_gap: float = DESIRED_GAP_M
    ok_pending: Optional[float] = None  # spacing threshold awaiting an OK
    form_deadline_ms: Optional[int] = None
    cruise_mps: float = CRUISE_SPEED_MPS
    perturbation: float = 0.0
    form_timeout_ms: int = FORM_TIMEOUT_MS
    seq: SeqCounter = field(default_factory=SeqCounter)

    @property
    def is_lead(self) -> bool:
        return self.node == LEAD_ID


def vehicle_info(state: VehicleState) -> VehicleInfo:
    d = state.dyn
    return VehicleInfo(
        x=d.pos.x,
        lane=d.pos.lane,
        velocity=d.velocity,
        acceleration=d.acceleration,
        brake=d.brake,
        throttle=d.throttle,
        length=d.length,
        mode=state.mode,
    )


def gap_to(state: VehicleState, ahead: VehicleInfo) -> float:
    """Rear bumper of the vehicle ahead to own front bumper."""
    return ahead.x - state.dyn.pos.x - ahead.length


def _special(state: VehicleState, kind: PacketKind, dest: int, payload=None) -> Packet:
    return Packet(
        kind=kind,
        seq=state.seq.next_seq(kind),
        source=state.node,
        prev_hop=state.node,
        dest=dest,
        payload=payload,
    )


# --- follower side ---------------------------------------------------------


def follower_request_join(state: VehicleState, now_ms: int) -> list[Packet]:
    if state.mode != PlatoonMode.FREE:
        log.warning("node %d join ignored in mode %s", state.node, state.mode.name)
        return []
    state.mode = PlatoonMode.FORM
    state.form_deadline_ms = now_ms + state.form_timeout_ms
    return [_special(state, PacketKind.JOIN, LEAD_ID, vehicle_info(state))]


def follower_on_ack_join(
    state: VehicleState, pkt: Packet, infos: Mapping[int, VehicleInfo]
) -> list[Packet]:
    """Admission granted: snap in behind the named target and confirm."""
    target = pkt.payload.follow
    if state.mode == PlatoonMode.FOLLOW and target == state.follow_target:
        # duplicate grant: the lead never saw our confirmation — repeat it
        # without touching the already-merged position
        return [_special(state, PacketKind.ACK_JOIN, LEAD_ID, AckJoinPayload(target))]
    if state.mode != PlatoonMode.FORM:
        log.debug("node %d stale ACK_JOIN ignored", state.node)
        return []
    state.mode = PlatoonMode.FOLLOW
    state.follow_target = target
    state.desired_gap = DESIRED_GAP_M
    state.ok_pending = None
    state.form_deadline_ms = None
    ahead = infos.get(target)
    if ahead is not None:
        state.dyn.pos = Position(ahead.x - ahead.length - DESIRED_GAP_M, Lane.RIGHT)
        state.dyn.velocity = ahead.velocity
    else:
        log.warning("node %d has no info for target %d yet", state.node, target)
        state.dyn.pos = Position(state.dyn.pos.x, Lane.RIGHT)
    return [_special(state, PacketKind.ACK_JOIN, LEAD_ID, AckJoinPayload(target))]


def follower_on_notify(state: VehicleState, pkt: Packet) -> None:
    if state.mode != PlatoonMode.FOLLOW:
        log.debug("node %d stale NOTIFY ignored", state.node)
        return
    payload: NotifyPayload = pkt.payload
    if payload.follow:
        state.follow_target = payload.follow
        state.desired_gap = payload.spacing if payload.spacing > 0 else DESIRED_GAP_M
        state.ok_pending = None
    elif payload.spacing > DESIRED_GAP_M:
        # make-space order: park the band floor on the requested spacing so
        # the gap actually crosses it, then acknowledge
        state.desired_gap = payload.spacing + GAP_BAND_M
        state.ok_pending = payload.spacing
    elif payload.spacing > 0:
        state.desired_gap = payload.spacing
        state.ok_pending = None


def follower_leave(state: VehicleState) -> list[Packet]:
    if state.mode != PlatoonMode.FOLLOW:
        log.warning("node %d leave ignored in mode %s", state.node, state.mode.name)
        return []
    state.mode = PlatoonMode.FREE
    state.follow_target = 0
    state.desired_gap = DESIRED_GAP_M
    state.ok_pending = None
    state.dyn.pos = Position(state.dyn.pos.x, Lane.LEFT)
    # three copies, distinct seqs: identical seqs would be eaten by duplicate
    # suppression before reaching the lead
    return [_special(state, PacketKind.LEAVE, LEAD_ID) for _ in range(3)]


def _nearest_same_lane_ahead(
    state: VehicleState, infos: Mapping[int, VehicleInfo]
) -> Optional[VehicleInfo]:
    best: Optional[VehicleInfo] = None
    for nid, info in infos.items():
        if nid == state.node or info.lane != state.dyn.pos.lane or info.x <= state.dyn.pos.x:
            continue
        if best is None or info.x < best.x:
            best = info
    return best


def vehicle_tick(
    state: VehicleState,
    dt_s: float,
    infos: Mapping[int, VehicleInfo],
    now_ms: int,
    rng: random.Random,
) -> list[Packet]:
    """Advance kinematics one tick; may emit an OK once space is made."""
    out: list[Packet] = []
    d = state.dyn
    if state.mode == PlatoonMode.FORM and state.form_deadline_ms is not None:
        if now_ms >= state.form_deadline_ms:
            log.info("node %d join timed out", state.node)
            state.mode = PlatoonMode.FREE
            state.form_deadline_ms = None

    ahead = infos.get(state.follow_target) if state.mode == PlatoonMode.FOLLOW else None
    if state.is_lead:
        accel = rng.uniform(-1.0, 1.0)
        p = state.perturbation + accel * dt_s
        state.perturbation = max(-PERTURBATION_CAP_MPS, min(PERTURBATION_CAP_MPS, p))
        v = speed_zone(d.pos.x) + state.perturbation
    elif state.mode == PlatoonMode.FOLLOW:
        if ahead is None:
            v = d.velocity
        else:
            g = gap_to(state, ahead)
            if g > state.desired_gap + GAP_BAND_M:
                v = ahead.velocity + ADJUST_MPS
            elif g < state.desired_gap - GAP_BAND_M:
                v = ahead.velocity - ADJUST_MPS
            else:
                v = ahead.velocity
    else:
        v = min(state.cruise_mps, speed_zone(d.pos.x))

    if not state.is_lead:
        guard = _nearest_same_lane_ahead(state, infos)
        if guard is not None and gap_to(state, guard) < DESIRED_GAP_M - GAP_BAND_M:
            # collision guard: a lost retarget can leave follow_target pointing
            # past the vehicle physically ahead; never outrun that one
            v = min(v, guard.velocity - ADJUST_MPS)

    v = max(0.0, v)
    d.acceleration = (v - d.velocity) / dt_s
    d.throttle = 1.0 if d.acceleration > 0 else 0.0
    d.brake = 1.0 if d.acceleration < 0 else 0.0
    d.velocity = v
    d.pos = Position(min(HIGHWAY_LENGTH_M, max(0.0, d.pos.x + v * dt_s)), d.pos.lane)

    if state.ok_pending is not None and ahead is not None:
        if gap_to(state, ahead) >= state.ok_pending - OK_SLACK_M:
            state.ok_pending = None
            out.append(_special(state, PacketKind.OK, LEAD_ID))
    return out


# --- lead side --------------------------------------------------------------


class Awaiting(Enum):
    SPACE_OK = "space_ok"
    REQUESTER_ACK = "requester_ack"


@dataclass
class PendingJoin:
    requester: int
    insert_after: int
    notified: int  # 0 for tail joins: nobody has to make space
    awaiting: Awaiting
    deadline_ms: int
    regrants: int = 0


@dataclass
class LeadState:
    """Admission bookkeeping owned by the lead truck only."""

    train: list[int] = field(default_factory=lambda: [LEAD_ID])
    pending: Optional[PendingJoin] = None
    timeout_ms: int = LEAD_TIMEOUT_MS


def _direction_compatible(info: VehicleInfo) -> bool:
    # single-direction highway; kept as the admission predicate hook
    return True


def lead_on_join(
    lead: LeadState,
    state: VehicleState,
    pkt: Packet,
    infos: Mapping[int, VehicleInfo],
    now_ms: int,
) -> list[Packet]:
    """Place the requester behind the nearest member ahead of it."""
    requester = pkt.source
    info: VehicleInfo = pkt.payload
    if lead.pending is not None:
        p = lead.pending
        if requester == p.requester and p.awaiting == Awaiting.REQUESTER_ACK:
            # the gap outlived the requester's patience: it asked again, so it
            # just opened a fresh confirmation window — answer again
            p.deadline_ms = now_ms + lead.timeout_ms
            return [
                _special(state, PacketKind.ACK_JOIN, requester, AckJoinPayload(p.insert_after))
            ]
        log.debug("join from %d declined (transaction in progress)", requester)
        return []
    if requester in lead.train:
        log.debug("join from %d declined (already a member)", requester)
        return []
    if not _direction_compatible(info):
        return []
    positions = {}
    for member in lead.train:
        known = infos.get(member)
        if known is None:
            log.warning("join from %d declined: no info for member %d", requester, member)
            return []
        positions[member] = known.x
    ahead = [m for m in lead.train if positions[m] > info.x]
    insert_after = min(ahead, key=lambda m: positions[m]) if ahead else LEAD_ID
    idx = lead.train.index(insert_after)
    successor = lead.train[idx + 1] if idx + 1 < len(lead.train) else 0
    if successor:
        spacing = DESIRED_GAP_M + info.length + MAKE_SPACE_MARGIN_M
        lead.pending = PendingJoin(
            requester, insert_after, successor, Awaiting.SPACE_OK, now_ms + lead.timeout_ms
        )
        return [_special(state, PacketKind.NOTIFY, successor, NotifyPayload(0, spacing))]
    lead.pending = PendingJoin(
        requester, insert_after, 0, Awaiting.REQUESTER_ACK, now_ms + lead.timeout_ms
    )
    return [_special(state, PacketKind.ACK_JOIN, requester, AckJoinPayload(insert_after))]


def lead_on_ok(lead: LeadState, state: VehicleState, pkt: Packet, now_ms: int) -> list[Packet]:
    p = lead.pending
    if p is None or p.awaiting != Awaiting.SPACE_OK or pkt.source != p.notified:
        log.debug("stray OK from %d ignored", pkt.source)
        return []
    p.awaiting = Awaiting.REQUESTER_ACK
    p.deadline_ms = now_ms + lead.timeout_ms
    return [_special(state, PacketKind.ACK_JOIN, p.requester, AckJoinPayload(p.insert_after))]


def lead_on_confirm(lead: LeadState, state: VehicleState, pkt: Packet) -> list[Packet]:
    """Requester's ACK_JOIN: commit the topology and retarget the vehicle behind."""
    p = lead.pending
    if p is None or p.awaiting != Awaiting.REQUESTER_ACK or pkt.source != p.requester:
        log.debug("stray ACK_JOIN from %d ignored", pkt.source)
        return []
    lead.train.insert(lead.train.index(p.insert_after) + 1, p.requester)
    lead.pending = None
    if p.notified:
        # three copies, distinct seqs, as for LEAVE: one lost copy would leave
        # the vehicle behind the new member following the wrong target forever
        return [
            _special(state, PacketKind.NOTIFY, p.notified, NotifyPayload(p.requester, 0.0))
            for _ in range(3)
        ]
    return []


def _abort_pending(lead: LeadState, state: VehicleState) -> list[Packet]:
    p = lead.pending
    lead.pending = None
    if p is not None and p.notified:
        # release the vehicle that was asked to make space
        return [_special(state, PacketKind.NOTIFY, p.notified, NotifyPayload(0, DESIRED_GAP_M))]
    return []


def lead_on_leave(lead: LeadState, state: VehicleState, pkt: Packet) -> list[Packet]:
    k = pkt.source
    out: list[Packet] = []
    p = lead.pending
    if p is not None and k in (p.requester, p.insert_after, p.notified):
        out.extend(_abort_pending(lead, state))
    if k == LEAD_ID or k not in lead.train:
        return out  # duplicate LEAVE: already gone
    idx = lead.train.index(k)
    predecessor = lead.train[idx - 1]
    successor = lead.train[idx + 1] if idx + 1 < len(lead.train) else 0
    lead.train.remove(k)
    if successor:
        out.append(
            _special(state, PacketKind.NOTIFY, successor, NotifyPayload(predecessor, 0.0))
        )
    return out


def lead_tick(lead: LeadState, state: VehicleState, now_ms: int) -> list[Packet]:
    p = lead.pending
    if p is None or now_ms < p.deadline_ms:
        return []
    if p.awaiting == Awaiting.REQUESTER_ACK and p.regrants < GRANT_RETRY_CAP:
        # the requester may already sit in the granted slot with its
        # confirmation lost in transit; silently dropping the transaction
        # here would let the next admission hand out the occupied slot
        p.regrants += 1
        p.deadline_ms = now_ms + lead.timeout_ms
        log.debug("re-granting %d to requester %d", p.insert_after, p.requester)
        return [_special(state, PacketKind.ACK_JOIN, p.requester, AckJoinPayload(p.insert_after))]
    log.info("join transaction with %d timed out", p.requester)
    return _abort_pending(lead, state)


# --- scripted scenario ------------------------------------------------------


@dataclass
class ScenarioScript:
    """Non-interactive drive plan: staggered joins, mass leave near the end.

    Stateless on purpose: a follower still FREE past its slot (lost JOIN,
    timed-out FORM) is simply asked again at the next script tick.  Joins are
    serialized: a follower is only asked once every earlier one rides in the
    train, so two admissions never race for the same slot.  The first slot sits
    one full stagger in, leaving the relays time to learn their routes.
    """

    followers: Sequence[int]
    join_stagger_s: float = 1.0
    leave_at_s: Optional[float] = None

    def commands(self, t_s: float, modes: Mapping[int, PlatoonMode]) -> list[tuple[int, str]]:
        out = []
        leaving = self.leave_at_s is not None and t_s >= self.leave_at_s > 0
        for k, node in enumerate(self.followers):
            mode = modes.get(node, PlatoonMode.FREE)
            if leaving:
                if mode == PlatoonMode.FOLLOW:
                    out.append((node, "leave"))
            elif (
                mode == PlatoonMode.FREE
                and t_s >= (k + 1) * self.join_stagger_s
                and all(modes.get(m) == PlatoonMode.FOLLOW for m in self.followers[:k])
            ):
                out.append((node, "join"))
        return out
