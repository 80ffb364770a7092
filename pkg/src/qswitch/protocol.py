"""End-node, switch and BSA state machines.

Nodes never see each other's state.  Everything they do goes through the
small :class:`NodeContext` surface the engine hands them: the clock, an
addressed ``send``, timers and the event log.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Protocol

from .discovery import BsaTable, LinkStateNode, bsa_paths, path_ports
from .messages import (
    BsaTableResponse,
    Message,
    ProposeStartTime,
    ReleaseResources,
    RequestBsaTable,
    RequestQueuedNotice,
    ReservationComplete,
    RouteReserveAck,
    RouteReserveReject,
    RouteReserveRequest,
    SessionId,
    StartTimeAck,
    TargetAck,
    TargetSelection,
    reservation_key,
)
from .topology import Adjacency, Direction, NodeId, NodeKind, PortId


class ProtocolError(Exception):
    pass


class SelfRequest(ProtocolError):
    pass


class WrongBsa(ProtocolError):
    pass


class NodeContext(Protocol):
    now: int

    def send(self, msg: Message) -> None: ...

    def set_timer(self, delay: int, kind: str, data: Any = None) -> None: ...

    def log(self, event: str, session: SessionId | None = None, **detail: Any) -> None: ...


@dataclass(frozen=True)
class ProtocolConfig:
    session_hold: int = 10
    reconfiguration_delay: int = 0
    request_timeout: int = 10_000
    dequeue_delay: int = 100


class State(str, Enum):
    AWAITING_PEER_TABLE = "AwaitingPeerTable"
    SELECTING = "Selecting"
    AWAITING_TARGET_ACK = "AwaitingTargetAck"
    RESERVING = "Reserving"
    AWAITING_PEER_RESERVATION = "AwaitingPeerReservation"
    RESERVATION_DONE = "ReservationDone"
    AWAITING_START_ACK = "AwaitingStartAck"
    ACTIVE = "Active"
    QUEUED = "Queued"
    FAILED = "Failed"
    ENDED = "Ended"


@dataclass(frozen=True, order=True)
class MergedBsaEntry:
    combined_cost: int
    bsa: NodeId
    port_for_lead: PortId
    port_for_peer: PortId


def merge_tables(lead_table: BsaTable, peer_table: BsaTable) -> list[MergedBsaEntry]:
    """Every port assignment of every BSA both ends can reach, cheapest first."""
    by_bsa: dict[NodeId, list] = {}
    for e in peer_table:
        by_bsa.setdefault(e.bsa, []).append(e)
    merged = []
    for mine in lead_table:
        for theirs in by_bsa.get(mine.bsa, ()):
            if theirs.bsa_port != mine.bsa_port:
                merged.append(
                    MergedBsaEntry(mine.cost + theirs.cost, mine.bsa, mine.bsa_port, theirs.bsa_port)
                )
    merged.sort()
    return merged


@dataclass
class Session:
    id: SessionId
    role: str
    peer: NodeId
    created_at: int
    timeout_at: int
    state: State = State.AWAITING_PEER_TABLE
    candidates: list[MergedBsaEntry] = field(default_factory=list)
    current_candidate: int = 0
    retries: int = 0
    attempt: int = -1
    target: tuple[NodeId, PortId] | None = None
    # own leg: None, "pending" or "acked"
    leg: str | None = None
    leg_next_hop: NodeId | None = None
    peer_reserved: bool = False
    start_time: int | None = None
    completed_at: int | None = None
    queued: bool = False
    queued_since: int | None = None
    queue_wait: int = 0
    dequeued_at: int | None = None
    activations: int = 0
    attempted_costs: list[int] = field(default_factory=list)
    # (node, port) pairs reported busy by rejections during this activation
    blocked: set[tuple[NodeId, PortId]] = field(default_factory=set)
    skipped: int = 0

    @property
    def is_lead(self) -> bool:
        return self.role == "lead"

    def sort_key(self) -> tuple[int, int]:
        return (self.created_at, self.id.serial)


@dataclass(frozen=True)
class PortReservation:
    port: PortId
    session: SessionId
    requester: NodeId
    attempt: int
    reserved_at: int

    @property
    def key(self) -> tuple:
        return (self.session, self.requester, self.attempt)


class Node:
    """State shared by every node kind: adjacency, discovery and port reservations."""

    kind: NodeKind

    def __init__(self, node_id: NodeId, adjacency: list[Adjacency], config: ProtocolConfig | None = None):
        self.node_id = node_id
        self.config = config or ProtocolConfig()
        self.adjacency = tuple(adjacency)
        self.discovery = LinkStateNode(node_id, self.kind, adjacency)
        self.table = BsaTable(node_id)
        self.reservations: dict[PortId, PortReservation] = {}
        # reservation key -> next hop toward the BSA (None at the BSA)
        self.holds: dict[tuple, NodeId | None] = {}

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.node_id})"

    def build_table(self) -> BsaTable:
        self.table = self.discovery.compute_bsa_table()
        return self.table

    def out_link(self, neighbor: NodeId, remote_port: PortId | None = None) -> tuple[PortId, PortId]:
        """(local port, remote port) of the lowest outbound channel to ``neighbor``."""
        for a in self.adjacency:
            if (
                a.neighbor == neighbor
                and a.direction in (Direction.OUT, Direction.BOTH)
                and (remote_port is None or a.remote_port == remote_port)
            ):
                return a.local_port, a.remote_port
        raise ProtocolError(f"node {self.node_id} has no channel to {neighbor}:{remote_port}")

    def route_toward(self, bsa: NodeId, bsa_port: PortId) -> tuple[NodeId, PortId, PortId] | None:
        """(next hop, outbound port, next hop's inbound port) toward a BSA input."""
        entry = self.table.lookup(bsa, bsa_port)
        if entry is None:
            return None
        remote = bsa_port if entry.next_hop == bsa else None
        local, remote_in = self.out_link(entry.next_hop, remote)
        return entry.next_hop, local, remote_in

    def try_reserve(self, ports: tuple[PortId, ...], key: tuple, now: int) -> PortReservation | None:
        """Reserve ``ports`` for ``key``; returns the reservation that blocks it, if any.

        Ports already held by the same key count as free, so a replayed
        request is idempotent.
        """
        for p in ports:
            held = self.reservations.get(p)
            if held is not None and held.key != key:
                return held
        session, requester, attempt = key
        for p in ports:
            if p not in self.reservations:
                self.reservations[p] = PortReservation(p, session, requester, attempt, now)
        return None

    def free(self, key: tuple) -> list[PortId]:
        freed = [p for p, r in self.reservations.items() if r.key == key]
        for p in freed:
            del self.reservations[p]
        return freed

    def on_message(self, msg: Message, ctx: NodeContext) -> None:
        if isinstance(msg, ReleaseResources):
            self.handle_release(msg, ctx)
        elif isinstance(msg, (RouteReserveAck, RouteReserveReject)) and msg.path and msg.path[0] != self.node_id:
            self.relay_back(msg, ctx)
        else:
            self.handle(msg, ctx)

    def handle(self, msg: Message, ctx: NodeContext) -> None:
        ctx.log("unexpected", getattr(msg, "session", None), message=msg.kind, src=msg.src)

    def on_timer(self, kind: str, data: Any, ctx: NodeContext) -> None:
        ctx.log("unexpected_timer", None, timer=kind)

    def relay_back(self, msg: RouteReserveAck | RouteReserveReject, ctx: NodeContext) -> None:
        idx = msg.path.index(self.node_id)
        ctx.send(_readdress(msg, self.node_id, msg.path[idx - 1]))

    def handle_release(self, msg: ReleaseResources, ctx: NodeContext) -> None:
        key = reservation_key(msg)
        if key not in self.holds:
            return
        next_hop = self.holds.pop(key)
        freed = self.free(key)
        ctx.log("released", msg.session, requester=msg.requester, attempt=msg.attempt, ports=freed)
        if next_hop is not None:
            ctx.send(ReleaseResources(self.node_id, next_hop, msg.session, msg.attempt, msg.requester))


def _readdress(msg, src: NodeId, dst: NodeId):
    values = {f: getattr(msg, f) for f in msg.__dataclass_fields__}
    values.update(src=src, dst=dst)
    return type(msg)(**values)


class SwitchNode(Node):
    kind = NodeKind.SWITCH

    def handle(self, msg: Message, ctx: NodeContext) -> None:
        if isinstance(msg, RouteReserveRequest):
            self.handle_reserve(msg, ctx)
        else:
            super().handle(msg, ctx)

    def handle_reserve(self, msg: RouteReserveRequest, ctx: NodeContext) -> None:
        key = reservation_key(msg)
        prev = msg.path[-1]
        route = self.route_toward(msg.bsa, msg.bsa_port)
        if route is None:
            self._reject(msg, None, ctx)
            return
        next_hop, out_port, next_in = route
        in_port = msg.in_port
        blocker = self.try_reserve((in_port, out_port), key, ctx.now)
        if blocker is not None:
            self._reject(msg, blocker, ctx)
            return
        self.holds[key] = next_hop
        ctx.log("reserved", msg.session, requester=msg.requester, attempt=msg.attempt,
                ports=[in_port, out_port], prev=prev, next_hop=next_hop)
        ctx.send(RouteReserveRequest(
            self.node_id, next_hop, msg.session, msg.attempt, msg.bsa, msg.bsa_port,
            msg.requester, msg.path + (self.node_id,), next_in,
        ))

    def _reject(self, msg: RouteReserveRequest, blocker: PortReservation | None, ctx: NodeContext) -> None:
        ctx.log("reject", msg.session, requester=msg.requester, attempt=msg.attempt,
                held_by=str(blocker.session) if blocker else None, port=blocker.port if blocker else None)
        ctx.send(RouteReserveReject(
            self.node_id, msg.path[-1], msg.session, msg.attempt, msg.requester, self.node_id, msg.path,
            blocker.port if blocker else None,
        ))


class BsaNode(Node):
    kind = NodeKind.BSA

    def __init__(self, node_id: NodeId, adjacency: list[Adjacency], config: ProtocolConfig | None = None):
        super().__init__(node_id, adjacency, config)
        self.sessions_served = 0

    def handle(self, msg: Message, ctx: NodeContext) -> None:
        if isinstance(msg, RouteReserveRequest):
            self.handle_reserve(msg, ctx)
        else:
            super().handle(msg, ctx)

    def handle_reserve(self, msg: RouteReserveRequest, ctx: NodeContext) -> None:
        if msg.bsa != self.node_id:
            raise WrongBsa(f"BSA {self.node_id} received a reservation for BSA {msg.bsa}")
        if msg.in_port != msg.bsa_port:
            raise ProtocolError(f"request for port {msg.bsa_port} arrived on port {msg.in_port}")
        key = reservation_key(msg)
        back = msg.path[-1]
        blocker = self.try_reserve((msg.bsa_port,), key, ctx.now)
        if blocker is not None:
            ctx.log("reject", msg.session, requester=msg.requester, attempt=msg.attempt,
                    held_by=str(blocker.session), port=blocker.port)
            ctx.send(RouteReserveReject(
                self.node_id, back, msg.session, msg.attempt, msg.requester, self.node_id, msg.path,
                blocker.port,
            ))
            return
        fresh = key not in self.holds
        self.holds[key] = None
        ctx.log("reserved", msg.session, requester=msg.requester, attempt=msg.attempt, ports=[msg.bsa_port])
        if fresh:
            others = [
                r for p, r in self.reservations.items()
                if p != msg.bsa_port and r.session == msg.session and r.attempt == msg.attempt
                and r.requester != msg.requester
            ]
            if others:
                self.sessions_served += 1
                ctx.log("bsa_ready", msg.session, attempt=msg.attempt, served=self.sessions_served)
        ctx.send(RouteReserveAck(self.node_id, back, msg.session, msg.attempt, msg.requester, msg.path))


class EndNode(Node):
    kind = NodeKind.END_NODE

    def __init__(self, node_id: NodeId, adjacency: list[Adjacency], config: ProtocolConfig | None = None):
        super().__init__(node_id, adjacency, config)
        self.serial = 0
        self.current: Session | None = None
        self.follow_for: NodeId | None = None
        self.queue: list[Session] = []
        self.dequeue_pending = False
        self.expired: list[Session] = []
        self._paths: dict[NodeId, dict] = {}

    @property
    def busy(self) -> bool:
        return self.current is not None or self.follow_for is not None

    @property
    def idle(self) -> bool:
        """Nothing in progress and nothing waiting."""
        return not self.busy and not self.queue

    # -- request intake and queueing ------------------------------------------

    def submit_request(self, peer: NodeId, ctx: NodeContext) -> Session:
        if peer == self.node_id:
            raise SelfRequest(f"node {peer} cannot request a link with itself")
        session = Session(
            id=SessionId(self.node_id, self.serial),
            role="lead",
            peer=peer,
            created_at=ctx.now,
            timeout_at=ctx.now + self.config.request_timeout,
        )
        self.serial += 1
        ctx.log("request", session.id, peer=peer)
        if self.busy or self.queue or self.dequeue_pending:
            self.enqueue_request(session, ctx, reason="local_busy")
        else:
            self.initiate_request(session, ctx)
        return session

    def initiate_request(self, session: Session, ctx: NodeContext) -> RequestBsaTable:
        session.activations += 1
        self.current = session
        self._set_state(session, State.AWAITING_PEER_TABLE, ctx)
        msg = RequestBsaTable(self.node_id, session.peer)
        ctx.send(msg)
        return msg

    def enqueue_request(self, session: Session, ctx: NodeContext, reason: str) -> None:
        session.queued = True
        session.queued_since = ctx.now
        session.candidates = []
        session.target = None
        session.blocked.clear()
        self._set_state(session, State.QUEUED, ctx)
        ctx.log("queued", session.id, reason=reason)
        keys = [s.sort_key() for s in self.queue]
        self.queue.insert(bisect.bisect(keys, session.sort_key()), session)
        if self.current is session:
            self.current = None
        self._maybe_dequeue(ctx)

    def _maybe_dequeue(self, ctx: NodeContext) -> None:
        if not self.busy and self.queue and not self.dequeue_pending:
            self.dequeue_pending = True
            ctx.set_timer(self.config.dequeue_delay, "dequeue")

    def dequeue_next(self, ctx: NodeContext) -> Session | None:
        self.dequeue_pending = False
        if self.busy:
            return None
        while self.queue:
            session = self.queue.pop(0)
            session.queue_wait += ctx.now - session.queued_since
            if ctx.now > session.timeout_at:
                self._set_state(session, State.FAILED, ctx)
                self.expired.append(session)
                ctx.log("expired", session.id, created_at=session.created_at)
                continue
            session.dequeued_at = ctx.now
            ctx.log("dequeue", session.id, waited=session.queue_wait)
            self.initiate_request(session, ctx)
            return session
        return None

    def on_timer(self, kind: str, data: Any, ctx: NodeContext) -> None:
        if kind == "arrival":
            self.submit_request(data, ctx)
        elif kind == "dequeue":
            self.dequeue_next(ctx)
        elif kind == "hold_end":
            s = self.current
            if s is not None and s.id == data and s.state is State.ACTIVE:
                self._end_session(s, ctx)
        else:
            super().on_timer(kind, data, ctx)

    # -- message dispatch ----------------------------------------------------

    def handle(self, msg: Message, ctx: NodeContext) -> None:
        if isinstance(msg, RequestBsaTable):
            self.on_request_table(msg, ctx)
        elif isinstance(msg, BsaTableResponse):
            self.on_table_response(msg, ctx)
        elif isinstance(msg, TargetSelection):
            self.on_target(msg, ctx)
        elif isinstance(msg, TargetAck):
            self.on_target_ack(msg, ctx)
        elif isinstance(msg, RouteReserveAck):
            self.on_reserve_ack(msg, ctx)
        elif isinstance(msg, RouteReserveReject):
            self.on_reject(msg, ctx)
        elif isinstance(msg, ReservationComplete):
            self.on_reservation_complete(msg, ctx)
        elif isinstance(msg, ProposeStartTime):
            self.on_propose(msg, ctx)
        elif isinstance(msg, StartTimeAck):
            self.on_start_ack(msg, ctx)
        elif isinstance(msg, RequestQueuedNotice):
            self.on_queued_notice(msg, ctx)
        else:
            super().handle(msg, ctx)

    def _session_for(self, msg) -> Session | None:
        s = self.current
        if s is None or s.id != msg.session:
            return None
        if getattr(msg, "attempt", s.attempt) != s.attempt:
            return None
        return s

    def _set_state(self, session: Session, state: State, ctx: NodeContext) -> None:
        if session.state is not state:
            ctx.log("state", session.id, role=session.role, frm=session.state.value, to=state.value)
            session.state = state

    # -- steps 1-4: table exchange and target agreement ---------------------

    def on_request_table(self, msg: RequestBsaTable, ctx: NodeContext) -> None:
        lead = msg.src
        s = self.current
        mutual = (
            s is not None and s.is_lead and s.peer == lead
            and s.state is State.AWAITING_PEER_TABLE and self.node_id > lead
        )
        if mutual:
            # both ends asked each other at once; the higher id yields
            self.enqueue_request(s, ctx, reason="mutual_request")
        if self.busy:
            ctx.send(BsaTableResponse(self.node_id, lead, None, busy=True))
            return
        self.follow_for = lead
        ctx.send(BsaTableResponse(self.node_id, lead, self.table))

    def on_table_response(self, msg: BsaTableResponse, ctx: NodeContext) -> None:
        s = self.current
        if s is None or not s.is_lead or s.peer != msg.src or s.state is not State.AWAITING_PEER_TABLE:
            return
        if msg.busy:
            self.enqueue_request(s, ctx, reason="peer_busy")
            return
        s.candidates = merge_tables(self.table, msg.table or BsaTable(msg.src))
        s.current_candidate = 0
        self._set_state(s, State.SELECTING, ctx)
        self.select_and_propose(s, ctx)

    def _leg_ports(self, owner: NodeId, bsa: NodeId, port: PortId) -> frozenset:
        if owner not in self._paths:
            self._paths[owner] = bsa_paths(self.discovery.lsdb, owner)
        found = self._paths[owner].get((bsa, port))
        if found is None:
            return frozenset()
        return path_ports(self.discovery.lsdb, found[1], port)

    def _hits_blocked(self, s: Session, cand: MergedBsaEntry) -> bool:
        if not s.blocked:
            return False
        return bool(
            s.blocked & self._leg_ports(self.node_id, cand.bsa, cand.port_for_lead)
            or s.blocked & self._leg_ports(s.peer, cand.bsa, cand.port_for_peer)
        )

    def select_and_propose(self, s: Session, ctx: NodeContext) -> TargetSelection | None:
        """Propose the cheapest remaining candidate that avoids known-busy ports."""
        while s.current_candidate < len(s.candidates) and self._hits_blocked(s, s.candidates[s.current_candidate]):
            s.current_candidate += 1
            s.skipped += 1
        if s.current_candidate >= len(s.candidates):
            ctx.log("candidates_exhausted", s.id, tried=s.current_candidate)
            ctx.send(RequestQueuedNotice(self.node_id, s.peer, s.id))
            self.enqueue_request(s, ctx, reason="exhausted")
            return None
        cand = s.candidates[s.current_candidate]
        rank = s.current_candidate
        s.current_candidate += 1
        s.attempt += 1
        s.target = (cand.bsa, cand.port_for_lead)
        s.attempted_costs.append(cand.combined_cost)
        s.peer_reserved = False
        self._set_state(s, State.AWAITING_TARGET_ACK, ctx)
        msg = TargetSelection(self.node_id, s.peer, s.id, s.attempt, cand.bsa, cand.port_for_peer, rank)
        ctx.send(msg)
        return msg

    def on_target(self, msg: TargetSelection, ctx: NodeContext) -> None:
        s = self.current
        if s is None and self.follow_for == msg.src:
            s = Session(
                id=msg.session, role="follower", peer=msg.src,
                created_at=ctx.now, timeout_at=ctx.now + self.config.request_timeout,
            )
            self.current = s
            self.follow_for = None
            ctx.log("session_created", s.id, lead=msg.src)
        elif s is None or s.id != msg.session or msg.attempt <= s.attempt:
            ctx.log("stale", msg.session, message=msg.kind)
            return
        if s.leg is not None:
            self._release_leg(s, ctx)
        s.attempt = msg.attempt
        s.target = (msg.bsa, msg.port_for_receiver)
        ctx.send(TargetAck(self.node_id, msg.src, s.id, s.attempt))
        self.begin_reservation(s, ctx)

    def on_target_ack(self, msg: TargetAck, ctx: NodeContext) -> None:
        s = self._session_for(msg)
        if s is None or s.state is not State.AWAITING_TARGET_ACK:
            return
        self.begin_reservation(s, ctx)

    # -- steps 5-6: bi-path reservation --------------------------------------

    def begin_reservation(self, s: Session, ctx: NodeContext) -> RouteReserveRequest | None:
        bsa, port = s.target
        route = self.route_toward(bsa, port)
        if route is None:
            raise ProtocolError(f"end node {self.node_id} cannot reach BSA {bsa}:{port}")
        next_hop, out_port, next_in = route
        key = (s.id, self.node_id, s.attempt)
        blocker = self.try_reserve((out_port,), key, ctx.now)
        if blocker is not None:
            raise ProtocolError(f"end node {self.node_id} port {out_port} already held by {blocker.session}")
        s.leg = "pending"
        s.leg_next_hop = next_hop
        self._set_state(s, State.RESERVING, ctx)
        msg = RouteReserveRequest(
            self.node_id, next_hop, s.id, s.attempt, bsa, port, self.node_id, (self.node_id,), next_in,
        )
        ctx.send(msg)
        return msg

    def on_reserve_ack(self, msg: RouteReserveAck, ctx: NodeContext) -> None:
        s = self._session_for(msg)
        if s is None or s.leg != "pending":
            return
        s.leg = "acked"
        if s.is_lead:
            if s.peer_reserved:
                self._finish_reservation(s, ctx)
            else:
                self._set_state(s, State.AWAITING_PEER_RESERVATION, ctx)
        else:
            self._set_state(s, State.AWAITING_PEER_RESERVATION, ctx)
            ctx.send(ReservationComplete(self.node_id, s.peer, s.id, s.attempt))

    def on_reject(self, msg: RouteReserveReject, ctx: NodeContext) -> None:
        s = self._session_for(msg)
        if s is None:
            return
        own_leg = msg.requester == self.node_id
        if own_leg and s.leg != "pending":
            return
        ctx.log("rejected", s.id, attempt=msg.attempt, at=msg.rejecting_node, own_leg=own_leg)
        if msg.blocked_port is not None:
            s.blocked.add((msg.rejecting_node, msg.blocked_port))
        if s.is_lead:
            if s.state not in (State.RESERVING, State.AWAITING_PEER_RESERVATION, State.AWAITING_TARGET_ACK):
                return
            self.handle_reject(s, msg, ctx, notify_peer=own_leg)
        else:
            self._release_leg(s, ctx)
            self._set_state(s, State.SELECTING, ctx)
            if own_leg:
                ctx.send(RouteReserveReject(
                    self.node_id, s.peer, s.id, s.attempt, self.node_id, msg.rejecting_node,
                    blocked_port=msg.blocked_port,
                ))

    def handle_reject(self, s: Session, msg: RouteReserveReject, ctx: NodeContext, notify_peer: bool) -> None:
        self._release_leg(s, ctx)
        if notify_peer:
            ctx.send(RouteReserveReject(
                self.node_id, s.peer, s.id, s.attempt, self.node_id, msg.rejecting_node,
                blocked_port=msg.blocked_port,
            ))
        s.retries += 1
        self._set_state(s, State.SELECTING, ctx)
        self.select_and_propose(s, ctx)

    def _release_leg(self, s: Session, ctx: NodeContext) -> None:
        if s.leg is None:
            return
        key = (s.id, self.node_id, s.attempt)
        self.free(key)
        ctx.send(ReleaseResources(self.node_id, s.leg_next_hop, s.id, s.attempt, self.node_id))
        s.leg = None
        s.leg_next_hop = None

    # -- steps 7-9: completion and start time ---------------------------------

    def on_reservation_complete(self, msg: ReservationComplete, ctx: NodeContext) -> None:
        s = self._session_for(msg)
        if s is None:
            return
        if s.is_lead:
            s.peer_reserved = True
            if s.leg == "acked":
                self._finish_reservation(s, ctx)
        else:
            self._set_state(s, State.RESERVATION_DONE, ctx)

    def _finish_reservation(self, s: Session, ctx: NodeContext) -> None:
        self.complete_and_schedule(s, ctx)

    def complete_and_schedule(self, s: Session, ctx: NodeContext) -> list[Message]:
        self._set_state(s, State.RESERVATION_DONE, ctx)
        bsa, port = s.target
        ctx.log("reservation_done", s.id, attempt=s.attempt, bsa=bsa, lead_port=port,
                cost=s.attempted_costs[-1], retries=s.retries)
        start = ctx.now + self.config.reconfiguration_delay
        s.start_time = start
        out = [
            ReservationComplete(self.node_id, s.peer, s.id, s.attempt),
            ProposeStartTime(self.node_id, s.peer, s.id, start),
        ]
        for m in out:
            ctx.send(m)
        self._set_state(s, State.AWAITING_START_ACK, ctx)
        return out

    def on_propose(self, msg: ProposeStartTime, ctx: NodeContext) -> None:
        s = self._session_for(msg)
        if s is None or s.is_lead:
            return
        s.start_time = msg.start_time
        ctx.send(StartTimeAck(self.node_id, s.peer, s.id))
        self._activate(s, ctx)

    def on_start_ack(self, msg: StartTimeAck, ctx: NodeContext) -> None:
        s = self._session_for(msg)
        if s is None or not s.is_lead or s.state is not State.AWAITING_START_ACK:
            return
        s.completed_at = ctx.now
        self._activate(s, ctx)
        ctx.log(
            "active", s.id,
            peer=s.peer, created_at=s.created_at, completed_at=s.completed_at,
            queued=s.queued, queue_wait=s.queue_wait, retries=s.retries,
            bsa=s.target[0], attempts=len(s.attempted_costs), candidates=len(s.candidates),
            attempted_costs=list(s.attempted_costs), skipped=s.skipped,
        )

    def _activate(self, s: Session, ctx: NodeContext) -> None:
        self._set_state(s, State.ACTIVE, ctx)
        hold_from = max(ctx.now, s.start_time or ctx.now)
        ctx.set_timer(hold_from - ctx.now + self.config.session_hold, "hold_end", s.id)

    def _end_session(self, s: Session, ctx: NodeContext) -> None:
        self._release_leg(s, ctx)
        self._set_state(s, State.ENDED, ctx)
        ctx.log("session_end", s.id, role=s.role)
        self.current = None
        self._maybe_dequeue(ctx)

    def on_queued_notice(self, msg: RequestQueuedNotice, ctx: NodeContext) -> None:
        s = self.current
        if s is not None and s.id == msg.session and not s.is_lead:
            self._release_leg(s, ctx)
            self._set_state(s, State.ENDED, ctx)
            self.current = None
        elif s is None and self.follow_for == msg.src:
            self.follow_for = None
        else:
            return
        ctx.log("peer_queued", msg.session)
        self._maybe_dequeue(ctx)


NODE_CLASSES: dict[NodeKind, type[Node]] = {
    NodeKind.END_NODE: EndNode,
    NodeKind.SWITCH: SwitchNode,
    NodeKind.BSA: BsaNode,
}
