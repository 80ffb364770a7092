"""Deterministic discrete-event engine for the switching protocol.

Each node lives in its own sandbox and only sees messages and timers the
engine delivers to it.  A run has two phases: link-state flooding until the
network is quiet, then Poisson request traffic until the horizon plus a
grace period for queued work to drain.

Randomness comes from :class:`random.Random` (MT19937) seeded with
``SimConfig.seed``, so runs replay identically on every platform.
"""

from __future__ import annotations

import heapq
import json
import logging
import math
import random
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, NamedTuple

from .discovery import LinkStateAnnouncement
from .messages import Message, SessionId
from .protocol import NODE_CLASSES, BsaNode, EndNode, Node, ProtocolConfig
from .topology import NodeId, NodeKind, PortId, QFlyParams, Topology, generate_qfly, neighbors

log = logging.getLogger(__name__)


class SimulationError(Exception):
    pass


class PastEvent(SimulationError):
    pass


class Unreachable(SimulationError):
    pass


class DeadlockDetected(SimulationError):
    pass


class InvariantViolation(SimulationError, AssertionError):
    pass


@dataclass(frozen=True)
class SimConfig:
    topology: Topology | QFlyParams
    lam: float = 100.0
    horizon: int = 10_000
    seed: int = 0
    hop_latency: int = 1
    dequeue_delay: int = 100
    session_hold: int = 10
    reconfiguration_delay: int = 0
    request_timeout: int = 10_000
    grace: int = 10_000
    # "address": messages go straight to the addressee in one hop_latency;
    # "hops": hop_latency per hop over the shared classical/quantum graph
    classical: str = "address"
    check_invariants: bool = False
    log_messages: bool = True

    def __post_init__(self) -> None:
        if not self.lam > 0:
            raise ValueError("lambda must be > 0")
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        if self.hop_latency < 1:
            raise ValueError("hop_latency must be >= 1")
        if self.classical not in ("address", "hops"):
            raise ValueError(f"unknown classical model {self.classical!r}")

    def resolve_topology(self) -> Topology:
        if isinstance(self.topology, QFlyParams):
            return generate_qfly(self.topology)
        return self.topology

    def protocol_config(self) -> ProtocolConfig:
        return ProtocolConfig(
            session_hold=self.session_hold,
            reconfiguration_delay=self.reconfiguration_delay,
            request_timeout=self.request_timeout,
            dequeue_delay=self.dequeue_delay,
        )

    def with_(self, **changes: Any) -> "SimConfig":
        return replace(self, **changes)


class TrafficRequest(NamedTuple):
    at: int
    src: NodeId
    dst: NodeId


class LogRecord(NamedTuple):
    time: int
    node: NodeId | None
    session: str | None
    event: str
    detail: dict

    def to_json(self) -> str:
        return json.dumps(
            {"time": self.time, "node": self.node, "session": self.session,
             "event": self.event, "detail": self.detail},
            sort_keys=True, default=str,
        )

    @classmethod
    def from_json(cls, line: str) -> "LogRecord":
        d = json.loads(line)
        return cls(d["time"], d["node"], d["session"], d["event"], d["detail"])


# -- event queue -----------------------------------------------------------


class Deliver(NamedTuple):
    msg: Message


class Timer(NamedTuple):
    node: NodeId
    kind: str
    data: Any


class Flood(NamedTuple):
    node: NodeId
    port: PortId
    lsa: LinkStateAnnouncement


class Event(NamedTuple):
    fire_at: int
    seq: int
    payload: Any


class Engine:
    """Priority queue of events ordered by (fire_at, seq)."""

    def __init__(self) -> None:
        self.now = 0
        self._heap: list[Event] = []
        self._seq = 0
        self.processed = 0

    def __len__(self) -> int:
        return len(self._heap)

    def schedule(self, fire_at: int, payload: Any) -> Event:
        if fire_at < self.now:
            raise PastEvent(f"event at {fire_at} scheduled when clock is {self.now}")
        event = Event(fire_at, self._seq, payload)
        self._seq += 1
        heapq.heappush(self._heap, event)
        return event

    def peek_time(self) -> int | None:
        return self._heap[0].fire_at if self._heap else None

    def pop(self) -> Event:
        event = heapq.heappop(self._heap)
        if event.fire_at < self.now:
            raise PastEvent(f"causality: event at {event.fire_at} popped at {self.now}")
        self.now = event.fire_at
        self.processed += 1
        return event

    def run(self, handler: Callable[[Event], None], until: int | None = None) -> None:
        while self._heap and (until is None or self._heap[0].fire_at <= until):
            handler(self.pop())


# -- classical routing and traffic -----------------------------------------


def route_classical(topo: Topology, src: NodeId, dst: NodeId, hop_latency: int = 1,
                    mode: str = "hops") -> int:
    """Delivery delay of an addressed classical message, in time steps."""
    topo.kind(src)
    topo.kind(dst)
    if src == dst:
        return 0
    dist = topo.hop_distances(src)
    if dst not in dist:
        raise Unreachable(f"no classical path from {src} to {dst}")
    if mode == "address":
        return hop_latency
    return hop_latency * dist[dst]


def broadcast_targets(topo: Topology, src: NodeId) -> list[NodeId]:
    topo.kind(src)
    return [n for n in sorted(topo.nodes) if n != src]


def generate_traffic(config: SimConfig, rng: random.Random | None = None,
                     topology: Topology | None = None) -> list[TrafficRequest]:
    """Poisson arrivals: exponential gaps of mean ``lam``, rounded up to whole steps."""
    topo = topology or config.resolve_topology()
    ends = topo.end_nodes
    if len(ends) < 2:
        raise ValueError("traffic needs at least two end nodes")
    rng = rng or random.Random(config.seed)
    requests = []
    t = 0
    while True:
        t += max(1, math.ceil(rng.expovariate(1.0 / config.lam)))
        if t >= config.horizon:
            break
        src = rng.choice(ends)
        dst = rng.choice([e for e in ends if e != src])
        requests.append(TrafficRequest(t, src, dst))
    return requests


# -- simulation ------------------------------------------------------------


class _Context:
    """What a node is allowed to touch: its clock, its outbox, its timers, the log."""

    __slots__ = ("_sim", "_node")

    def __init__(self, sim: "Simulation", node: NodeId):
        self._sim = sim
        self._node = node

    @property
    def now(self) -> int:
        return self._sim.engine.now

    def send(self, msg: Message) -> None:
        if msg.src != self._node:
            raise InvariantViolation(f"node {self._node} tried to send as {msg.src}")
        self._sim.send(msg)

    def broadcast(self, make: Callable[[NodeId], Message]) -> None:
        for dst in broadcast_targets(self._sim.topology, self._node):
            self.send(make(dst))

    def set_timer(self, delay: int, kind: str, data: Any = None) -> None:
        self._sim.engine.schedule(self.now + delay, Timer(self._node, kind, data))

    def log(self, event: str, session: SessionId | None = None, **detail: Any) -> None:
        self._sim.record(self._node, session, event, detail)
        if event == "reservation_done" and self._sim.config.check_invariants:
            self._sim.check_paths(session, detail["attempt"])


@dataclass
class SimResult:
    config: SimConfig
    topology: Topology
    log: list[LogRecord]
    requests: list[TrafficRequest]
    discovery_messages: int
    discovery_end: int
    end_time: int
    unfinished: int = 0
    sessions_per_bsa: dict[NodeId, int] = field(default_factory=dict)

    def dump_log(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.log:
                fh.write(rec.to_json() + "\n")


class Simulation:
    def __init__(self, config: SimConfig, topology: Topology | None = None):
        self.config = config
        self.topology = topology or config.resolve_topology()
        self.engine = Engine()
        self.log: list[LogRecord] = []
        pconf = config.protocol_config()
        self.nodes: dict[NodeId, Node] = {
            nid: NODE_CLASSES[kind](nid, neighbors(self.topology, nid), pconf)
            for nid, kind in sorted(self.topology.nodes.items())
        }
        self._ctx = {nid: _Context(self, nid) for nid in self.nodes}
        self._links: dict[tuple[NodeId, PortId], list[tuple[NodeId, PortId]]] = {}
        for nid, node in self.nodes.items():
            for a in node.adjacency:
                peers = self._links.setdefault((nid, a.local_port), [])
                if (a.neighbor, a.remote_port) not in peers:
                    peers.append((a.neighbor, a.remote_port))
        self._hops: dict[NodeId, dict[NodeId, int]] = {}
        self.discovery_messages = 0
        self.discovery_end = 0
        self.requests: list[TrafficRequest] = []
        self.isolated: set[NodeId] = set()

    # -- plumbing ------------------------------------------------------------

    def record(self, node: NodeId | None, session: SessionId | None, event: str, detail: dict) -> None:
        self.log.append(LogRecord(self.engine.now, node, str(session) if session is not None else None,
                                  event, detail))

    def delay(self, src: NodeId, dst: NodeId) -> int:
        if self.config.classical == "address":
            return self.config.hop_latency
        if src not in self._hops:
            self._hops[src] = self.topology.hop_distances(src)
        if dst not in self._hops[src]:
            raise Unreachable(f"no classical path from {src} to {dst}")
        return self.config.hop_latency * self._hops[src][dst]

    def send(self, msg: Message) -> None:
        if msg.dst not in self.nodes:
            raise Unreachable(f"unknown destination {msg.dst}")
        if self.config.log_messages:
            self.record(msg.src, getattr(msg, "session", None), "send", msg.describe())
        if msg.src in self.isolated or msg.dst in self.isolated:
            return
        self.engine.schedule(self.engine.now + self.delay(msg.src, msg.dst), Deliver(msg))

    def isolate(self, node: NodeId) -> None:
        """Drop every message to or from ``node`` from now on."""
        self.isolated.add(node)

    def _dispatch(self, event: Event) -> None:
        payload = event.payload
        if isinstance(payload, Deliver):
            msg = payload.msg
            if self.config.log_messages:
                self.record(msg.dst, getattr(msg, "session", None), "recv", {"kind": msg.kind, "src": msg.src})
            self.nodes[msg.dst].on_message(msg, self._ctx[msg.dst])
        elif isinstance(payload, Timer):
            self.nodes[payload.node].on_timer(payload.kind, payload.data, self._ctx[payload.node])
        elif isinstance(payload, Flood):
            self._flood_arrival(payload)
        else:
            raise SimulationError(f"unknown event payload {payload!r}")
        if self.config.check_invariants:
            self.audit_ports()

    # -- phase 1: discovery ------------------------------------------------

    def _flood_send(self, node: NodeId, port: PortId, lsa: LinkStateAnnouncement) -> None:
        if node in self.isolated:
            return
        for nbr, nbr_port in self._links.get((node, port), ()):
            if nbr in self.isolated:
                continue
            self.discovery_messages += 1
            self.engine.schedule(self.engine.now + self.config.hop_latency, Flood(nbr, nbr_port, lsa))

    def _flood_arrival(self, f: Flood) -> None:
        node = self.nodes[f.node]
        for port, lsa in node.discovery.handle_announcement(f.lsa, f.port):
            self._flood_send(f.node, port, lsa)

    def discover(self) -> int:
        for nid, node in self.nodes.items():
            lsa = node.discovery.emit_announcement()
            for port in node.discovery.interfaces:
                self._flood_send(nid, port, lsa)
        self.engine.run(self._dispatch)
        for node in self.nodes.values():
            node.build_table()
        self.discovery_end = self.engine.now
        self.record(None, None, "discovery_done", {"messages": self.discovery_messages})
        return self.discovery_messages

    # -- phase 2: traffic --------------------------------------------------

    def inject(self, requests: Iterable[TrafficRequest], offset: int | None = None) -> None:
        base = self.discovery_end if offset is None else offset
        for req in requests:
            if self.topology.kind(req.src) is not NodeKind.END_NODE or self.topology.kind(req.dst) is not NodeKind.END_NODE:
                raise ValueError(f"request {req} must join two end nodes")
            self.requests.append(req)
            self.engine.schedule(base + req.at, Timer(req.src, "arrival", req.dst))

    def pending_sessions(self) -> list[NodeId]:
        return [nid for nid, n in self.nodes.items() if isinstance(n, EndNode) and not n.idle]

    def run_until(self, until: int | None) -> None:
        self.engine.run(self._dispatch, until)

    def finish(self) -> SimResult:
        cutoff = self.discovery_end + self.config.horizon + self.config.grace
        self.run_until(cutoff)
        pending = self.pending_sessions()
        if pending and not len(self.engine):
            raise DeadlockDetected(f"end nodes {pending} still hold work but no events remain")
        unfinished = sum(
            (1 if n.current is not None and n.current.is_lead else 0) + len(n.queue)
            for n in self.nodes.values() if isinstance(n, EndNode)
        )
        if unfinished:
            log.warning("%d requests unfinished at cutoff %d", unfinished, cutoff)
        served = {nid: n.sessions_served for nid, n in self.nodes.items() if isinstance(n, BsaNode)}
        return SimResult(
            config=self.config, topology=self.topology, log=self.log, requests=list(self.requests),
            discovery_messages=self.discovery_messages, discovery_end=self.discovery_end,
            end_time=self.engine.now, unfinished=unfinished, sessions_per_bsa=served,
        )

    # -- global audits (test and debug only; nodes never see these) ------------

    def audit_ports(self) -> None:
        for nid, node in self.nodes.items():
            for port, r in node.reservations.items():
                if r.port != port:
                    raise InvariantViolation(f"node {nid} port {port} indexed under wrong port")
            if not isinstance(node, EndNode):
                keys = {r.key for r in node.reservations.values()}
                if keys != set(node.holds):
                    raise InvariantViolation(f"node {nid} holds {set(node.holds)} but ports belong to {keys}")

    def reservations_for(self, session: SessionId) -> dict[NodeId, list]:
        out: dict[NodeId, list] = {}
        for nid, node in self.nodes.items():
            rs = [r for r in node.reservations.values() if r.session == session]
            if rs:
                out[nid] = rs
        return out

    def leg_path(self, session: SessionId, requester: NodeId, attempt: int) -> list[NodeId]:
        end = self.nodes[requester]
        s = end.current
        if s is None or s.id != session:
            raise InvariantViolation(f"{requester} is not running {session}")
        key = (session, requester, attempt)
        if not any(r.key == key for r in end.reservations.values()):
            raise InvariantViolation(f"{requester} holds no port for {key}")
        path = [requester]
        hop = s.leg_next_hop
        while hop is not None:
            node = self.nodes[hop]
            if key not in node.holds:
                raise InvariantViolation(f"leg {key} broken at node {hop}")
            path.append(hop)
            hop = node.holds[key]
            if len(path) > len(self.nodes):
                raise InvariantViolation(f"leg {key} loops")
        return path

    def check_paths(self, session: SessionId, attempt: int) -> None:
        lead = self.nodes[session.lead]
        s = lead.current
        peer = s.peer
        bsa, lead_port = s.target
        cand = s.candidates[s.current_candidate - 1]
        legs = {}
        for who, port in ((session.lead, cand.port_for_lead), (peer, cand.port_for_peer)):
            path = self.leg_path(session, who, attempt)
            if path[-1] != bsa:
                raise InvariantViolation(f"leg of {who} ends at {path[-1]}, expected BSA {bsa}")
            key = (session, who, attempt)
            held = [r.port for r in self.nodes[bsa].reservations.values() if r.key == key]
            if held != [port]:
                raise InvariantViolation(f"leg of {who} holds BSA ports {held}, expected [{port}]")
            cost = self.nodes[who].table.lookup(bsa, port).cost
            if len(path) - 1 != cost:
                raise InvariantViolation(f"leg of {who} has {len(path) - 1} hops but table cost {cost}")
            legs[who] = path
        if cand.port_for_lead == cand.port_for_peer:
            raise InvariantViolation("both legs target the same BSA port")


def run(config: SimConfig, requests: list[TrafficRequest] | None = None) -> SimResult:
    """Discovery, traffic, drain.  Same config and seed give an identical log."""
    sim = Simulation(config)
    sim.discover()
    if requests is None:
        requests = generate_traffic(config, random.Random(config.seed), sim.topology)
    sim.inject(requests)
    return sim.finish()
