"""Network graph model, Q-Fly generator and the ``.topo`` text format.

A topology is a directed multigraph whose edges are port-to-port channels.
A channel forwards a flying qubit from ``src:src_port`` to ``dst:dst_port``.
Bidirectional links are two channels sharing the same port pair.
"""

from __future__ import annotations

import logging
import re
from collections import defaultdict, deque
from dataclasses import dataclass
from enum import Enum
from functools import cached_property, lru_cache
from typing import Iterable, Mapping

log = logging.getLogger(__name__)

NodeId = int
PortId = int


class TopologyError(Exception):
    pass


class InvalidParams(TopologyError):
    pass


class UnknownNode(TopologyError, KeyError):
    pass


class ParseError(TopologyError):
    def __init__(self, line: int, column: int, reason: str):
        super().__init__(f"line {line}, column {column}: {reason}")
        self.line = line
        self.column = column
        self.reason = reason


class ValidationError(TopologyError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = list(violations)


class NodeKind(str, Enum):
    END_NODE = "endnode"
    SWITCH = "switch"
    BSA = "bsa"


class Direction(str, Enum):
    OUT = "out"
    IN = "in"
    BOTH = "both"


@dataclass(frozen=True, order=True)
class Channel:
    src: NodeId
    src_port: PortId
    dst: NodeId
    dst_port: PortId

    def __str__(self) -> str:
        return f"{self.src}:{self.src_port} -> {self.dst}:{self.dst_port}"


@dataclass(frozen=True, order=True)
class Adjacency:
    """One entry of a node's local connectivity, as seen from that node."""

    neighbor: NodeId
    local_port: PortId
    remote_port: PortId
    direction: Direction


@dataclass(frozen=True, eq=False)
class Topology:
    nodes: Mapping[NodeId, NodeKind]
    channels: tuple[Channel, ...]
    name: str = ""

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Topology):
            return NotImplemented
        return (
            dict(self.nodes) == dict(other.nodes)
            and sorted(self.channels) == sorted(other.channels)
            and self.name == other.name
        )

    __hash__ = None  # type: ignore[assignment]

    def kind(self, node: NodeId) -> NodeKind:
        try:
            return self.nodes[node]
        except KeyError:
            raise UnknownNode(node) from None

    def of_kind(self, kind: NodeKind) -> list[NodeId]:
        return sorted(n for n, k in self.nodes.items() if k is kind)

    @property
    def end_nodes(self) -> list[NodeId]:
        return self.of_kind(NodeKind.END_NODE)

    @property
    def switches(self) -> list[NodeId]:
        return self.of_kind(NodeKind.SWITCH)

    @property
    def bsas(self) -> list[NodeId]:
        return self.of_kind(NodeKind.BSA)

    @cached_property
    def out_channels(self) -> dict[NodeId, tuple[Channel, ...]]:
        out: dict[NodeId, list[Channel]] = defaultdict(list)
        for ch in self.channels:
            out[ch.src].append(ch)
        return {n: tuple(sorted(out.get(n, ()))) for n in self.nodes}

    @cached_property
    def in_channels(self) -> dict[NodeId, tuple[Channel, ...]]:
        inc: dict[NodeId, list[Channel]] = defaultdict(list)
        for ch in self.channels:
            inc[ch.dst].append(ch)
        return {n: tuple(sorted(inc.get(n, ()))) for n in self.nodes}

    @cached_property
    def undirected(self) -> dict[NodeId, tuple[NodeId, ...]]:
        adj: dict[NodeId, set[NodeId]] = {n: set() for n in self.nodes}
        for ch in self.channels:
            adj[ch.src].add(ch.dst)
            adj[ch.dst].add(ch.src)
        return {n: tuple(sorted(v)) for n, v in adj.items()}

    def hop_distances(self, source: NodeId) -> dict[NodeId, int]:
        """BFS hop counts over the undirected projection (the classical graph)."""
        self.kind(source)
        dist = {source: 0}
        frontier = deque([source])
        while frontier:
            u = frontier.popleft()
            for v in self.undirected[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    frontier.append(v)
        return dist

    def counts(self) -> dict[NodeKind, int]:
        return {k: len(self.of_kind(k)) for k in NodeKind}


def neighbors(topo: Topology, node: NodeId) -> list[Adjacency]:
    """Adjacency list of ``node`` covering outbound and inbound channels.

    A port pair carrying channels both ways is reported once as ``BOTH``.
    Ordered by neighbor id, then local port.
    """
    topo.kind(node)
    seen: dict[tuple[NodeId, PortId, PortId], set[Direction]] = defaultdict(set)
    for ch in topo.out_channels[node]:
        seen[(ch.dst, ch.src_port, ch.dst_port)].add(Direction.OUT)
    for ch in topo.in_channels[node]:
        seen[(ch.src, ch.dst_port, ch.src_port)].add(Direction.IN)
    result = []
    for (nbr, local, remote), dirs in seen.items():
        direction = Direction.BOTH if len(dirs) == 2 else next(iter(dirs))
        result.append(Adjacency(nbr, local, remote, direction))
    result.sort(key=lambda a: (a.neighbor, a.local_port, a.remote_port, a.direction.value))
    return result


def validate(topo: Topology) -> list[str]:
    """Return every violated invariant; an empty list means valid.

    Disconnection is only logged as a warning, it does not make the
    topology invalid.
    """
    problems = []
    if not topo.nodes:
        problems.append("topology has no nodes")
    for n in topo.nodes:
        if n < 0:
            problems.append(f"node id {n} is negative")
    out_seen: set[tuple[NodeId, PortId]] = set()
    in_seen: set[tuple[NodeId, PortId]] = set()
    for ch in topo.channels:
        for end in (ch.src, ch.dst):
            if end not in topo.nodes:
                problems.append(f"channel {ch} references unknown node {end}")
        if ch.src_port < 0 or ch.dst_port < 0:
            problems.append(f"channel {ch} has a negative port")
        if ch.src == ch.dst:
            problems.append(f"channel {ch} is a self loop")
        if (ch.src, ch.src_port) in out_seen:
            problems.append(f"endpoint {ch.src}:{ch.src_port} has more than one outbound channel")
        if (ch.dst, ch.dst_port) in in_seen:
            problems.append(f"endpoint {ch.dst}:{ch.dst_port} has more than one inbound channel")
        out_seen.add((ch.src, ch.src_port))
        in_seen.add((ch.dst, ch.dst_port))
    if problems:
        return problems

    for b in topo.bsas:
        inbound = topo.in_channels[b]
        ports = {ch.dst_port for ch in inbound}
        if len(inbound) != 2 or len(ports) != 2:
            problems.append(
                f"BSA {b} must have exactly 2 inbound channels on distinct ports, has {len(inbound)}"
            )
        if topo.out_channels[b]:
            problems.append(f"BSA {b} must not have outbound channels")

    if topo.nodes and len(topo.hop_distances(min(topo.nodes))) != len(topo.nodes):
        log.warning("topology %r is not connected; some BSA tables will be partial", topo.name)
    return problems


def check(topo: Topology) -> Topology:
    problems = validate(topo)
    if problems:
        raise ValidationError(problems)
    return topo


# -- Q-Fly -----------------------------------------------------------------


@dataclass(frozen=True)
class QFlyParams:
    """Q-Fly parameters.

    ``g`` groups, ``p`` end nodes per group, ``b`` BSAs per group, ``k`` the
    group switch radix (metadata only) and an optional total end-node count.
    """

    g: int
    p: int
    b: int
    k: int | None = None
    n_override: int | None = None
    variant: str = "QFly"

    @property
    def n_end_nodes(self) -> int:
        return self.g * self.p if self.n_override is None else self.n_override

    def group_sizes(self) -> list[int]:
        n = self.n_end_nodes
        base, extra = divmod(n, self.g)
        return [base + (1 if i < extra else 0) for i in range(self.g)]

    def check(self) -> None:
        bad = []
        for name in ("g", "p", "b"):
            if getattr(self, name) < 1:
                bad.append(f"{name} must be >= 1")
        if self.n_override is not None:
            if self.n_override < 0:
                bad.append("n_override must be >= 0")
            elif self.n_override > self.g * self.p:
                bad.append(f"n_override={self.n_override} exceeds g*p={self.g * self.p}")
        if bad:
            raise InvalidParams("; ".join(bad))


SPHD20 = QFlyParams(g=5, p=5, b=2, k=6, n_override=20, variant="SPHD")
DPHD42 = QFlyParams(g=7, p=6, b=3, k=12, n_override=42, variant="DPHD")
PRESETS: dict[str, QFlyParams] = {"sphd20": SPHD20, "dphd42": DPHD42}


@lru_cache(maxsize=32)
def generate_qfly(params: QFlyParams) -> Topology:
    """Build a Q-Fly network.

    Each group has one switch.  Switches are fully connected to each other;
    end nodes attach bidirectionally to their group switch; each BSA has both
    input ports fed by its group switch.  Ids: switches, then BSAs, then end
    nodes, each group by group.  Switch ports: end nodes first, then two per
    BSA, then one per peer switch in id order.
    """
    params.check()
    g, b = params.g, params.b
    sizes = params.group_sizes()
    radix_used = max(sizes) + 2 * b + (g - 1)
    if params.k is not None and params.k != radix_used:
        log.warning("radix k=%d differs from the %d switch ports this wiring uses", params.k, radix_used)

    nodes: dict[NodeId, NodeKind] = {}
    switches = list(range(g))
    for s in switches:
        nodes[s] = NodeKind.SWITCH
    bsas = [[g + gi * b + j for j in range(b)] for gi in range(g)]
    for group in bsas:
        for x in group:
            nodes[x] = NodeKind.BSA
    next_id = g + g * b
    ends: list[list[NodeId]] = []
    for size in sizes:
        ends.append(list(range(next_id, next_id + size)))
        next_id += size
    for group in ends:
        for e in group:
            nodes[e] = NodeKind.END_NODE

    channels: list[Channel] = []
    for gi, sw in enumerate(switches):
        port = 0
        for e in ends[gi]:
            channels.append(Channel(e, 0, sw, port))
            channels.append(Channel(sw, port, e, 0))
            port += 1
        for x in bsas[gi]:
            channels.append(Channel(sw, port, x, 0))
            channels.append(Channel(sw, port + 1, x, 1))
            port += 2
        for other in switches:
            if other == sw:
                continue
            # port on `other` facing `sw`: same layout rule seen from the other side
            remote = len(ends[other]) + 2 * b + (sw if sw < other else sw - 1)
            channels.append(Channel(sw, port, other, remote))
            port += 1

    name = f"{params.variant}-{params.n_end_nodes}"
    return check(Topology(nodes=nodes, channels=tuple(sorted(channels)), name=name))


# -- text format -------------------------------------------------------------

_NODE_RE = re.compile(r"^node\s+(\S+)\s+(\S+)\s*$")
_CHANNEL_RE = re.compile(r"^channel\s+(\S+)\s*->\s*(\S+)\s*$")
_NAME_RE = re.compile(r"^name\s+(\S.*?)\s*$")


def _int(token: str, lineno: int, col: int, what: str) -> int:
    if not re.fullmatch(r"\d+", token):
        raise ParseError(lineno, col, f"{what} must be a non-negative integer, got {token!r}")
    return int(token)


def _endpoint(token: str, lineno: int, col: int) -> tuple[int, int]:
    node, sep, port = token.partition(":")
    if not sep:
        raise ParseError(lineno, col, f"expected <node>:<port>, got {token!r}")
    return _int(node, lineno, col, "node id"), _int(port, lineno, col + len(node) + 1, "port")


def load_topology(text: str) -> Topology:
    """Parse the line-oriented topology format.

    Raises ParseError on the first malformed line and ValidationError listing
    all invariant violations of a well-formed file.
    """
    nodes: dict[NodeId, NodeKind] = {}
    channels: list[Channel] = []
    name = ""
    problems = []
    kinds = {k.value: k for k in NodeKind}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        stripped = line.lstrip()
        if not stripped:
            continue
        indent = len(line) - len(stripped) + 1
        if m := _NODE_RE.match(stripped):
            nid = _int(m.group(1), lineno, indent + m.start(1), "node id")
            kind = kinds.get(m.group(2).lower())
            if kind is None:
                raise ParseError(lineno, indent + m.start(2), f"unknown node kind {m.group(2)!r}")
            if nid in nodes:
                problems.append(f"line {lineno}: duplicate node id {nid}")
            nodes[nid] = kind
        elif m := _CHANNEL_RE.match(stripped):
            src, sport = _endpoint(m.group(1), lineno, indent + m.start(1))
            dst, dport = _endpoint(m.group(2), lineno, indent + m.start(2))
            channels.append(Channel(src, sport, dst, dport))
        elif m := _NAME_RE.match(stripped):
            name = m.group(1)
        else:
            keyword = stripped.split()[0]
            raise ParseError(lineno, indent, f"unrecognised statement {keyword!r}")

    if len(set(channels)) != len(channels):
        problems.append("duplicate channel declarations")
    topo = Topology(nodes=nodes, channels=tuple(sorted(set(channels))), name=name)
    problems.extend(validate(topo))
    if problems:
        raise ValidationError(problems)
    return topo


def serialize_topology(topo: Topology) -> str:
    lines = []
    if topo.name:
        lines.append(f"name {topo.name}")
    for n in sorted(topo.nodes):
        lines.append(f"node {n} {topo.nodes[n].value}")
    for ch in sorted(topo.channels, key=lambda c: (c.src, c.dst, c.src_port, c.dst_port)):
        lines.append(f"channel {ch}")
    return "\n".join(lines) + "\n"


def build(nodes: Iterable[tuple[NodeId, NodeKind]], links: Iterable[tuple], name: str = "") -> Topology:
    """Convenience constructor used by tests and scripts.

    ``links`` holds ``(a, a_port, b, b_port)`` for a bidirectional link or
    ``(a, a_port, b, b_port, "->")`` for a single forward channel.
    """
    chans = []
    for link in links:
        a, ap, b, bp = link[:4]
        chans.append(Channel(a, ap, b, bp))
        if len(link) == 4:
            chans.append(Channel(b, bp, a, ap))
    return check(Topology(nodes=dict(nodes), channels=tuple(sorted(chans)), name=name))
