"""Link-state flooding and per-node BSA forwarding tables.

Every node floods its local adjacency; once the flood is quiescent each
node runs Dijkstra over its own link-state database to find the cheapest
path to every BSA input port.  Cost is the hop count.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

from .topology import Adjacency, Direction, NodeId, NodeKind, PortId

# Only switches forward photons; end nodes sit on the network boundary and
# BSAs absorb what reaches them.
TRANSIT_KINDS = frozenset({NodeKind.SWITCH})


@dataclass(frozen=True)
class LinkStateAnnouncement:
    origin: NodeId
    origin_kind: NodeKind
    seq: int
    adjacency: tuple[Adjacency, ...]


@dataclass(frozen=True, order=True)
class BsaTableEntry:
    cost: int
    bsa: NodeId
    bsa_port: PortId
    next_hop: NodeId

    def __str__(self) -> str:
        return f"bsa={self.bsa} port={self.bsa_port} cost={self.cost} next_hop={self.next_hop}"


@dataclass(frozen=True)
class BsaTable:
    owner: NodeId
    entries: tuple[BsaTableEntry, ...] = ()
    _index: dict = field(default=None, init=False, repr=False, compare=False)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(sorted(self.entries)))
        object.__setattr__(self, "_index", {(e.bsa, e.bsa_port): e for e in self.entries})

    def lookup(self, bsa: NodeId, port: PortId) -> BsaTableEntry | None:
        return self._index.get((bsa, port))

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def dump(self) -> str:
        return "".join(f"{e}\n" for e in self.entries)


class LinkStateNode:
    """The discovery half of a node: its own adjacency plus the LSDB it learns."""

    def __init__(self, node_id: NodeId, kind: NodeKind, adjacency: list[Adjacency]):
        self.node_id = node_id
        self.kind = kind
        self.adjacency = tuple(adjacency)
        self.lsdb: dict[NodeId, LinkStateAnnouncement] = {}
        self._seq = -1

    @property
    def interfaces(self) -> list[PortId]:
        return sorted({a.local_port for a in self.adjacency})

    def emit_announcement(self) -> LinkStateAnnouncement:
        self._seq += 1
        lsa = LinkStateAnnouncement(self.node_id, self.kind, self._seq, self.adjacency)
        self.lsdb[self.node_id] = lsa
        return lsa

    def handle_announcement(
        self, lsa: LinkStateAnnouncement, arrival_interface: PortId | None
    ) -> list[tuple[PortId, LinkStateAnnouncement]]:
        known = self.lsdb.get(lsa.origin)
        if known is not None and known.seq >= lsa.seq:
            return []
        self.lsdb[lsa.origin] = lsa
        return [(port, lsa) for port in self.interfaces if port != arrival_interface]

    def compute_bsa_table(self) -> BsaTable:
        return compute_bsa_table(self.lsdb, self.node_id)


def _out_edges(lsdb: dict[NodeId, LinkStateAnnouncement]) -> dict[NodeId, list[tuple[NodeId, PortId, PortId]]]:
    """(neighbor, local port, remote port) of every outbound channel, lowest local port first."""
    out: dict[NodeId, list[tuple[NodeId, PortId, PortId]]] = {}
    for origin, lsa in lsdb.items():
        for adj in lsa.adjacency:
            if adj.direction in (Direction.OUT, Direction.BOTH):
                out.setdefault(origin, []).append((adj.neighbor, adj.local_port, adj.remote_port))
            if adj.direction in (Direction.IN, Direction.BOTH) and adj.neighbor not in lsdb:
                # channel from a node whose own LSA never arrived
                out.setdefault(adj.neighbor, []).append((origin, adj.remote_port, adj.local_port))
    for edges in out.values():
        edges.sort()
    return out


def bsa_paths(
    lsdb: dict[NodeId, LinkStateAnnouncement], owner: NodeId
) -> dict[tuple[NodeId, PortId], tuple[int, tuple[NodeId, ...]]]:
    """Cheapest path from ``owner`` to every reachable BSA input port.

    Equal-cost paths are broken by comparing the node-id sequences
    lexicographically, so every node derives the same route a hop-by-hop
    forwarder would follow.
    """
    kinds = {origin: lsa.origin_kind for origin, lsa in lsdb.items()}
    out = _out_edges(lsdb)

    best: dict[NodeId, tuple[int, tuple[NodeId, ...]]] = {}
    heap: list[tuple[int, tuple[NodeId, ...]]] = [(0, (owner,))]
    while heap:
        cost, path = heapq.heappop(heap)
        u = path[-1]
        if u in best:
            continue
        best[u] = (cost, path)
        if u != owner and kinds.get(u) not in TRANSIT_KINDS:
            continue
        for v, _, _ in out.get(u, ()):
            if v not in best:
                heapq.heappush(heap, (cost + 1, path + (v,)))

    ports: dict[tuple[NodeId, PortId], tuple[int, tuple[NodeId, ...]]] = {}
    for u, (cost, path) in best.items():
        if u != owner and kinds.get(u) not in TRANSIT_KINDS:
            continue
        for v, _, vport in out.get(u, ()):
            if kinds.get(v) is not NodeKind.BSA or v == owner:
                continue
            cand = (cost + 1, path + (v,))
            if (v, vport) not in ports or cand < ports[(v, vport)]:
                ports[(v, vport)] = cand
    return ports


def compute_bsa_table(lsdb: dict[NodeId, LinkStateAnnouncement], owner: NodeId) -> BsaTable:
    entries = [
        BsaTableEntry(cost=cost, bsa=bsa, bsa_port=port, next_hop=path[1])
        for (bsa, port), (cost, path) in bsa_paths(lsdb, owner).items()
    ]
    return BsaTable(owner, tuple(entries))


def path_ports(
    lsdb: dict[NodeId, LinkStateAnnouncement], path: tuple[NodeId, ...], bsa_port: PortId
) -> frozenset[tuple[NodeId, PortId]]:
    """Every (node, port) a reservation along ``path`` would hold."""
    out = _out_edges(lsdb)
    used = set()
    for i, (u, v) in enumerate(zip(path, path[1:])):
        last = i == len(path) - 2
        for nbr, local, remote in out.get(u, ()):
            if nbr == v and (not last or remote == bsa_port):
                used.add((u, local))
                used.add((v, remote))
                break
    return frozenset(used)
