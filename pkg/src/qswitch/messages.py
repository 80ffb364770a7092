"""Classical control-plane messages exchanged between node sandboxes."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Any, NamedTuple

from .discovery import BsaTable
from .topology import NodeId, PortId


class SessionId(NamedTuple):
    lead: NodeId
    serial: int

    def __str__(self) -> str:
        return f"{self.lead}.{self.serial}"


@dataclass(frozen=True)
class Message:
    src: NodeId
    dst: NodeId

    @property
    def kind(self) -> str:
        return type(self).__name__

    def describe(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, BsaTable):
                value = len(value)
            elif isinstance(value, SessionId):
                value = str(value)
            out[f.name] = value
        return out


@dataclass(frozen=True)
class RequestBsaTable(Message):
    pass


@dataclass(frozen=True)
class BsaTableResponse(Message):
    """The peer's table, or ``busy=True`` with no table when the peer's port is taken."""

    table: BsaTable | None = None
    busy: bool = False


@dataclass(frozen=True)
class SessionMessage(Message):
    session: SessionId


@dataclass(frozen=True)
class TargetSelection(SessionMessage):
    attempt: int
    bsa: NodeId
    port_for_receiver: PortId
    candidate_rank: int


@dataclass(frozen=True)
class TargetAck(SessionMessage):
    attempt: int


# A leg is one of the two paths of a session, named by the end node that
# reserves it.  Reservations are keyed by (session, leg, attempt) so that
# releases of an abandoned attempt never touch a newer one.


@dataclass(frozen=True)
class RouteReserveRequest(SessionMessage):
    attempt: int
    bsa: NodeId
    bsa_port: PortId
    requester: NodeId
    path: tuple[NodeId, ...]
    in_port: PortId


@dataclass(frozen=True)
class RouteReserveAck(SessionMessage):
    attempt: int
    requester: NodeId
    path: tuple[NodeId, ...]


@dataclass(frozen=True)
class RouteReserveReject(SessionMessage):
    """Relayed back along ``path``; also sent end to end to abort the peer's leg."""

    attempt: int
    requester: NodeId
    rejecting_node: NodeId
    path: tuple[NodeId, ...] = ()
    blocked_port: PortId | None = None


@dataclass(frozen=True)
class ReleaseResources(SessionMessage):
    attempt: int
    requester: NodeId


@dataclass(frozen=True)
class ReservationComplete(SessionMessage):
    attempt: int


@dataclass(frozen=True)
class ProposeStartTime(SessionMessage):
    start_time: int


@dataclass(frozen=True)
class StartTimeAck(SessionMessage):
    pass


@dataclass(frozen=True)
class RequestQueuedNotice(SessionMessage):
    pass


def reservation_key(msg: RouteReserveRequest | ReleaseResources | RouteReserveAck) -> tuple:
    return (msg.session, msg.requester, msg.attempt)

