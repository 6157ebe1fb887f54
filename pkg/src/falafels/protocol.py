"""Applicative topologies: packets, Mediator and NetworkManager automata.

Each simulated node runs two actors on its host: a Role (the learning
algorithm) and a NetworkManager (registration, routing, topology-specific
delivery).  They talk only through the Mediator, a pair of in-host
mailboxes with zero simulated cost.  Network managers exchange packets
across hosts and implement three applicative topologies over the physical
platform: star (a tree once proxies are involved), unidirectional ring,
and hierarchical (subclusters pre-aggregating toward a central node).
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional

from .kernel import Recv, Send, SimulationError

log = logging.getLogger("falafels.protocol")

# Packet kinds
REGISTRATION_REQUEST = "RegistrationRequest"
REGISTRATION_CONFIRMATION = "RegistrationConfirmation"
GLOBAL_MODEL = "GlobalModel"
LOCAL_MODEL = "LocalModel"
KILL = "Kill"

BROADCAST = "*"

# Registration and kill packets are small fixed-size control messages; the
# size keeps them visible in link-energy accounting without dominating it.
CONTROL_PACKET_BYTES = 64

# Node roles
AGGREGATOR = "aggregator"
HIERARCHICAL_AGGREGATOR = "hierarchical_aggregator"
TRAINER = "trainer"
PROXY = "proxy"

# NetworkManager states
INITIALIZING = "Initializing"
RUNNING = "Running"
TERMINATED = "Terminated"


@dataclass(frozen=True)
class Packet:
    """Typed application message exchanged between nodes."""

    kind: str
    src: str
    dst: str
    payload_bytes: int
    meta: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class Mediator:
    """The zero-cost in-host queue pair between a Role and its manager."""

    node: str
    role_mailbox: str
    nm_mailbox: str


def role_mailbox(node: str) -> str:
    return f"{node}/role"


def nm_mailbox(node: str) -> str:
    return f"{node}/nm"


# Messages crossing the Mediator.

@dataclass(frozen=True)
class PutCmd:
    packet: Packet


@dataclass(frozen=True)
class BroadcastCmd:
    packet: Packet


@dataclass(frozen=True)
class ShutdownCmd:
    pass


@dataclass(frozen=True)
class BootstrapDone:
    """Manager is Running; tells the Role who it talks to."""

    model_sink: Optional[str]
    contributors: tuple[str, ...]


@dataclass(frozen=True)
class ProtocolNotice:
    """Error surfaced from the manager to its Role (e.g. unknown dst)."""

    reason: str
    packet: Packet


@dataclass(frozen=True)
class NetDelivery:
    """A packet as it arrives over the network at a manager."""

    packet: Packet
    hop_src: str


@dataclass
class NodeDecl:
    """One node of the scenario document."""

    name: str
    host: str
    role: str
    parent: Optional[str] = None


@dataclass
class Wiring:
    """Per-node applicative topology knowledge.

    Computed centrally from the scenario; non-central managers receive
    theirs inside the registration confirmation.
    """

    node: str
    role: str
    central: str
    upstream: Optional[str] = None       # next-hop parent in tree topologies
    model_sink: Optional[str] = None     # where this node's local models go
    children: tuple[str, ...] = ()       # direct applicative children
    subtree: dict[str, str] = field(default_factory=dict)  # dst -> child
    successor: Optional[str] = None      # ring only
    contributors: tuple[str, ...] = ()   # senders this node aggregates
    expected_registrations: int = 0      # central only


def build_wiring(topology: str, nodes: list[NodeDecl]) -> dict[str, Wiring]:
    """Compute every node's Wiring from the declared node list.

    Assumes the scenario already passed validation; declaration order fixes
    all derived orders (ring cycle, confirmation order, broadcast fan-out).
    """
    central = next(n.name for n in nodes if n.role == AGGREGATOR)
    wirings = {
        n.name: Wiring(node=n.name, role=n.role, central=central) for n in nodes
    }
    wirings[central].expected_registrations = len(nodes) - 1

    if topology == "ring":
        names = [n.name for n in nodes]
        for i, name in enumerate(names):
            w = wirings[name]
            w.successor = names[(i + 1) % len(names)]
            w.model_sink = central
        wirings[central].contributors = tuple(
            n.name for n in nodes if n.role == TRAINER
        )
        return wirings

    # Tree topologies (star with optional proxies, hierarchical).
    parent: dict[str, Optional[str]] = {}
    for n in nodes:
        if n.name == central:
            parent[n.name] = None
        else:
            parent[n.name] = n.parent if n.parent else central
    children: dict[str, list[str]] = {n.name: [] for n in nodes}
    for n in nodes:
        p = parent[n.name]
        if p is not None:
            children[p].append(n.name)

    def ancestors(name: str) -> list[str]:
        chain = []
        cur = parent[name]
        while cur is not None:
            chain.append(cur)
            cur = parent[cur]
        return chain

    for n in nodes:
        w = wirings[n.name]
        w.upstream = parent[n.name]
        w.children = tuple(children[n.name])
    for n in nodes:
        # Map every descendant to the direct child it sits under.
        for other in nodes:
            chain = ancestors(other.name)
            if n.name in chain:
                idx = chain.index(n.name)
                direct = other.name if idx == 0 else chain[idx - 1]
                wirings[n.name].subtree[other.name] = direct

    if topology == "hierarchical":
        wirings[central].contributors = tuple(
            n.name for n in nodes if n.role == HIERARCHICAL_AGGREGATOR
        )
        for n in nodes:
            w = wirings[n.name]
            if n.role == HIERARCHICAL_AGGREGATOR:
                w.model_sink = central
                w.contributors = tuple(
                    c for c in w.children if wirings[c].role == TRAINER
                )
            elif n.role == TRAINER:
                w.model_sink = parent[n.name]
    else:  # star
        wirings[central].contributors = tuple(
            n.name for n in nodes if n.role == TRAINER
        )
        for n in nodes:
            if n.role in (TRAINER, PROXY):
                wirings[n.name].model_sink = central
    return wirings


class NetworkManager:
    """Base automaton: bootstrap handshake then the Running dispatch loop."""

    topology = "abstract"

    def __init__(
        self,
        mediator: Mediator,
        wiring: Wiring,
        all_wirings: Optional[dict[str, Wiring]] = None,
        record: Callable[..., None] = lambda *a, **k: None,
    ):
        self.node = mediator.node
        self.mediator = mediator
        self.wiring = wiring
        self.all_wirings = all_wirings  # central only
        self.record = record
        self.state = INITIALIZING
        self.registry: list[tuple[str, str]] = []  # (node, role) as registered
        self._deferred: deque = deque()

    @property
    def is_central(self) -> bool:
        return self.node == self.wiring.central

    def run(self):
        yield from self._bootstrap()
        self.state = RUNNING
        self.record("nm_running", node=self.node)
        yield Send(
            self.mediator.role_mailbox,
            BootstrapDone(
                model_sink=self.wiring.model_sink,
                contributors=self.wiring.contributors,
            ),
        )
        while self.state == RUNNING:
            if self._deferred:
                envelope = self._deferred.popleft()
            else:
                envelope = yield Recv(self.mediator.nm_mailbox)
            yield from self._dispatch(envelope)

    def _dispatch(self, envelope: Any):
        if isinstance(envelope, ShutdownCmd):
            self.state = TERMINATED
        elif isinstance(envelope, PutCmd):
            yield from self.put(envelope.packet)
        elif isinstance(envelope, BroadcastCmd):
            yield from self.broadcast(envelope.packet)
        elif isinstance(envelope, NetDelivery):
            yield from self.route(envelope.packet)
        else:
            log.warning("%s: dropping unknown envelope %r", self.node, envelope)

    def _bootstrap(self):
        if self.is_central:
            expected = self.wiring.expected_registrations
            while len(self.registry) < expected:
                envelope = yield Recv(self.mediator.nm_mailbox)
                if (
                    isinstance(envelope, NetDelivery)
                    and envelope.packet.kind == REGISTRATION_REQUEST
                ):
                    pkt = envelope.packet
                    if self.all_wirings is None or pkt.src not in self.all_wirings:
                        raise SimulationError(
                            f"registration from unknown node {pkt.src}"
                        )
                    self.registry.append((pkt.src, pkt.meta.get("role", "")))
                else:
                    self._deferred.append(envelope)
            # Confirm in declaration order so the assigned wiring (ring
            # successors in particular) is reproducible.
            for name, wiring in self.all_wirings.items():
                if name == self.node:
                    continue
                yield from self._transfer(
                    name,
                    Packet(
                        REGISTRATION_CONFIRMATION,
                        src=self.node,
                        dst=name,
                        payload_bytes=CONTROL_PACKET_BYTES,
                        meta={"wiring": wiring},
                    ),
                )
        else:
            yield from self._transfer(
                self.wiring.central,
                Packet(
                    REGISTRATION_REQUEST,
                    src=self.node,
                    dst=self.wiring.central,
                    payload_bytes=CONTROL_PACKET_BYTES,
                    meta={"role": self.wiring.role},
                ),
            )
            while True:
                envelope = yield Recv(self.mediator.nm_mailbox)
                if (
                    isinstance(envelope, NetDelivery)
                    and envelope.packet.kind == REGISTRATION_CONFIRMATION
                    and envelope.packet.dst == self.node
                ):
                    self.wiring = envelope.packet.meta["wiring"]
                    break
                self._deferred.append(envelope)

    # -- transport helpers ---------------------------------------------------

    def _transfer(self, to_node: str, packet: Packet):
        """One point-to-point hop to another node's manager."""
        yield Send(
            nm_mailbox(to_node),
            NetDelivery(packet, hop_src=self.node),
            payload_bytes=packet.payload_bytes,
            note={
                "packet": packet.kind,
                "src": packet.src,
                "dst": packet.dst,
                "hop_from": self.node,
                "hop_to": to_node,
            },
        )

    def _deliver_to_role(self, packet: Packet):
        self.record("role_deliver", node=self.node, packet=packet.kind,
                    src=packet.src)
        yield Send(self.mediator.role_mailbox, packet)

    def _report(self, reason: str, packet: Packet):
        log.warning("%s: %s (%s %s->%s)", self.node, reason, packet.kind,
                    packet.src, packet.dst)
        yield Send(self.mediator.role_mailbox, ProtocolNotice(reason, packet))

    # -- topology-specific operations ----------------------------------------

    def put(self, packet: Packet):
        raise NotImplementedError

    def broadcast(self, packet: Packet):
        raise NotImplementedError

    def route(self, packet: Packet):
        raise NotImplementedError


class TreeNetworkManager(NetworkManager):
    """Shared routing for star (with proxies) and hierarchical topologies."""

    def _next_hop(self, dst: str) -> Optional[str]:
        if dst in self.wiring.subtree:
            return self.wiring.subtree[dst]
        return self.wiring.upstream

    def put(self, packet: Packet):
        if packet.dst == self.node:
            yield from self._deliver_to_role(packet)
            return
        hop = self._next_hop(packet.dst)
        if hop is None:
            yield from self._report(f"unknown destination {packet.dst}", packet)
            return
        yield from self._transfer(hop, packet)

    def broadcast(self, packet: Packet):
        # One unicast per direct child; proxies and mid-tier aggregators
        # re-broadcast into their own subtree, so every node gets one copy.
        for child in self.wiring.children:
            yield from self._transfer(child, replace(packet, dst=child))

    def route(self, packet: Packet):
        if packet.dst == self.node:
            yield from self._deliver_to_role(packet)
            return
        hop = self._next_hop(packet.dst)
        if hop is None or packet.dst == BROADCAST:
            log.warning("%s: dropping unroutable packet %s %s->%s",
                        self.node, packet.kind, packet.src, packet.dst)
            return
        yield from self._transfer(hop, packet)


class StarNetworkManager(TreeNetworkManager):
    topology = "star"


class HierarchicalNetworkManager(TreeNetworkManager):
    topology = "hierarchical"


class RingNetworkManager(NetworkManager):
    """Unidirectional ring: packets only ever move to the successor."""

    topology = "ring"

    def put(self, packet: Packet):
        if packet.dst == self.node:
            yield from self._deliver_to_role(packet)
            return
        if self.wiring.successor is None:
            yield from self._report(f"unknown destination {packet.dst}", packet)
            return
        yield from self._transfer(self.wiring.successor, packet)

    def broadcast(self, packet: Packet):
        circulating = replace(packet, dst=BROADCAST)
        yield from self._transfer(self.wiring.successor, circulating)

    def route(self, packet: Packet):
        if packet.dst == BROADCAST:
            if packet.src == self.node:
                return  # full cycle: the originator removes its broadcast
            yield from self._deliver_to_role(packet)
            yield from self._transfer(self.wiring.successor, packet)
            return
        if packet.dst == self.node:
            yield from self._deliver_to_role(packet)
            return
        if packet.src == self.node:
            log.warning("%s: unicast %s to %s came back around the ring, "
                        "dropping", self.node, packet.kind, packet.dst)
            return
        yield from self._transfer(self.wiring.successor, packet)


NETWORK_MANAGERS = {
    "star": StarNetworkManager,
    "ring": RingNetworkManager,
    "hierarchical": HierarchicalNetworkManager,
}
