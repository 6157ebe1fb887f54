"""Deterministic discrete-event kernel.

Actors are Python generators scheduled cooperatively: an actor runs until
it yields a request (execute flops, sleep, receive from a mailbox, send a
message) and is resumed when the matching activity completes.  All events
live in a single (time, insertion sequence) ordered queue, so the execution
order is total and identical across runs with the same inputs.

Cross-host messages become flows in a flow-level network model: a flow
first pays its route latency once, then drains at the fair share of the
bottleneck link; shares are recomputed whenever a flow starts draining or
finishes, keeping the bytes already drained.
"""

from __future__ import annotations

import heapq
import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Generator, Iterator, Optional

from .platform import EnergyLedger, LinkProfile, Platform, fair_share_rates


class SimulationError(RuntimeError):
    """Fatal error raised while events are being executed."""


class DeadlockError(SimulationError):
    """No event is pending but some actors never terminated."""


# Requests an actor may yield to the kernel.

@dataclass(frozen=True)
class Exec:
    """Run a compute workload on the actor's host; resumes when done."""

    flops: float


@dataclass(frozen=True)
class Sleep:
    """Block for a fixed simulated delay."""

    delay: float


@dataclass(frozen=True)
class Recv:
    """Block until a message is available in the actor's mailbox."""

    mailbox: str


@dataclass(frozen=True)
class Send:
    """Deliver a message to a mailbox; the sender continues immediately.

    Same-host delivery is instantaneous; cross-host delivery creates a
    network flow of payload_bytes over the platform route.  ``note`` is
    merged into the trace records describing the transfer.
    """

    mailbox: str
    message: Any
    payload_bytes: int = 0
    note: Optional[dict] = None


ActorGen = Generator[Any, Any, None]

RUNNABLE = "runnable"
BLOCKED = "blocked-on-activity"
TERMINATED = "terminated"


@dataclass
class Actor:
    id: str
    host: str
    gen: ActorGen
    can_exec: bool = False
    state: str = RUNNABLE
    blocked_on: Optional[str] = None


@dataclass
class Mailbox:
    id: str
    owner: str
    queue: deque = field(default_factory=deque)
    waiting: bool = False  # owner is blocked on an empty queue


class _Event:
    __slots__ = ("fn", "cancelled")

    def __init__(self, fn: Callable[[], None]):
        self.fn = fn
        self.cancelled = False


class _Flow:
    __slots__ = (
        "seq", "mailbox", "message", "note", "bytes_total",
        "remaining", "route", "rate", "eta", "settled_at",
        "pair", "pair_seq",
    )

    def __init__(self, seq: int, mailbox: str, message: Any, nbytes: int,
                 route: tuple[LinkProfile, ...], note: Optional[dict],
                 pair: tuple[str, str], pair_seq: int):
        self.seq = seq
        self.mailbox = mailbox
        self.message = message
        self.note = note
        self.bytes_total = nbytes
        self.remaining = float(nbytes)
        self.route = route
        self.rate = 0.0
        self.eta = math.inf
        self.settled_at = 0.0
        self.pair = pair
        self.pair_seq = pair_seq


class _FlowEngine:
    """Event-driven fair-share transfers over the platform links."""

    def __init__(self, kernel: "Kernel"):
        self.kernel = kernel
        self.active: dict[int, _Flow] = {}
        self.pending: list[_Flow] = []
        self._recompute_scheduled = False
        self._completion_event: Optional[_Event] = None

    def start(self, flow: _Flow) -> None:
        latency = sum(l.latency for l in flow.route)
        self.kernel.schedule(self.kernel.now + latency, lambda: self._enter(flow))

    def _enter(self, flow: _Flow) -> None:
        self.pending.append(flow)
        if not self._recompute_scheduled:
            self._recompute_scheduled = True
            self.kernel.schedule(self.kernel.now, self._recompute)

    def _recompute(self) -> None:
        self._recompute_scheduled = False
        self._settle()
        for flow in self.pending:
            self.active[flow.seq] = flow
            flow.settled_at = self.kernel.now
        self.pending.clear()
        self._assign_rates()

    def _settle(self) -> None:
        now = self.kernel.now
        for flow in self.active.values():
            if flow.rate > 0.0 and flow.rate < math.inf:
                flow.remaining = max(0.0, flow.remaining - flow.rate * (now - flow.settled_at))
            flow.settled_at = now

    def _assign_rates(self) -> None:
        now = self.kernel.now
        rates = fair_share_rates({seq: f.route for seq, f in self.active.items()})
        for seq, flow in self.active.items():
            flow.rate = rates[seq]
            if flow.rate == math.inf or flow.remaining <= 0.0:
                flow.eta = now
            else:
                flow.eta = now + flow.remaining / flow.rate
        self._reschedule_completion()

    def _reschedule_completion(self) -> None:
        if self._completion_event is not None:
            self._completion_event.cancelled = True
            self._completion_event = None
        if self.active:
            next_eta = min(f.eta for f in self.active.values())
            self._completion_event = self.kernel.schedule(next_eta, self._on_completion)

    def _on_completion(self) -> None:
        self._completion_event = None
        now = self.kernel.now
        self._settle()
        due = sorted(
            (f for f in self.active.values() if f.eta <= now), key=lambda f: f.seq
        )
        for flow in due:
            del self.active[flow.seq]
        self._assign_rates()
        for flow in due:
            for link in flow.route:
                self.kernel.ledger.add_link_bytes(link.name, flow.bytes_total)
            self.kernel.network_bytes += flow.bytes_total
            self.kernel.record("flow_complete", bytes=flow.bytes_total,
                               links=[l.name for l in flow.route],
                               **(flow.note or {}))
            self.kernel._flow_drained(flow)


class Kernel:
    """Virtual clock, event queue, actors, mailboxes and activities."""

    def __init__(self, platform: Optional[Platform] = None, trace: bool = False):
        self.platform = platform
        self.now = 0.0
        self.actors: dict[str, Actor] = {}
        self.mailboxes: dict[str, Mailbox] = {}
        self.ledger = EnergyLedger()
        self.trace: Optional[list[dict]] = [] if trace else None
        self._heap: list[tuple[float, int, _Event]] = []
        self._seq: Iterator[int] = itertools.count()
        self._flows = _FlowEngine(self)
        # Per-pair FIFO: a (sender, mailbox) pair delivers in send order even
        # when a small later flow finishes draining before a large earlier one.
        self._pair_sent: dict[tuple[str, str], int] = {}
        self._pair_next: dict[tuple[str, str], int] = {}
        self._pair_ready: dict[tuple[str, str], dict[int, _Flow]] = {}
        # Conservation counters: every send must be matched by one delivery.
        self.sends_total = 0
        self.deliveries_total = 0
        self.network_messages = 0
        self.network_deliveries = 0
        self.network_bytes = 0

    # -- events ------------------------------------------------------------

    def schedule(self, t: float, fn: Callable[[], None]) -> _Event:
        """Insert an event; ties at equal time keep insertion order."""
        if t < self.now:
            raise SimulationError(
                f"cannot schedule event in the past (t={t}, now={self.now})"
            )
        event = _Event(fn)
        heapq.heappush(self._heap, (t, next(self._seq), event))
        return event

    def schedule_event(self, t: float, actor: str, payload: Any = None) -> _Event:
        """Schedule a wake-up for an actor blocked on an activity."""
        return self.schedule(t, lambda: self._step(self.actors[actor], payload))

    def advance(self) -> Optional[float]:
        """Run the earliest event and return the new clock, or None when done.

        Cancelled (stale) events are discarded without advancing the clock.
        """
        while self._heap:
            t, _, event = heapq.heappop(self._heap)
            if event.cancelled:
                continue
            self.now = t
            event.fn()
            return self.now
        return None

    def run(self) -> float:
        """Advance until no event remains; verify every actor terminated."""
        while self.advance() is not None:
            pass
        alive = [a for a in self.actors.values() if a.state != TERMINATED]
        if alive:
            dump = "; ".join(
                f"{a.id}@{a.host}: {a.state}"
                + (f" ({a.blocked_on})" if a.blocked_on else "")
                for a in alive
            )
            raise DeadlockError(f"no pending event but {len(alive)} actor(s) never terminated: {dump}")
        return self.now

    def record(self, event: str, **fields: Any) -> None:
        if self.trace is not None:
            self.trace.append({"t": self.now, "event": event, **fields})

    # -- actors and mailboxes ----------------------------------------------

    def spawn(self, actor_id: str, host: str, gen: ActorGen, can_exec: bool = False) -> Actor:
        if actor_id in self.actors:
            raise SimulationError(f"duplicate actor id {actor_id}")
        actor = Actor(id=actor_id, host=host, gen=gen, can_exec=can_exec)
        self.actors[actor_id] = actor
        self.schedule(self.now, lambda: self._step(actor, None))
        return actor

    def add_mailbox(self, mailbox_id: str, owner: str) -> Mailbox:
        if mailbox_id in self.mailboxes:
            raise SimulationError(f"duplicate mailbox {mailbox_id}")
        mbox = Mailbox(id=mailbox_id, owner=owner)
        self.mailboxes[mailbox_id] = mbox
        return mbox

    # -- actor stepping ----------------------------------------------------

    def _step(self, actor: Actor, value: Any) -> None:
        if actor.state == TERMINATED:
            return
        actor.state = RUNNABLE
        actor.blocked_on = None
        try:
            request = actor.gen.send(value)
            while True:
                if isinstance(request, Send):
                    self._handle_send(actor, request)
                    request = actor.gen.send(None)
                elif isinstance(request, Recv):
                    mbox = self._owned_mailbox(actor, request.mailbox)
                    if mbox.queue:
                        request = actor.gen.send(mbox.queue.popleft())
                    else:
                        mbox.waiting = True
                        actor.state = BLOCKED
                        actor.blocked_on = f"recv on {mbox.id}"
                        return
                elif isinstance(request, Exec):
                    self._handle_exec(actor, request)
                    return
                elif isinstance(request, Sleep):
                    if request.delay < 0:
                        raise SimulationError("negative sleep delay")
                    actor.state = BLOCKED
                    actor.blocked_on = f"timer({request.delay})"
                    self.schedule(self.now + request.delay,
                                  lambda: self._step(actor, None))
                    return
                else:
                    raise SimulationError(
                        f"actor {actor.id} yielded unknown request {request!r}"
                    )
        except StopIteration:
            actor.state = TERMINATED
            actor.blocked_on = None

    def _owned_mailbox(self, actor: Actor, mailbox_id: str) -> Mailbox:
        mbox = self.mailboxes.get(mailbox_id)
        if mbox is None:
            raise SimulationError(f"unknown mailbox {mailbox_id}")
        if mbox.owner != actor.id:
            raise SimulationError(
                f"mailbox {mailbox_id} is owned by {mbox.owner}, not {actor.id}"
            )
        return mbox

    def _handle_exec(self, actor: Actor, request: Exec) -> None:
        if not actor.can_exec:
            raise SimulationError(
                f"actor {actor.id} is not allowed to execute compute workloads"
            )
        if request.flops < 0:
            raise SimulationError("flops must be >= 0")
        if self.platform is None:
            raise SimulationError("exec requires a platform")
        host = self.platform.host(actor.host)
        duration = request.flops / host.speed
        start = self.now
        self.ledger.add_busy_interval(actor.host, start, start + duration)
        self.record("exec_start", host=actor.host, actor=actor.id, flops=request.flops)
        actor.state = BLOCKED
        actor.blocked_on = f"exec({request.flops:g} flops)"

        def complete() -> None:
            self.record("exec_complete", host=actor.host, actor=actor.id,
                        flops=request.flops)
            self._step(actor, None)

        self.schedule(start + duration, complete)

    def _handle_send(self, actor: Actor, request: Send) -> None:
        mbox = self.mailboxes.get(request.mailbox)
        if mbox is None:
            raise SimulationError(f"send to unknown mailbox {request.mailbox}")
        dst_actor = self.actors[mbox.owner]
        self.sends_total += 1
        if dst_actor.host == actor.host:
            # In-host messages (Role <-> NetworkManager through the
            # Mediator) take zero simulated time and zero energy.
            self.schedule(
                self.now,
                lambda: self._deliver(request.mailbox, request.message, network=False),
            )
            return
        if self.platform is None:
            raise SimulationError("cross-host send requires a platform")
        route = self.platform.route(actor.host, dst_actor.host)
        self.network_messages += 1
        pair = (actor.id, request.mailbox)
        pair_seq = self._pair_sent.get(pair, 0)
        self._pair_sent[pair] = pair_seq + 1
        flow = _Flow(next(self._seq), request.mailbox, request.message,
                     request.payload_bytes, route, request.note,
                     pair, pair_seq)
        self.record("flow_start", bytes=request.payload_bytes,
                    links=[l.name for l in route], **(request.note or {}))
        self._flows.start(flow)

    def _flow_drained(self, flow: _Flow) -> None:
        """A flow finished draining; deliver it once its pair predecessors
        have been delivered, preserving per-pair send order."""
        ready = self._pair_ready.setdefault(flow.pair, {})
        ready[flow.pair_seq] = flow
        next_seq = self._pair_next.get(flow.pair, 0)
        while next_seq in ready:
            due = ready.pop(next_seq)
            self.schedule(
                self.now,
                lambda f=due: self._deliver(f.mailbox, f.message, network=True),
            )
            next_seq += 1
        self._pair_next[flow.pair] = next_seq

    def _deliver(self, mailbox_id: str, message: Any, network: bool) -> None:
        mbox = self.mailboxes[mailbox_id]
        self.deliveries_total += 1
        if network:
            self.network_deliveries += 1
        owner = self.actors[mbox.owner]
        if mbox.waiting and owner.state == BLOCKED:
            mbox.waiting = False
            self._step(owner, message)
        else:
            mbox.queue.append(message)
