"""Role automata and the FLOP/byte workload model.

Training cost is n_parameters * flops_per_param_sample * samples_per_round
and aggregation cost is n_parameters * agg_flops_per_param_per_model per
contributed model (one multiply and one add of the weighted mean per
parameter by default).  Model-bearing packets weigh bytes_per_parameter
per parameter (32-bit weights by default).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

from .kernel import Exec, Recv, Send
from .platform import ValidationError
from .protocol import (
    AGGREGATOR,
    BROADCAST,
    CONTROL_PACKET_BYTES,
    GLOBAL_MODEL,
    HIERARCHICAL_AGGREGATOR,
    KILL,
    LOCAL_MODEL,
    PROXY,
    TRAINER,
    BootstrapDone,
    BroadcastCmd,
    Mediator,
    Packet,
    ProtocolNotice,
    PutCmd,
    ShutdownCmd,
)

log = logging.getLogger("falafels.roles")

# Aggregator states
BROADCASTING = "Broadcasting"
WAITING_RESULTS = "WaitingResults"
AGGREGATING = "Aggregating"
DONE = "Done"
# Trainer states
WAITING_GLOBAL = "WaitingGlobal"
TRAINING = "Training"
SENDING = "Sending"
# Proxy state
RELAYING = "Relaying"


@dataclass(frozen=True)
class Workload:
    """Size of the ML task, expressed in parameters, flops and samples."""

    n_parameters: int
    samples_per_round: int
    flops_per_param_sample: float = 6.0
    bytes_per_parameter: int = 4
    agg_flops_per_param_per_model: float = 2.0

    def validate(self) -> None:
        for name in (
            "n_parameters",
            "samples_per_round",
            "flops_per_param_sample",
            "bytes_per_parameter",
            "agg_flops_per_param_per_model",
        ):
            if getattr(self, name) <= 0:
                raise ValidationError(f"workload {name} must be > 0")


def training_flops(workload: Workload) -> float:
    """Cost of one local training round."""
    return (
        workload.n_parameters
        * workload.flops_per_param_sample
        * workload.samples_per_round
    )


def aggregation_flops(workload: Workload, n_models: int) -> float:
    """Cost of merging n_models local models into the global one."""
    if n_models < 1:
        raise ValidationError("aggregation needs at least one model")
    return workload.n_parameters * workload.agg_flops_per_param_per_model * n_models


def model_bytes(workload: Workload) -> int:
    """Wire size of a serialized model."""
    return workload.n_parameters * workload.bytes_per_parameter


def async_batch_size(n_trainers: int, proportion: float) -> int:
    """How many pending local models trigger an asynchronous aggregation.

    ceil(proportion * n); the epsilon guards against float artifacts such
    as 0.1 * 10 landing just above 1.
    """
    return min(n_trainers, max(1, math.ceil(proportion * n_trainers - 1e-9)))


class Role:
    """Base class for role automata: mediator plumbing shared by all."""

    def __init__(self, mediator: Mediator, workload: Workload, rounds: int):
        self.node = mediator.node
        self.mediator = mediator
        self.workload = workload
        self.rounds = rounds
        self.rounds_completed = 0
        self.state: Optional[str] = None

    def _recv(self):
        while True:
            msg = yield Recv(self.mediator.role_mailbox)
            if isinstance(msg, ProtocolNotice):
                log.warning("%s: manager reported %s", self.node, msg.reason)
                continue
            return msg

    def _wait_ready(self):
        msg = yield from self._recv()
        if not isinstance(msg, BootstrapDone):
            raise RuntimeError(f"{self.node}: expected bootstrap notice, got {msg!r}")
        return msg

    def _put(self, packet: Packet):
        yield Send(self.mediator.nm_mailbox, PutCmd(packet))

    def _broadcast(self, packet: Packet):
        yield Send(self.mediator.nm_mailbox, BroadcastCmd(packet))

    def _shutdown_nm(self):
        yield Send(self.mediator.nm_mailbox, ShutdownCmd())

    def _kill_packet(self) -> Packet:
        return Packet(KILL, src=self.node, dst=BROADCAST,
                      payload_bytes=CONTROL_PACKET_BYTES)

    def _model_packet(self, kind: str, dst: str, meta: Optional[dict] = None) -> Packet:
        return Packet(kind, src=self.node, dst=dst,
                      payload_bytes=model_bytes(self.workload), meta=meta or {})

    def run(self):
        raise NotImplementedError


class TrainerRole(Role):
    """Train on each received global model and upload the local result."""

    def run(self):
        ready = yield from self._wait_ready()
        sink = ready.model_sink
        self.state = WAITING_GLOBAL
        while True:
            msg = yield from self._recv()
            if not isinstance(msg, Packet):
                continue
            if msg.kind == KILL:
                break
            if msg.kind == GLOBAL_MODEL:
                self.state = TRAINING
                yield Exec(training_flops(self.workload))
                self.state = SENDING
                yield from self._put(self._model_packet(LOCAL_MODEL, dst=sink))
                self.rounds_completed += 1
                self.state = WAITING_GLOBAL
            else:
                log.warning("%s: ignoring unexpected %s from %s",
                            self.node, msg.kind, msg.src)
        self.state = DONE
        yield from self._shutdown_nm()


class SimpleAggregatorRole(Role):
    """Synchronous rounds: broadcast, wait for every local model, aggregate."""

    def run(self):
        ready = yield from self._wait_ready()
        contributors = set(ready.contributors)
        n = len(contributors)
        for _ in range(self.rounds):
            self.state = BROADCASTING
            yield from self._broadcast(self._model_packet(GLOBAL_MODEL, dst=BROADCAST))
            self.state = WAITING_RESULTS
            received: set[str] = set()
            while len(received) < n:
                msg = yield from self._recv()
                if not isinstance(msg, Packet) or msg.kind != LOCAL_MODEL:
                    log.warning("%s: ignoring unexpected %r", self.node, msg)
                    continue
                if msg.src not in contributors:
                    log.warning("%s: local model from unregistered sender %s, "
                                "ignoring", self.node, msg.src)
                    continue
                if msg.src in received:
                    log.warning("%s: duplicate local model from %s in one "
                                "round, ignoring", self.node, msg.src)
                    continue
                received.add(msg.src)
            self.state = AGGREGATING
            yield Exec(aggregation_flops(self.workload, n))
            self.rounds_completed += 1
        yield from self._broadcast(self._kill_packet())
        yield from self._shutdown_nm()
        self.state = DONE


class AsyncAggregatorRole(Role):
    """Aggregate whenever a proportion of the trainers has reported.

    Consumed models are replied to individually with the updated global
    model, so fast machines keep cycling while stragglers' models wait in
    arrival order for a later aggregation.
    """

    def __init__(self, mediator: Mediator, workload: Workload, rounds: int,
                 proportion: float):
        super().__init__(mediator, workload, rounds)
        self.proportion = proportion

    def run(self):
        ready = yield from self._wait_ready()
        contributors = set(ready.contributors)
        batch_size = async_batch_size(len(contributors), self.proportion)
        self.state = BROADCASTING
        yield from self._broadcast(self._model_packet(GLOBAL_MODEL, dst=BROADCAST))
        pending: list[Packet] = []
        for _ in range(self.rounds):
            self.state = WAITING_RESULTS
            while len(pending) < batch_size:
                msg = yield from self._recv()
                if not isinstance(msg, Packet) or msg.kind != LOCAL_MODEL:
                    log.warning("%s: ignoring unexpected %r", self.node, msg)
                    continue
                if msg.src not in contributors:
                    log.warning("%s: local model from unregistered sender %s, "
                                "ignoring", self.node, msg.src)
                    continue
                pending.append(msg)
            batch, pending = pending[:batch_size], pending[batch_size:]
            self.state = AGGREGATING
            yield Exec(aggregation_flops(self.workload, batch_size))
            self.rounds_completed += 1
            for model in batch:
                yield from self._put(self._model_packet(GLOBAL_MODEL, dst=model.src))
        yield from self._broadcast(self._kill_packet())
        yield from self._shutdown_nm()
        self.state = DONE


class HierarchicalAggregatorRole(Role):
    """Mid-tier aggregator: fan the global model out to a subcluster,
    pre-aggregate its local models and forward one weighted model upward."""

    def run(self):
        ready = yield from self._wait_ready()
        children = set(ready.contributors)
        n = len(children)
        sink = ready.model_sink
        killed = False
        self.state = WAITING_GLOBAL
        while not killed:
            msg = yield from self._recv()
            if not isinstance(msg, Packet):
                continue
            if msg.kind == KILL:
                yield from self._broadcast(msg)  # pass the kill downward
                break
            if msg.kind != GLOBAL_MODEL:
                log.warning("%s: ignoring unexpected %s from %s",
                            self.node, msg.kind, msg.src)
                continue
            self.state = BROADCASTING
            yield from self._broadcast(msg)  # original sender kept
            self.state = WAITING_RESULTS
            received: set[str] = set()
            while len(received) < n:
                inner = yield from self._recv()
                if not isinstance(inner, Packet):
                    continue
                if inner.kind == KILL:
                    yield from self._broadcast(inner)
                    killed = True
                    break
                if inner.kind == LOCAL_MODEL and inner.src in children:
                    received.add(inner.src)
                else:
                    log.warning("%s: ignoring unexpected %r", self.node, inner)
            if killed:
                break
            self.state = AGGREGATING
            yield Exec(aggregation_flops(self.workload, n))
            self.rounds_completed += 1
            yield from self._put(
                self._model_packet(LOCAL_MODEL, dst=sink, meta={"contributors": n})
            )
            self.state = WAITING_GLOBAL
        self.state = DONE
        yield from self._shutdown_nm()


class ProxyRole(Role):
    """Pure relay: re-fans broadcast copies into its subtree, dies on kill."""

    def run(self):
        yield from self._wait_ready()
        self.state = RELAYING
        while True:
            msg = yield from self._recv()
            if not isinstance(msg, Packet):
                continue
            if msg.kind == KILL:
                yield from self._broadcast(msg)
                break
            if msg.kind == GLOBAL_MODEL:
                yield from self._broadcast(msg)
            else:
                log.warning("%s: proxy ignoring %s from %s",
                            self.node, msg.kind, msg.src)
        self.state = DONE
        yield from self._shutdown_nm()


def make_role(
    role: str,
    mediator: Mediator,
    workload: Workload,
    rounds: int,
    aggregator: str,
    async_proportion: Optional[float],
) -> Role:
    """Instantiate the automaton for a node's declared role."""
    if role == AGGREGATOR:
        if aggregator == "asynchronous":
            return AsyncAggregatorRole(mediator, workload, rounds,
                                       proportion=async_proportion or 1.0)
        return SimpleAggregatorRole(mediator, workload, rounds)
    if role == HIERARCHICAL_AGGREGATOR:
        return HierarchicalAggregatorRole(mediator, workload, rounds)
    if role == TRAINER:
        return TrainerRole(mediator, workload, rounds)
    if role == PROXY:
        return ProxyRole(mediator, workload, rounds)
    raise ValidationError(f"unknown role {role}")
