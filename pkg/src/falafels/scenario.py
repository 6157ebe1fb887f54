"""Run a platform + scenario pair to quiescence and collect the metrics.

A simulation spawns two actors per host (Role and NetworkManager), runs the
registration bootstrap, then the role automata until the kill packet has
propagated and every actor terminated.  Results and event traces are
deterministic functions of (platform, scenario, seed) and serialize with
9-significant-digit floats so reruns are byte-comparable.
"""

from __future__ import annotations

import json
import os
import random
import zlib
from dataclasses import dataclass, field
from typing import Optional

from .kernel import Kernel, SimulationError
from .platform import (
    HostEnergyRow,
    Platform,
    ValidationError,
    parse_platform,
    total_gflops,
)
from .protocol import (
    AGGREGATOR,
    HIERARCHICAL_AGGREGATOR,
    NETWORK_MANAGERS,
    PROXY,
    TRAINER,
    Mediator,
    NodeDecl,
    Wiring,
    build_wiring,
    nm_mailbox,
    role_mailbox,
)
from .roles import Role, Workload, make_role

TOPOLOGIES = ("star", "ring", "hierarchical")
AGGREGATOR_ALGOS = ("simple", "asynchronous")

RUN_CSV_COLUMNS = [
    "run_id", "topology", "aggregator", "n_hosts", "total_gflops", "rounds",
    "sim_time_s", "energy_total_j", "energy_hosts_j", "energy_links_j",
    "messages_sent", "bytes_transferred",
]

HOST_CSV_COLUMNS = [
    "run_id", "host", "busy_s", "idle_s", "idle_energy_j",
    "busy_extra_energy_j", "energy_j",
]


def format_float(value: float) -> str:
    """Fixed 9-significant-digit rendering used in every output file."""
    return f"{value:.9g}"


def quantize(value: float) -> float:
    return float(format_float(value))


def _quantize_obj(obj):
    if isinstance(obj, float):
        return quantize(obj)
    if isinstance(obj, dict):
        return {k: _quantize_obj(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_quantize_obj(v) for v in obj]
    return obj


def actor_stream(seed: int, name: str) -> random.Random:
    """Deterministic per-actor RNG stream derived from the root seed.

    Streams are independent of actor creation order; zlib.crc32 is used
    because Python's hash() is randomized per process.
    """
    derived = (seed ^ zlib.crc32(name.encode("utf-8"))) & 0xFFFFFFFFFFFFFFFF
    return random.Random(derived)


@dataclass
class Scenario:
    """Validated applicative configuration: topology, algorithm, nodes."""

    topology: str
    aggregator: str
    rounds: int
    workload: Workload
    nodes: list[NodeDecl]
    async_proportion: Optional[float] = None

    @property
    def central(self) -> str:
        return next(n.name for n in self.nodes if n.role == AGGREGATOR)

    def to_document(self) -> dict:
        doc = {
            "topology": self.topology,
            "aggregator": self.aggregator,
            "rounds": self.rounds,
            "workload": {
                "n_parameters": self.workload.n_parameters,
                "samples_per_round": self.workload.samples_per_round,
                "flops_per_param_sample": self.workload.flops_per_param_sample,
                "bytes_per_parameter": self.workload.bytes_per_parameter,
                "agg_flops_per_param_per_model":
                    self.workload.agg_flops_per_param_per_model,
            },
            "nodes": [
                {"name": n.name, "host": n.host, "role": n.role,
                 **({"parent": n.parent} if n.parent else {})}
                for n in self.nodes
            ],
        }
        if self.async_proportion is not None:
            doc["async_proportion"] = self.async_proportion
        return doc


def parse_scenario(document: dict) -> Scenario:
    """Build and validate a Scenario from a parsed JSON document."""
    if not isinstance(document, dict):
        raise ValidationError("scenario document must be an object")
    topology = document.get("topology")
    if topology not in TOPOLOGIES:
        raise ValidationError(f"unknown topology {topology!r}")
    aggregator = document.get("aggregator", "simple")
    if aggregator not in AGGREGATOR_ALGOS:
        raise ValidationError(f"unknown aggregator algorithm {aggregator!r}")
    try:
        rounds = int(document["rounds"])
    except (KeyError, TypeError, ValueError):
        raise ValidationError("rounds must be a non-negative integer") from None
    if rounds < 0:
        raise ValidationError("rounds must be >= 0")

    wdoc = document.get("workload")
    if not isinstance(wdoc, dict):
        raise ValidationError("scenario requires a workload object")
    try:
        workload = Workload(
            n_parameters=int(wdoc["n_parameters"]),
            samples_per_round=int(wdoc["samples_per_round"]),
            flops_per_param_sample=float(wdoc.get("flops_per_param_sample", 6.0)),
            bytes_per_parameter=int(wdoc.get("bytes_per_parameter", 4)),
            agg_flops_per_param_per_model=float(
                wdoc.get("agg_flops_per_param_per_model", 2.0)
            ),
        )
    except KeyError as exc:
        raise ValidationError(f"workload missing field {exc}") from None
    workload.validate()

    async_proportion = document.get("async_proportion")
    if aggregator == "asynchronous":
        if async_proportion is None:
            raise ValidationError(
                "asynchronous aggregator requires async_proportion"
            )
        async_proportion = float(async_proportion)
        if not 0.0 < async_proportion <= 1.0:
            raise ValidationError("async_proportion must be in (0, 1]")
    else:
        async_proportion = None

    nodes = []
    for entry in document.get("nodes", []):
        try:
            nodes.append(NodeDecl(
                name=str(entry["name"]),
                host=str(entry["host"]),
                role=str(entry["role"]),
                parent=str(entry["parent"]) if entry.get("parent") else None,
            ))
        except KeyError as exc:
            raise ValidationError(f"node entry missing field {exc}") from None
    scenario = Scenario(topology, aggregator, rounds, workload, nodes,
                        async_proportion)
    _validate_nodes(scenario)
    return scenario


def _validate_nodes(scenario: Scenario) -> None:
    nodes = scenario.nodes
    if not nodes:
        raise ValidationError("scenario declares no nodes")
    names = [n.name for n in nodes]
    if len(set(names)) != len(names):
        raise ValidationError("node names must be unique")
    hosts = [n.host for n in nodes]
    if len(set(hosts)) != len(hosts):
        raise ValidationError("each node needs its own host")
    by_name = {n.name: n for n in nodes}

    aggregators = [n for n in nodes if n.role == AGGREGATOR]
    if len(aggregators) != 1:
        raise ValidationError(
            f"scenario needs exactly one aggregator, found {len(aggregators)}"
        )
    central = aggregators[0].name
    trainers = [n for n in nodes if n.role == TRAINER]
    if not trainers:
        raise ValidationError("scenario needs at least one trainer")

    allowed = {
        "star": {AGGREGATOR, TRAINER, PROXY},
        "ring": {AGGREGATOR, TRAINER},
        "hierarchical": {AGGREGATOR, HIERARCHICAL_AGGREGATOR, TRAINER},
    }[scenario.topology]
    for n in nodes:
        if n.role not in allowed:
            raise ValidationError(
                f"role {n.role} is not allowed in a {scenario.topology} scenario"
            )

    if scenario.topology == "ring":
        if len(nodes) < 3:
            raise ValidationError("a ring needs at least 3 nodes")
        for n in nodes:
            if n.parent is not None:
                raise ValidationError("ring nodes do not take a parent")
        return

    if scenario.topology == "star":
        for n in nodes:
            if n.role == AGGREGATOR:
                if n.parent is not None:
                    raise ValidationError("the aggregator does not take a parent")
                continue
            parent = n.parent or central
            if parent not in by_name:
                raise ValidationError(f"node {n.name}: unknown parent {parent}")
            if by_name[parent].role not in (AGGREGATOR, PROXY):
                raise ValidationError(
                    f"node {n.name}: parent must be the aggregator or a proxy"
                )
            seen = {n.name}
            cur = parent
            while cur != central:
                if cur in seen:
                    raise ValidationError(f"parent cycle through {cur}")
                seen.add(cur)
                cur = by_name[cur].parent or central
        return

    # hierarchical
    subclusters = [n for n in nodes if n.role == HIERARCHICAL_AGGREGATOR]
    if not subclusters:
        raise ValidationError(
            "hierarchical scenario needs at least one hierarchical_aggregator"
        )
    for n in subclusters:
        if n.parent not in (None, central):
            raise ValidationError(
                f"hierarchical aggregator {n.name} must attach to the aggregator"
            )
        n.parent = central
    ha_names = {n.name for n in subclusters}
    for n in trainers:
        if n.parent is None:
            if len(ha_names) == 1:
                n.parent = next(iter(ha_names))
            else:
                raise ValidationError(
                    f"trainer {n.name}: parent is required with several "
                    "hierarchical aggregators"
                )
        if n.parent not in ha_names:
            raise ValidationError(
                f"trainer {n.name}: parent must be a hierarchical_aggregator"
            )
    childless = ha_names - {n.parent for n in trainers}
    if childless:
        raise ValidationError(
            f"hierarchical aggregator(s) without trainers: {sorted(childless)}"
        )


def _used_host_pairs(scenario: Scenario) -> set[tuple[str, str]]:
    host_of = {n.name: n.host for n in scenario.nodes}
    central = scenario.central
    pairs: set[tuple[str, str]] = set()
    for n in scenario.nodes:
        if n.name != central:
            pairs.add((host_of[n.name], host_of[central]))
            pairs.add((host_of[central], host_of[n.name]))
    if scenario.topology == "ring":
        names = [n.name for n in scenario.nodes]
        for i, name in enumerate(names):
            succ = names[(i + 1) % len(names)]
            pairs.add((host_of[name], host_of[succ]))
    else:
        for n in scenario.nodes:
            parent = n.parent or (central if n.name != central else None)
            if parent:
                pairs.add((host_of[n.name], host_of[parent]))
                pairs.add((host_of[parent], host_of[n.name]))
    return {(a, b) for a, b in pairs if a != b}


def validate_compatibility(platform: Platform, scenario: Scenario) -> None:
    """Cross-check: scenario hosts exist and every used pair is routed."""
    for n in scenario.nodes:
        if n.host not in platform.hosts:
            raise ValidationError(f"node {n.name}: unknown host {n.host}")
    for src, dst in sorted(_used_host_pairs(scenario)):
        if not platform.has_route(src, dst):
            raise ValidationError(f"no route between {src} and {dst}")


@dataclass
class RunResult:
    """Metrics of one completed simulation."""

    run_id: str
    topology: str
    aggregator: str
    n_hosts: int
    total_gflops: float
    rounds: int
    sim_time_s: float
    energy_total_j: float
    energy_hosts_j: float
    energy_links_j: float
    messages_sent: int
    bytes_transferred: int
    rounds_completed: int
    per_host: list[HostEnergyRow]
    trace: Optional[list[dict]] = field(default=None, compare=False, repr=False)

    def to_json_obj(self) -> dict:
        obj = {
            "run_id": self.run_id,
            "topology": self.topology,
            "aggregator": self.aggregator,
            "n_hosts": self.n_hosts,
            "total_gflops": self.total_gflops,
            "rounds": self.rounds,
            "sim_time_s": self.sim_time_s,
            "energy_total_j": self.energy_total_j,
            "energy_hosts_j": self.energy_hosts_j,
            "energy_links_j": self.energy_links_j,
            "messages_sent": self.messages_sent,
            "bytes_transferred": self.bytes_transferred,
            "rounds_completed": self.rounds_completed,
            "per_host": [
                {
                    "host": row.host,
                    "busy_s": row.busy_s,
                    "idle_s": row.idle_s,
                    "idle_energy_j": row.idle_joules,
                    "busy_extra_energy_j": row.busy_extra_joules,
                    "energy_j": row.joules,
                }
                for row in self.per_host
            ],
        }
        return _quantize_obj(obj)

    @classmethod
    def from_json_obj(cls, obj: dict) -> "RunResult":
        return cls(
            run_id=obj["run_id"],
            topology=obj["topology"],
            aggregator=obj["aggregator"],
            n_hosts=int(obj["n_hosts"]),
            total_gflops=float(obj["total_gflops"]),
            rounds=int(obj["rounds"]),
            sim_time_s=float(obj["sim_time_s"]),
            energy_total_j=float(obj["energy_total_j"]),
            energy_hosts_j=float(obj["energy_hosts_j"]),
            energy_links_j=float(obj["energy_links_j"]),
            messages_sent=int(obj["messages_sent"]),
            bytes_transferred=int(obj["bytes_transferred"]),
            rounds_completed=int(obj["rounds_completed"]),
            per_host=[
                HostEnergyRow(
                    host=row["host"],
                    busy_s=float(row["busy_s"]),
                    idle_s=float(row["idle_s"]),
                    idle_joules=float(row["idle_energy_j"]),
                    busy_extra_joules=float(row["busy_extra_energy_j"]),
                    joules=float(row["energy_j"]),
                )
                for row in obj.get("per_host", [])
            ],
        )

    def csv_row(self) -> list[str]:
        return [
            self.run_id, self.topology, self.aggregator, str(self.n_hosts),
            format_float(self.total_gflops), str(self.rounds),
            format_float(self.sim_time_s), format_float(self.energy_total_j),
            format_float(self.energy_hosts_j), format_float(self.energy_links_j),
            str(self.messages_sent), str(self.bytes_transferred),
        ]


class Simulation:
    """A wired, not-yet-run simulation; exposes its parts for inspection."""

    def __init__(self, platform: Platform, scenario: Scenario, seed: int,
                 trace: bool = False):
        platform.validate()
        _validate_nodes(scenario)
        validate_compatibility(platform, scenario)
        self.platform = platform
        self.scenario = scenario
        self.seed = seed
        self.kernel = Kernel(platform, trace=trace)
        self.roles: dict[str, Role] = {}
        self.managers: dict[str, object] = {}

        wirings = build_wiring(scenario.topology, scenario.nodes)
        central = scenario.central
        nm_cls = NETWORK_MANAGERS[scenario.topology]
        for node in scenario.nodes:
            mediator = Mediator(node.name, role_mailbox(node.name),
                                nm_mailbox(node.name))
            role = make_role(node.role, mediator, scenario.workload,
                             scenario.rounds, scenario.aggregator,
                             scenario.async_proportion)
            if node.name == central:
                manager = nm_cls(mediator, wirings[node.name],
                                 all_wirings=wirings, record=self.kernel.record)
            else:
                stub = Wiring(node=node.name, role=node.role, central=central)
                manager = nm_cls(mediator, stub, record=self.kernel.record)
            self.roles[node.name] = role
            self.managers[node.name] = manager
            role_actor = f"{node.name}/role"
            nm_actor = f"{node.name}/nm"
            self.kernel.add_mailbox(mediator.role_mailbox, owner=role_actor)
            self.kernel.add_mailbox(mediator.nm_mailbox, owner=nm_actor)
            self.kernel.spawn(role_actor, node.host, role.run(), can_exec=True)
            self.kernel.spawn(nm_actor, node.host, manager.run(), can_exec=False)

    def run(self) -> RunResult:
        kernel = self.kernel
        sim_time = kernel.run()
        if kernel.sends_total != kernel.deliveries_total:
            raise SimulationError(
                f"message conservation violated: {kernel.sends_total} sends, "
                f"{kernel.deliveries_total} deliveries"
            )
        if kernel.network_messages != kernel.network_deliveries:
            raise SimulationError(
                f"network transfers in flight at quiescence: "
                f"{kernel.network_messages - kernel.network_deliveries}"
            )
        report = kernel.ledger.finalize(self.platform, sim_time)
        scenario = self.scenario
        run_id = (f"{scenario.topology}-{scenario.aggregator}"
                  f"-r{scenario.rounds}-s{self.seed}")
        return RunResult(
            run_id=run_id,
            topology=scenario.topology,
            aggregator=scenario.aggregator,
            n_hosts=len(self.platform.hosts),
            total_gflops=total_gflops(self.platform),
            rounds=scenario.rounds,
            sim_time_s=sim_time,
            energy_total_j=report.energy_total,
            energy_hosts_j=report.energy_hosts,
            energy_links_j=report.energy_links,
            messages_sent=kernel.network_messages,
            bytes_transferred=kernel.network_bytes,
            rounds_completed=self.roles[scenario.central].rounds_completed,
            per_host=report.per_host,
            trace=kernel.trace,
        )


def run_simulation(platform: Platform, scenario: Scenario, seed: int,
                   trace: bool = False) -> RunResult:
    """Execute one deterministic simulation to quiescence."""
    return Simulation(platform, scenario, seed, trace=trace).run()


def event_log(result: RunResult) -> list[dict]:
    """Time-ordered trace records of a run executed with trace=True."""
    if result.trace is None:
        raise ValidationError("run was executed without trace logging")
    return result.trace


# -- file output -------------------------------------------------------------

def _atomic_write(path: str, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_results(results, path: str, format: str = "csv") -> None:
    """Persist one or many run results with a stable layout."""
    rows = results if isinstance(results, list) else [results]
    if format == "csv":
        lines = [",".join(RUN_CSV_COLUMNS)]
        lines += [",".join(r.csv_row()) for r in rows]
        _atomic_write(path, "\n".join(lines) + "\n")
    elif format == "json":
        obj = [r.to_json_obj() for r in rows]
        if not isinstance(results, list):
            obj = obj[0]
        _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")
    else:
        raise ValidationError(f"unknown output format {format!r}")


def read_results_json(path: str):
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    if isinstance(obj, list):
        return [RunResult.from_json_obj(entry) for entry in obj]
    return RunResult.from_json_obj(obj)


def write_host_breakdown(result: RunResult, path: str) -> None:
    """Per-host energy table consumed by the plotting frontend."""
    lines = [",".join(HOST_CSV_COLUMNS)]
    for row in result.per_host:
        lines.append(",".join([
            result.run_id, row.host, format_float(row.busy_s),
            format_float(row.idle_s), format_float(row.idle_joules),
            format_float(row.busy_extra_joules), format_float(row.joules),
        ]))
    _atomic_write(path, "\n".join(lines) + "\n")


def write_trace(trace: list[dict], path: str) -> None:
    """Event trace as JSON lines, one time-ordered record per line."""
    lines = [json.dumps(_quantize_obj(rec), sort_keys=True) for rec in trace]
    _atomic_write(path, "\n".join(lines) + ("\n" if lines else ""))


def load_platform(path: str) -> Platform:
    with open(path, encoding="utf-8") as fh:
        return parse_platform(json.load(fh))


def load_scenario(path: str) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(json.load(fh))
