"""Evolutionary search over platform and algorithm configurations.

One independent pipeline per (topology, aggregator algorithm) combination:
evaluate every individual with the simulator, drop the worst fraction,
refill by cloning survivors and mutating only the clones.  Survivors are
kept verbatim (elitism), so each group's best criterion value can only
decrease or stay level across generations.

Mutations follow the configured rates: grow or shrink the machine set,
re-draw a machine profile, swap two machines' roles (e.g. move the
aggregator onto a slower box), and perturb algorithm parameters (the
asynchronous trigger proportion, subcluster assignment).  There is no
crossover: merging two platforms has no natural meaning.
"""

from __future__ import annotations

import copy
import logging
import math
import random
import zlib
from dataclasses import dataclass, field
from typing import Optional

from .kernel import SimulationError
from .platform import HOST_PRESETS, Platform, ValidationError, parse_platform
from .protocol import AGGREGATOR, HIERARCHICAL_AGGREGATOR, TRAINER, NodeDecl
from .roles import Workload
from .scenario import RunResult, Scenario, format_float, run_simulation

log = logging.getLogger("falafels.evolve")

CRITERIA = {"sim_time": "sim_time_s", "energy_total": "energy_total_j"}

TOPOLOGY_MIN_NODES = {"star": 2, "ring": 3, "hierarchical": 3}

COMBINATIONS = [
    ("star", "simple"),
    ("star", "asynchronous"),
    ("ring", "simple"),
    ("ring", "asynchronous"),
    ("hierarchical", "simple"),
    ("hierarchical", "asynchronous"),
]

EVOLUTION_CSV_COLUMNS = [
    "generation", "group", "best_criterion", "sim_time_s", "energy_total_j",
    "n_hosts", "total_gflops",
]


@dataclass
class MutationRates:
    machine_add: float = 0.3
    machine_remove: float = 0.3
    profile_change: float = 0.3
    role_swap: float = 0.3
    param_perturb: float = 0.3

    def validate(self) -> None:
        for name in ("machine_add", "machine_remove", "profile_change",
                     "role_swap", "param_perturb"):
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise ValidationError(f"mutation rate {name} must be in [0, 1]")


@dataclass
class EvolutionParams:
    profiles: dict[str, dict]            # name -> host parameters
    workload: Workload
    rounds: int = 1
    population_size: int = 20
    generations: int = 30
    cull_fraction: float = 0.5
    criterion: str = "energy_total"
    mutation_rates: MutationRates = field(default_factory=MutationRates)
    node_count_range: tuple[int, int] = (3, 10)
    async_proportion_min: float = 0.2
    link: dict = field(default_factory=lambda: {
        "bandwidth_bps_bytes": 1e7, "latency_s": 0.001,
        "idle_watts": 0.5, "joules_per_byte": 5e-8,
    })
    seed: int = 0

    def validate(self) -> None:
        if not self.profiles:
            raise ValidationError("evolution needs at least one machine profile")
        if self.population_size < 2:
            raise ValidationError("population_size must be >= 2")
        if self.generations < 1:
            raise ValidationError("generations must be >= 1")
        if not 0.0 < self.cull_fraction < 1.0:
            raise ValidationError("cull_fraction must be in (0, 1)")
        if cull_count(self.cull_fraction, self.population_size) < 1:
            raise ValidationError(
                "cull_fraction too small: floor(cull_fraction * population_size) "
                "must be >= 1"
            )
        if self.criterion not in CRITERIA:
            raise ValidationError(f"unknown criterion {self.criterion!r}")
        self.mutation_rates.validate()
        lo, hi = self.node_count_range
        if lo < 2 or hi < lo:
            raise ValidationError("node_count_range must satisfy 2 <= min <= max")
        needed = max(TOPOLOGY_MIN_NODES.values())
        if hi < needed:
            raise ValidationError(
                f"node_count_range max ({hi}) is below the topology minimum "
                f"({needed})"
            )
        if not 0.0 < self.async_proportion_min <= 1.0:
            raise ValidationError("async_proportion_min must be in (0, 1]")
        self.workload.validate()


def cull_count(fraction: float, population_size: int) -> int:
    """floor(fraction * population); epsilon guards float artifacts."""
    return math.floor(fraction * population_size + 1e-9)


def parse_evolution_config(document: dict) -> EvolutionParams:
    """Build EvolutionParams from a parsed JSON config document."""
    if not isinstance(document, dict):
        raise ValidationError("evolution config must be an object")
    profiles: dict[str, dict] = {}
    for entry in document.get("profiles", [{"preset": name} for name in HOST_PRESETS]):
        if "preset" in entry:
            name = entry["preset"]
            if name not in HOST_PRESETS:
                raise ValidationError(f"unknown profile preset {name!r}")
            profiles[name] = dict(HOST_PRESETS[name])
        else:
            try:
                profiles[str(entry["name"])] = {
                    "speed": float(entry["speed_flops"]),
                    "idle_watts": float(entry["idle_watts"]),
                    "busy_watts": float(entry["busy_watts"]),
                }
            except KeyError as exc:
                raise ValidationError(f"profile entry missing field {exc}") from None

    wdoc = document.get("workload")
    if not isinstance(wdoc, dict):
        raise ValidationError("evolution config requires a workload object")
    workload = Workload(
        n_parameters=int(wdoc["n_parameters"]),
        samples_per_round=int(wdoc["samples_per_round"]),
        flops_per_param_sample=float(wdoc.get("flops_per_param_sample", 6.0)),
        bytes_per_parameter=int(wdoc.get("bytes_per_parameter", 4)),
        agg_flops_per_param_per_model=float(
            wdoc.get("agg_flops_per_param_per_model", 2.0)
        ),
    )

    rates = MutationRates(**document.get("mutation_rates", {}))
    defaults = EvolutionParams(profiles={}, workload=workload)
    params = EvolutionParams(
        profiles=profiles,
        workload=workload,
        rounds=int(document.get("rounds", 1)),
        population_size=int(document.get("population_size", defaults.population_size)),
        generations=int(document.get("generations", defaults.generations)),
        cull_fraction=float(document.get("cull_fraction", defaults.cull_fraction)),
        criterion=str(document.get("criterion", defaults.criterion)),
        mutation_rates=rates,
        node_count_range=tuple(document.get("node_count_range", defaults.node_count_range)),
        async_proportion_min=float(
            document.get("async_proportion_min", defaults.async_proportion_min)
        ),
        link={**defaults.link, **document.get("link", {})},
        seed=int(document.get("seed", 0)),
    )
    params.validate()
    return params


@dataclass
class Machine:
    """One machine of an individual: hardware profile plus assigned role.

    ``group`` is the subcluster index for hierarchical topologies (the
    hierarchical aggregator of subcluster k and its trainers share k).
    """

    profile: str
    role: str
    group: Optional[int] = None


@dataclass
class Individual:
    """An evolvable platform + algorithm configuration."""

    id: int
    topology: str
    aggregator: str
    machines: list[Machine]
    async_proportion: Optional[float] = None
    result: Optional[RunResult] = None
    score: Optional[float] = None

    def validate(self, params: EvolutionParams) -> None:
        roles = [m.role for m in self.machines]
        if roles.count(AGGREGATOR) != 1:
            raise ValidationError("individual needs exactly one aggregator")
        if len(self.machines) < TOPOLOGY_MIN_NODES[self.topology]:
            raise ValidationError(
                f"{self.topology} individual needs at least "
                f"{TOPOLOGY_MIN_NODES[self.topology]} machines"
            )
        if self.topology == "hierarchical":
            groups = {m.group for m in self.machines
                      if m.role == HIERARCHICAL_AGGREGATOR}
            if not groups:
                raise ValidationError("hierarchical individual needs >= 1 "
                                      "hierarchical aggregator")
            for g in groups:
                if not any(m.role == TRAINER and m.group == g
                           for m in self.machines):
                    raise ValidationError(f"subcluster {g} has no trainer")
        elif TRAINER not in roles:
            raise ValidationError("individual needs at least one trainer")
        if self.aggregator == "asynchronous":
            if self.async_proportion is None or not (
                params.async_proportion_min <= self.async_proportion <= 1.0
            ):
                raise ValidationError("async_proportion outside configured range")


@dataclass
class Group:
    """One evolution pipeline dedicated to a single combination."""

    topology: str
    aggregator: str
    population: list[Individual]
    best_history: list[float] = field(default_factory=list)
    next_id: int = 0

    @property
    def label(self) -> str:
        return f"{self.topology}/{self.aggregator}"

    def fresh_id(self) -> int:
        value = self.next_id
        self.next_id += 1
        return value


@dataclass
class GenerationRecord:
    """Best individual of one group after one generation's evaluation."""

    generation: int
    group: str
    best_criterion: float
    sim_time_s: float
    energy_total_j: float
    n_hosts: int
    total_gflops: float


def group_rng(seed: int, label: str) -> random.Random:
    """Independent RNG stream per group, stable across group ordering."""
    derived = (seed ^ zlib.crc32(label.encode("utf-8"))) & 0xFFFFFFFFFFFFFFFF
    return random.Random(derived)


# -- individual construction ---------------------------------------------

def build_platform(individual: Individual, params: EvolutionParams) -> Platform:
    """Derive the physical platform: one host per machine, one shared link."""
    hosts = []
    for i, machine in enumerate(individual.machines):
        try:
            profile = params.profiles[machine.profile]
        except KeyError:
            raise ValidationError(f"unknown profile {machine.profile!r}") from None
        hosts.append({
            "name": f"h{i}",
            "speed_flops": profile["speed"],
            "idle_watts": profile["idle_watts"],
            "busy_watts": profile["busy_watts"],
            "profile": machine.profile,
        })
    names = [h["name"] for h in hosts]
    return parse_platform({
        "hosts": hosts,
        "links": [{"name": "net", **params.link}],
        "routes": [
            {"src": a, "dst": b, "links": ["net"]}
            for i, a in enumerate(names)
            for b in names[i + 1:]
        ],
    })


def build_scenario(individual: Individual, params: EvolutionParams) -> Scenario:
    """Derive the applicative scenario from the machine role assignment."""
    nodes = []
    ha_of_group = {
        m.group: f"n{i}"
        for i, m in enumerate(individual.machines)
        if m.role == HIERARCHICAL_AGGREGATOR
    }
    for i, machine in enumerate(individual.machines):
        parent = None
        if machine.role == TRAINER and individual.topology == "hierarchical":
            parent = ha_of_group[machine.group]
        nodes.append(NodeDecl(name=f"n{i}", host=f"h{i}", role=machine.role,
                              parent=parent))
    return Scenario(
        topology=individual.topology,
        aggregator=individual.aggregator,
        rounds=params.rounds,
        workload=params.workload,
        nodes=nodes,
        async_proportion=individual.async_proportion,
    )


def random_individual(group: Group, params: EvolutionParams,
                      rng: random.Random) -> Individual:
    """Draw a constraint-satisfying configuration for the group."""
    lo, hi = params.node_count_range
    lo = max(lo, TOPOLOGY_MIN_NODES[group.topology])
    count = rng.randint(lo, hi)
    profile_names = list(params.profiles)
    machines = [Machine(profile=rng.choice(profile_names), role=TRAINER)
                for _ in range(count)]
    machines[0].role = AGGREGATOR
    if group.topology == "hierarchical":
        n_trainers = count - 1
        max_groups = n_trainers // 2 if n_trainers >= 2 else 1
        n_groups = rng.randint(1, max(1, max_groups))
        trainers = machines[1:]
        for g in range(n_groups):
            trainers[g].role = HIERARCHICAL_AGGREGATOR
            trainers[g].group = g
        rest = trainers[n_groups:]
        for g, machine in enumerate(rest[:n_groups]):
            machine.group = g  # every subcluster gets one trainer
        for machine in rest[n_groups:]:
            machine.group = rng.randrange(n_groups)
    proportion = None
    if group.aggregator == "asynchronous":
        proportion = rng.uniform(params.async_proportion_min, 1.0)
    individual = Individual(
        id=group.fresh_id(),
        topology=group.topology,
        aggregator=group.aggregator,
        machines=machines,
        async_proportion=proportion,
    )
    individual.validate(params)
    return individual


def init_groups(params: EvolutionParams) -> list[Group]:
    """One group per combination, each with a seeded random population."""
    params.validate()
    groups = []
    for topology, aggregator in COMBINATIONS:
        group = Group(topology=topology, aggregator=aggregator, population=[])
        rng = group_rng(params.seed, group.label)
        group.population = [
            random_individual(group, params, rng)
            for _ in range(params.population_size)
        ]
        groups.append(group)
    return groups


# -- pipeline steps --------------------------------------------------------

def evaluate(group: Group, params: EvolutionParams) -> None:
    """Score every individual of the group with the simulator.

    Scores are cached on the individual, so survivors are never re-run;
    a failing simulation scores +inf and is culled at selection.
    """
    attr = CRITERIA[params.criterion]
    for individual in group.population:
        if individual.score is not None:
            continue
        try:
            platform = build_platform(individual, params)
            scenario = build_scenario(individual, params)
            result = run_simulation(platform, scenario, seed=params.seed)
            individual.result = result
            individual.score = getattr(result, attr)
        except (SimulationError, ValidationError) as exc:
            log.warning("%s #%d failed: %s", group.label, individual.id, exc)
            individual.result = None
            individual.score = math.inf


def select(group: Group, cull_fraction: float) -> list[Individual]:
    """Keep the best individuals, dropping floor(q * population) of them."""
    ranked = sorted(group.population, key=lambda ind: (ind.score, ind.id))
    drop = cull_count(cull_fraction, len(ranked))
    return ranked[: len(ranked) - drop]


def _removable_indices(individual: Individual) -> list[int]:
    machines = individual.machines
    if individual.topology == "hierarchical":
        # Only trainers in subclusters that keep at least one trainer.
        counts: dict[int, int] = {}
        for m in machines:
            if m.role == TRAINER:
                counts[m.group] = counts.get(m.group, 0) + 1
        return [i for i, m in enumerate(machines)
                if m.role == TRAINER and counts[m.group] >= 2]
    if len(machines) <= TOPOLOGY_MIN_NODES[individual.topology]:
        return []
    return list(range(len(machines)))


def _repair(individual: Individual) -> None:
    """Re-establish mandatory roles after a destructive mutation."""
    machines = individual.machines
    if not any(m.role == AGGREGATOR for m in machines):
        machines[0].role = AGGREGATOR
        machines[0].group = None
    if individual.topology != "hierarchical":
        if not any(m.role == TRAINER for m in machines):
            for machine in reversed(machines):
                if machine.role != AGGREGATOR:
                    machine.role = TRAINER
                    break


def mutate(individual: Individual, group: Group, params: EvolutionParams,
           rng: random.Random) -> Individual:
    """Clone the parent and apply each mutation operator at its rate."""
    rates = params.mutation_rates
    child = Individual(
        id=group.fresh_id(),
        topology=individual.topology,
        aggregator=individual.aggregator,
        machines=copy.deepcopy(individual.machines),
        async_proportion=individual.async_proportion,
    )
    machines = child.machines
    profile_names = list(params.profiles)

    if rng.random() < rates.machine_add and len(machines) < params.node_count_range[1]:
        machine = Machine(profile=rng.choice(profile_names), role=TRAINER)
        if child.topology == "hierarchical":
            groups = sorted({m.group for m in machines
                             if m.role == HIERARCHICAL_AGGREGATOR})
            machine.group = rng.choice(groups)
        machines.append(machine)
    if rng.random() < rates.machine_remove:
        candidates = _removable_indices(child)
        if candidates:
            machines.pop(rng.choice(candidates))
    if rng.random() < rates.profile_change:
        machines[rng.randrange(len(machines))].profile = rng.choice(profile_names)
    if rng.random() < rates.role_swap and len(machines) >= 2:
        i, j = rng.sample(range(len(machines)), 2)
        machines[i].role, machines[j].role = machines[j].role, machines[i].role
        machines[i].group, machines[j].group = machines[j].group, machines[i].group
    if rng.random() < rates.param_perturb:
        if child.aggregator == "asynchronous":
            delta = rng.choice([-0.1, 0.1])
            child.async_proportion = min(
                1.0, max(params.async_proportion_min,
                         child.async_proportion + delta)
            )
        elif child.topology == "hierarchical":
            movable = _removable_indices(child)
            groups = sorted({m.group for m in machines
                             if m.role == HIERARCHICAL_AGGREGATOR})
            if movable and len(groups) >= 2:
                idx = rng.choice(movable)
                others = [g for g in groups if g != machines[idx].group]
                machines[idx].group = rng.choice(others)
    _repair(child)
    child.validate(params)
    return child


def evolve_loop(groups: list[Group], params: EvolutionParams) -> list[GenerationRecord]:
    """Run every group's pipeline for the configured generations."""
    rngs = {g.label: group_rng(params.seed ^ 0x5EED, g.label) for g in groups}
    history: list[GenerationRecord] = []
    for generation in range(params.generations):
        for group in groups:
            evaluate(group, params)
            best = min(group.population, key=lambda ind: (ind.score, ind.id))
            history.append(GenerationRecord(
                generation=generation,
                group=group.label,
                best_criterion=best.score,
                sim_time_s=best.result.sim_time_s if best.result else math.inf,
                energy_total_j=best.result.energy_total_j if best.result else math.inf,
                n_hosts=len(best.machines),
                total_gflops=best.result.total_gflops if best.result else 0.0,
            ))
            group.best_history.append(best.score)
            if generation == params.generations - 1:
                continue  # final population stays as evaluated
            survivors = select(group, params.cull_fraction)
            children = []
            rng = rngs[group.label]
            while len(survivors) + len(children) < params.population_size:
                parent = survivors[len(children) % len(survivors)]
                children.append(mutate(parent, group, params, rng))
            group.population = survivors + children
    return history


def best_per_generation(history: list[GenerationRecord]) -> list[list[str]]:
    """Rows for evolution.csv, one per (generation, group)."""
    rows = []
    for rec in history:
        rows.append([
            str(rec.generation), rec.group, format_float(rec.best_criterion),
            format_float(rec.sim_time_s), format_float(rec.energy_total_j),
            str(rec.n_hosts), format_float(rec.total_gflops),
        ])
    return rows


def final_best(groups: list[Group], params: EvolutionParams) -> dict:
    """Each group's winning configuration, serialized for final_best.json."""
    summary = {}
    for group in groups:
        best = min(group.population, key=lambda ind: (ind.score, ind.id))
        entry = {
            "criterion": params.criterion,
            "best_criterion": (None if best.score is None or math.isinf(best.score)
                               else float(format_float(best.score))),
            "machines": [
                {"profile": m.profile, "role": m.role,
                 **({"subcluster": m.group} if m.group is not None else {})}
                for m in best.machines
            ],
            "platform": build_platform(best, params).to_document(),
            "scenario": build_scenario(best, params).to_document(),
        }
        if best.result is not None:
            entry["result"] = best.result.to_json_obj()
        if best.async_proportion is not None:
            entry["async_proportion"] = best.async_proportion
        summary[group.label] = entry
    return summary


def run_evolution(params: EvolutionParams) -> tuple[list[Group], list[GenerationRecord]]:
    """Initialize the groups and run the full search."""
    groups = init_groups(params)
    history = evolve_loop(groups, params)
    return groups, history
