"""Shared builders for test platforms and scenarios."""

from __future__ import annotations

from falafels import Platform, Scenario, parse_platform, parse_scenario

WORKLOAD = {
    "n_parameters": 199210,
    "samples_per_round": 100,
    "flops_per_param_sample": 6,
    "bytes_per_parameter": 4,
    "agg_flops_per_param_per_model": 2,
}


def shared_link_platform(
    host_speeds: dict[str, float],
    bandwidth: float = 1e6,
    latency: float = 0.01,
    idle_watts: float = 10.0,
    busy_watts: float = 100.0,
    link_idle_watts: float = 1.0,
    joules_per_byte: float = 1e-6,
) -> Platform:
    """All hosts behind one shared link, every pair routed."""
    names = list(host_speeds)
    return parse_platform({
        "hosts": [
            {"name": name, "speed_flops": speed, "idle_watts": idle_watts,
             "busy_watts": busy_watts}
            for name, speed in host_speeds.items()
        ],
        "links": [{
            "name": "backbone", "bandwidth_bps_bytes": bandwidth,
            "latency_s": latency, "idle_watts": link_idle_watts,
            "joules_per_byte": joules_per_byte,
        }],
        "routes": [
            {"src": a, "dst": b, "links": ["backbone"]}
            for i, a in enumerate(names)
            for b in names[i + 1:]
        ],
    })


def star_scenario(n_trainers: int, rounds: int = 1, aggregator: str = "simple",
                  async_proportion: float | None = None,
                  workload: dict | None = None) -> Scenario:
    doc = {
        "topology": "star",
        "aggregator": aggregator,
        "rounds": rounds,
        "workload": workload or WORKLOAD,
        "nodes": [{"name": "agg", "host": "h-agg", "role": "aggregator"}] + [
            {"name": f"t{i}", "host": f"h-t{i}", "role": "trainer"}
            for i in range(n_trainers)
        ],
    }
    if async_proportion is not None:
        doc["async_proportion"] = async_proportion
    return parse_scenario(doc)


def ring_scenario(n_nodes: int, rounds: int = 1, aggregator: str = "simple",
                  async_proportion: float | None = None,
                  workload: dict | None = None) -> Scenario:
    doc = {
        "topology": "ring",
        "aggregator": aggregator,
        "rounds": rounds,
        "workload": workload or WORKLOAD,
        "nodes": [{"name": "agg", "host": "h-agg", "role": "aggregator"}] + [
            {"name": f"t{i}", "host": f"h-t{i}", "role": "trainer"}
            for i in range(n_nodes - 1)
        ],
    }
    if async_proportion is not None:
        doc["async_proportion"] = async_proportion
    return parse_scenario(doc)


def hierarchical_scenario(subclusters: list[int], rounds: int = 1,
                          aggregator: str = "simple",
                          async_proportion: float | None = None,
                          workload: dict | None = None) -> Scenario:
    """subclusters[i] = number of trainers under hierarchical aggregator i."""
    nodes = [{"name": "agg", "host": "h-agg", "role": "aggregator"}]
    t = 0
    for i, size in enumerate(subclusters):
        nodes.append({"name": f"ha{i}", "host": f"h-ha{i}",
                      "role": "hierarchical_aggregator"})
        for _ in range(size):
            nodes.append({"name": f"t{t}", "host": f"h-t{t}", "role": "trainer",
                          "parent": f"ha{i}"})
            t += 1
    doc = {
        "topology": "hierarchical",
        "aggregator": aggregator,
        "rounds": rounds,
        "workload": workload or WORKLOAD,
        "nodes": nodes,
    }
    if async_proportion is not None:
        doc["async_proportion"] = async_proportion
    return parse_scenario(doc)


def platform_for(scenario: Scenario, speeds: dict[str, float] | None = None,
                 default_speed: float = 1e9, **link_kwargs) -> Platform:
    """A shared-link platform providing exactly the hosts a scenario uses."""
    speeds = speeds or {}
    host_speeds = {
        n.host: speeds.get(n.name, speeds.get(n.host, default_speed))
        for n in scenario.nodes
    }
    return shared_link_platform(host_speeds, **link_kwargs)
