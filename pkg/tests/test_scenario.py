"""Simulation wiring, results serialization and reproducibility tests."""

from __future__ import annotations

import json
import random

import pytest

from falafels import (
    DeadlockError,
    ValidationError,
    parse_platform,
    parse_scenario,
    run_simulation,
)
from falafels.scenario import (
    RUN_CSV_COLUMNS,
    RunResult,
    actor_stream,
    event_log,
    format_float,
    read_results_json,
    validate_compatibility,
    write_host_breakdown,
    write_results,
    write_trace,
)

from helpers import (
    WORKLOAD,
    hierarchical_scenario,
    platform_for,
    ring_scenario,
    shared_link_platform,
    star_scenario,
)


class TestRunBasics:
    def test_zero_rounds_is_bootstrap_plus_kill(self):
        scenario = star_scenario(2, rounds=0)
        result = run_simulation(platform_for(scenario), scenario, seed=0,
                                trace=True)
        packets = {r["packet"] for r in result.trace
                   if r["event"] == "flow_complete"}
        assert packets == {"RegistrationRequest", "RegistrationConfirmation",
                           "Kill"}
        assert result.rounds_completed == 0
        assert result.sim_time_s > 0

    def test_rounds_completed_tracks_configured_rounds(self):
        scenario = star_scenario(2, rounds=3)
        result = run_simulation(platform_for(scenario), scenario, seed=0)
        assert result.rounds_completed == 3
        assert result.rounds == 3

    def test_energy_decomposition_identity(self):
        scenario = ring_scenario(4, rounds=2)
        result = run_simulation(platform_for(scenario), scenario, seed=0)
        assert result.energy_total_j == result.energy_hosts_j + result.energy_links_j
        assert result.sim_time_s >= 0

    def test_same_seed_same_result_object(self):
        scenario = star_scenario(3, rounds=2)
        platform = platform_for(scenario)
        a = run_simulation(platform, scenario, seed=9)
        b = run_simulation(platform, scenario, seed=9)
        assert a == b


class TestDeterministicFiles:
    def _run(self, tmp_path, tag):
        scenario = hierarchical_scenario([2, 1], rounds=2)
        platform = platform_for(scenario)
        result = run_simulation(platform, scenario, seed=5, trace=True)
        csv = tmp_path / f"{tag}.csv"
        js = tmp_path / f"{tag}.json"
        tr = tmp_path / f"{tag}.jsonl"
        write_results(result, str(csv), "csv")
        write_results(result, str(js), "json")
        write_trace(result.trace, str(tr))
        return csv.read_bytes(), js.read_bytes(), tr.read_bytes()

    def test_rerun_is_byte_identical(self, tmp_path):
        assert self._run(tmp_path, "a") == self._run(tmp_path, "b")


class TestWriteResults:
    def _result(self):
        scenario = star_scenario(2, rounds=1)
        return run_simulation(platform_for(scenario), scenario, seed=3)

    def test_csv_shape(self, tmp_path):
        path = tmp_path / "run.csv"
        write_results(self._result(), str(path), "csv")
        lines = path.read_text().strip().split("\n")
        assert lines[0] == ",".join(RUN_CSV_COLUMNS)
        assert len(lines) == 2
        assert len(lines[1].split(",")) == len(RUN_CSV_COLUMNS)

    def test_csv_many_rows(self, tmp_path):
        results = [self._result() for _ in range(3)]
        path = tmp_path / "runs.csv"
        write_results(results, str(path), "csv")
        lines = path.read_text().strip().split("\n")
        assert len(lines) == 4

    def test_json_round_trip_is_stable(self, tmp_path):
        result = self._result()
        first = tmp_path / "r1.json"
        write_results(result, str(first), "json")
        once = read_results_json(str(first))
        second = tmp_path / "r2.json"
        write_results(once, str(second), "json")
        twice = read_results_json(str(second))
        assert once == twice  # 9-significant-digit quantization is idempotent
        assert first.read_bytes() == second.read_bytes()
        assert once.sim_time_s == pytest.approx(result.sim_time_s, rel=1e-8)
        assert once.run_id == result.run_id

    def test_host_breakdown_consistent_with_totals(self, tmp_path):
        result = self._result()
        path = tmp_path / "hosts.csv"
        write_host_breakdown(result, str(path))
        lines = path.read_text().strip().split("\n")
        assert len(lines) == 1 + result.n_hosts
        total = sum(float(line.split(",")[-1]) for line in lines[1:])
        assert total == pytest.approx(result.energy_hosts_j, rel=1e-6)

    def test_unknown_format_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            write_results(self._result(), str(tmp_path / "x"), "xml")

    def test_float_format_is_nine_significant_digits(self):
        assert format_float(3.3480668399999) == "3.34806684"
        assert format_float(0.1) == "0.1"
        assert format_float(123456789012.0) == "1.23456789e+11"


class TestEventLog:
    def test_trace_times_non_decreasing(self):
        scenario = star_scenario(3, rounds=2)
        result = run_simulation(platform_for(scenario), scenario, seed=0,
                                trace=True)
        times = [r["t"] for r in event_log(result)]
        assert times == sorted(times)

    def test_sync_star_transfer_counts(self):
        scenario = star_scenario(2, rounds=1)
        result = run_simulation(platform_for(scenario), scenario, seed=0,
                                trace=True)
        completions = [r for r in result.trace if r["event"] == "flow_complete"]
        gm = [r for r in completions if r["packet"] == "GlobalModel"]
        lmm = [r for r in completions if r["packet"] == "LocalModel"]
        assert len(gm) == 2
        assert len(lmm) == 2

    def test_trace_disabled_raises(self):
        scenario = star_scenario(1, rounds=0)
        result = run_simulation(platform_for(scenario), scenario, seed=0)
        with pytest.raises(ValidationError):
            event_log(result)


class TestValidation:
    def test_missing_route_names_pair(self):
        scenario = star_scenario(2, rounds=1)
        platform = parse_platform({
            "hosts": [
                {"name": n.host, "speed_flops": 1e9, "idle_watts": 1,
                 "busy_watts": 2}
                for n in scenario.nodes
            ],
        })
        with pytest.raises(ValidationError, match="no route between"):
            validate_compatibility(platform, scenario)

    def test_unknown_host(self):
        scenario = star_scenario(2, rounds=1)
        platform = shared_link_platform({"other": 1e9})
        with pytest.raises(ValidationError, match="unknown host"):
            validate_compatibility(platform, scenario)

    def test_ring_needs_three_nodes(self):
        with pytest.raises(ValidationError, match="at least 3"):
            ring_scenario(2, rounds=1)

    def test_hierarchical_needs_children(self):
        with pytest.raises(ValidationError, match="without trainers"):
            parse_scenario({
                "topology": "hierarchical", "aggregator": "simple",
                "rounds": 1, "workload": WORKLOAD,
                "nodes": [
                    {"name": "agg", "host": "h0", "role": "aggregator"},
                    {"name": "ha0", "host": "h1",
                     "role": "hierarchical_aggregator"},
                    {"name": "ha1", "host": "h2",
                     "role": "hierarchical_aggregator"},
                    {"name": "t0", "host": "h3", "role": "trainer",
                     "parent": "ha0"},
                ],
            })

    def test_two_aggregators_rejected(self):
        with pytest.raises(ValidationError, match="exactly one aggregator"):
            parse_scenario({
                "topology": "star", "aggregator": "simple", "rounds": 1,
                "workload": WORKLOAD,
                "nodes": [
                    {"name": "a1", "host": "h0", "role": "aggregator"},
                    {"name": "a2", "host": "h1", "role": "aggregator"},
                    {"name": "t", "host": "h2", "role": "trainer"},
                ],
            })

    def test_async_requires_proportion(self):
        with pytest.raises(ValidationError, match="async_proportion"):
            parse_scenario({
                "topology": "star", "aggregator": "asynchronous", "rounds": 1,
                "workload": WORKLOAD,
                "nodes": [
                    {"name": "agg", "host": "h0", "role": "aggregator"},
                    {"name": "t", "host": "h1", "role": "trainer"},
                ],
            })

    def test_shared_host_rejected(self):
        with pytest.raises(ValidationError, match="own host"):
            parse_scenario({
                "topology": "star", "aggregator": "simple", "rounds": 1,
                "workload": WORKLOAD,
                "nodes": [
                    {"name": "agg", "host": "h0", "role": "aggregator"},
                    {"name": "t", "host": "h0", "role": "trainer"},
                ],
            })

    def test_proxy_forbidden_outside_star(self):
        with pytest.raises(ValidationError, match="not allowed"):
            parse_scenario({
                "topology": "ring", "aggregator": "simple", "rounds": 1,
                "workload": WORKLOAD,
                "nodes": [
                    {"name": "agg", "host": "h0", "role": "aggregator"},
                    {"name": "t", "host": "h1", "role": "trainer"},
                    {"name": "p", "host": "h2", "role": "proxy"},
                ],
            })


class TestTimingInvariants:
    def test_doubling_speeds_halves_exec_and_keeps_transfers(self):
        scenario = star_scenario(2, rounds=1)

        def run_at(speed):
            platform = platform_for(scenario, default_speed=speed,
                                    bandwidth=1e6, latency=0.01)
            return run_simulation(platform, scenario, seed=0, trace=True)

        base, fast = run_at(1e9), run_at(2e9)

        def exec_durations(result):
            starts: dict[str, list[float]] = {}
            spans = []
            for rec in result.trace:
                if rec["event"] == "exec_start":
                    starts.setdefault(rec["host"], []).append(rec["t"])
                elif rec["event"] == "exec_complete":
                    spans.append((rec["host"],
                                  rec["t"] - starts[rec["host"]].pop(0)))
            return spans

        for (host_a, span_a), (host_b, span_b) in zip(exec_durations(base),
                                                      exec_durations(fast)):
            assert host_a == host_b
            assert span_b == pytest.approx(span_a / 2, rel=1e-12)

        def flow_durations(result):
            starts = {}
            spans = {}
            for rec in result.trace:
                key = (rec.get("packet"), rec.get("hop_from"),
                       rec.get("hop_to"))
                if rec["event"] == "flow_start":
                    starts.setdefault(key, []).append(rec["t"])
                elif rec["event"] == "flow_complete":
                    spans.setdefault(key, []).append(
                        rec["t"] - starts[key].pop(0)
                    )
            return spans

        # same phase structure on this fixture: transfer durations match
        base_flows, fast_flows = flow_durations(base), flow_durations(fast)
        assert base_flows.keys() == fast_flows.keys()
        for key, spans in base_flows.items():
            assert fast_flows[key] == pytest.approx(spans, rel=1e-9, abs=1e-12)

    def test_synchronous_round_barrier(self):
        # Aggregation cannot start before the slowest upload of its round.
        scenario = star_scenario(3, rounds=2)
        platform = platform_for(
            scenario, speeds={"t0": 2e9, "t1": 1e9, "t2": 2.5e8},
        )
        result = run_simulation(platform, scenario, seed=0, trace=True)
        lm_times, agg_starts = [], []
        for rec in result.trace:
            if rec["event"] == "role_deliver" and rec["node"] == "agg" \
                    and rec["packet"] == "LocalModel":
                lm_times.append(rec["t"])
            elif rec["event"] == "exec_start" and rec["host"] == "h-agg":
                agg_starts.append(rec["t"])
        assert len(agg_starts) == 2
        for k, start in enumerate(agg_starts):
            round_arrivals = lm_times[3 * k: 3 * (k + 1)]
            assert start >= max(round_arrivals)

    def test_async_aggregations_never_later_than_sync(self):
        # With one straggler and a partial trigger, the k-th aggregation
        # under the asynchronous automaton happens no later than under the
        # synchronous barrier on the identical platform.
        speeds = {"t0": 1e9, "t1": 1e9, "t2": 1e9, "t3": 1e8}

        def agg_exec_times(aggregator, proportion=None):
            scenario = star_scenario(4, rounds=3, aggregator=aggregator,
                                     async_proportion=proportion)
            platform = platform_for(scenario, speeds=speeds, bandwidth=1e7,
                                    latency=0.001)
            result = run_simulation(platform, scenario, seed=0, trace=True)
            return [rec["t"] for rec in result.trace
                    if rec["event"] == "exec_complete"
                    and rec["host"] == "h-agg"]

        sync_times = agg_exec_times("simple")
        async_times = agg_exec_times("asynchronous", 0.75)
        assert len(sync_times) == len(async_times) == 3
        for k in range(3):
            assert async_times[k] <= sync_times[k]

    def test_hierarchical_model_conservation(self):
        rounds = 3
        scenario = hierarchical_scenario([2, 1], rounds=rounds)
        result = run_simulation(platform_for(scenario), scenario, seed=0,
                                trace=True)
        central_lms = [rec for rec in result.trace
                       if rec["event"] == "role_deliver"
                       and rec["node"] == "agg"
                       and rec["packet"] == "LocalModel"]
        assert len(central_lms) == 2 * rounds  # one per subcluster per round
        assert {rec["src"] for rec in central_lms} == {"ha0", "ha1"}


class TestActorStream:
    def test_streams_are_stable_and_independent(self):
        a1 = actor_stream(42, "node-a").random()
        a2 = actor_stream(42, "node-a").random()
        b = actor_stream(42, "node-b").random()
        assert a1 == a2
        assert a1 != b


def test_deadlock_reported_with_actor_dump():
    # A scenario whose trainer waits forever: feed it through the kernel by
    # declaring a central that expects a registration which never comes is
    # impossible through validation, so exercise the detector directly via
    # a role-level harness in test_kernel; here we check the scenario path
    # propagates DeadlockError from the kernel untouched.
    from falafels.kernel import Kernel, Recv

    kernel = Kernel()

    def stuck():
        yield Recv("box")

    kernel.add_mailbox("box", owner="a")
    kernel.spawn("a", "h", stuck())
    with pytest.raises(DeadlockError, match="never terminated"):
        kernel.run()
