"""Physical platform description and energy accounting.

A platform is a set of hosts (compute machines), links (network devices)
and routes (ordered link sequences between host pairs).  Transfers follow a
flow-level model: a message first pays the route latency once, then its
bytes drain at a fair share of the bottleneck link bandwidth.  Energy uses
a linear idle/busy power model for hosts and an affine idle + per-byte
model for links.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

PROFILE_LABELS = ("workstation", "laptop", "raspberrypi4", "custom")


class ValidationError(ValueError):
    """A platform or scenario document violates its schema or invariants."""


@dataclass(frozen=True)
class HostProfile:
    """A machine: compute speed plus its idle/busy power envelope."""

    name: str
    speed: float  # flops per second
    idle_watts: float
    busy_watts: float
    profile: str = "custom"

    def validate(self) -> None:
        if self.speed <= 0:
            raise ValidationError(f"host {self.name}: speed must be > 0")
        if self.idle_watts < 0:
            raise ValidationError(f"host {self.name}: idle_watts must be >= 0")
        if self.idle_watts > self.busy_watts:
            raise ValidationError(
                f"host {self.name}: idle_watts ({self.idle_watts}) exceeds "
                f"busy_watts ({self.busy_watts})"
            )


@dataclass(frozen=True)
class LinkProfile:
    """A network device: bandwidth/latency plus its energy parameters."""

    name: str
    bandwidth: float  # bytes per second
    latency: float  # seconds
    idle_watts: float = 0.0
    joules_per_byte: float = 0.0

    def validate(self) -> None:
        if self.bandwidth <= 0:
            raise ValidationError(f"link {self.name}: bandwidth must be > 0")
        if self.latency < 0:
            raise ValidationError(f"link {self.name}: latency must be >= 0")
        if self.idle_watts < 0:
            raise ValidationError(f"link {self.name}: idle_watts must be >= 0")
        if self.joules_per_byte < 0:
            raise ValidationError(f"link {self.name}: joules_per_byte must be >= 0")


# Illustrative presets for the three machine classes used in examples and by
# the evolutionary search.  The wattages are plausible placeholders, not
# measurements; override them in the platform document for real studies.
HOST_PRESETS: dict[str, dict[str, float]] = {
    "workstation": {"speed": 5e10, "idle_watts": 70.0, "busy_watts": 280.0},
    "laptop": {"speed": 1.5e10, "idle_watts": 12.0, "busy_watts": 60.0},
    "raspberrypi4": {"speed": 3e9, "idle_watts": 2.5, "busy_watts": 7.0},
}


@dataclass
class Platform:
    """Hosts, links and the routing table between host pairs."""

    hosts: dict[str, HostProfile]
    links: dict[str, LinkProfile]
    routes: dict[tuple[str, str], tuple[str, ...]]

    def host(self, name: str) -> HostProfile:
        try:
            return self.hosts[name]
        except KeyError:
            raise ValidationError(f"unknown host {name}") from None

    def route(self, src: str, dst: str) -> tuple[LinkProfile, ...]:
        try:
            names = self.routes[(src, dst)]
        except KeyError:
            raise ValidationError(f"no route between {src} and {dst}") from None
        return tuple(self.links[n] for n in names)

    def has_route(self, src: str, dst: str) -> bool:
        return (src, dst) in self.routes

    def validate(self) -> None:
        for h in self.hosts.values():
            h.validate()
        for l in self.links.values():
            l.validate()
        for (src, dst), names in self.routes.items():
            if src not in self.hosts:
                raise ValidationError(f"route references unknown host {src}")
            if dst not in self.hosts:
                raise ValidationError(f"route references unknown host {dst}")
            for n in names:
                if n not in self.links:
                    raise ValidationError(f"unknown link {n}")

    def to_document(self) -> dict:
        """Inverse of parse_platform, stable field order."""
        return {
            "hosts": [
                {
                    "name": h.name,
                    "speed_flops": h.speed,
                    "idle_watts": h.idle_watts,
                    "busy_watts": h.busy_watts,
                    "profile": h.profile,
                }
                for h in self.hosts.values()
            ],
            "links": [
                {
                    "name": l.name,
                    "bandwidth_bps_bytes": l.bandwidth,
                    "latency_s": l.latency,
                    "idle_watts": l.idle_watts,
                    "joules_per_byte": l.joules_per_byte,
                }
                for l in self.links.values()
            ],
            "routes": [
                {"src": src, "dst": dst, "links": list(names), "symmetric": False}
                for (src, dst), names in self.routes.items()
            ],
        }


def parse_platform(document: dict) -> Platform:
    """Build and validate a Platform from a parsed JSON document.

    Schema: ``hosts`` is a list of {name, speed_flops, idle_watts,
    busy_watts, profile}, ``links`` a list of {name, bandwidth_bps_bytes,
    latency_s, idle_watts, joules_per_byte}, ``routes`` a list of
    {src, dst, links, symmetric}.  A symmetric route also installs the
    reverse direction with the link sequence reversed.
    """
    if not isinstance(document, dict):
        raise ValidationError("platform document must be an object")
    hosts: dict[str, HostProfile] = {}
    for entry in document.get("hosts", []):
        try:
            profile = HostProfile(
                name=str(entry["name"]),
                speed=float(entry["speed_flops"]),
                idle_watts=float(entry.get("idle_watts", 0.0)),
                busy_watts=float(entry.get("busy_watts", entry.get("idle_watts", 0.0))),
                profile=str(entry.get("profile", "custom")),
            )
        except KeyError as exc:
            raise ValidationError(f"host entry missing field {exc}") from None
        if profile.name in hosts:
            raise ValidationError(f"duplicate host {profile.name}")
        hosts[profile.name] = profile
    if not hosts:
        raise ValidationError("platform declares no hosts")

    links: dict[str, LinkProfile] = {}
    for entry in document.get("links", []):
        try:
            link = LinkProfile(
                name=str(entry["name"]),
                bandwidth=float(entry["bandwidth_bps_bytes"]),
                latency=float(entry.get("latency_s", 0.0)),
                idle_watts=float(entry.get("idle_watts", 0.0)),
                joules_per_byte=float(entry.get("joules_per_byte", 0.0)),
            )
        except KeyError as exc:
            raise ValidationError(f"link entry missing field {exc}") from None
        if link.name in links:
            raise ValidationError(f"duplicate link {link.name}")
        links[link.name] = link

    routes: dict[tuple[str, str], tuple[str, ...]] = {}

    def add_route(src: str, dst: str, names: tuple[str, ...]) -> None:
        if src not in hosts:
            raise ValidationError(f"route references unknown host {src}")
        if dst not in hosts:
            raise ValidationError(f"route references unknown host {dst}")
        for n in names:
            if n not in links:
                raise ValidationError(f"unknown link {n}")
        routes[(src, dst)] = names

    for entry in document.get("routes", []):
        names = tuple(str(n) for n in entry.get("links", []))
        src, dst = str(entry["src"]), str(entry["dst"])
        add_route(src, dst, names)
        if entry.get("symmetric", True):
            add_route(dst, src, tuple(reversed(names)))

    platform = Platform(hosts=hosts, links=links, routes=routes)
    platform.validate()
    return platform


def compute_duration(flops: float, host: HostProfile) -> float:
    """Seconds needed to execute a flop amount on a host."""
    if flops < 0:
        raise ValidationError("flops must be >= 0")
    return flops / host.speed


def total_gflops(platform: Platform) -> float:
    """Aggregate compute power of the platform, in GFLOPS."""
    return sum(h.speed for h in platform.hosts.values()) / 1e9


def fair_share_rates(
    flow_routes: dict[int, tuple[LinkProfile, ...]],
) -> dict[int, float]:
    """Per-flow drain rate under equal sharing at each crossed link.

    A flow's rate is the minimum over its route of (link bandwidth divided
    by the number of active flows crossing that link), so the sum of rates
    through any link never exceeds its bandwidth.
    """
    crossing: dict[str, int] = {}
    for route in flow_routes.values():
        for link in route:
            crossing[link.name] = crossing.get(link.name, 0) + 1
    rates: dict[int, float] = {}
    for fid, route in flow_routes.items():
        if not route:
            rates[fid] = math.inf
        else:
            rates[fid] = min(l.bandwidth / crossing[l.name] for l in route)
    return rates


def transfer_schedule(
    flows: list[tuple[int, tuple[LinkProfile, ...]]],
) -> list[float]:
    """Completion times of a set of transfers all starting at t=0.

    Each flow pays its route latency once, then drains at the fair-share
    rate; rates are recomputed whenever a flow starts draining or finishes,
    preserving the bytes already drained.
    """
    n = len(flows)
    remaining = [float(f[0]) for f in flows]
    enter = [sum(l.latency for l in f[1]) for f in flows]  # drain start time
    done = [math.inf] * n
    active: set[int] = set()
    now = 0.0
    waiting = sorted(range(n), key=lambda i: (enter[i], i))
    wpos = 0
    while wpos < n or active:
        rates = fair_share_rates({i: flows[i][1] for i in active})
        etas = {
            i: now + (remaining[i] / rates[i] if rates[i] < math.inf else 0.0)
            for i in active
        }
        next_finish = min(etas.values(), default=math.inf)
        next_enter = enter[waiting[wpos]] if wpos < n else math.inf
        t = min(next_finish, next_enter)
        for i in active:
            if rates[i] < math.inf:
                remaining[i] = max(0.0, remaining[i] - rates[i] * (t - now))
        now = t
        # Completion is decided on scheduled time, not residual bytes, so
        # float round-off can never stall the walk.
        finished = {i for i in active if etas[i] <= now}
        for i in finished:
            done[i] = now
        active -= finished
        while wpos < n and enter[waiting[wpos]] <= now:
            i = waiting[wpos]
            if remaining[i] <= 0.0:
                done[i] = now
            else:
                active.add(i)
            wpos += 1
    return done


def host_energy(
    profile: HostProfile,
    busy_intervals: list[tuple[float, float]],
    total_time: float,
) -> float:
    """Joules drawn by a host over a run.

    Power is idle_watts when no execution runs and busy_watts during one,
    so the integral is idle*total + (busy-idle)*busy_time.  Busy intervals
    must be disjoint and inside [0, total_time].
    """
    busy = 0.0
    prev_end = -math.inf
    for start, end in sorted(busy_intervals):
        if start < prev_end - 1e-12:
            raise ValidationError(
                f"host {profile.name}: overlapping busy intervals"
            )
        if start < -1e-12 or end > total_time + 1e-9:
            raise ValidationError(
                f"host {profile.name}: busy interval outside run window"
            )
        busy += end - start
        prev_end = end
    return profile.idle_watts * total_time + (profile.busy_watts - profile.idle_watts) * busy


def link_energy(profile: LinkProfile, bytes_total: float, total_time: float) -> float:
    """Joules drawn by a link: always-on idle draw plus per-byte cost."""
    if bytes_total < 0:
        raise ValidationError("bytes_total must be >= 0")
    return profile.idle_watts * total_time + profile.joules_per_byte * bytes_total


@dataclass
class HostEnergyRow:
    host: str
    busy_s: float
    idle_s: float
    idle_joules: float        # idle_watts drawn over the whole run
    busy_extra_joules: float  # (busy_watts - idle_watts) over busy time
    joules: float


@dataclass
class EnergyReport:
    """Finalized per-host and per-link energy decomposition."""

    energy_hosts: float
    energy_links: float
    per_host: list[HostEnergyRow]
    per_link: dict[str, float]

    @property
    def energy_total(self) -> float:
        return self.energy_hosts + self.energy_links


@dataclass
class EnergyLedger:
    """Accumulates busy intervals and transferred bytes during a run."""

    host_busy: dict[str, list[tuple[float, float]]] = field(default_factory=dict)
    link_bytes: dict[str, float] = field(default_factory=dict)

    def add_busy_interval(self, host: str, start: float, end: float) -> None:
        self.host_busy.setdefault(host, []).append((start, end))

    def add_link_bytes(self, link: str, nbytes: float) -> None:
        self.link_bytes[link] = self.link_bytes.get(link, 0.0) + nbytes

    def finalize(self, platform: Platform, total_time: float) -> EnergyReport:
        per_host: list[HostEnergyRow] = []
        hosts_total = 0.0
        for name, profile in platform.hosts.items():
            intervals = self.host_busy.get(name, [])
            joules = host_energy(profile, intervals, total_time)
            busy = sum(end - start for start, end in intervals)
            idle_joules = profile.idle_watts * total_time
            per_host.append(HostEnergyRow(
                name, busy, total_time - busy,
                idle_joules, joules - idle_joules, joules,
            ))
            hosts_total += joules
        per_link: dict[str, float] = {}
        links_total = 0.0
        for name, profile in platform.links.items():
            joules = link_energy(profile, self.link_bytes.get(name, 0.0), total_time)
            per_link[name] = joules
            links_total += joules
        return EnergyReport(hosts_total, links_total, per_host, per_link)
