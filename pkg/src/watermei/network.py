"""Domain model for a water distribution network.

All quantities are SI: elevations and heads in meters, demands and flows in
m³/h, energy intensities in kWh/m³. Element objects and the containing
Network are treated as immutable after construction; transformations
(scenario application, curve reconstruction) return new Network instances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .units import G, RHO  # noqa: F401  (re-exported: canonical constants)

HORIZON_STEPS = 24


@dataclass(frozen=True)
class Junction:
    id: str
    elevation: float
    base_demand: float = 0.0      # m³/h
    pattern_id: str | None = None

    @property
    def is_consumer(self) -> bool:
        return self.base_demand > 0.0


@dataclass(frozen=True)
class Tank:
    """Cylindrical storage tank; levels are measured above the bottom elevation."""

    id: str
    elevation: float     # bottom, m
    init_level: float
    min_level: float
    max_level: float
    diameter: float

    @property
    def area(self) -> float:
        return math.pi * self.diameter * self.diameter / 4.0

    def head_at(self, level: float) -> float:
        return self.elevation + level


@dataclass(frozen=True)
class InjectionPoint:
    """Boundary reservoir of treated water entering the distribution network.

    The pre-injection energy intensity is always the exact sum of the
    transmission and treatment components.
    """

    id: str
    head: float                    # fixed hydraulic head, m
    transmission_ei: float = 0.0   # kWh/m³
    treatment_ei: float = 0.0      # kWh/m³
    target_fraction: float = 1.0   # share of daily injection

    @property
    def pre_injection_ei(self) -> float:
        return self.transmission_ei + self.treatment_ei


@dataclass(frozen=True)
class Pipe:
    id: str
    from_node: str
    to_node: str
    length: float            # m
    diameter: float          # m
    roughness_coeff: float   # Hazen-Williams C
    has_check_valve: bool = False
    initially_open: bool = True


@dataclass(frozen=True)
class Pump:
    id: str
    from_node: str
    to_node: str
    hq_curve: object   # head curve: gain / gain_gradient / shutoff_head
    eff_curve: object  # efficiency curve: efficiency()
    bep: tuple[float, float] | None = None  # (flow m³/h, head m) if known


@dataclass(frozen=True)
class PressureReducingValve:
    id: str
    from_node: str
    to_node: str
    setting: float    # downstream pressure head, m
    diameter: float   # m


@dataclass(frozen=True)
class Pattern:
    """Hourly multipliers indexed by clock hour 0-23."""

    id: str
    multipliers: tuple[float, ...]


@dataclass(frozen=True)
class PriceSeries:
    """Electricity price per kWh, indexed by clock hour 0-23."""

    id: str
    prices: tuple[float, ...]

    def at_hour(self, hour: int) -> float:
        return self.prices[hour % 24]

    def violations(self) -> list[str]:
        out = []
        if len(self.prices) != HORIZON_STEPS:
            out.append(f"price series must have {HORIZON_STEPS} values")
        if any(not math.isfinite(p) for p in self.prices):
            out.append("price series values must be finite")
        return out


@dataclass(frozen=True)
class Network:
    junctions: dict[str, Junction] = field(default_factory=dict)
    tanks: dict[str, Tank] = field(default_factory=dict)
    injection_points: dict[str, InjectionPoint] = field(default_factory=dict)
    pipes: dict[str, Pipe] = field(default_factory=dict)
    pumps: dict[str, Pump] = field(default_factory=dict)
    valves: dict[str, PressureReducingValve] = field(default_factory=dict)
    patterns: dict[str, Pattern] = field(default_factory=dict)
    horizon_start_hour: int = 0
    horizon_steps: int = HORIZON_STEPS
    title: str = ""
    coordinates: dict[str, tuple[float, float]] = field(default_factory=dict)

    # -- nodes ---------------------------------------------------------------

    def node_ids(self) -> list[str]:
        return (
            list(self.junctions) + list(self.tanks) + list(self.injection_points)
        )

    def has_node(self, node_id: str) -> bool:
        return (
            node_id in self.junctions
            or node_id in self.tanks
            or node_id in self.injection_points
        )

    def links(self) -> list[Pipe | Pump | PressureReducingValve]:
        return list(self.pipes.values()) + list(self.pumps.values()) + list(
            self.valves.values()
        )

    def pump_order(self) -> list[str]:
        """Canonical pump ordering (insertion order); schedules follow it."""
        return list(self.pumps)

    # -- demand --------------------------------------------------------------

    def clock_hour(self, step: int) -> int:
        return (self.horizon_start_hour + step) % 24

    def demand_at(self, junction_id: str, step: int) -> float:
        """Demand of a junction at a horizon step, m³/h."""
        j = self.junctions[junction_id]
        if j.base_demand == 0.0:
            return 0.0
        if j.pattern_id is None:
            return j.base_demand
        pattern = self.patterns[j.pattern_id]
        return j.base_demand * pattern.multipliers[self.clock_hour(step)]

    def consumer_ids(self) -> list[str]:
        """Junctions with positive demand at any hour of the horizon."""
        out = []
        for jid in self.junctions:
            if any(self.demand_at(jid, t) > 0.0 for t in range(self.horizon_steps)):
                out.append(jid)
        return out


@dataclass(frozen=True, order=True)
class Violation:
    element: str
    rule: str
    message: str

    def __str__(self) -> str:
        return f"{self.element}: [{self.rule}] {self.message}"


def _check_endpoints(net: Network, link_id: str, from_node: str, to_node: str,
                     out: list[Violation]) -> None:
    for endpoint in (from_node, to_node):
        if not net.has_node(endpoint):
            out.append(Violation(link_id, "dangling-reference",
                                 f"endpoint {endpoint!r} is not a node"))
    if from_node == to_node:
        out.append(Violation(link_id, "self-loop", "link connects a node to itself"))


def validate_network(net: Network) -> list[Violation]:
    """Check every element invariant plus global consistency rules.

    Violations are data, not exceptions; an empty list means the network is
    well formed. The result is sorted, so it does not depend on element
    insertion order.
    """
    out: list[Violation] = []

    seen_nodes: dict[str, str] = {}
    for kind, ids in (("junction", net.junctions), ("tank", net.tanks),
                      ("injection point", net.injection_points)):
        for node_id in ids:
            if node_id in seen_nodes:
                out.append(Violation(node_id, "duplicate-id",
                                     f"node id used by both {seen_nodes[node_id]} and {kind}"))
            seen_nodes[node_id] = kind

    seen_links: dict[str, str] = {}
    for kind, ids in (("pipe", net.pipes), ("pump", net.pumps), ("valve", net.valves)):
        for link_id in ids:
            if link_id in seen_links:
                out.append(Violation(link_id, "duplicate-id",
                                     f"link id used by both {seen_links[link_id]} and {kind}"))
            seen_links[link_id] = kind

    for j in net.junctions.values():
        if not math.isfinite(j.elevation):
            out.append(Violation(j.id, "elevation-finite", "elevation is not finite"))
        if j.base_demand < 0.0:
            out.append(Violation(j.id, "negative-demand", "base demand must be >= 0"))
        if j.pattern_id is not None and j.pattern_id not in net.patterns:
            out.append(Violation(j.id, "dangling-reference",
                                 f"pattern {j.pattern_id!r} is not defined"))

    for t in net.tanks.values():
        if not (t.min_level <= t.init_level <= t.max_level):
            out.append(Violation(t.id, "level-ordering",
                                 "levels must satisfy min <= init <= max"))
        if not (t.diameter > 0.0):
            out.append(Violation(t.id, "non-positive-diameter", "diameter must be > 0"))
        if not math.isfinite(t.elevation):
            out.append(Violation(t.id, "elevation-finite", "elevation is not finite"))

    fraction_sum = 0.0
    for r in net.injection_points.values():
        if not math.isfinite(r.head):
            out.append(Violation(r.id, "head-finite", "head is not finite"))
        if r.transmission_ei < 0.0 or r.treatment_ei < 0.0:
            out.append(Violation(r.id, "negative-ei", "energy intensities must be >= 0"))
        if not (0.0 <= r.target_fraction <= 1.0):
            out.append(Violation(r.id, "fraction-range",
                                 "target fraction must be in [0, 1]"))
        fraction_sum += r.target_fraction
    if net.injection_points and abs(fraction_sum - 1.0) > 1e-9:
        out.append(Violation("<network>", "fraction-sum",
                             f"target fractions sum to {fraction_sum!r}, expected 1"))

    for p in net.pipes.values():
        if not (p.length > 0.0):
            out.append(Violation(p.id, "non-positive-length", "length must be > 0"))
        if not (p.diameter > 0.0):
            out.append(Violation(p.id, "non-positive-diameter", "diameter must be > 0"))
        if not (p.roughness_coeff > 0.0):
            out.append(Violation(p.id, "non-positive-roughness",
                                 "roughness coefficient must be > 0"))
        _check_endpoints(net, p.id, p.from_node, p.to_node, out)

    for pm in net.pumps.values():
        for msg in pm.hq_curve.violations():
            out.append(Violation(pm.id, "head-curve", msg))
        for msg in pm.eff_curve.violations():
            out.append(Violation(pm.id, "efficiency-curve", msg))
        _check_endpoints(net, pm.id, pm.from_node, pm.to_node, out)

    for v in net.valves.values():
        if v.setting < 0.0:
            out.append(Violation(v.id, "negative-setting", "PRV setting must be >= 0"))
        if not (v.diameter > 0.0):
            out.append(Violation(v.id, "non-positive-diameter", "diameter must be > 0"))
        _check_endpoints(net, v.id, v.from_node, v.to_node, out)

    for pat in net.patterns.values():
        if len(pat.multipliers) != net.horizon_steps:
            out.append(Violation(pat.id, "pattern-length",
                                 f"pattern must have {net.horizon_steps} multipliers"))
        if any(m < 0.0 or not math.isfinite(m) for m in pat.multipliers):
            out.append(Violation(pat.id, "pattern-range",
                                 "multipliers must be finite and >= 0"))

    out.extend(_connectivity_violations(net))
    return sorted(set(out))


def _connectivity_violations(net: Network) -> list[Violation]:
    """Every consumer must be reachable (undirected) from some injection point."""
    if not net.injection_points:
        return [Violation("<network>", "no-injection-point",
                          "network has no injection points")]

    adjacency: dict[str, set[str]] = {n: set() for n in net.node_ids()}
    for link in net.links():
        if link.from_node in adjacency and link.to_node in adjacency:
            adjacency[link.from_node].add(link.to_node)
            adjacency[link.to_node].add(link.from_node)

    reached: set[str] = set()
    stack = list(net.injection_points)
    while stack:
        node = stack.pop()
        if node in reached:
            continue
        reached.add(node)
        stack.extend(adjacency.get(node, ()))

    out = []
    for jid, j in net.junctions.items():
        if j.is_consumer and jid not in reached:
            out.append(Violation(jid, "unreachable-consumer",
                                 "no path from any injection point"))
    return out


def with_replaced_pump(net: Network, pump: Pump) -> Network:
    pumps = dict(net.pumps)
    pumps[pump.id] = pump
    return replace(net, pumps=pumps)
