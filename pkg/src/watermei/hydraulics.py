"""Demand-driven extended-period hydraulic simulation.

Per time step the network equations (Hazen-Williams pipe losses, pump curves,
PRV behavior, junction mass balance) are solved with a damped Newton
iteration on nodal heads: each iteration linearizes every link's head
equation around the current flow, solves the resulting weighted-Laplacian
system for heads, and recovers flows from the linearization. Tanks are
integrated implicitly (backward Euler) by entering the same system as
storage nodes with an area/dt diagonal, so a converged step satisfies
level_end = level_start + dt * Q_net(level_end) / area to solver tolerance.

Demands are always delivered regardless of pressure; low pressure is
reported, not enforced. Check valves and pumps admit only nonnegative flow,
and PRVs follow an active/open/closed state machine re-evaluated between
Newton solves. Statuses carry over from one step to the next as warm starts.

A solver instance owns mutable working buffers and must not be shared
between threads; separate instances on the same (immutable) network are
independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .curves import BepHeadCurve
from .errors import ConvergenceError, DisconnectedNodeError, SimulationError
from .network import G, RHO, Network
from .units import M3H_TO_M3S

HW_EXPONENT = 1.852
HW_COEFFICIENT = 10.67  # SI form, flow in m³/s

# Below this flow magnitude (spec'd as 1e-6 m³/s) the Hazen-Williams relation
# is linearized so the Newton matrix stays well conditioned at zero flow.
FLOW_REGULARIZATION_M3H = 1e-6 / M3H_TO_M3S

_PRV_ACTIVE, _PRV_OPEN, _PRV_CLOSED = 0, 1, 2
_OPEN_VALVE_LOSS_COEFF = 0.5  # dimensionless minor-loss K of a fully open PRV


def hazen_williams_headloss(length: float, flow: float, diameter: float,
                            roughness_coeff: float) -> float:
    """Head loss (m) of a pipe; ``flow`` in m³/s and must be >= 0."""
    if flow == 0.0:
        return 0.0
    return (HW_COEFFICIENT * length * flow ** HW_EXPONENT
            / (roughness_coeff ** HW_EXPONENT * diameter ** 4.87))


def pipe_resistance(length: float, diameter: float, roughness_coeff: float) -> float:
    """Resistance r such that headloss = r * Q**1.852 with Q in m³/h."""
    return (HW_COEFFICIENT * length
            / (roughness_coeff ** HW_EXPONENT * diameter ** 4.87)
            * M3H_TO_M3S ** HW_EXPONENT)


def pump_power(flow: float, head_gain: float, efficiency: float) -> float:
    """Electric power draw in kW for flow in m³/h and head gain in m."""
    if not (0.0 < efficiency <= 1.0):
        raise ValueError(f"efficiency must be in (0, 1], got {efficiency}")
    if flow < 0.0 or head_gain < 0.0:
        raise ValueError("flow and head gain must be >= 0")
    return RHO * G * (flow * M3H_TO_M3S) * head_gain / efficiency / 1000.0


@dataclass(frozen=True)
class PumpOperatingPoint:
    flow: float         # m³/h
    head_gain: float    # m
    efficiency: float
    power_kw: float


@dataclass(frozen=True)
class HydraulicState:
    """Converged network state for one time step.

    ``link_flows`` are signed positive in each link's from->to direction;
    ``tank_levels`` are end-of-step levels; ``pump_status`` has entries for
    pumps that were scheduled on and hydraulically active.
    """

    time_index: int
    link_flows: dict[str, float]
    node_heads: dict[str, float]
    pump_status: dict[str, PumpOperatingPoint]
    tank_levels: dict[str, float]
    min_consumer_pressure: float


@dataclass(frozen=True)
class ClampEvent:
    tank_id: str
    time_index: int
    bound: str  # "min" or "max"


@dataclass
class SimulationResult:
    states: list[HydraulicState]
    feasible: bool
    infeasibility_reason: str | None
    p_low: float
    energy_per_step: list[float]                  # kWh per solver step
    injected_volume_per_source: dict[str, float]  # m³ over the horizon
    tank_inflows: dict[str, list[float]]          # net m³/h per solver step
    tank_initial_levels: dict[str, float]
    tank_final_levels: dict[str, float]
    dt_hours: float
    warnings: list[str] = field(default_factory=list)
    clamp_events: list[ClampEvent] = field(default_factory=list)

    @property
    def total_energy_kwh(self) -> float:
        return float(sum(self.energy_per_step))

    def hourly_energy(self) -> list[float]:
        """Energy aggregated to whole horizon hours."""
        per_hour = round(1.0 / self.dt_hours)
        return [float(sum(self.energy_per_step[h:h + per_hour]))
                for h in range(0, len(self.energy_per_step), per_hour)]


@dataclass(frozen=True)
class SolverOptions:
    mass_tolerance: float = 1e-7        # m³/h
    head_tolerance: float = 1e-7        # m
    max_iterations: int = 200
    max_status_rounds: int = 40
    damping: float = 0.6                # applied once the iteration oscillates


class _Compiled:
    """Immutable index arrays derived from a Network, shared by all solves."""

    def __init__(self, net: Network):
        self.net = net
        self.node_ids = (list(net.junctions) + list(net.tanks)
                         + list(net.injection_points))
        self.node_pos = {nid: i for i, nid in enumerate(self.node_ids)}
        self.n_junc = len(net.junctions)
        self.n_tank = len(net.tanks)
        self.n_res = len(net.injection_points)
        self.n_nodes = len(self.node_ids)

        elev = [j.elevation for j in net.junctions.values()]
        elev += [t.elevation for t in net.tanks.values()]
        elev += [r.head for r in net.injection_points.values()]
        self.node_elev = np.asarray(elev, dtype=float)

        self.junction_ids = list(net.junctions)
        self.tank_ids = list(net.tanks)
        self.tank_area = np.asarray([t.area for t in net.tanks.values()])
        self.tank_min = np.asarray([t.min_level for t in net.tanks.values()])
        self.tank_max = np.asarray([t.max_level for t in net.tanks.values()])
        self.tank_init = np.asarray([t.init_level for t in net.tanks.values()])
        self.res_ids = list(net.injection_points)
        self.res_head = np.asarray([r.head for r in net.injection_points.values()])

        # link ordering: pipes, pumps, valves (insertion order within kind)
        self.link_ids: list[str] = []
        lf: list[int] = []
        lt: list[int] = []
        self.pipe_ids = list(net.pipes)
        for p in net.pipes.values():
            self.link_ids.append(p.id)
            lf.append(self.node_pos[p.from_node])
            lt.append(self.node_pos[p.to_node])
        self.pump_ids = list(net.pumps)
        self.hq_curves = [pm.hq_curve for pm in net.pumps.values()]
        self.eff_curves = [pm.eff_curve for pm in net.pumps.values()]
        for pm in net.pumps.values():
            self.link_ids.append(pm.id)
            lf.append(self.node_pos[pm.from_node])
            lt.append(self.node_pos[pm.to_node])
        self.valve_ids = list(net.valves)
        for v in net.valves.values():
            self.link_ids.append(v.id)
            lf.append(self.node_pos[v.from_node])
            lt.append(self.node_pos[v.to_node])
        self.link_from = np.asarray(lf, dtype=int)
        self.link_to = np.asarray(lt, dtype=int)
        self.n_pipes = len(net.pipes)
        self.n_pumps = len(net.pumps)
        self.n_valves = len(net.valves)
        self.n_links = len(self.link_ids)

        self.pipe_resistance = np.asarray(
            [pipe_resistance(p.length, p.diameter, p.roughness_coeff)
             for p in net.pipes.values()])
        self.pipe_cv = np.asarray([p.has_check_valve for p in net.pipes.values()],
                                  dtype=bool)
        self.pipe_init_open = np.asarray(
            [p.initially_open for p in net.pipes.values()], dtype=bool)
        self.pipe_area = np.asarray(
            [math.pi * p.diameter ** 2 / 4.0 for p in net.pipes.values()])

        # fast vector path for the common reconstructed pump curve
        self.pump_is_bep = np.asarray(
            [isinstance(cv, BepHeadCurve) for cv in self.hq_curves], dtype=bool)
        self.pump_bep_flow = np.asarray(
            [cv.bep_flow if isinstance(cv, BepHeadCurve) else 1.0
             for cv in self.hq_curves])
        self.pump_bep_head = np.asarray(
            [cv.bep_head if isinstance(cv, BepHeadCurve) else 1.0
             for cv in self.hq_curves])
        self.pump_shutoff = np.asarray(
            [cv.shutoff_head for cv in self.hq_curves]) if self.n_pumps else \
            np.zeros(0)
        self.pump_ref_flow = np.asarray(
            [cv.reference_flow for cv in self.hq_curves]) if self.n_pumps else \
            np.zeros(0)

        self.valve_setting = np.asarray([v.setting for v in net.valves.values()])
        varea = np.asarray([math.pi * v.diameter ** 2 / 4.0
                            for v in net.valves.values()])
        self.valve_loss = (_OPEN_VALVE_LOSS_COEFF * M3H_TO_M3S ** 2
                           / (2.0 * G * varea ** 2)) if self.n_valves else np.zeros(0)

        # per-valve incident links (excluding the valve itself), for flow recovery
        self.valve_in_links: list[np.ndarray] = []
        self.valve_out_links: list[np.ndarray] = []
        for vi in range(self.n_valves):
            li = self.n_pipes + self.n_pumps + vi
            node = self.link_to[li]
            ins = [lj for lj in range(self.n_links)
                   if lj != li and self.link_to[lj] == node]
            outs = [lj for lj in range(self.n_links)
                    if lj != li and self.link_from[lj] == node]
            self.valve_in_links.append(np.asarray(ins, dtype=int))
            self.valve_out_links.append(np.asarray(outs, dtype=int))


class HydraulicSolver:
    """Owns per-run mutable state (statuses, warm-start flows and heads)."""

    def __init__(self, net: Network, options: SolverOptions | None = None):
        self.net = net
        self.options = options or SolverOptions()
        self.c = _Compiled(net)
        self.reset()

    def reset(self) -> None:
        c = self.c
        self._flow = np.zeros(c.n_links)
        self._head = c.node_elev.astype(float).copy()
        self._pipe_open = c.pipe_init_open.copy()
        self._valve_state = np.full(c.n_valves, _PRV_ACTIVE, dtype=int)
        self._pump_blocked = np.zeros(c.n_pumps, dtype=bool)
        self._have_warm_start = False

    # -- public solves -------------------------------------------------------

    def solve_single(self, demands: dict[str, float], pump_on: dict[str, bool],
                     tank_levels: dict[str, float] | None = None,
                     time_index: int = 0) -> HydraulicState:
        """One steady solve with tanks held at fixed levels (no integration)."""
        dem = self._demand_array(demands)
        on = np.asarray([bool(pump_on.get(pid, False)) for pid in self.c.pump_ids])
        levels = self._level_array(tank_levels)
        flows, heads, new_levels, _ = self._solve_step(dem, on, levels, dt=None)
        return self._build_state(time_index, dem, on, flows, heads, new_levels)

    def step_tanks(self, demands: dict[str, float], pump_on: dict[str, bool],
                   tank_levels: dict[str, float] | None = None,
                   dt: float = 1.0) -> dict[str, float]:
        """Advance tank levels implicitly by one step of ``dt`` hours.

        The returned levels solve level_new = level_old + dt*Q_net(level_new)/area
        coupled with the full network solve, clamped at the tank bounds with the
        connecting links closed for the remainder of the step.
        """
        dem = self._demand_array(demands)
        on = np.asarray([bool(pump_on.get(pid, False)) for pid in self.c.pump_ids])
        levels = self._level_array(tank_levels)
        _, _, new_levels, _ = self._solve_step(dem, on, levels, dt=dt)
        return dict(zip(self.c.tank_ids, new_levels.tolist()))

    def simulate_eps(self, schedule, dt: float = 1.0,
                     record_states: bool = True) -> SimulationResult:
        """Extended-period simulation over the whole horizon.

        ``schedule`` is a PumpSchedule (n_pumps x horizon hours). Any step
        failure marks the result infeasible but still returns it; a tank
        drained to its minimum level (starvation) also marks infeasibility
        while the simulation continues with the tank isolated.
        """
        c = self.c
        net = self.net
        matrix = np.asarray(schedule.matrix, dtype=bool)
        if matrix.shape != (c.n_pumps, net.horizon_steps):
            raise SimulationError(
                f"schedule shape {matrix.shape} does not match "
                f"({c.n_pumps}, {net.horizon_steps})")
        per_hour = round(1.0 / dt)
        if per_hour < 1 or abs(per_hour * dt - 1.0) > 1e-12:
            raise SimulationError("dt must divide one hour evenly")

        self.reset()
        levels = c.tank_init.copy()
        result = SimulationResult(
            states=[], feasible=True, infeasibility_reason=None, p_low=math.inf,
            energy_per_step=[],
            injected_volume_per_source={rid: 0.0 for rid in c.res_ids},
            tank_inflows={tid: [] for tid in c.tank_ids},
            tank_initial_levels=dict(zip(c.tank_ids, levels.tolist())),
            tank_final_levels={}, dt_hours=dt)

        for step in range(net.horizon_steps * per_hour):
            hour = step // per_hour
            dem = self._demands_at(hour)
            on = matrix[:, hour]
            try:
                flows, heads, new_levels, clamps = self._solve_step(
                    dem, on, levels, dt=dt)
            except SimulationError as exc:
                result.feasible = False
                result.infeasibility_reason = f"step {step}: {exc}"
                break

            for ti, bound in clamps:
                result.clamp_events.append(ClampEvent(c.tank_ids[ti], step, bound))
                if bound == "min" and result.feasible:
                    result.feasible = False
                    result.infeasibility_reason = (
                        f"tank {c.tank_ids[ti]} drained to its minimum level "
                        f"at step {step}")

            state = self._build_state(step, dem, on, flows, heads, new_levels,
                                      skip_maps=not record_states)
            if record_states:
                result.states.append(state)
            result.p_low = min(result.p_low, state.min_consumer_pressure)
            result.energy_per_step.append(
                sum(p.power_kw for p in state.pump_status.values()) * dt)
            res0 = c.n_junc + c.n_tank
            for ri, rid in enumerate(c.res_ids):
                out = self._node_net_outflow(flows, res0 + ri)
                if out > 0.0:
                    result.injected_volume_per_source[rid] += out * dt
            for ti, tid in enumerate(c.tank_ids):
                result.tank_inflows[tid].append(
                    (new_levels[ti] - levels[ti]) * c.tank_area[ti] / dt)
            levels = new_levels

        result.tank_final_levels = dict(zip(c.tank_ids, levels.tolist()))
        return result

    # -- array helpers ---------------------------------------------------------

    def _demand_array(self, demands: dict[str, float]) -> np.ndarray:
        out = np.zeros(self.c.n_junc)
        for jid, q in demands.items():
            out[self.c.node_pos[jid]] = q
        return out

    def _demands_at(self, hour: int) -> np.ndarray:
        net = self.net
        return np.asarray([net.demand_at(jid, hour) for jid in self.c.junction_ids])

    def _level_array(self, tank_levels: dict[str, float] | None) -> np.ndarray:
        if tank_levels is None:
            return self.c.tank_init.copy()
        return np.asarray([tank_levels[tid] for tid in self.c.tank_ids], dtype=float)

    def _node_net_outflow(self, flows: np.ndarray, node: int) -> float:
        c = self.c
        return float(flows[c.link_from == node].sum()
                     - flows[c.link_to == node].sum())

    # -- single-step solve with status iteration -------------------------------

    def _solve_step(self, demands: np.ndarray, pump_on: np.ndarray,
                    levels_start: np.ndarray, dt: float | None,
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, list]:
        """Solve one step; returns (flows, heads, end levels, clamp events).

        ``dt`` None means tanks are boundary nodes held at ``levels_start``.
        """
        c = self.c
        opt = self.options
        self._pump_blocked[:] = False
        tank_clamp = np.zeros(c.n_tank, dtype=int)  # 0 free, +1 max, -1 min
        clamps: list[tuple[int, str]] = []

        if not self._have_warm_start:
            self._cold_start(pump_on, levels_start)

        seen_status: set[bytes] = set()
        flows = heads = None
        for _round in range(opt.max_status_rounds):
            flows, heads = self._solve_continuous(demands, pump_on, levels_start,
                                                  dt, tank_clamp)
            changed = self._update_statuses(flows, heads, pump_on, tank_clamp)

            if dt is not None:
                for ti in range(c.n_tank):
                    if tank_clamp[ti] != 0:
                        continue
                    level = heads[c.n_junc + ti] - c.node_elev[c.n_junc + ti]
                    if level > c.tank_max[ti] + 1e-10:
                        tank_clamp[ti] = 1
                        clamps.append((ti, "max"))
                        changed = True
                    elif level < c.tank_min[ti] - 1e-10:
                        tank_clamp[ti] = -1
                        clamps.append((ti, "min"))
                        changed = True

            if not changed:
                break
            token = (self._pipe_open.tobytes() + self._valve_state.tobytes()
                     + self._pump_blocked.tobytes() + tank_clamp.tobytes())
            if token in seen_status:
                break  # status cycle; keep the latest consistent solution
            seen_status.add(token)
        else:
            raise ConvergenceError("link status iteration did not settle")

        if dt is None:
            levels_end = levels_start.copy()
        else:
            levels_end = np.where(
                tank_clamp == 1, c.tank_max,
                np.where(tank_clamp == -1, c.tank_min,
                         heads[c.n_junc:c.n_junc + c.n_tank]
                         - c.node_elev[c.n_junc:c.n_junc + c.n_tank]))

        self._flow = flows
        self._head = heads
        self._have_warm_start = True
        return flows, heads, levels_end, clamps

    def _cold_start(self, pump_on: np.ndarray, levels: np.ndarray) -> None:
        c = self.c
        self._flow[:] = 0.0
        self._flow[:c.n_pipes] = c.pipe_area * 0.3 * 3600.0  # ~1 ft/s guess
        for k in range(c.n_pumps):
            if pump_on[k]:
                self._flow[c.n_pipes + k] = 0.7 * c.pump_ref_flow[k]
        boundary = list(c.res_head)
        if c.n_tank:
            boundary.extend(c.node_elev[c.n_junc:c.n_junc + c.n_tank] + levels)
        ref = max(boundary) if boundary else float(np.max(c.node_elev, initial=0.0))
        self._head = np.maximum(c.node_elev, ref)

    # -- continuous (fixed-status) Newton solve ---------------------------------

    def _solve_continuous(self, demands: np.ndarray, pump_on: np.ndarray,
                          levels_start: np.ndarray, dt: float | None,
                          tank_clamp: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        c = self.c
        opt = self.options
        prv_active = np.where(self._valve_state == _PRV_ACTIVE)[0]

        clamped_nodes = {c.n_junc + ti for ti in range(c.n_tank) if tank_clamp[ti]}
        active = np.zeros(c.n_links, dtype=bool)
        active[:c.n_pipes] = self._pipe_open
        active[c.n_pipes:c.n_pipes + c.n_pumps] = pump_on & ~self._pump_blocked
        active[c.n_pipes + c.n_pumps:] = self._valve_state == _PRV_OPEN
        if clamped_nodes:
            for li in range(c.n_links):
                if (c.link_from[li] in clamped_nodes
                        or c.link_to[li] in clamped_nodes):
                    active[li] = False

        # boundary values; NaN marks an unknown head
        fixed = np.full(c.n_nodes, np.nan)
        res0 = c.n_junc + c.n_tank
        fixed[res0:] = c.res_head
        storage = np.zeros(c.n_nodes)
        for ti in range(c.n_tank):
            node = c.n_junc + ti
            if tank_clamp[ti] == 1:
                fixed[node] = c.node_elev[node] + c.tank_max[ti]
            elif tank_clamp[ti] == -1:
                fixed[node] = c.node_elev[node] + c.tank_min[ti]
            elif dt is None:
                fixed[node] = c.node_elev[node] + levels_start[ti]
            else:
                storage[node] = c.tank_area[ti] / dt
        prv_upstream: list[tuple[int, int]] = []  # (valve index, upstream node)
        for vi in prv_active:
            li = c.n_pipes + c.n_pumps + vi
            fixed[c.link_to[li]] = c.node_elev[c.link_to[li]] + c.valve_setting[vi]
            prv_upstream.append((int(vi), int(c.link_from[li])))

        node_demand = np.zeros(c.n_nodes)
        node_demand[:c.n_junc] = demands
        h0 = np.zeros(c.n_nodes)
        if dt is not None and c.n_tank:
            h0[c.n_junc:res0] = c.node_elev[c.n_junc:res0] + levels_start

        unknown, islands = self._partition_nodes(active, fixed, storage, node_demand)
        upos = np.full(c.n_nodes, -1, dtype=int)
        upos[unknown] = np.arange(len(unknown))

        heads = self._head.copy()
        known = ~np.isnan(fixed)
        heads[known] = fixed[known]

        flows = self._flow.copy()
        flows[~active] = 0.0
        if islands:
            in_island = np.zeros(c.n_nodes, dtype=bool)
            for island in islands:
                in_island[island] = True
                heads[island] = float(np.max(c.node_elev[island]))
            island_links = in_island[c.link_from] | in_island[c.link_to]
            flows[island_links] = 0.0
            active &= ~island_links

        act_idx = np.where(active)[0]
        fa = c.link_from[act_idx]
        ta = c.link_to[act_idx]
        ua = upos[fa]
        ub = upos[ta]
        mask_a = ua >= 0
        mask_b = ub >= 0
        both = mask_a & mask_b
        a_only = mask_a & ~mask_b
        b_only = mask_b & ~mask_a

        nu = len(unknown)
        if nu == 0:
            self._recover_flows(flows, heads, act_idx)
            self._recover_prv_flows(flows, heads, node_demand, storage, h0,
                                    prv_active)
            return flows, heads

        lhs = np.empty((nu, nu))
        rhs = np.empty(nu)
        diag_idx = np.arange(nu)
        base_rhs = -node_demand[unknown] + storage[unknown] * h0[unknown]

        best_resid = math.inf
        stall = 0
        relax = 1.0
        for _iteration in range(opt.max_iterations):
            phi, grad = self._link_phi_grad(flows, act_idx)
            cond = 1.0 / grad
            y = flows[act_idx] - phi * cond

            lhs.fill(0.0)
            rhs[:] = base_rhs
            diag = storage[unknown].copy()
            np.add.at(diag, ua[mask_a], cond[mask_a])
            np.add.at(diag, ub[mask_b], cond[mask_b])
            np.subtract.at(rhs, ua[mask_a], y[mask_a])
            np.add.at(rhs, ub[mask_b], y[mask_b])
            if a_only.any():
                np.add.at(rhs, ua[a_only], cond[a_only] * heads[ta[a_only]])
            if b_only.any():
                np.add.at(rhs, ub[b_only], cond[b_only] * heads[fa[b_only]])
            if both.any():
                np.subtract.at(lhs, (ua[both], ub[both]), cond[both])
                np.subtract.at(lhs, (ub[both], ua[both]), cond[both])
            for vi, up_node in prv_upstream:
                up = upos[up_node]
                if up >= 0:
                    rhs[up] -= flows[c.n_pipes + c.n_pumps + vi]
            lhs[diag_idx, diag_idx] += diag

            try:
                heads[unknown] = np.linalg.solve(lhs, rhs)
            except np.linalg.LinAlgError as exc:
                raise ConvergenceError(f"singular hydraulic system: {exc}") from exc

            new_flows = cond * (heads[fa] - heads[ta]) + y
            if relax < 1.0:
                new_flows = flows[act_idx] + relax * (new_flows - flows[act_idx])
            flows[act_idx] = new_flows
            self._recover_prv_flows(flows, heads, node_demand, storage, h0,
                                    prv_active)

            phi_new, _ = self._link_phi_grad(flows, act_idx)
            head_resid = float(np.max(np.abs((heads[fa] - heads[ta]) - phi_new),
                                      initial=0.0))
            mass_resid = self._mass_residual(flows, heads, node_demand, storage,
                                             h0, unknown)
            if head_resid <= opt.head_tolerance and mass_resid <= opt.mass_tolerance:
                return flows, heads
            resid = max(head_resid, mass_resid)
            if resid >= best_resid * 0.999:
                stall += 1
                if stall >= 5:
                    relax = opt.damping
            else:
                stall = 0
                best_resid = resid

        raise ConvergenceError(
            f"no convergence in {opt.max_iterations} iterations "
            f"(worst residual {best_resid:.3e})")

    def _partition_nodes(self, active: np.ndarray, fixed: np.ndarray,
                         storage: np.ndarray, node_demand: np.ndarray,
                         ) -> tuple[np.ndarray, list[np.ndarray]]:
        """Split nodes into solvable unknowns and floating zero-demand islands.

        A component without any fixed-head or storage node cannot carry demand;
        such a demanded junction is a hard failure.
        """
        c = self.c
        parent = list(range(c.n_nodes))

        def find(x: int) -> int:
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for li in np.where(active)[0]:
            a, b = find(int(c.link_from[li])), find(int(c.link_to[li]))
            if a != b:
                parent[a] = b

        grounded: set[int] = set()
        for n in range(c.n_nodes):
            if not np.isnan(fixed[n]) or storage[n] > 0.0:
                grounded.add(find(n))

        unknown: list[int] = []
        island_members: dict[int, list[int]] = {}
        for n in range(c.n_nodes):
            root = find(n)
            if root in grounded:
                if np.isnan(fixed[n]):
                    unknown.append(n)
            else:
                if node_demand[n] != 0.0:
                    raise DisconnectedNodeError(c.node_ids[n])
                island_members.setdefault(root, []).append(n)
        islands = [np.asarray(m, dtype=int) for m in island_members.values()]
        return np.asarray(unknown, dtype=int), islands

    def _link_phi_grad(self, flows: np.ndarray,
                       act_idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Head-equation value and strictly positive gradient per active link."""
        c = self.c
        n = HW_EXPONENT
        qlow = FLOW_REGULARIZATION_M3H
        phi = np.empty(len(act_idx))
        grad = np.empty(len(act_idx))

        pipes = act_idx < c.n_pipes
        if pipes.any():
            pi = act_idx[pipes]
            q = flows[pi]
            r = c.pipe_resistance[pi]
            aq = np.abs(q)
            big = aq >= qlow
            slope_small = r * qlow ** (n - 1.0)
            with np.errstate(invalid="ignore"):
                phi_big = np.sign(q) * r * aq ** n
                grad_big = n * r * aq ** (n - 1.0)
            phi[pipes] = np.where(big, phi_big, slope_small * q)
            grad[pipes] = np.where(big, grad_big, slope_small)

        pumps = (act_idx >= c.n_pipes) & (act_idx < c.n_pipes + c.n_pumps)
        if pumps.any():
            ki = act_idx[pumps] - c.n_pipes
            q = flows[act_idx[pumps]]
            shutoff = c.pump_shutoff[ki]
            ref = c.pump_ref_flow[ki]
            gmin = 1e-3 * shutoff / ref
            rev_slope = 10.0 * shutoff / ref
            gain = np.empty(len(ki))
            dgain = np.empty(len(ki))
            bep = c.pump_is_bep[ki]
            if bep.any():
                qb = np.maximum(q[bep], 0.0) / c.pump_bep_flow[ki[bep]]
                h = c.pump_bep_head[ki[bep]]
                gain[bep] = np.maximum(0.0, h * (4.0 / 3.0 - qb * qb / 3.0))
                dgain[bep] = np.where(qb < 2.0,
                                      -h * (2.0 * qb / 3.0) / c.pump_bep_flow[ki[bep]],
                                      0.0)
            for pos in np.where(~bep)[0]:
                curve = c.hq_curves[ki[pos]]
                gain[pos] = curve.gain(max(q[pos], 0.0))
                dgain[pos] = curve.gain_gradient(max(q[pos], 0.0))
            forward = q >= 0.0
            phi[pumps] = np.where(forward, -gain, -shutoff + rev_slope * q)
            grad[pumps] = np.where(forward, np.maximum(-dgain, gmin), rev_slope)

        valves = act_idx >= c.n_pipes + c.n_pumps
        if valves.any():
            vi = act_idx[valves] - c.n_pipes - c.n_pumps
            q = flows[act_idx[valves]]
            mk = c.valve_loss[vi]
            aq = np.abs(q)
            big = aq >= qlow
            phi[valves] = np.where(big, np.sign(q) * mk * aq * aq, mk * qlow * q)
            grad[valves] = np.where(big, 2.0 * mk * aq, mk * qlow)
        return phi, grad

    def _recover_flows(self, flows: np.ndarray, heads: np.ndarray,
                       act_idx: np.ndarray) -> None:
        """Iterate flows directly when every head is boundary-determined."""
        if len(act_idx) == 0:
            return
        for _ in range(self.options.max_iterations):
            phi, grad = self._link_phi_grad(flows, act_idx)
            dh = heads[self.c.link_from[act_idx]] - heads[self.c.link_to[act_idx]]
            flows[act_idx] += (dh - phi) / grad
            if float(np.max(np.abs(dh - phi))) <= self.options.head_tolerance:
                return

    def _recover_prv_flows(self, flows: np.ndarray, heads: np.ndarray,
                           node_demand: np.ndarray, storage: np.ndarray,
                           h0: np.ndarray, prv_active: np.ndarray) -> None:
        """Set each active PRV's flow to balance its pinned downstream node."""
        c = self.c
        for vi in prv_active:
            li = c.n_pipes + c.n_pumps + vi
            node = c.link_to[li]
            inflow = float(flows[c.valve_in_links[vi]].sum()
                           - flows[c.valve_out_links[vi]].sum())
            need = node_demand[node] + storage[node] * (heads[node] - h0[node])
            flows[li] = need - inflow

    def _mass_residual(self, flows: np.ndarray, heads: np.ndarray,
                       node_demand: np.ndarray, storage: np.ndarray,
                       h0: np.ndarray, unknown: np.ndarray) -> float:
        c = self.c
        net_in = np.zeros(c.n_nodes)
        np.add.at(net_in, c.link_to, flows)
        np.subtract.at(net_in, c.link_from, flows)
        resid = net_in - node_demand - storage * (heads - h0)
        return float(np.max(np.abs(resid[unknown]), initial=0.0))

    # -- status machine ---------------------------------------------------------

    def _update_statuses(self, flows: np.ndarray, heads: np.ndarray,
                         pump_on: np.ndarray, tank_clamp: np.ndarray) -> bool:
        c = self.c
        tol_q = self.options.mass_tolerance
        tol_h = self.options.head_tolerance
        changed = False

        for i in np.where(c.pipe_cv & c.pipe_init_open)[0]:
            dh = heads[c.link_from[i]] - heads[c.link_to[i]]
            if self._pipe_open[i]:
                if flows[i] < -tol_q:
                    self._pipe_open[i] = False
                    flows[i] = 0.0
                    changed = True
            elif dh > tol_h:
                self._pipe_open[i] = True
                changed = True

        for k in range(c.n_pumps):
            if not pump_on[k]:
                continue
            li = c.n_pipes + k
            lift = heads[c.link_to[li]] - heads[c.link_from[li]]
            if not self._pump_blocked[k]:
                if flows[li] < -tol_q:
                    self._pump_blocked[k] = True
                    flows[li] = 0.0
                    changed = True
            elif lift < c.pump_shutoff[k] - tol_h:
                self._pump_blocked[k] = False
                changed = True

        for vi in range(c.n_valves):
            li = c.n_pipes + c.n_pumps + vi
            a, b = c.link_from[li], c.link_to[li]
            target = c.node_elev[b] + c.valve_setting[vi]
            state = self._valve_state[vi]
            new_state = state
            if state == _PRV_ACTIVE:
                if flows[li] < -tol_q:
                    new_state = _PRV_CLOSED
                elif heads[a] < target - tol_h:
                    new_state = _PRV_OPEN
            elif state == _PRV_OPEN:
                if heads[b] > target + tol_h:
                    new_state = _PRV_ACTIVE
                elif flows[li] < -tol_q:
                    new_state = _PRV_CLOSED
            else:
                if heads[a] > target + tol_h:
                    new_state = _PRV_ACTIVE
                elif heads[a] > heads[b] + tol_h:
                    new_state = _PRV_OPEN
            if new_state != state:
                self._valve_state[vi] = new_state
                if new_state == _PRV_CLOSED:
                    flows[li] = 0.0
                changed = True

        return changed

    # -- state assembly -----------------------------------------------------------

    def _build_state(self, time_index: int, demands: np.ndarray, pump_on: np.ndarray,
                     flows: np.ndarray, heads: np.ndarray, levels_end: np.ndarray,
                     skip_maps: bool = False) -> HydraulicState:
        c = self.c
        pump_status: dict[str, PumpOperatingPoint] = {}
        for k, pid in enumerate(c.pump_ids):
            if not pump_on[k] or self._pump_blocked[k]:
                continue
            li = c.n_pipes + k
            q = max(float(flows[li]), 0.0)
            gain = max(float(heads[c.link_to[li]] - heads[c.link_from[li]]), 0.0)
            eta = c.eff_curves[k].efficiency(q)
            pump_status[pid] = PumpOperatingPoint(
                flow=q, head_gain=gain, efficiency=eta,
                power_kw=pump_power(q, gain, eta))

        with_demand = demands > 0.0
        if with_demand.any():
            pressure = (heads[:c.n_junc] - c.node_elev[:c.n_junc])[with_demand]
            min_pressure = float(pressure.min())
        else:
            min_pressure = math.inf

        levels = dict(zip(c.tank_ids, np.asarray(levels_end).tolist()))
        if skip_maps:
            return HydraulicState(time_index, {}, {}, pump_status, levels,
                                  min_pressure)
        return HydraulicState(
            time_index=time_index,
            link_flows=dict(zip(c.link_ids, flows.tolist())),
            node_heads=dict(zip(c.node_ids, heads.tolist())),
            pump_status=pump_status,
            tank_levels=levels,
            min_consumer_pressure=min_pressure)


def solve_timestep(net: Network, demands: dict[str, float],
                   pump_on: dict[str, bool],
                   tank_levels: dict[str, float] | None = None,
                   options: SolverOptions | None = None) -> HydraulicState:
    """Convenience single-step solve on a fresh solver instance."""
    return HydraulicSolver(net, options).solve_single(demands, pump_on, tank_levels)


def step_tanks(net: Network, demands: dict[str, float], pump_on: dict[str, bool],
               tank_levels: dict[str, float] | None = None, dt: float = 1.0,
               options: SolverOptions | None = None) -> dict[str, float]:
    """Convenience implicit tank advance on a fresh solver instance."""
    return HydraulicSolver(net, options).step_tanks(demands, pump_on, tank_levels,
                                                    dt=dt)


def simulate_eps(net: Network, schedule, dt: float = 1.0,
                 options: SolverOptions | None = None,
                 record_states: bool = True) -> SimulationResult:
    """Convenience extended-period simulation on a fresh solver instance."""
    return HydraulicSolver(net, options).simulate_eps(schedule, dt=dt,
                                                      record_states=record_states)
