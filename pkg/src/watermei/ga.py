"""Genetic-algorithm search for cost-minimizing binary pump schedules.

Fitness is the normalized electricity cost plus three penalties (end-of-day
tank drawdown, minimum delivered pressure, deviation from per-source
injection targets). Every individual ever stored in a population simulated
feasibly; infeasible candidates are redrawn and never scored.

Determinism: every random decision draws from a stream keyed by
(seed, stage, generation, slot), so results are a pure function of the
inputs and identical at any worker count. Offspring slots are independent
and may be evaluated in parallel processes.
"""

from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .errors import SearchError
from .hydraulics import HydraulicSolver, SimulationResult, SolverOptions
from .network import Network, PriceSeries

_STAGE_INIT = 1
_STAGE_OFFSPRING = 2


class PumpSchedule:
    """Binary on/off matrix: rows are pumps in network order, columns are hours."""

    __slots__ = ("matrix",)

    def __init__(self, matrix):
        m = np.ascontiguousarray(matrix, dtype=bool)
        if m.ndim != 2:
            raise ValueError("schedule matrix must be 2-D (pumps x hours)")
        m.setflags(write=False)
        self.matrix = m

    @property
    def n_pumps(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_steps(self) -> int:
        return self.matrix.shape[1]

    def __eq__(self, other) -> bool:
        return isinstance(other, PumpSchedule) and np.array_equal(
            self.matrix, other.matrix)

    def __hash__(self) -> int:
        return hash((self.matrix.shape, self.matrix.tobytes()))

    def __repr__(self) -> str:
        return f"PumpSchedule({self.n_pumps}x{self.n_steps})"

    def to_lines(self) -> list[str]:
        """One line of 0/1 characters per pump."""
        return ["".join("1" if v else "0" for v in row) for row in self.matrix]

    @classmethod
    def from_lines(cls, lines: Sequence[str]) -> "PumpSchedule":
        rows = []
        for raw in lines:
            line = raw.strip()
            if not line:
                continue
            if any(ch not in "01" for ch in line):
                raise ValueError(f"schedule line {line!r} is not a 0/1 string")
            rows.append([ch == "1" for ch in line])
        if not rows or any(len(r) != len(rows[0]) for r in rows):
            raise ValueError("schedule lines must be non-empty and equal length")
        return cls(np.asarray(rows, dtype=bool))

    @classmethod
    def all_on(cls, n_pumps: int, n_steps: int = 24) -> "PumpSchedule":
        return cls(np.ones((n_pumps, n_steps), dtype=bool))


@dataclass(frozen=True)
class GAConfig:
    population: int = 500
    generations: int = 500
    elites: int = 5
    parent_pool: int = 250
    mutation_prob: float = 0.8
    mutation_max_pumps: int = 4     # each mutation touches 1..max pumps
    mutation_max_steps: int = 6     # 1..max adjacent hours per touched pump
    min_pressure_m: float = 14.06   # 20 psi expressed as head
    fraction_tolerance: float = 0.02
    fraction_weight: float = 250000.0
    pressure_weight: float = 10.0
    tank_offset: float = 0.2
    literal_pressure_penalty: bool = False
    rng_seed: int = 0
    init_draw_factor: int = 100     # candidate budget = factor * population
    offspring_attempts: int = 1000  # redraw budget per offspring slot

    def validated(self) -> "GAConfig":
        if not (0 <= self.elites < self.parent_pool <= self.population):
            raise ValueError("need elites < parent_pool <= population")
        if not (0.0 <= self.mutation_prob <= 1.0):
            raise ValueError("mutation_prob must be in [0, 1]")
        return self


@dataclass(frozen=True)
class FitnessBreakdown:
    electricity_cost: float
    tank_penalty: float
    pressure_penalty: float
    fraction_penalty: float

    @property
    def total(self) -> float:
        return (self.electricity_cost + self.tank_penalty
                + self.pressure_penalty + self.fraction_penalty)


@dataclass(frozen=True)
class GenerationStats:
    generation: int
    best_total: float
    mean_total: float
    best: FitnessBreakdown


@dataclass
class EvolveResult:
    best_schedule: PumpSchedule
    best_fitness: FitnessBreakdown
    history: list[GenerationStats]
    population: list[tuple[PumpSchedule, FitnessBreakdown]]


def fitness(sim: SimulationResult, prices: PriceSeries, net: Network,
            cfg: GAConfig) -> FitnessBreakdown:
    """Score a feasible simulation; the caller filters infeasible ones out."""
    if not sim.feasible:
        raise ValueError("fitness is only defined for feasible simulations")
    if len(prices.prices) != net.horizon_steps:
        raise ValueError(
            f"price series has {len(prices.prices)} values, "
            f"expected {net.horizon_steps}")

    hourly = sim.hourly_energy()
    price_sum = float(sum(prices.prices))
    if abs(price_sum) < 1e-12:
        raise ValueError("price series sums to zero; cost cannot be normalized")
    cost = sum(e * prices.at_hour(net.clock_hour(t)) for t, e in enumerate(hourly))
    electricity_cost = net.horizon_steps / price_sum * cost

    tank_penalty = 0.0
    for tid, tank in net.tanks.items():
        delta = sim.tank_final_levels[tid] - sim.tank_initial_levels[tid]
        span = tank.max_level - tank.min_level
        tank_penalty += ((delta / span + cfg.tank_offset) * 100.0) ** 2

    if math.isinf(sim.p_low):
        pressure_penalty = 0.0  # no water delivered anywhere all day
    else:
        gap = cfg.min_pressure_m - sim.p_low
        if not cfg.literal_pressure_penalty:
            gap = max(gap, 0.0)
        pressure_penalty = gap * gap * cfg.pressure_weight

    total_injected = sum(sim.injected_volume_per_source.values())
    fraction_penalty = 0.0
    for rid, point in net.injection_points.items():
        if total_injected > 0.0:
            actual = sim.injected_volume_per_source[rid] / total_injected
        else:
            actual = 0.0
        deviation = actual - point.target_fraction
        if abs(deviation) > cfg.fraction_tolerance:
            fraction_penalty += deviation * deviation * cfg.fraction_weight

    return FitnessBreakdown(electricity_cost, tank_penalty, pressure_penalty,
                            fraction_penalty)


def select_parent(ranked_size: int, cfg: GAConfig, rng: np.random.Generator) -> int:
    """Roulette pick from the best ``parent_pool`` of a ranked population.

    Returns a 0-based index into the ranked order (0 = best). Rank j (1-based)
    is selected with probability proportional to (population_size - j).
    """
    pool = min(cfg.parent_pool, ranked_size)
    weights = ranked_size - np.arange(1, pool + 1, dtype=float)
    cumulative = np.cumsum(weights)
    draw = rng.random() * cumulative[-1]
    return int(np.searchsorted(cumulative, draw, side="right"))


def crossover_two_point(a: PumpSchedule, b: PumpSchedule,
                        rng: np.random.Generator) -> PumpSchedule:
    """Swap a contiguous hour window [p1, p2) of ``b`` into ``a``.

    The two cut positions are drawn uniformly over 0 <= p1 < p2 <= n_steps and
    apply identically to every pump row.
    """
    if a.matrix.shape != b.matrix.shape:
        raise ValueError("parents must have identical shape")
    n = a.n_steps
    cuts = rng.choice(n + 1, size=2, replace=False)
    p1, p2 = int(cuts.min()), int(cuts.max())
    child = a.matrix.copy()
    child[:, p1:p2] = b.matrix[:, p1:p2]
    return PumpSchedule(child)


def mutate(s: PumpSchedule, cfg: GAConfig, rng: np.random.Generator) -> PumpSchedule:
    """With probability ``mutation_prob`` overwrite short random runs.

    Picks 1..mutation_max_pumps pumps; for each, sets 1..mutation_max_steps
    adjacent hours to one uniformly drawn status bit.
    """
    if rng.random() >= cfg.mutation_prob:
        return s
    matrix = s.matrix.copy()
    n_pumps, n_steps = matrix.shape
    k = int(rng.integers(1, min(cfg.mutation_max_pumps, n_pumps) + 1))
    chosen = rng.choice(n_pumps, size=k, replace=False)
    for pump in chosen:
        run = int(rng.integers(1, cfg.mutation_max_steps + 1))
        start = int(rng.integers(0, n_steps - run + 1))
        bit = bool(rng.integers(0, 2))
        matrix[pump, start:start + run] = bit
    return PumpSchedule(matrix)


class ScheduleEvaluator:
    """Owns a solver instance; simulates and scores schedules.

    Not thread-safe; create one per worker.
    """

    def __init__(self, net: Network, prices: PriceSeries, cfg: GAConfig,
                 solver_options: SolverOptions | None = None):
        self.net = net
        self.prices = prices
        self.cfg = cfg
        self.solver = HydraulicSolver(net, solver_options)

    def evaluate(self, schedule: PumpSchedule,
                 ) -> tuple[SimulationResult, FitnessBreakdown | None]:
        sim = self.solver.simulate_eps(schedule, record_states=False)
        if not sim.feasible:
            return sim, None
        return sim, fitness(sim, self.prices, self.net, self.cfg)


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([seed, *key])


def _random_schedule(n_pumps: int, n_steps: int,
                     rng: np.random.Generator) -> PumpSchedule:
    return PumpSchedule(rng.integers(0, 2, size=(n_pumps, n_steps), dtype=np.int8))


# -- worker plumbing (module level so ProcessPoolExecutor can pickle it) -------

_WORKER_EVALUATOR: ScheduleEvaluator | None = None


def _init_worker(net: Network, prices: PriceSeries, cfg: GAConfig,
                 solver_options: SolverOptions | None) -> None:
    global _WORKER_EVALUATOR
    _WORKER_EVALUATOR = ScheduleEvaluator(net, prices, cfg, solver_options)


def _eval_init_candidate(args) -> tuple[int, bytes | None, object, str | None]:
    index, seed, shape = args
    ev = _WORKER_EVALUATOR
    rng = _stream(seed, _STAGE_INIT, index)
    candidate = _random_schedule(shape[0], shape[1], rng)
    sim, fb = ev.evaluate(candidate)
    if fb is None:
        return index, None, None, sim.infeasibility_reason or "unknown"
    return index, candidate.matrix.tobytes(), fb, None


def _produce_offspring(evaluator: ScheduleEvaluator,
                       ranked: list[PumpSchedule], seed: int, generation: int,
                       slot: int) -> tuple[PumpSchedule, FitnessBreakdown]:
    cfg = evaluator.cfg
    rng = _stream(seed, _STAGE_OFFSPRING, generation, slot)
    for _attempt in range(cfg.offspring_attempts):
        i = select_parent(len(ranked), cfg, rng)
        j = select_parent(len(ranked), cfg, rng)
        child = crossover_two_point(ranked[i], ranked[j], rng)
        child = mutate(child, cfg, rng)
        _sim, fb = evaluator.evaluate(child)
        if fb is not None:
            return child, fb
    raise SearchError(
        f"no feasible offspring for slot {slot} of generation {generation} "
        f"after {cfg.offspring_attempts} attempts")


def _eval_offspring_slot(args) -> tuple[int, bytes, object]:
    seed, generation, slot, ranked_bytes, shape = args
    ranked = [PumpSchedule(np.frombuffer(b, dtype=bool).reshape(shape))
              for b in ranked_bytes]
    child, fb = _produce_offspring(_WORKER_EVALUATOR, ranked, seed, generation, slot)
    return slot, child.matrix.tobytes(), fb


def init_population(net: Network, prices: PriceSeries, cfg: GAConfig,
                    solver_options: SolverOptions | None = None,
                    executor: ProcessPoolExecutor | None = None,
                    ) -> list[tuple[PumpSchedule, FitnessBreakdown]]:
    """Draw random schedules until ``cfg.population`` of them are feasible.

    Candidates are indexed and kept in index order, so the result does not
    depend on evaluation concurrency. Raises SearchError with the most common
    infeasibility reason if the draw budget runs out.
    """
    cfg = cfg.validated()
    shape = (len(net.pumps), net.horizon_steps)
    budget = cfg.init_draw_factor * cfg.population
    seed = cfg.rng_seed

    population: list[tuple[PumpSchedule, FitnessBreakdown]] = []
    reasons: Counter[str] = Counter()

    if executor is None:
        evaluator = ScheduleEvaluator(net, prices, cfg, solver_options)
        for index in range(budget):
            rng = _stream(seed, _STAGE_INIT, index)
            candidate = _random_schedule(*shape, rng)
            sim, fb = evaluator.evaluate(candidate)
            if fb is None:
                reasons[sim.infeasibility_reason or "unknown"] += 1
            else:
                population.append((candidate, fb))
                if len(population) == cfg.population:
                    return population
    else:
        chunk = max(4 * cfg.population, 64)
        next_index = 0
        while next_index < budget and len(population) < cfg.population:
            upto = min(next_index + chunk, budget)
            args = [(i, seed, shape) for i in range(next_index, upto)]
            for index, raw, fb, reason in executor.map(
                    _eval_init_candidate, args, chunksize=8):
                if raw is None:
                    reasons[reason] += 1
                elif len(population) < cfg.population:
                    population.append(
                        (PumpSchedule(np.frombuffer(raw, dtype=bool).reshape(shape)),
                         fb))
            next_index = upto
        if len(population) >= cfg.population:
            return population[:cfg.population]

    common = reasons.most_common(1)
    detail = f"; most common infeasibility: {common[0][0]!r} ({common[0][1]}x)" \
        if common else ""
    raise SearchError(
        f"only {len(population)} of {cfg.population} feasible schedules found "
        f"in {budget} draws{detail}")


def evolve(net: Network, prices: PriceSeries, cfg: GAConfig,
           solver_options: SolverOptions | None = None, n_workers: int = 1,
           on_generation: Callable[[GenerationStats], None] | None = None,
           ) -> EvolveResult:
    """Run the full generational search and return the best schedule found.

    The initial population counts as generation 1; each later generation keeps
    the top ``elites`` unchanged and fills the rest with crossover + mutation
    offspring, redrawing parents whenever an offspring simulates infeasibly.
    """
    cfg = cfg.validated()
    seed = cfg.rng_seed
    executor = None
    try:
        if n_workers > 1:
            executor = ProcessPoolExecutor(
                max_workers=n_workers, initializer=_init_worker,
                initargs=(net, prices, cfg, solver_options))
        evaluator = ScheduleEvaluator(net, prices, cfg, solver_options)

        population = init_population(net, prices, cfg, solver_options, executor)
        history: list[GenerationStats] = []

        def record(generation: int) -> None:
            totals = [fb.total for _, fb in population]
            best = min(range(len(totals)), key=lambda i: (totals[i], i))
            stats = GenerationStats(
                generation=generation,
                best_total=totals[best],
                mean_total=float(sum(totals)) / len(totals),
                best=population[best][1])
            history.append(stats)
            if on_generation is not None:
                on_generation(stats)

        shape = (len(net.pumps), net.horizon_steps)
        for generation in range(1, cfg.generations + 1):
            if generation > 1:
                ranked_pairs = sorted(population, key=lambda item: item[1].total)
                ranked = [s for s, _ in ranked_pairs]
                slots = range(cfg.elites, cfg.population)
                offspring: dict[int, tuple[PumpSchedule, FitnessBreakdown]] = {}
                if executor is None:
                    for slot in slots:
                        offspring[slot] = _produce_offspring(
                            evaluator, ranked, seed, generation, slot)
                else:
                    ranked_bytes = [s.matrix.tobytes() for s in ranked]
                    args = [(seed, generation, slot, ranked_bytes, shape)
                            for slot in slots]
                    for slot, raw, fb in executor.map(
                            _eval_offspring_slot, args, chunksize=4):
                        offspring[slot] = (
                            PumpSchedule(np.frombuffer(raw, dtype=bool).reshape(shape)),
                            fb)
                population = ranked_pairs[:cfg.elites] + [
                    offspring[slot] for slot in slots]
            record(generation)
    finally:
        if executor is not None:
            executor.shutdown()

    ranked_pairs = sorted(population, key=lambda item: item[1].total)
    best_schedule, best_fb = ranked_pairs[0]
    return EvolveResult(best_schedule=best_schedule, best_fitness=best_fb,
                        history=history, population=population)
