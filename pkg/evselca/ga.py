from __future__ import annotations

import math
import time
import hashlib
import logging
import concurrent.futures

from typing import List, Dict, Optional, Tuple, Callable, Sequence

import numpy as np

from . import globals as g
from .errors import InputError, InfeasibleError
from .evaluator import evaluate_plan, pool_visits, pool_waits, counts_from_pools, empty_counts
from .transform import genes_by_route, route_deficit_min
from .types import *

functions = [
    'validate_config', 'facility_order', 'roulette', 'initialize', 'crossover', 'mutate',
    'refine_charger_counts', 'ga_solve', 'plan_key', 'plan_rng', 'fitness_key']

__all__ = functions

logger = logging.getLogger(__name__)


def validate_config(ci: ClusterInstance, config: GaConfig) -> GaConfig:
    """
    Raises `InputError` listing every out-of-range `GaConfig` field.
    """
    problems = []
    if config.pop_size < 2:
        problems.append(f'pop_size={config.pop_size} < 2')
    if not 2 <= config.parents <= config.pop_size:
        problems.append(f'parents={config.parents} not in [2, pop_size]')
    if config.iterations < 0:
        problems.append(f'iterations={config.iterations} < 0')
    if not 0 <= config.mutate_fraction <= 1:
        problems.append(f'mutate_fraction={config.mutate_fraction} not in [0, 1]')
    if not 0 <= config.no_charge_prob <= 1:
        problems.append(f'no_charge_prob={config.no_charge_prob} not in [0, 1]')
    if config.step_lower < 1:
        problems.append(f'step_lower={config.step_lower} < 1')
    if config.step_upper is not None and config.step_upper < config.step_lower:
        problems.append(f'step_upper={config.step_upper} < step_lower')
    if config.temperature < 0:
        problems.append(f'temperature={config.temperature} < 0')
    if config.time_limit_s is not None and config.time_limit_s <= 0:
        problems.append(f'time_limit_s={config.time_limit_s} <= 0')
    if config.threads < 1:
        problems.append(f'threads={config.threads} < 1')
    weights = config.charger_weights
    if weights is not None:
        if len(weights) != len(ci.instance.chargers):
            problems.append(f'{len(weights)} charger weights for {len(ci.instance.chargers)} types')
        elif any(w < 0 for w in weights) or sum(weights) <= 0:
            problems.append('charger weights must be non-negative with a positive sum')
    if problems:
        raise InputError('invalid GA configuration: ' + '; '.join(problems))
    return config

def facility_order(ci: ClusterInstance, key: Key) -> Tuple[int, ...]:
    """F_cir sorted by detour minutes, closest first."""
    detour = ci.layouts[key[0]].detour_min[key[1]]
    return tuple(sorted(ci.facility_sets[key], key=lambda f: (float(detour[f]), f)))

def roulette(weights: Sequence[float], rng: np.random.Generator) -> int:
    """
    Draws an index with probability proportional to its weight.

    Falls back to a uniform draw when every weight is zero.
    """
    total = float(sum(weights))
    if total <= 0:
        return int(rng.integers(len(weights)))

    cumulative = 0.0
    value = rng.random()
    for i, weight in enumerate(weights):
        cumulative += weight / total
        if value <= cumulative:
            return i
    return len(weights) - 1

def _charger_weights(ci: ClusterInstance, config: GaConfig) -> Sequence[float]:
    return config.charger_weights or (1.0,) * len(ci.instance.chargers)

def _facility_weights(ci: ClusterInstance, key: Key, options: Tuple[int, ...], temperature: float) -> List[float]:
    detour = ci.layouts[key[0]].detour_min[key[1]]
    return [(1.0 / (1.0 + max(0.0, float(detour[f])))) ** temperature for f in options]

def initialize(ci: ClusterInstance, config: GaConfig, rng: np.random.Generator) -> RechargePlan:
    """
    Builds one random plan.

    Every cluster draws a facility by roulette, closer facilities weighing more, and
    keeps the detour with probability `1 - no_charge_prob`. A route that needs charging
    but ended up with no stop gets `ceil(deficit / B̄)` stops at its clusters with the
    shortest detours.

    Args:
        ci (ClusterInstance):
            The transformed instance.
        config (GaConfig):
            Roulette temperature, charger weights and `no_charge_prob`.
        rng (np.random.Generator):
            Source of randomness; the same generator state gives the same plan.

    Returns:
        RechargePlan: One gene per cluster in `ci.keys` order.

    Raises:
        InfeasibleError: If a route needs charging and none of its clusters reaches a facility.
    """
    chargers = _charger_weights(ci, config)
    genes: List[Gene] = []
    for key in ci.keys:
        options = facility_order(ci, key)
        if not options:
            genes.append(None)
            continue
        f = options[roulette(_facility_weights(ci, key, options, config.temperature), rng)]
        if rng.random() < config.no_charge_prob:
            genes.append(None)
        else:
            genes.append((f, roulette(chargers, rng)))

    by_route = genes_by_route(ci, tuple(genes))
    for r in range(len(ci.layouts)):
        deficit = route_deficit_min(ci, r)
        if deficit <= g.TOL or by_route[r]:
            continue

        candidates = [
            (float(ci.layouts[r].detour_min[key[1], facility_order(ci, key)[0]]), index, key)
            for index, key in enumerate(ci.keys) if key[0] == r and ci.facility_sets[key]]
        if not candidates:
            raise InfeasibleError(f'route {r} needs {deficit:.3f} min of charging and reaches no facility')

        forced = math.ceil(deficit / ci.instance.battery_cap_min - g.TOL)
        for _, index, key in sorted(candidates)[:forced]:
            genes[index] = (facility_order(ci, key)[0], roulette(chargers, rng))
    return tuple(genes)

def crossover(parent_a: RechargePlan, parent_b: RechargePlan, rng: np.random.Generator) -> RechargePlan:
    """Uniform crossover: each gene comes from either parent with equal probability."""
    if len(parent_a) != len(parent_b):
        raise ValueError('parents cover different clusters')
    mask = rng.random(len(parent_a)) < 0.5
    return tuple(a if take_a else b for a, b, take_a in zip(parent_a, parent_b, mask))

def mutate(ci: ClusterInstance, plan: RechargePlan, config: GaConfig, rng: np.random.Generator) -> RechargePlan:
    """
    Mutates `floor(len(plan) * mutate_fraction)` distinct genes.

    A gene without a detour gets the closest facility and the slowest charger type. A gene
    with a detour moves to the next facility in detour order and the next charger type,
    both wrapping around.
    """
    n = int(len(plan) * config.mutate_fraction)
    if n == 0:
        return plan

    n_types = len(ci.instance.chargers)
    genes = list(plan)
    for p in sorted(rng.choice(len(plan), size=n, replace=False)):
        order = facility_order(ci, ci.keys[p])
        if not order:
            continue
        gene = genes[p]
        if gene is None:
            genes[p] = (order[0], 0)
        else:
            f, k = gene
            following = order[(order.index(f) + 1) % len(order)] if f in order else order[0]
            genes[p] = (following, (k + 1) % n_types)
    return tuple(genes)

def plan_key(plan: RechargePlan) -> Tuple[Tuple[int, int], ...]:
    return tuple((-1, -1) if gene is None else gene for gene in plan)

def fitness_key(evaluation: Evaluation) -> Tuple:
    return evaluation.fitness() + (plan_key(evaluation.solution.plan),)

def plan_rng(seed: int, plan: RechargePlan) -> np.random.Generator:
    """Generator owned by one plan, so parallel and serial evaluation draw the same numbers."""
    digest = hashlib.sha256(repr((seed, plan_key(plan))).encode('utf-8')).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], 'little'))

def _better(a: Evaluation, b: Evaluation) -> bool:
    fa, fb = a.fitness(), b.fitness()
    return fa[0] < fb[0] or (fa[0] == fb[0] and fa[1] < fb[1] - 1e-9)

def _climb(
    start: Evaluation,
    pools: List[Pool],
    evaluate: Callable[[Dict[Pool, int]], Evaluation],
    counts: Callable[[Evaluation], Dict[Pool, int]],
    order: Callable[[Evaluation, Dict[Pool, int]], List[Pool]],
    step: int,
    bounds: Dict[Pool, Tuple[int, int]]) -> Evaluation:
    best = start
    improved = True
    while improved:
        improved = False
        z = counts(best)
        for pool in order(best, z):
            moved = z[pool] + step
            lo, hi = bounds[pool]
            if not lo <= moved <= hi:
                continue
            candidate = evaluate({**z, pool: moved})
            if _better(candidate, best):
                best = candidate
                improved = True
                break
    return best

def refine_charger_counts(ci: ClusterInstance, plan: RechargePlan, config: GaConfig, rng: np.random.Generator) -> Evaluation:
    """
    Picks charger counts for a fixed plan.

    Every used pool `(f, k)` gets between 1 and its number of visits chargers; unused
    pools get none. Both ends of that box are evaluated. An infeasible lower end is
    repaired by adding chargers at the pools with the most waiting, a random number of
    pools at a time, the range of that number halving after each round. Two hill climbs
    follow: upward from the repaired point (pools by total wait, descending) and downward
    from the upper end (pools by count, descending). The best evaluation wins.

    Returns:
        Evaluation: Infeasible only when no count in the box gives a feasible schedule.

    Example:
        ```python
        best = refine_charger_counts(ci, plan, GaConfig(), np.random.default_rng(0))
        best.solution.deployment.charger_counts
        ```
    """
    visits = pool_visits(ci, plan)
    if not visits:
        return evaluate_plan(ci, plan, empty_counts(ci))

    pools = list(visits)
    bounds = {pool: (1, n) for pool, n in visits.items()}
    memo: Dict[Tuple[int, ...], Evaluation] = {}

    def evaluate(z: Dict[Pool, int]) -> Evaluation:
        signature = tuple(z[p] for p in pools)
        if signature not in memo:
            memo[signature] = evaluate_plan(ci, plan, counts_from_pools(ci, z))
        return memo[signature]

    def counts(evaluation: Evaluation) -> Dict[Pool, int]:
        rows = evaluation.solution.deployment.charger_counts
        return {(f, k): rows[f][k] for f, k in pools}

    upper = evaluate(dict(visits))
    if not upper.feasible:
        return upper
    lower = evaluate({pool: 1 for pool in pools})

    repaired = lower
    z = {pool: 1 for pool in pools}
    low = config.step_lower
    up = max(float(config.step_upper or len(pools)), float(low))
    while not repaired.feasible:
        waits = pool_waits(repaired.solution.schedule)
        ranked = [p for p in sorted(pools, key=lambda p: (-waits.get(p, 0.0), p)) if z[p] < visits[p]]
        if not ranked:
            break
        n_add = int(rng.integers(low, int(up) + 1))
        for pool in ranked[:n_add]:
            z[pool] += 1
        repaired = evaluate(z)
        if up - low >= 1:
            up = (up + low) / 2

    by_wait = lambda e, z: sorted(pools, key=lambda p: (-pool_waits(e.solution.schedule).get(p, 0.0), p))
    by_count = lambda e, z: sorted(pools, key=lambda p: (-z[p], p))
    climbed_up = _climb(repaired, pools, evaluate, counts, by_wait, +1, bounds)
    climbed_down = _climb(upper, pools, evaluate, counts, by_count, -1, bounds)

    return min((climbed_up, climbed_down, upper, lower, repaired), key=lambda e: e.fitness())

def _evaluate_many(
    ci: ClusterInstance,
    config: GaConfig,
    plans: Sequence[RechargePlan],
    cache: Dict[RechargePlan, Evaluation]) -> List[Evaluation]:
    fresh = list(dict.fromkeys(p for p in plans if p not in cache))

    def work(plan: RechargePlan) -> Evaluation:
        return refine_charger_counts(ci, plan, config, plan_rng(config.seed, plan))

    if config.threads > 1 and len(fresh) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=config.threads) as executor:
            results = list(executor.map(work, fresh))
    else:
        results = [work(plan) for plan in fresh]
    cache.update(zip(fresh, results))
    return [cache[p] for p in plans]

def _trace_row(generation: int, population: List[Evaluation]) -> TraceRow:
    feasible = [e.solution.cost.total for e in population if e.feasible]
    best = min(feasible) if feasible else None
    mean = float(np.mean(feasible)) if feasible else None
    return TraceRow(0, generation, best, mean, len(feasible) / len(population))

def ga_solve(
    ci: ClusterInstance,
    config: GaConfig = GaConfig(),
    on_generation: Optional[Callable[[TraceRow], None]] = None) -> GaResult:
    """
    Runs the genetic algorithm on a transformed instance.

    Each generation keeps the best `parents` plans, breeds a child from every ordered pair
    of them, mutates each of them once, evaluates the newcomers and keeps the best
    `pop_size` of the merged pool. Evaluation refines charger counts per plan and is
    memoised, so a plan is only evaluated once per run.

    Args:
        ci (ClusterInstance):
            The transformed instance, shared read-only by the worker threads.
        config (GaConfig, optional):
            Hyperparameters; the seed fixes the whole run, thread count included.
        on_generation (Optional[Callable[[TraceRow], None]], optional):
            Called with the trace row of every generation, generation 0 being the
            initial population.

    Returns:
        GaResult:
            Best evaluation seen, the convergence trace, and why the run stopped
            (`iterations` or `time_limit`).

    Raises:
        InputError: If the configuration is out of range.
        InfeasibleError: If a plan cannot be initialised.
    """
    validate_config(ci, config)
    started = time.monotonic()
    master = np.random.default_rng(config.seed)
    cache: Dict[RechargePlan, Evaluation] = {}

    plans = [initialize(ci, config, master) for _ in range(config.pop_size)]
    population = sorted(_evaluate_many(ci, config, plans, cache), key=fitness_key)
    trace = [_trace_row(0, population)]
    if on_generation:
        on_generation(trace[-1])

    stopped = 'iterations'
    generation = 0
    for generation in range(1, config.iterations + 1):
        if config.time_limit_s is not None and time.monotonic() - started >= config.time_limit_s:
            stopped = 'time_limit'
            generation -= 1
            break

        parents = [e.solution.plan for e in population[:config.parents]]
        children = [crossover(a, b, master) for i, a in enumerate(parents) for j, b in enumerate(parents) if i != j]
        mutants = [mutate(ci, p, config, master) for p in parents]

        newcomers = _evaluate_many(ci, config, children + mutants, cache)
        population = sorted(population + newcomers, key=fitness_key)[:config.pop_size]

        trace.append(_trace_row(generation, population))
        if on_generation:
            on_generation(trace[-1])
        logger.debug('generation %d: best=%s feasible=%.2f', generation, trace[-1].best, trace[-1].feasible_share)

    best = population[0]
    if best.feasible:
        logger.info('GA finished after %d generation(s): C=%.4f', generation, best.solution.cost.total)
    else:
        codes = sorted({v.code for v in best.errors})
        logger.warning('GA found no feasible plan; best candidate violates %s', ', '.join(codes))

    return GaResult(best, tuple(trace), generation, len(cache), stopped)
