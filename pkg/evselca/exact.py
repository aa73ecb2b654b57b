from __future__ import annotations

import json
import math
import logging
import tempfile
import itertools
import concurrent.futures

from pathlib import Path
from typing import List, Dict, Optional, Tuple, Union, Iterable

import numpy as np
import pulp

from . import globals as g
from .errors import InputError, LimitExceededError
from .evaluator import (
    evaluate_plan, compute_recharge_durations, check_feasibility, objective, pool_visits,
    counts_from_pools, has_fcfs_ties)
from .ga import initialize, validate_config, plan_key
from .types import *

functions = [
    'plan_options', 'search_space', 'exact_solve', 'solve_fixed_q', 'hybrid_solve',
    'milp_size', 'build_milp', 'emit_lp', 'lp_point', 'lp_objective', 'lp_row_violations',
    'read_solution', 'replay']

__all__ = functions

logger = logging.getLogger(__name__)

# Plans failing on these never become feasible, whatever the charger counts
BATTERY_ISSUES = ('battery_depleted', 'battery_final')


def plan_options(ci: ClusterInstance, key: Key) -> Tuple[Gene, ...]:
    """No detour, or any (facility in F_cir, charger type) pair."""
    types = range(len(ci.instance.chargers))
    return (None,) + tuple((f, k) for f in ci.facility_sets[key] for k in types)

def search_space(ci: ClusterInstance, limits: Limits = Limits()) -> int:
    """
    Number of (plan, charger counts) pairs the exhaustive search would visit.

    Raises:
        LimitExceededError: As soon as the count passes `limits.max_space`.
    """
    options = [plan_options(ci, key) for key in ci.keys]
    n_plans = math.prod(len(o) for o in options)
    if n_plans > limits.max_space:
        raise LimitExceededError(f'{n_plans} plans exceed the search cap of {limits.max_space}')

    space = 0
    for plan in itertools.product(*options):
        space += math.prod(pool_visits(ci, plan).values())
        if space > limits.max_space:
            raise LimitExceededError(f'more than {limits.max_space} (plan, charger count) pairs; {n_plans} plans')
    return space

def _rank(evaluation: Evaluation) -> Tuple:
    return (evaluation.solution.cost.total, plan_key(evaluation.solution.plan))

def _evaluate_orders(ci: ClusterInstance, plan: RechargePlan, counts) -> Evaluation:
    evaluation = evaluate_plan(ci, plan, counts)
    if not has_fcfs_ties(evaluation.solution.schedule):
        return evaluation

    # equal arrivals: every route order is a legal queue
    best = evaluation
    for priority in itertools.permutations(range(len(ci.layouts))):
        candidate = evaluate_plan(ci, plan, counts, priority=priority)
        fc, fb = candidate.fitness(), best.fitness()
        if fc[0] < fb[0] or (fc[0] == fb[0] and fc[1] < fb[1] - 1e-9):
            best = candidate
    return best

def _best_for_plan(ci: ClusterInstance, plan: RechargePlan) -> Tuple[Optional[Evaluation], int]:
    visits = pool_visits(ci, plan)
    pools = list(visits)
    best, evaluated = None, 0
    for combo in itertools.product(*(range(1, visits[p] + 1) for p in pools)):
        evaluation = _evaluate_orders(ci, plan, counts_from_pools(ci, dict(zip(pools, combo))))
        evaluated += 1
        if evaluation.feasible and (best is None or evaluation.solution.cost.total < best.solution.cost.total - 1e-9):
            best = evaluation
    return best, evaluated

def _reduce(results: Iterable[Tuple[Optional[Evaluation], int, int]]) -> Tuple[Optional[Evaluation], int, int]:
    best, plans, deployments = None, 0, 0
    for candidate, n_plans, n_deployments in results:
        plans += n_plans
        deployments += n_deployments
        if candidate is not None and (best is None or _rank(candidate) < _rank(best)):
            best = candidate
    return best, plans, deployments

def exact_solve(ci: ClusterInstance, limits: Limits = Limits()) -> ExactResult:
    """
    Exhaustive oracle over every plan and every charger count in its box.

    Each cluster either skips charging or picks one (facility in F_cir, charger type).
    Plans whose battery fails regardless of charger counts are pruned. For the rest,
    every `z_fk` from 1 to the number of visits of the pool is tried, and when two
    routes reach a pool at the same minute every route order of the queue is tried too.

    Args:
        ci (ClusterInstance):
            The transformed instance.
        limits (Limits, optional):
            `max_space` caps the (plan, charger counts) pairs; `threads` splits the work
            by the first cluster's gene.

    Returns:
        ExactResult:
            The cheapest feasible solution, ties broken by plan order, or `best=None`
            if nothing is feasible. Optimal under first-come-first-served queues.

    Raises:
        LimitExceededError: If the space exceeds `limits.max_space`; nothing is evaluated then.

    Example:
        ```python
        result = exact_solve(ci, Limits(max_space=10**5))
        result.best.solution.cost.total
        ```
    """
    space = search_space(ci, limits)
    options = [plan_options(ci, key) for key in ci.keys]
    logger.info('exact search over %d (plan, charger count) pair(s)', space)

    def work(first: Gene) -> Tuple[Optional[Evaluation], int, int]:
        best, plans, deployments = None, 0, 0
        for rest in itertools.product(*options[1:]):
            plan = (first,) + rest
            recharges = compute_recharge_durations(ci, plan)
            if any(v.code in BATTERY_ISSUES for v in recharges.issues):
                continue
            candidate, evaluated = _best_for_plan(ci, plan)
            plans += 1
            deployments += evaluated
            if candidate is not None and (best is None or _rank(candidate) < _rank(best)):
                best = candidate
        return best, plans, deployments

    if not options:
        candidate, evaluated = _best_for_plan(ci, ())
        return ExactResult(candidate, 1, evaluated, space)

    if limits.threads > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=limits.threads) as executor:
            results = list(executor.map(work, options[0]))
    else:
        results = [work(first) for first in options[0]]

    best, plans, deployments = _reduce(results)
    if best is None:
        logger.warning('exact search found no feasible solution')
    return ExactResult(best, plans, deployments, space)

def solve_fixed_q(ci: ClusterInstance, plan: RechargePlan, limits: Limits = Limits()) -> ExactResult:
    """
    Best charger counts for a fixed plan, searching its whole box exhaustively.

    Raises:
        LimitExceededError: If the box is larger than `limits.max_space`.
    """
    box = math.prod(pool_visits(ci, plan).values())
    if box > limits.max_space:
        raise LimitExceededError(f'charger count box of {box} exceeds the search cap of {limits.max_space}')
    best, evaluated = _best_for_plan(ci, plan)
    return ExactResult(best, 1, evaluated, box)

def hybrid_solve(ci: ClusterInstance, config: GaConfig = GaConfig(), limits: Limits = Limits()) -> ExactResult:
    """Initialises a GA population and solves each distinct plan for its best charger counts."""
    validate_config(ci, config)
    rng = np.random.default_rng(config.seed)
    plans = list(dict.fromkeys(initialize(ci, config, rng) for _ in range(config.pop_size)))

    def work(plan: RechargePlan) -> Tuple[Optional[Evaluation], int, int]:
        result = solve_fixed_q(ci, plan, limits)
        return result.best, result.plans, result.deployments

    if limits.threads > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=limits.threads) as executor:
            results = list(executor.map(work, plans))
    else:
        results = [work(plan) for plan in plans]

    best, n_plans, deployments = _reduce(results)
    logger.info('hybrid search: %d distinct plan(s), %d deployment(s)', n_plans, deployments)
    return ExactResult(best, n_plans, deployments, deployments)

def _name(family: str, *index: int) -> str:
    return '_'.join([family] + [str(i) for i in index])

def milp_size(ci: ClusterInstance) -> int:
    """Number of variables `build_milp` would create."""
    n_facilities, n_types = len(ci.instance.facilities), len(ci.instance.chargers)
    size = n_facilities + n_facilities * n_types
    size += sum(2 * (len(layout.clusters) + 2) for layout in ci.layouts)
    for key in ci.keys:
        steps = len(ci.time_sets[key])
        size += len(ci.facility_sets[key]) * (1 + n_types * (5 + 3 * steps))
    return size


class _ModelBuilder:
    """Collects variables and rows before they are handed to PuLP."""

    def __init__(self):
        self.bounds: Dict[str, Tuple[Optional[float], Optional[float], str]] = {}
        self.families: Dict[str, List[str]] = {}
        self.rows: List[LpRow] = []
        self.objective: List[Tuple[str, float]] = []

    def var(self, family: str, index: Tuple[int, ...], low: Optional[float] = 0.0, up: Optional[float] = None, cat: str = pulp.LpContinuous) -> str:
        name = _name(family, *index)
        self.bounds[name] = (low, up, cat)
        self.families.setdefault(family, []).append(name)
        return name

    def row(self, name: str, terms: List[Tuple[str, float]], sense: str, rhs: float) -> None:
        merged: Dict[str, float] = {}
        for var, coef in terms:
            merged[var] = merged.get(var, 0.0) + float(coef)
        self.rows.append(LpRow(name, tuple(merged.items()), sense, float(rhs)))

    def cost(self, var: str, coef: float) -> None:
        if coef:
            self.objective.append((var, float(coef)))

def build_milp(ci: ClusterInstance, limits: Limits = Limits()) -> MilpArtifact:
    """
    Builds the full mixed-integer model of the transformed instance.

    Variables are named `family_indices`, e.g. `x_r_i_f_k_t`, `q_r_i_f_k`, `bp_r_i_f`,
    `z_f_k`. Rows are named after what they enforce (`charge_start_0_1_2_0`,
    `charger_capacity_2_0_7`, ...). Occupancy uses the time-indexed split
    `x = xb - xa`: `xb_t` says charging started before step `t` ends, `xa_t` says it
    ended before step `t` began; both are tied to `s` and `e` by big-M rows with the
    `ε` margin.

    Raises:
        LimitExceededError: If the model would have more than `limits.max_lp_variables` variables.
    """
    size = milp_size(ci)
    if size > limits.max_lp_variables:
        raise LimitExceededError(f'the model would have {size} variables, above the cap of {limits.max_lp_variables}')

    instance, params = ci.instance, ci.params
    big_m, eps, step = ci.big_m, instance.epsilon_min, instance.time_step_min
    types = range(len(instance.chargers))
    m = _ModelBuilder()

    y = {}
    z = {}
    for f, facility in enumerate(instance.facilities):
        y[f] = m.var('y', (f,), 0, 1, pulp.LpBinary)
        m.cost(y[f], facility.cost_per_day)
        for k in types:
            z[f, k] = m.var('z', (f, k), 0, None, pulp.LpInteger)
            m.cost(z[f, k], params.charger_cost_per_day[k])

    occupancy: Dict[Tuple[int, int, int], List[str]] = {}
    for r, layout in enumerate(ci.layouts):
        route = instance.routes[r]
        n = len(layout.clusters)
        b = [m.var('b', (r, i), 0, instance.battery_cap_min) for i in range(n + 2)]
        d = [m.var('d', (r, i), 0, None) for i in range(n + 2)]

        m.row(_name('battery_initial', r), [(b[0], 1)], '==', route.initial_battery_min)
        m.row(_name('departure_start', r), [(d[0], 1)], '==', 0.0)

        for i in range(n + 1):
            internal = float(layout.internal_min[i])
            flow = [(b[i + 1], 1), (b[i], -1)]
            depart = [(d[i + 1], 1), (d[i], -1)]

            if i >= 1:
                key = (r, i)
                steps = ci.time_sets[key]
                all_q = []
                for f in ci.facility_sets[key]:
                    detour = float(layout.detour_min[i, f])
                    out = float(layout.out_min[i, f])
                    bp = m.var('bp', (r, i, f))
                    cap_terms = [(bp, 1)]
                    facility_q = []

                    for k in types:
                        idx = (r, i, f, k)
                        q = m.var('q', idx, 0, 1, pulp.LpBinary)
                        u, w, s, e = (m.var(family, idx) for family in ('u', 'w', 's', 'e'))
                        facility_q.append(q)

                        m.cost(q, params.vot_per_min * detour)
                        m.cost(w, params.vot_per_min)
                        m.cost(u, params.vot_per_min + params.energy_cost_per_min[k])
                        flow += [(q, detour), (u, -params.recharge_rate[k])]
                        depart += [(q, -detour), (w, -1), (u, -1)]
                        cap_terms.append((u, params.recharge_rate[k]))

                        xs = []
                        for t in steps:
                            tidx = idx + (t,)
                            x, xa, xb = (m.var(family, tidx, 0, 1, pulp.LpBinary) for family in ('x', 'xa', 'xb'))
                            xs.append(x)
                            occupancy.setdefault((f, k, t), []).append(x)
                            time = t * step

                            m.row(_name('occupancy_definition', *tidx), [(x, 1), (xb, -1), (xa, 1)], '==', 0.0)
                            m.row(_name('occupancy_needs_detour', *tidx), [(x, 1), (q, -1)], '<=', 0.0)
                            m.row(_name('start_before_step_end', *tidx), [(s, 1), (xb, big_m), (q, big_m)], '<=', time + step - eps + 2 * big_m)
                            m.row(_name('start_after_step_end', *tidx), [(s, 1), (xb, big_m), (q, -big_m)], '>=', time + step - big_m)
                            m.row(_name('end_before_step', *tidx), [(e, 1), (xa, big_m), (q, big_m)], '<=', time - eps + 2 * big_m)
                            m.row(_name('end_after_step', *tidx), [(e, 1), (xa, big_m), (q, -big_m)], '>=', time - big_m)

                        held = [(x, step) for x in xs]
                        m.row(_name('recharge_within_occupancy', *idx), held + [(u, -1)], '>=', 0.0)
                        m.row(_name('idle_occupancy', *idx), held + [(u, -1)], '<=', step - eps)
                        m.row(_name('recharge_needs_detour', *idx), [(u, 1), (q, -big_m)], '<=', 0.0)
                        m.row(_name('wait_needs_detour', *idx), [(w, 1), (q, -big_m)], '<=', 0.0)
                        m.row(_name('detour_occupancy', *idx), [(x, 1) for x in xs] + [(q, -1)], '>=', 0.0)
                        m.row(_name('charge_start', *idx), [(s, 1), (d[i], -1), (q, -out), (w, -1)], '==', 0.0)
                        m.row(_name('charge_end', *idx), [(e, 1), (s, -1), (u, -1)], '==', 0.0)

                    # b' = b - γ - out when the detour goes to f, zero otherwise
                    level = -internal - out
                    m.row(_name('battery_before_charge_low', r, i, f), [(bp, 1), (b[i], -1)] + [(q, -big_m) for q in facility_q], '>=', level - big_m)
                    m.row(_name('battery_before_charge_high', r, i, f), [(bp, 1), (b[i], -1)] + [(q, big_m) for q in facility_q], '<=', level + big_m)
                    m.row(_name('battery_before_charge_off', r, i, f), [(bp, 1)] + [(q, -big_m) for q in facility_q], '<=', 0.0)
                    m.row(_name('battery_cap', r, i, f), cap_terms, '<=', instance.battery_cap_min)
                    all_q += facility_q

                if all_q:
                    m.row(_name('one_detour', r, i), [(q, 1) for q in all_q], '<=', 1.0)

            m.row(_name('battery_flow', r, i), flow, '==', -internal - float(layout.leg_min[i]))
            m.row(
                _name('departure_time', r, i + 1), depart, '==',
                float(layout.leg_min[i] + layout.service_min[i + 1] + layout.internal_min[i + 1]))

        m.row(_name('battery_final', r), [(b[n + 1], 1)], '>=', route.final_battery_min)
        m.row(_name('operational_time', r), [(d[n + 1], 1)], '<=', instance.max_shift_min)

    for (f, k, t), xs in sorted(occupancy.items()):
        m.row(_name('charger_capacity', f, k, t), [(x, 1) for x in xs] + [(z[f, k], -1)], '<=', 0.0)
    for f in range(len(instance.facilities)):
        for k in types:
            m.row(_name('chargers_need_open_facility', f, k), [(z[f, k], 1), (y[f], -big_m)], '<=', 0.0)

    problem = pulp.LpProblem('evselca', pulp.LpMinimize)
    variables = {name: pulp.LpVariable(name, lowBound=low, upBound=up, cat=cat) for name, (low, up, cat) in m.bounds.items()}
    problem += pulp.lpSum(coef * variables[name] for name, coef in m.objective), 'total_cost'
    for row in m.rows:
        expr = pulp.lpSum(coef * variables[name] for name, coef in row.terms)
        if row.sense == '<=':
            problem += (expr <= row.rhs, row.name)
        elif row.sense == '>=':
            problem += (expr >= row.rhs, row.name)
        else:
            problem += (expr == row.rhs, row.name)

    logger.info('MILP: %d variable(s), %d row(s)', len(m.bounds), len(m.rows))
    return MilpArtifact(
        problem=problem,
        families={family: tuple(names) for family, names in m.families.items()},
        bounds=m.bounds,
        rows=tuple(m.rows),
        objective=tuple(m.objective),
        big_m=big_m,
        epsilon=eps)

def emit_lp(ci: ClusterInstance, path: Optional[Union[str, Path]] = None, limits: Limits = Limits()) -> str:
    """
    LP-format text of the full model, byte-identical for identical instances.

    Writes it to `path` as well when given.
    """
    artifact = build_milp(ci, limits)
    with tempfile.TemporaryDirectory() as tmp:
        target = Path(tmp) / 'model.lp'
        artifact.problem.writeLP(str(target))
        text = target.read_text(encoding='utf-8')
    if path is not None:
        Path(path).write_text(text, encoding='utf-8')
    return text

def lp_point(ci: ClusterInstance, solution: Solution) -> Dict[str, float]:
    """
    Maps a compute-chain solution to values of every model variable.

    Pairs `(f, k)` a cluster does not use get `q = u = w = 0` and `s = e = d`.
    """
    values: Dict[str, float] = {}
    deployment = solution.deployment
    for f in range(len(ci.instance.facilities)):
        values[_name('y', f)] = float(deployment.open_flags[f])
        for k, count in enumerate(deployment.charger_counts[f]):
            values[_name('z', f, k)] = float(count)

    events = {(e.route, e.position): e for e in solution.schedule.events}
    step = ci.instance.time_step_min
    for r, layout in enumerate(ci.layouts):
        timeline = solution.schedule.timelines[r]
        for i, (departure, battery) in enumerate(zip(timeline.departures, timeline.batteries)):
            values[_name('d', r, i)] = float(departure)
            values[_name('b', r, i)] = float(battery)

        for cluster in layout.clusters:
            i = cluster.position
            event = events.get((r, i))
            for f in ci.facility_sets[(r, i)]:
                at_f = event is not None and event.facility == f
                values[_name('bp', r, i, f)] = float(event.before_charge) if at_f else 0.0
                for k in range(len(ci.instance.chargers)):
                    chosen = at_f and event.charger == k
                    if chosen:
                        q, u, w, s, e = 1.0, event.recharge, event.wait, event.start, event.end
                        first = math.floor(s / step + g.TOL)
                        last = math.floor(e / step + g.TOL)
                    else:
                        q, u, w = 0.0, 0.0, 0.0
                        s = e = timeline.departures[i]
                    for family, value in zip(('q', 'u', 'w', 's', 'e'), (q, u, w, s, e)):
                        values[_name(family, r, i, f, k)] = float(value)
                    for t in ci.time_sets[(r, i)]:
                        xb = float(chosen and t >= first)
                        xa = float(chosen and t > last)
                        values[_name('xb', r, i, f, k, t)] = xb
                        values[_name('xa', r, i, f, k, t)] = xa
                        values[_name('x', r, i, f, k, t)] = xb - xa
    return values

def lp_objective(artifact: MilpArtifact, values: Dict[str, float]) -> float:
    return math.fsum(coef * values.get(name, 0.0) for name, coef in artifact.objective)

def lp_row_violations(artifact: MilpArtifact, values: Dict[str, float], tol: float = 1e-6) -> List[str]:
    """Names of the bounds, integrality conditions and rows a point violates. Missing values count as 0."""
    out = []
    for name, (low, up, cat) in artifact.bounds.items():
        value = values.get(name, 0.0)
        if (low is not None and value < low - tol) or (up is not None and value > up + tol):
            out.append(f'bound:{name}')
        if cat != pulp.LpContinuous and abs(value - round(value)) > tol:
            out.append(f'integrality:{name}')

    for row in artifact.rows:
        lhs = math.fsum(coef * values.get(name, 0.0) for name, coef in row.terms)
        slack = tol * max(1.0, abs(row.rhs))
        if row.sense == '<=' and lhs > row.rhs + slack:
            out.append(row.name)
        elif row.sense == '>=' and lhs < row.rhs - slack:
            out.append(row.name)
        elif row.sense == '==' and abs(lhs - row.rhs) > slack:
            out.append(row.name)
    return out

def read_solution(path: Union[str, Path]) -> Dict[str, float]:
    """
    Reads variable values written by an external solver.

    Accepts JSON (a flat `{name: value}` object or one under `"variables"`) or
    whitespace text with `name value` lines. CBC's `index name value reduced-cost`
    lines are understood; headers, comments and `**` markers are skipped.

    Raises:
        InputError: If the file is missing or holds no values.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except FileNotFoundError as e:
        raise InputError(f'solution file not found: {path}') from e

    values: Dict[str, float] = {}
    stripped = text.lstrip()
    if stripped.startswith('{'):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise InputError(f'malformed solution JSON in {path}: {e}') from e
        data = data.get('variables', data)
        try:
            values = {str(name): float(value) for name, value in data.items()}
        except (TypeError, ValueError, AttributeError) as e:
            raise InputError(f'solution values in {path} must be numbers') from e
    else:
        for line in text.splitlines():
            tokens = line.replace('**', ' ').split()
            if not tokens or tokens[0].startswith('#'):
                continue
            if len(tokens) == 2:
                name, value = tokens
            elif len(tokens) == 4:
                name, value = tokens[1], tokens[2]
            else:
                continue
            try:
                values[name] = float(value)
            except ValueError:
                continue

    if not values:
        raise InputError(f'no variable values found in {path}')
    return values

def replay(ci: ClusterInstance, values: Dict[str, float], artifact: Optional[MilpArtifact] = None, strict_occupancy: bool = False) -> ReplayResult:
    """
    Turns model variable values back into a plan, deployment and schedule, and checks them.

    Returns:
        ReplayResult:
            The checked evaluation, the model objective at `values`, and the rows the
            point violates in the model itself.
    """
    artifact = artifact or build_milp(ci)
    value = lambda family, *index: values.get(_name(family, *index), 0.0)
    types = range(len(ci.instance.chargers))

    genes, extra = [], []
    events = []
    for key in ci.keys:
        r, i = key
        chosen = [(f, k) for f in ci.facility_sets[key] for k in types if value('q', r, i, f, k) > 0.5]
        if len(chosen) > 1:
            extra.append(Violation('one_detour', f'route={r} cluster={i}', f'{len(chosen)} detours chosen'))
        gene = chosen[0] if chosen else None
        genes.append(gene)
        if gene is None:
            continue
        f, k = gene
        start, wait = value('s', r, i, f, k), value('w', r, i, f, k)
        events.append(RechargeEvent(
            route=r,
            position=i,
            facility=f,
            charger=k,
            arrival=start - wait,
            before_charge=value('bp', r, i, f),
            recharge=value('u', r, i, f, k),
            wait=wait,
            start=start,
            end=value('e', r, i, f, k),
            steps=tuple(t for t in ci.time_sets[key] if value('x', r, i, f, k, t) > 0.5)))

    counts = tuple(
        tuple(int(round(value('z', f, k))) for k in types)
        for f in range(len(ci.instance.facilities)))
    flags = tuple(int(value('y', f) > 0.5) for f in range(len(ci.instance.facilities)))
    timelines = tuple(
        RouteTimeline(
            r,
            tuple(value('d', r, i) for i in range(len(layout.clusters) + 2)),
            tuple(value('b', r, i) for i in range(len(layout.clusters) + 2)))
        for r, layout in enumerate(ci.layouts))

    plan = tuple(genes)
    deployment = Deployment(flags, counts)
    schedule = Schedule(timelines, tuple(events))
    violations = extra + check_feasibility(ci, plan, deployment, schedule, strict_occupancy)
    cost = objective(ci, plan, deployment, schedule)
    feasible = not any(v.severity == 'error' for v in violations)
    evaluation = Evaluation(Solution(plan, deployment, schedule, cost), feasible, tuple(violations))
    return ReplayResult(evaluation, lp_objective(artifact, values), tuple(lp_row_violations(artifact, values)))
