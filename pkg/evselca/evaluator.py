from __future__ import annotations

import math
import heapq
import logging

from collections import Counter
from typing import List, Dict, Optional, Tuple, Sequence, Iterable

import pandas as pd

from . import globals as g
from .errors import InputError
from .transform import genes_by_route, route_drive_min
from .types import *

functions = [
    'compute_open_flags', 'energy_deficit', 'compute_recharge_durations', 'compute_waits',
    'occupied_steps', 'compute_occupancy', 'build_schedule', 'objective', 'check_feasibility',
    'evaluate_plan', 'pool_visits', 'pool_waits', 'has_fcfs_ties', 'counts_from_pools',
    'occupancy_table', 'empty_counts']

__all__ = functions

logger = logging.getLogger(__name__)

CHECK_TOL = 1e-6


def _where(key: Key, facility: Optional[int] = None, charger: Optional[int] = None) -> str:
    text = f'route={key[0]} cluster={key[1]}'
    if facility is not None:
        text += f' facility={facility}'
    if charger is not None:
        text += f' charger={charger}'
    return text

def empty_counts(ci: ClusterInstance) -> Tuple[Tuple[int, ...], ...]:
    n_types = len(ci.instance.chargers)
    return tuple((0,) * n_types for _ in ci.instance.facilities)

def counts_from_pools(ci: ClusterInstance, pools: Dict[Pool, int]) -> Tuple[Tuple[int, ...], ...]:
    """Expands `{(f, k): z}` into the full `z_fk` matrix."""
    rows = [list(row) for row in empty_counts(ci)]
    for (f, k), z in pools.items():
        rows[f][k] = int(z)
    return tuple(tuple(row) for row in rows)

def compute_open_flags(charger_counts: Sequence[Sequence[int]]) -> Tuple[int, ...]:
    """
    y_f = 1 iff facility f hosts at least one charger.

    Example:
        ```python
        compute_open_flags([[0, 0], [2, 0]])  # (0, 1)
        ```
    """
    return tuple(int(sum(row) > 0) for row in charger_counts)

def pool_visits(ci: ClusterInstance, plan: RechargePlan) -> Dict[Pool, int]:
    """Number of planned detours per charger pool, the upper end of the z search box."""
    out: Dict[Pool, int] = {}
    for gene in plan:
        if gene is not None:
            out[gene] = out.get(gene, 0) + 1
    return dict(sorted(out.items()))

def energy_deficit(ci: ClusterInstance, r: int, plan: RechargePlan, rounded: bool = False) -> float:
    """
    Battery minutes route `r` must recharge under `plan`.

    With `rounded=True` the deficit takes the integer form `int(|B^iota - B^omega - T^rho| + 1)`,
    above the exact value by at most one minute; only positive deficits are rounded.
    """
    route = ci.instance.routes[r]
    drive = route_drive_min(ci, r, plan)
    real = drive + route.final_battery_min - route.initial_battery_min
    if real <= 0:
        return 0.0
    if rounded:
        return float(int(abs(route.initial_battery_min - route.final_battery_min - drive) + 1))
    return float(real)

def _check_plan(ci: ClusterInstance, plan: RechargePlan) -> None:
    if len(plan) != len(ci.keys):
        raise InputError(f'plan has {len(plan)} genes, instance has {len(ci.keys)} clusters')
    n_facilities, n_types = len(ci.instance.facilities), len(ci.instance.chargers)
    for key, gene in zip(ci.keys, plan):
        if gene is None:
            continue
        f, k = gene
        if not (0 <= f < n_facilities and 0 <= k < n_types):
            raise InputError(f'gene {gene} at {_where(key)} is out of range')

def _check_counts(ci: ClusterInstance, charger_counts: Sequence[Sequence[int]]) -> Tuple[Tuple[int, ...], ...]:
    n_types = len(ci.instance.chargers)
    if len(charger_counts) != len(ci.instance.facilities) or any(len(row) != n_types for row in charger_counts):
        raise InputError(f'charger counts must be {len(ci.instance.facilities)} x {n_types}')
    return tuple(tuple(int(z) for z in row) for row in charger_counts)

def compute_recharge_durations(ci: ClusterInstance, plan: RechargePlan, rounded_deficit: bool = False) -> Recharges:
    """
    Sizes every planned recharge and propagates the battery along each route.

    Each route's deficit is served greedily in route order: a stop delivers
    `min(remaining deficit, B̄ - b')` battery minutes, which takes `delivered / R_k`
    charging minutes. The battery after a stop is `b' + R_k * u - back leg`.

    Args:
        ci (ClusterInstance):
            The transformed instance.
        plan (RechargePlan):
            One gene per cluster in `ci.keys` order.
        rounded_deficit (bool, optional):
            Uses the integer form of the deficit. Defaults to `False`.

    Returns:
        Recharges:
            Durations, batteries, visit lists per pool and the battery issues found
            (`battery_depleted`, `battery_final`).

    Example:
        ```python
        recharges = compute_recharge_durations(ci, ((0, 0),))
        recharges.durations[(0, 1)]
        ```
    """
    _check_plan(ci, plan)
    genes = genes_by_route(ci, plan)
    cap = ci.instance.battery_cap_min
    rates = ci.params.recharge_rate

    durations, before, visits, issues, batteries = {}, {}, {}, [], []
    for r, layout in enumerate(ci.layouts):
        route = ci.instance.routes[r]
        n = len(layout.clusters)
        remaining = energy_deficit(ci, r, plan, rounded_deficit)
        b = [float(route.initial_battery_min)]

        for i in range(n + 1):
            level = b[i] - layout.internal_min[i]
            gene = genes[r].get(i)
            if gene is None:
                b.append(float(level - layout.leg_min[i]))
            else:
                f, k = gene
                b_prime = float(level - layout.out_min[i, f])
                if b_prime < -g.TOL:
                    issues.append(Violation('battery_depleted', _where((r, i), f), f'{b_prime:.3f} min left on reaching the facility'))
                delivered = min(remaining, max(0.0, cap - b_prime))
                remaining -= delivered
                durations[(r, i)] = delivered / rates[k]
                before[(r, i)] = b_prime
                visits.setdefault((f, k), []).append((r, i))
                b.append(float(b_prime + delivered - layout.back_min[i, f]))
            if b[-1] < -g.TOL:
                issues.append(Violation('battery_depleted', _where((r, i + 1)), f'{b[-1]:.3f} min left on arrival'))

        if remaining > g.TOL:
            issues.append(Violation('battery_final', f'route={r}', f'{remaining:.3f} min of deficit left after the last stop'))
        batteries.append(tuple(b))

    return Recharges(
        durations=durations,
        before_charge=before,
        batteries=tuple(batteries),
        visits={pool: tuple(keys) for pool, keys in sorted(visits.items())},
        issues=tuple(issues))

def _route_times(ci: ClusterInstance, r: int, genes: Dict[int, Tuple[int, int]], waits: Dict[Key, float], durations: Dict[Key, float]):
    layout = ci.layouts[r]
    n = len(layout.clusters)
    d = [0.0]
    stops = {}
    for i in range(n + 1):
        gene = genes.get(i)
        if gene is None:
            t = d[i] + layout.leg_min[i]
        else:
            f, _ = gene
            arrival = d[i] + layout.out_min[i, f]
            start = arrival + waits.get((r, i), 0.0)
            end = start + durations[(r, i)]
            stops[i] = (float(arrival), float(start), float(end))
            t = end + layout.back_min[i, f]
        d.append(float(t + layout.service_min[i + 1] + layout.internal_min[i + 1]))
    return d, stops

def _priority_rank(ci: ClusterInstance, priority: Optional[Sequence[int]]) -> Dict[int, int]:
    if priority is None:
        return {r: r for r in range(len(ci.layouts))}
    return {r: rank for rank, r in enumerate(priority)}

def _fcfs(
    visits: Dict[Pool, Tuple[Key, ...]],
    arrivals: Dict[Key, float],
    durations: Dict[Key, float],
    counts: Tuple[Tuple[int, ...], ...],
    rank: Dict[int, int]) -> Dict[Key, float]:
    waits = {}
    for (f, k), keys in visits.items():
        servers = counts[f][k]
        if servers <= 0:
            waits.update({key: 0.0 for key in keys})
            continue
        order = sorted(keys, key=lambda key: (round(arrivals[key], 9), rank[key[0]], key))
        # free times of the pool's identical chargers
        free = [0.0] * min(servers, len(order))
        for key in order:
            start = max(heapq.heappop(free), arrivals[key])
            waits[key] = start - arrivals[key]
            heapq.heappush(free, start + durations[key])
    return waits

def compute_waits(
    ci: ClusterInstance,
    plan: RechargePlan,
    recharges: Recharges,
    charger_counts: Sequence[Sequence[int]],
    priority: Optional[Sequence[int]] = None) -> Schedule:
    """
    Finds first-come-first-served waits and the resulting departures.

    Waits shift the departures of later clusters on the same route, which may reorder
    other queues, so the pools are re-swept until no wait moves by more than `1e-9`
    minutes. The number of sweeps is capped at the number of recharge events plus one;
    hitting the cap keeps the last iterate and adds a `not_converged` note.

    Args:
        ci (ClusterInstance):
            The transformed instance.
        plan (RechargePlan):
            One gene per cluster.
        recharges (Recharges):
            Output of `compute_recharge_durations` for the same plan.
        charger_counts (Sequence[Sequence[int]]):
            `z_fk`; each pool serves up to `z_fk` vehicles at once.
        priority (Optional[Sequence[int]], optional):
            Route order used to break ties between equal arrivals. Defaults to route index order.

    Returns:
        Schedule: Timelines, events in `ci.keys` order and the issues found.
    """
    counts = _check_counts(ci, charger_counts)
    genes = genes_by_route(ci, plan)
    rank = _priority_rank(ci, priority)
    n_routes = len(ci.layouts)
    waits = {key: 0.0 for key in recharges.durations}

    converged = False
    for _ in range(len(waits) + 1):
        times = [_route_times(ci, r, genes[r], waits, recharges.durations) for r in range(n_routes)]
        arrivals = {key: times[key[0]][1][key[1]][0] for key in waits}
        updated = _fcfs(recharges.visits, arrivals, recharges.durations, counts, rank)
        if all(abs(updated[key] - waits[key]) <= g.TOL for key in waits):
            converged = True
            break
        waits = updated

    times = [_route_times(ci, r, genes[r], waits, recharges.durations) for r in range(n_routes)]
    issues = list(recharges.issues)
    if not converged:
        logger.warning('waits did not settle after %d sweep(s)', len(waits) + 1)
        issues.append(Violation('not_converged', 'waits', f'{len(waits) + 1} sweeps', 'note'))

    for (f, k), keys in recharges.visits.items():
        if counts[f][k] <= 0:
            issues.append(Violation('no_chargers', f'facility={f} charger={k}', f'{len(keys)} visit(s) and no charger'))

    timelines, events = [], []
    for r in range(n_routes):
        departures, stops = times[r]
        timelines.append(RouteTimeline(r, tuple(departures), recharges.batteries[r]))
        if departures[-1] > ci.instance.max_shift_min + g.TOL:
            issues.append(Violation('operational_time', f'route={r}', f'returns at {departures[-1]:.3f} > {ci.instance.max_shift_min}'))

    for key, gene in zip(ci.keys, plan):
        if gene is None:
            continue
        arrival, start, end = times[key[0]][1][key[1]]
        events.append(RechargeEvent(
            route=key[0],
            position=key[1],
            facility=gene[0],
            charger=gene[1],
            arrival=arrival,
            before_charge=recharges.before_charge[key],
            recharge=recharges.durations[key],
            wait=waits[key],
            start=start,
            end=end,
            steps=occupied_steps(ci, start, end)))

    return Schedule(tuple(timelines), tuple(events), converged, tuple(issues))

def occupied_steps(ci: ClusterInstance, start: float, end: float) -> Tuple[int, ...]:
    """
    Time steps a charger is held for a recharge over `[start, end]`.

    Step `t` covers `[D_t, D_t + T^Δ)`; every step the interval touches is occupied, so
    a step boundary inside the interval occupies both neighbours and a zero-length
    recharge holds exactly one step. Steps are clipped to the horizon.

    Example:
        ```python
        occupied_steps(ci, 30.0, 75.0)  # (2, 3, 4, 5) with T^Δ = 15
        ```
    """
    step = ci.instance.time_step_min
    first = max(0, math.floor(start / step + g.TOL))
    last = min(ci.horizon, math.floor(end / step + g.TOL))
    return tuple(range(first, last + 1))

def compute_occupancy(ci: ClusterInstance, schedule: Schedule) -> Dict[Key, Tuple[int, ...]]:
    return {(e.route, e.position): occupied_steps(ci, e.start, e.end) for e in schedule.events}

def build_schedule(
    ci: ClusterInstance,
    plan: RechargePlan,
    charger_counts: Sequence[Sequence[int]],
    priority: Optional[Sequence[int]] = None,
    rounded_deficit: bool = False) -> Schedule:
    """Runs durations, waits and occupancy for one plan and deployment."""
    recharges = compute_recharge_durations(ci, plan, rounded_deficit)
    return compute_waits(ci, plan, recharges, charger_counts, priority)

def objective(ci: ClusterInstance, plan: RechargePlan, deployment: Deployment, schedule: Schedule) -> CostBreakdown:
    """
    Daily cost of a solution, split into its components (USD/day).

    `total = C^rho (T^δ q + w + u) + C^ξ_k u + C^φ_f y_f + C^ν_k z_fk`, summed with `math.fsum`.

    Example:
        ```python
        # one basic charger at one facility and nothing else
        objective(ci, (None,), Deployment((1,), ((1, 0, 0),)), schedule).total  # 55.0
        ```
    """
    params = ci.params
    vot = params.vot_per_min

    detour = math.fsum(
        float(ci.layouts[key[0]].detour_min[key[1], gene[0]])
        for key, gene in zip(ci.keys, plan) if gene is not None)
    waits = math.fsum(e.wait for e in schedule.events)
    recharge = math.fsum(e.recharge for e in schedule.events)
    energy = math.fsum(params.energy_cost_per_min[e.charger] * e.recharge for e in schedule.events)
    facility = math.fsum(
        f.cost_per_day * y for f, y in zip(ci.instance.facilities, deployment.open_flags))
    charger = math.fsum(
        params.charger_cost_per_day[k] * z
        for row in deployment.charger_counts for k, z in enumerate(row))

    parts = dict(
        detour_vot=vot * detour,
        wait_vot=vot * waits,
        recharge_vot=vot * recharge,
        energy=energy,
        facility=facility,
        charger=charger)
    return CostBreakdown(**parts, total=math.fsum(parts.values()))

def _capacity_violations(ci: ClusterInstance, counts, events: Iterable[RechargeEvent]) -> List[Violation]:
    out = []
    pools: Dict[Pool, List[RechargeEvent]] = {}
    for event in events:
        pools.setdefault((event.facility, event.charger), []).append(event)

    for (f, k), group in sorted(pools.items()):
        z = counts[f][k]
        where = f'facility={f} charger={k}'
        if z < 1:
            out.append(Violation('charger_capacity', where, f'{len(group)} visit(s) and no charger'))
            continue

        # ends sort before starts at equal times
        marks = []
        for e in group:
            if e.recharge > g.TOL:
                marks.append((round(e.start, 9), 1))
                marks.append((round(e.end, 9), 0))
        active = 0
        for time, kind in sorted(marks):
            active += 1 if kind else -1
            if active > z:
                out.append(Violation('charger_capacity', where, f'{active} vehicles charging at {time:.3f} with {z} charger(s)'))
                break

        per_step = Counter(t for e in group for t in e.steps)
        for t, count in sorted(per_step.items()):
            if count > z:
                out.append(Violation('step_capacity', f'{where} step={t}', f'{count} occupants for {z} charger(s)', 'note'))
    return out

def check_feasibility(
    ci: ClusterInstance,
    plan: RechargePlan,
    deployment: Deployment,
    schedule: Schedule,
    strict_occupancy: bool = False,
    tol: float = CHECK_TOL) -> List[Violation]:
    """
    Checks a candidate solution against every model constraint, independently of how it was built.

    Args:
        ci (ClusterInstance):
            The transformed instance.
        plan (RechargePlan):
            One gene per cluster.
        deployment (Deployment):
            Open flags and charger counts.
        schedule (Schedule):
            Timelines and recharge events, from the compute chain or a replayed LP point.
        strict_occupancy (bool, optional):
            Treats held-but-idle steps beyond `T^Δ - ε` as errors instead of notes.
        tol (float, optional):
            Absolute tolerance in minutes. Defaults to `1e-6`.

    Returns:
        List[Violation]:
            Empty when the solution is feasible. Codes with severity `error`:
            `plan_shape`, `schedule_shape`, `facility_not_feasible`, `charger_type`,
            `detour_consistency`, `charger_count`, `chargers_need_open_facility`,
            `negative_duration`, `charge_start`, `charge_end`, `occupancy_definition`,
            `detour_occupancy`, `recharge_within_occupancy`, `charger_capacity`,
            `battery_initial`, `battery_before_charge`, `battery_negative`, `battery_cap`,
            `battery_flow`, `battery_final`, `departure_time`, `operational_time`.
            Notes: `idle_occupancy` (unless strict), `occupancy_window`, `step_capacity`.

    Notes:
        - Capacity is checked in continuous time. Per-step counts are only reported as
          notes: the closed occupancy interval lets a vehicle that leaves at a step
          boundary share that step with the next one.
    """
    instance = ci.instance
    n_facilities, n_types = len(instance.facilities), len(instance.chargers)
    if len(plan) != len(ci.keys):
        return [Violation('plan_shape', 'plan', f'{len(plan)} genes for {len(ci.keys)} clusters')]

    out, structural = [], []
    genes = {}
    for key, gene in zip(ci.keys, plan):
        if gene is None:
            continue
        f, k = gene
        if not 0 <= k < n_types:
            structural.append(Violation('charger_type', _where(key, f, k), f'no charger type {k}'))
        if not 0 <= f < n_facilities:
            structural.append(Violation('facility_not_feasible', _where(key, f, k), f'no facility {f}'))
        elif f not in ci.facility_sets[key]:
            out.append(Violation('facility_not_feasible', _where(key, f, k), f'allowed: {list(ci.facility_sets[key])}'))
        genes[key] = gene

    counts = deployment.charger_counts
    flags = deployment.open_flags
    if len(counts) != n_facilities or len(flags) != n_facilities or any(len(row) != n_types for row in counts):
        structural.append(Violation('charger_count', 'deployment', f'expected {n_facilities} x {n_types} counts'))
    if len(schedule.timelines) != len(ci.layouts) or any(
            len(tl.departures) != len(lay.clusters) + 2 or len(tl.batteries) != len(lay.clusters) + 2
            for tl, lay in zip(schedule.timelines, ci.layouts)):
        structural.append(Violation('schedule_shape', 'timelines', 'one departure and battery per position required'))
    if structural:
        return structural + out

    for f, row in enumerate(counts):
        if flags[f] not in (0, 1):
            out.append(Violation('charger_count', f'facility={f}', f'open flag {flags[f]} is not binary'))
        for k, z in enumerate(row):
            if z < 0 or z != int(z):
                out.append(Violation('charger_count', f'facility={f} charger={k}', f'{z} is not a non-negative integer'))
            elif z > 0 and not flags[f]:
                out.append(Violation('chargers_need_open_facility', f'facility={f} charger={k}', f'{z} charger(s) at a closed facility'))

    events = {}
    for event in schedule.events:
        key = (event.route, event.position)
        if key not in genes or genes[key] != (event.facility, event.charger) or key in events:
            out.append(Violation('detour_consistency', _where(key, event.facility, event.charger), 'event without a matching gene'))
        else:
            events[key] = event
    for key, gene in genes.items():
        if key not in events:
            out.append(Violation('detour_consistency', _where(key, *gene), 'gene without a recharge event'))

    rates = ci.params.recharge_rate
    cap = instance.battery_cap_min
    step = instance.time_step_min
    for r, layout in enumerate(ci.layouts):
        route = instance.routes[r]
        timeline = schedule.timelines[r]
        d, b = timeline.departures, timeline.batteries
        n = len(layout.clusters)

        if abs(b[0] - route.initial_battery_min) > tol:
            out.append(Violation('battery_initial', f'route={r}', f'{b[0]:.6f} != {route.initial_battery_min}'))
        if d[0] < -tol:
            out.append(Violation('departure_time', _where((r, 0)), f'{d[0]:.6f} < 0'))

        for i in range(n + 1):
            key = (r, i)
            level = b[i] - layout.internal_min[i]
            event = events.get(key)
            if event is None:
                expected = level - layout.leg_min[i]
                t = d[i] + layout.leg_min[i]
            else:
                f, k = event.facility, event.charger
                where = _where(key, f, k)
                if abs(event.before_charge - (level - layout.out_min[i, f])) > tol:
                    out.append(Violation('battery_before_charge', where, f'{event.before_charge:.6f} != {level - layout.out_min[i, f]:.6f}'))
                if event.before_charge < -tol:
                    out.append(Violation('battery_negative', where, f'{event.before_charge:.6f} before charging'))
                if event.before_charge + rates[k] * event.recharge > cap + tol:
                    out.append(Violation('battery_cap', where, f'{event.before_charge + rates[k] * event.recharge:.6f} > {cap}'))
                expected = event.before_charge + rates[k] * event.recharge - layout.back_min[i, f]

                if event.recharge < -tol or event.wait < -tol:
                    out.append(Violation('negative_duration', where, f'u={event.recharge:.6f} w={event.wait:.6f}'))
                if abs(event.start - (d[i] + layout.out_min[i, f] + event.wait)) > tol:
                    out.append(Violation('charge_start', where, f's={event.start:.6f}'))
                if abs(event.end - (event.start + event.recharge)) > tol:
                    out.append(Violation('charge_end', where, f'e={event.end:.6f} != s + u'))
                t = event.end + layout.back_min[i, f]

                steps = tuple(event.steps)
                if steps != occupied_steps(ci, event.start, event.end):
                    out.append(Violation('occupancy_definition', where, f'steps {list(steps)} do not match [{event.start:.3f}, {event.end:.3f}]'))
                if not steps:
                    out.append(Violation('detour_occupancy', where, 'detour holds no time step'))
                held = len(steps) * step
                if held < event.recharge - tol:
                    out.append(Violation('recharge_within_occupancy', where, f'{held} min held for {event.recharge:.6f} min of charging'))
                if held - event.recharge > step - instance.epsilon_min + tol:
                    out.append(Violation('idle_occupancy', where, f'{held - event.recharge:.6f} idle min', 'error' if strict_occupancy else 'note'))
                if not set(steps) <= set(ci.time_sets[key]):
                    out.append(Violation('occupancy_window', where, f'steps outside {list(ci.time_sets[key])}', 'note'))

            if abs(b[i + 1] - expected) > tol:
                out.append(Violation('battery_flow', _where((r, i + 1)), f'{b[i + 1]:.6f} != {expected:.6f}'))
            if b[i + 1] < -tol:
                out.append(Violation('battery_negative', _where((r, i + 1)), f'{b[i + 1]:.6f} on arrival'))
            scheduled = t + layout.service_min[i + 1] + layout.internal_min[i + 1]
            if abs(d[i + 1] - scheduled) > tol:
                out.append(Violation('departure_time', _where((r, i + 1)), f'{d[i + 1]:.6f} != {scheduled:.6f}'))

        if b[n + 1] < route.final_battery_min - tol:
            out.append(Violation('battery_final', f'route={r}', f'{b[n + 1]:.6f} < {route.final_battery_min}'))
        if d[n + 1] > instance.max_shift_min + tol:
            out.append(Violation('operational_time', f'route={r}', f'{d[n + 1]:.6f} > {instance.max_shift_min}'))

    out.extend(_capacity_violations(ci, counts, events.values()))
    return out

def evaluate_plan(
    ci: ClusterInstance,
    plan: RechargePlan,
    charger_counts: Sequence[Sequence[int]],
    priority: Optional[Sequence[int]] = None,
    rounded_deficit: bool = False,
    strict_occupancy: bool = False) -> Evaluation:
    """
    Full compute chain for one plan and deployment, followed by the independent check.

    Returns:
        Evaluation: Feasible when neither the chain nor the checker reports an error.

    Raises:
        InputError: If the plan or the counts do not fit the instance.
    """
    counts = _check_counts(ci, charger_counts)
    schedule = build_schedule(ci, plan, counts, priority, rounded_deficit)
    deployment = Deployment(compute_open_flags(counts), counts)
    cost = objective(ci, plan, deployment, schedule)

    violations = check_feasibility(ci, plan, deployment, schedule, strict_occupancy)
    violations += [v for v in schedule.issues if v.code == 'not_converged']
    feasible = not any(v.severity == 'error' for v in violations)
    return Evaluation(Solution(plan, deployment, schedule, cost), feasible, tuple(violations))

def pool_waits(schedule: Schedule) -> Dict[Pool, float]:
    """Total wait minutes per charger pool."""
    out: Dict[Pool, float] = {}
    for e in schedule.events:
        out[(e.facility, e.charger)] = out.get((e.facility, e.charger), 0.0) + e.wait
    return out

def has_fcfs_ties(schedule: Schedule) -> bool:
    """True when two routes reach the same pool at the same minute, so their order is a choice."""
    seen: Dict[Tuple[int, int, float], int] = {}
    for e in schedule.events:
        key = (e.facility, e.charger, round(e.arrival, 9))
        if key in seen and seen[key] != e.route:
            return True
        seen.setdefault(key, e.route)
    return False

def occupancy_table(ci: ClusterInstance, schedule: Schedule) -> pd.DataFrame:
    """Occupants per (facility, charger type, time step), for plotting."""
    counts = Counter((e.facility, e.charger, t) for e in schedule.events for t in e.steps)
    rows = [
        {'facility': f, 'charger': k, 'step': t, 'time_min': t * ci.instance.time_step_min, 'count': c}
        for (f, k, t), c in sorted(counts.items())]
    return pd.DataFrame(rows, columns=['facility', 'charger', 'step', 'time_min', 'count'])
