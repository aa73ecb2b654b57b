from __future__ import annotations

import math
import logging

from typing import List, Dict, Optional, Tuple, Any

import numpy as np

from . import globals as g
from .clustering import cluster_routes, build_clusters, route_legs
from .domain import travel_min, depot_key, facility_key, derive_model_params, ensure_valid
from .types import *

functions = [
    'build_cluster_instance', 'feasible_facilities', 'feasible_times', 'eligible_clusters',
    'route_drive_min', 'route_base_drive_min', 'route_deficit_min', 'explain_sets',
    'singleton_clusters', 'genes_by_route']

__all__ = functions

logger = logging.getLogger(__name__)


def _stop(stop: Stop):
    return (stop.id, stop.x, stop.y)

def _depot(route: Route):
    return (depot_key(route), route.depot[0], route.depot[1])

def _facility(facility: Facility):
    return (facility_key(facility), facility.x, facility.y)

def singleton_clusters(instance: Instance) -> Dict[int, List[Cluster]]:
    """One cluster per customer, i.e. the untransformed customer-level model."""
    out = {}
    for r, route in enumerate(instance.routes):
        cuts = tuple(range(len(route.stops) - 1))
        out[r] = build_clusters(instance, route, CutSolution(r, cuts, 0.0, len(route.stops)), r)
    return out

def _layout(instance: Instance, r: int, clusters: List[Cluster]) -> RouteLayout:
    route = instance.routes[r]
    n = len(clusters)
    depot = _depot(route)
    facilities = [_facility(f) for f in instance.facilities]

    # exit/entry location of every position, depot at both ends
    exits = [depot] + [_stop(route.stops[c.exit]) for c in clusters] + [depot]
    entries = [depot] + [_stop(route.stops[c.entry]) for c in clusters] + [depot]

    leg = np.array([travel_min(instance, exits[i], entries[i + 1]) for i in range(n + 1)], dtype=float)
    service = np.array([0.0] + [c.internal_service_min for c in clusters] + [0.0])
    internal = np.array([0.0] + [c.internal_travel_min for c in clusters] + [0.0])

    out = np.array([[travel_min(instance, exits[i], f) for f in facilities] for i in range(n + 2)], dtype=float)
    back = np.array(
        [[travel_min(instance, f, entries[i + 1]) for f in facilities] for i in range(n + 1)]
        + [[travel_min(instance, f, depot) for f in facilities]], dtype=float)
    out = out.reshape(n + 2, len(facilities))
    back = back.reshape(n + 2, len(facilities))
    detour = out[:n + 1] + back[:n + 1] - leg[:, None]

    return RouteLayout(r, tuple(clusters), leg, service, internal, out, back, detour)

def route_base_drive_min(layout: RouteLayout) -> float:
    """Driving minutes of a route without any detour, within-cluster travel included."""
    return float(layout.leg_min.sum() + layout.internal_min.sum())

def route_deficit_min(ci: ClusterInstance, r: int, drive_min: Optional[float] = None) -> float:
    """Battery minutes a route must recharge: max(0, drive + B^omega - B^iota)."""
    route = ci.instance.routes[r]
    drive = route_base_drive_min(ci.layouts[r]) if drive_min is None else drive_min
    return max(0.0, drive + route.final_battery_min - route.initial_battery_min)

def _facility_set(instance: Instance, route: Route, layout: RouteLayout, position: int, fastest_rate: float) -> Tuple[int, ...]:
    n = len(layout.clusters)
    base_time = float((layout.leg_min + layout.service_min[:n + 1] + layout.internal_min[:n + 1]).sum())
    drive = route_base_drive_min(layout)
    correction = min(0.0, (route.initial_battery_min - drive - route.final_battery_min) / fastest_rate)
    slack = instance.max_shift_min - base_time + correction
    cap = instance.battery_cap_min

    keep = []
    for f in range(len(instance.facilities)):
        after_cluster = (
            layout.out_min[position, f] <= cap + g.TOL
            and layout.out_min[position, f] + layout.back_min[position, f] <= slack + g.TOL)
        # the depot branch: leave the depot at the end, recharge, come back
        after_depot = (
            layout.out_min[n + 1, f] <= cap + g.TOL
            and layout.out_min[n + 1, f] + layout.back_min[n + 1, f] <= slack + g.TOL)
        if after_cluster or after_depot:
            keep.append(f)
    return tuple(keep)

def _window(instance: Instance, layout: RouteLayout, position: int) -> Tuple[float, float]:
    n = len(layout.clusters)
    per_position = layout.leg_min + layout.service_min[:n + 1] + layout.internal_min[:n + 1]
    lower = float(per_position[:position].sum() + layout.service_min[position] + layout.internal_min[position])
    upper = float(instance.max_shift_min - per_position[position:].sum())
    return lower, upper

def _steps(instance: Instance, window: Tuple[float, float], horizon: int) -> Tuple[int, ...]:
    step = instance.time_step_min
    first = max(0, math.ceil(window[0] / step - g.TOL))
    last = min(horizon, math.floor(window[1] / step + g.TOL))
    return tuple(range(first, last + 1))

def build_cluster_instance(
    instance: Instance,
    intra_cap_frac: float = g.INTRA_CAP_FRAC,
    clusters: Optional[Dict[int, List[Cluster]]] = None,
    big_m: Optional[float] = None) -> ClusterInstance:
    """
    Validates an instance, clusters its routes and precomputes every cluster-level set.

    Args:
        instance (Instance):
            The problem statement.
        intra_cap_frac (float, optional):
            Within-cluster travel cap as a share of the battery budget. Defaults to `0.5`.
        clusters (Optional[Dict[int, List[Cluster]]], optional):
            Pre-built clusters per route index; skips clustering when given.
        big_m (Optional[float], optional):
            Big-M constant; defaults to `2 * B̄ + T̄ + 1`.

    Returns:
        ClusterInstance: Immutable, shared read-only by every evaluator thread.

    Raises:
        ValidationError: If the instance breaks an invariant.
        ClusteringError: If a route cannot respect the within-cluster cap.
    """
    ensure_valid(instance)
    params = derive_model_params(instance.chargers, instance.costs)
    intra_cap = intra_cap_frac * instance.battery_cap_min
    if clusters is None:
        clusters = cluster_routes(instance, intra_cap)

    layouts = tuple(_layout(instance, r, clusters[r]) for r in range(len(instance.routes)))
    horizon = math.ceil(instance.max_shift_min / instance.time_step_min - g.TOL)
    fastest = max(params.recharge_rate)

    keys, facility_sets, windows, time_sets = [], {}, {}, {}
    for r, layout in enumerate(layouts):
        route = instance.routes[r]
        for cluster in layout.clusters:
            key = (r, cluster.position)
            keys.append(key)
            facility_sets[key] = _facility_set(instance, route, layout, cluster.position, fastest)
            windows[key] = _window(instance, layout, cluster.position)
            time_sets[key] = _steps(instance, windows[key], horizon)

    if big_m is None:
        big_m = 2 * instance.battery_cap_min + instance.max_shift_min + 1

    return ClusterInstance(
        instance=instance,
        params=params,
        layouts=layouts,
        keys=tuple(keys),
        facility_sets=facility_sets,
        windows=windows,
        time_sets=time_sets,
        horizon=horizon,
        big_m=float(big_m),
        intra_cap_min=intra_cap)

def feasible_facilities(ci: ClusterInstance, key: Key) -> Tuple[int, ...]:
    return ci.facility_sets[key]

def feasible_times(ci: ClusterInstance, key: Key, facility: int) -> Tuple[int, ...]:
    if facility not in ci.facility_sets[key]:
        return ()
    return ci.time_sets[key]

def eligible_clusters(ci: ClusterInstance, r: int, facility: int, t: int) -> Tuple[int, ...]:
    """Cluster positions of route `r` whose completion window contains `D_t`."""
    if t < 0 or t > ci.horizon:
        return ()
    time = t * ci.instance.time_step_min
    out = []
    for cluster in ci.layouts[r].clusters:
        lower, upper = ci.windows[(r, cluster.position)]
        if lower - g.TOL <= time <= upper + g.TOL:
            out.append(cluster.position)
    return tuple(out)

def genes_by_route(ci: ClusterInstance, plan: RechargePlan) -> List[Dict[int, Tuple[int, int]]]:
    """Splits a plan into `{position: (facility, charger)}` per route."""
    out: List[Dict[int, Tuple[int, int]]] = [dict() for _ in ci.layouts]
    for (r, position), gene in zip(ci.keys, plan):
        if gene is not None:
            out[r][position] = gene
    return out

def route_drive_min(ci: ClusterInstance, r: int, plan: Optional[RechargePlan] = None) -> float:
    """T^rho of route `r`: base driving plus the detours chosen by `plan`."""
    layout = ci.layouts[r]
    drive = route_base_drive_min(layout)
    if plan is not None:
        for position, (f, _) in genes_by_route(ci, plan)[r].items():
            drive += float(layout.detour_min[position, f])
    return drive

def explain_sets(ci: ClusterInstance) -> Dict[str, Any]:
    """JSON-ready dump of F_cir, T_cirf and C_rft."""
    step = ci.instance.time_step_min
    clusters = []
    for key in ci.keys:
        lower, upper = ci.windows[key]
        clusters.append({
            'route': key[0], 'cluster': key[1],
            'facilities': list(ci.facility_sets[key]),
            'window_min': [lower, upper],
            'time_steps': list(ci.time_sets[key])})
    eligible = []
    for r in range(len(ci.layouts)):
        for f in range(len(ci.instance.facilities)):
            for t in range(ci.horizon + 1):
                members = eligible_clusters(ci, r, f, t)
                if members:
                    eligible.append({'route': r, 'facility': f, 'step': t, 'time_min': t * step, 'clusters': list(members)})
    return {'clusters': clusters, 'eligible': eligible, 'horizon': ci.horizon, 'big_m': ci.big_m}
