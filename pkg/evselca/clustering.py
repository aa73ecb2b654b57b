from __future__ import annotations

import logging
import itertools

from typing import List, Dict, Optional, Tuple, Sequence

import numpy as np

from . import globals as g
from .domain import travel_min
from .errors import ClusteringError
from .types import *

functions = [
    'route_legs', 'solve_cuts', 'brute_force_cuts', 'min_clusters', 'prefix_flags',
    'build_clusters', 'cluster_routes']

__all__ = functions

logger = logging.getLogger(__name__)


def _stop_location(stop: Stop):
    return (stop.id, stop.x, stop.y)

def route_legs(instance: Instance, route: Route) -> np.ndarray:
    """Travel minutes between consecutive customers of a route (length = stops - 1)."""
    stops = route.stops
    return np.array(
        [travel_min(instance, _stop_location(a), _stop_location(b)) for a, b in zip(stops, stops[1:])],
        dtype=float)

def _fits(prefix: np.ndarray, first: int, last: int, intra_cap: float) -> bool:
    return prefix[last] - prefix[first] <= intra_cap + g.TOL

def solve_cuts(legs: Sequence[float], n_cuts: int, intra_cap: float, route: int = 0) -> Optional[CutSolution]:
    """
    Places `n_cuts` cuts on a customer sequence to maximize the travel time of the cut edges.

    A cut after stop `j` ends one cluster and starts the next; its value is the leg
    `j -> j+1`. Every resulting cluster must keep its internal travel within `intra_cap`.

    Args:
        legs (Sequence[float]):
            Leg times between consecutive customers, `len(stops) - 1` entries.
        n_cuts (int):
            Number of cuts, at least 1 and below the number of legs.
        intra_cap (float):
            Upper bound on the internal travel of every cluster.
        route (int, optional):
            Route index copied into the result. Defaults to `0`.

    Returns:
        Optional[CutSolution]:
            The optimal cut set, ties broken toward the earliest cut positions, or `None`
            if no placement respects the cap or `n_cuts` leaves no room.

    Notes:
        - Exact dynamic program over (clusters left, first stop of the next cluster),
          solved from the route end so the forward reconstruction can prefer early cuts.
        - `O(n_cuts * stops^2)`.

    Example:
        ```python
        solve_cuts([10, 50, 10], 1, float('inf')).cut_positions  # (1,)
        ```
    """
    if n_cuts < 1:
        raise ValueError('n_cuts must be at least 1')
    if intra_cap <= 0:
        raise ValueError('intra_cap must be positive')

    legs = np.asarray(legs, dtype=float)
    n_stops = len(legs) + 1
    if n_cuts >= len(legs):
        return None

    prefix = np.concatenate([[0.0], np.cumsum(legs)])
    n_clusters = n_cuts + 1

    # value[c, i]: best cut-edge travel when stops i..end form c clusters
    value = np.full((n_clusters + 1, n_stops), -np.inf)
    for i in range(n_stops):
        if _fits(prefix, i, n_stops - 1, intra_cap):
            value[1, i] = 0.0

    for c in range(2, n_clusters + 1):
        for i in range(n_stops):
            best = -np.inf
            for j in range(i + 1, n_stops):
                if not _fits(prefix, i, j - 1, intra_cap):
                    break
                candidate = legs[j - 1] + value[c - 1, j]
                if candidate > best:
                    best = candidate
            value[c, i] = best

    if not np.isfinite(value[n_clusters, 0]):
        return None

    cuts = []
    i = 0
    for c in range(n_clusters, 1, -1):
        target = value[c, i]
        for j in range(i + 1, n_stops):
            if not _fits(prefix, i, j - 1, intra_cap):
                break
            if legs[j - 1] + value[c - 1, j] >= target - 1e-9:
                cuts.append(j - 1)
                i = j
                break

    objective = float(legs[cuts].sum())
    return CutSolution(route, tuple(cuts), objective, n_stops)

def brute_force_cuts(legs: Sequence[float], n_cuts: int, intra_cap: float, route: int = 0) -> Optional[CutSolution]:
    """Exhaustive counterpart of `solve_cuts`; first optimum in lexicographic order wins."""
    legs = np.asarray(legs, dtype=float)
    n_stops = len(legs) + 1
    if n_cuts < 1 or n_cuts >= len(legs):
        return None

    prefix = np.concatenate([[0.0], np.cumsum(legs)])
    best = None
    for cuts in itertools.combinations(range(len(legs)), n_cuts):
        bounds = [0] + [c + 1 for c in cuts] + [n_stops]
        if not all(_fits(prefix, a, b - 1, intra_cap) for a, b in zip(bounds, bounds[1:])):
            continue
        objective = float(legs[list(cuts)].sum())
        if best is None or objective > best.objective + 1e-9:
            best = CutSolution(route, tuple(cuts), objective, n_stops)
    return best

def min_clusters(legs: Sequence[float], intra_cap: float, route: int = 0) -> Tuple[int, CutSolution]:
    """
    Smallest number of cuts that keeps every cluster within `intra_cap`.

    Returns `(n_cuts, solution)`; zero cuts means the whole route is one cluster.

    Raises:
        ClusteringError: If no admissible cut count exists. The error names the
            shortest leg, which alone already exceeds the cap.
    """
    if intra_cap <= 0:
        raise ValueError('intra_cap must be positive')

    legs = np.asarray(legs, dtype=float)
    n_stops = len(legs) + 1
    if legs.sum() <= intra_cap + g.TOL:
        return 0, CutSolution(route, (), 0.0, n_stops)

    for n_cuts in range(1, len(legs)):
        solution = solve_cuts(legs, n_cuts, intra_cap, route)
        if solution is not None:
            return n_cuts, solution

    leg = int(np.argmin(legs))
    raise ClusteringError(
        f'route {route}: leg {leg} takes {legs[leg]:.3f} min, above the cluster cap {intra_cap:.3f}',
        route, leg, float(legs[leg]))

def prefix_flags(solution: CutSolution) -> np.ndarray:
    """m[n, c] = 1 when cut n sits at or before stop c (the cumulative form of p)."""
    flags = np.zeros((len(solution.cut_positions), solution.n_stops), dtype=int)
    for n, position in enumerate(solution.cut_positions):
        flags[n, position:] = 1
    return flags

def build_clusters(instance: Instance, route: Route, solution: CutSolution, route_index: Optional[int] = None) -> List[Cluster]:
    """
    Turns a cut solution into ordered clusters with their internal travel and service.

    Example:
        ```python
        clusters = build_clusters(instance, route, CutSolution(0, (1,), 50.0, 4))
        [c.members for c in clusters]  # [(0, 1), (2, 3)]
        ```
    """
    r = route.id if route_index is None else route_index
    legs = route_legs(instance, route)
    bounds = [0] + [c + 1 for c in solution.cut_positions] + [len(route.stops)]

    clusters = []
    for position, (first, stop_after) in enumerate(zip(bounds, bounds[1:]), start=1):
        members = tuple(range(first, stop_after))
        clusters.append(Cluster(
            route=r,
            position=position,
            members=members,
            internal_travel_min=float(legs[first:stop_after - 1].sum()),
            internal_service_min=float(sum(route.stops[m].service_min for m in members)),
            entry=first,
            exit=stop_after - 1))
    return clusters

def cluster_routes(instance: Instance, intra_cap: float) -> Dict[int, List[Cluster]]:
    """Clusters every route with the fewest cuts; keys are route indices."""
    out = {}
    for r, route in enumerate(instance.routes):
        n_cuts, solution = min_clusters(route_legs(instance, route), intra_cap, r)
        out[r] = build_clusters(instance, route, solution, r)
        logger.debug('route %s: %d cut(s), %d cluster(s)', route.id, n_cuts, len(out[r]))
    logger.info('clustered %d route(s) into %d cluster(s)', len(out), sum(len(c) for c in out.values()))
    return out
