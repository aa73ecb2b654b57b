from __future__ import annotations

import json
import math
import logging
import traceback
import concurrent.futures

from pathlib import Path
from typing import List, Dict, Any, Optional, Tuple, Union, Sequence

import numpy as np
import pandas as pd

from . import db
from . import globals as g
from .domain import (
    default_chargers, ensure_valid, instance_from_dict, load_instance, with_battery,
    with_chargers, with_costs, with_time_step)
from .errors import InputError
from .exact import exact_solve, hybrid_solve
from .ga import ga_solve
from .transform import build_cluster_instance
from .types import *

functions = [
    'gen_instance', 'apply_level', 'validate_sweep', 'solve_method', 'run_sweep',
    'load_sweep_spec', 'write_sweep_csv', 'optimality_gap', 'gap_table']

__all__ = functions + ['AXES', 'METHODS', 'SWEEP_COLUMNS']

logger = logging.getLogger(__name__)

AXES = ('charger_cost_pct', 'energy_cost_pct', 'vot_pct', 'range_miles', 't_delta_min')
PCT_AXES = ('charger_cost_pct', 'energy_cost_pct', 'vot_pct')
METHODS = ('ga', 'exact', 'hybrid')

SWEEP_COLUMNS = [
    'axis', 'level', 'replication', 'seed', 'status', 'feasible', 'total',
    'detour_vot', 'wait_vot', 'recharge_vot', 'vot', 'energy', 'facility', 'charger',
    'facilities_open', 'chargers_installed']

COST_FIELDS = ('total', 'detour_vot', 'wait_vot', 'recharge_vot', 'energy', 'facility', 'charger')


def gen_instance(
    n_routes: int,
    stops_per_route: int,
    n_facilities: int,
    extent: float = 5.0,
    seed: int = 0,
    chargers: Optional[Tuple[ChargerSpec, ...]] = None,
    costs: CostParams = CostParams()) -> Instance:
    """
    Generates a synthetic single-depot instance.

    Stops are drawn uniformly on the square `[-extent, extent]^2` (miles) around a depot
    at the origin and visited in angular order. Facility 0 sits at the depot; the other
    facilities sit at the centroids of equal angular sectors of all stops.

    Args:
        n_routes (int):
            Number of routes.
        stops_per_route (int):
            Customers per route. `0` yields an instance that fails validation.
        n_facilities (int):
            Candidate facilities, the depot included.
        extent (float, optional):
            Half side of the square, in miles. Defaults to `5.0`.
        seed (int, optional):
            Seed of the numpy generator; the same seed yields the same instance.
        chargers (Optional[Tuple[ChargerSpec, ...]], optional):
            Charger catalog. Defaults to `default_chargers()`.
        costs (CostParams, optional):
            Cost parameters. Defaults to the reference values.

    Returns:
        Instance: A validated instance.

    Raises:
        InputError: If a count or the extent is not positive.
        ValidationError: If the generated instance violates an invariant.

    Example:
        ```python
        instance = gen_instance(3, 4, 3, seed=11)
        len(instance.facilities)  # 3
        ```
    """
    if n_routes < 1 or n_facilities < 1 or stops_per_route < 0 or extent <= 0:
        raise InputError(
            f'gen_instance needs positive counts and extent, got routes={n_routes} '
            f'stops={stops_per_route} facilities={n_facilities} extent={extent}')

    rng = np.random.default_rng(seed)
    depot = (0.0, 0.0)
    routes, points = [], []
    for r in range(n_routes):
        xy = rng.uniform(-extent, extent, size=(stops_per_route, 2))
        order = np.argsort(np.arctan2(xy[:, 1], xy[:, 0]), kind='stable')
        xy = xy[order]
        points.append(xy)
        stops = tuple(Stop(f'r{r}s{i}', float(x), float(y)) for i, (x, y) in enumerate(xy))
        routes.append(Route(r, depot, stops))

    facilities = [Facility(0, depot[0], depot[1], costs.facility_cost_per_day)]
    sectors = n_facilities - 1
    if sectors:
        xy = np.vstack(points) if stops_per_route else np.zeros((0, 2))
        angle = np.arctan2(xy[:, 1], xy[:, 0]) if len(xy) else np.zeros(0)
        edges = np.linspace(-math.pi, math.pi, sectors + 1)
        for j in range(sectors):
            inside = (angle >= edges[j]) & ((angle < edges[j + 1]) | (j == sectors - 1))
            if inside.any():
                cx, cy = xy[inside].mean(axis=0)
            else:
                mid = (edges[j] + edges[j + 1]) / 2.0
                cx, cy = extent / 2.0 * math.cos(mid), extent / 2.0 * math.sin(mid)
            facilities.append(Facility(j + 1, round(float(cx), 6), round(float(cy), 6), costs.facility_cost_per_day))

    instance = Instance(
        routes=tuple(routes),
        facilities=tuple(facilities),
        chargers=chargers if chargers is not None else default_chargers(costs.charger_lifespan_days),
        costs=costs)
    return ensure_valid(instance)

def apply_level(instance: Instance, axis: str, level: float) -> Instance:
    """
    Returns a copy of `instance` with one sweep axis set to `level`.

    Percent axes scale the base value by `1 + level / 100`, so `-80` keeps a fifth of it.
    `range_miles` sets the battery to that many miles at the truck speed and rescales
    the route battery levels with it; `t_delta_min` sets the time step.

    Raises:
        InputError: If the axis is unknown.
        ValidationError: If the modified instance is invalid, e.g. a zero energy price.
    """
    if axis == 'charger_cost_pct':
        changed = with_chargers(instance, 1.0 + level / 100.0)
    elif axis == 'energy_cost_pct':
        changed = with_costs(instance, energy_price_usd_per_kwh=instance.costs.energy_price_usd_per_kwh * (1.0 + level / 100.0))
    elif axis == 'vot_pct':
        changed = with_costs(instance, vot_usd_per_mile=instance.costs.vot_usd_per_mile * (1.0 + level / 100.0))
    elif axis == 'range_miles':
        if level <= 0:
            raise InputError(f'range_miles must be positive, got {level}')
        changed = with_battery(instance, level / instance.costs.truck_speed_mph * 60.0)
    elif axis == 't_delta_min':
        if level <= 0:
            raise InputError(f't_delta_min must be positive, got {level}')
        changed = with_time_step(instance, float(level))
    else:
        raise InputError(f'unknown sweep axis {axis!r}; expected one of {", ".join(AXES)}')
    return ensure_valid(changed)

def _baseline(spec: SweepSpec) -> float:
    if spec.baseline is not None:
        return spec.baseline
    if spec.axis in PCT_AXES and 0 in spec.levels:
        return 0.0
    return spec.levels[0]

def validate_sweep(spec: SweepSpec) -> SweepSpec:
    """
    Checks a sweep before any solve and fills in the baseline level.

    Every level is applied once so an invalid level fails here, not half way through.

    Raises:
        InputError: On an unknown axis or method, no levels, no replications, a missing
            instance, a baseline outside the levels or an invalid level.
    """
    if spec.axis not in AXES:
        raise InputError(f'unknown sweep axis {spec.axis!r}; expected one of {", ".join(AXES)}')
    if spec.method not in METHODS:
        raise InputError(f'unknown method {spec.method!r}; expected one of {", ".join(METHODS)}')
    if not spec.levels:
        raise InputError('a sweep needs at least one level')
    if spec.replications < 1:
        raise InputError(f'replications={spec.replications} < 1')
    if spec.threads < 1:
        raise InputError(f'threads={spec.threads} < 1')
    if spec.instance is None:
        raise InputError('a sweep needs a base instance')
    baseline = _baseline(spec)
    if baseline not in spec.levels:
        raise InputError(f'baseline level {baseline} is not one of the sweep levels')
    for level in spec.levels:
        apply_level(spec.instance, spec.axis, level)
    return spec._replace(baseline=baseline)

def solve_method(
    ci: ClusterInstance,
    method: str,
    config: GaConfig = GaConfig(),
    limits: Limits = Limits()) -> Tuple[Optional[Evaluation], Tuple[TraceRow, ...]]:
    """
    Runs one solver and returns its best evaluation with the GA trace, if any.

    Returns `(None, ())` when the exact search finds nothing feasible.
    """
    if method == 'ga':
        result = ga_solve(ci, config)
        return result.best, result.trace
    if method == 'exact':
        return exact_solve(ci, limits).best, ()
    if method == 'hybrid':
        return hybrid_solve(ci, config, limits).best, ()
    raise InputError(f'unknown method {method!r}; expected one of {", ".join(METHODS)}')

def _row(spec: SweepSpec, level: float, replication: int, seed: int, status: str, evaluation: Optional[Evaluation]) -> Dict[str, Any]:
    names = [c.name for c in spec.instance.chargers]
    row = {'axis': spec.axis, 'level': float(level), 'replication': replication, 'seed': seed, 'status': status}
    if evaluation is None or not evaluation.feasible:
        row['feasible'] = False
        row.update({field: math.nan for field in COST_FIELDS + ('vot',)})
        row['facilities_open'] = 0
        row['chargers_installed'] = 0
        row.update({f'chargers_{name}': 0 for name in names})
        return row

    cost = evaluation.solution.cost
    deployment = evaluation.solution.deployment
    row['feasible'] = True
    row.update({field: float(getattr(cost, field)) for field in COST_FIELDS})
    row['vot'] = float(cost.vot)
    row['facilities_open'] = int(sum(deployment.open_flags))
    row['chargers_installed'] = int(sum(sum(counts) for counts in deployment.charger_counts))
    for k, name in enumerate(names):
        row[f'chargers_{name}'] = int(sum(counts[k] for counts in deployment.charger_counts))
    return row

def run_sweep(
    spec: SweepSpec,
    get_connection: Optional[SQLite3ConnectionGenerator] = None,
    run_id: int = 0,
    limits: Limits = Limits()) -> pd.DataFrame:
    """
    Solves the base instance at every level of one parameter axis.

    Each level is solved `spec.replications` times with seeds `spec.seed + replication`;
    the exact method is deterministic and runs once per level. Tasks fan out over
    `spec.threads` workers and the rows come back in level then replication order.

    Args:
        spec (SweepSpec):
            The sweep; see `validate_sweep`.
        get_connection (Optional[SQLite3ConnectionGenerator], optional):
            Run ledger. When given, failures are logged to `run_events`, GA traces to
            `convergence` and every row to `sweep_results`.
        run_id (int, optional):
            Ledger run id of the rows. Defaults to `0`.
        limits (Limits, optional):
            Caps of the exact and hybrid methods.

    Returns:
        pd.DataFrame:
            One row per (level, replication) with the columns of `SWEEP_COLUMNS`, one
            `chargers_<type>` column per charger type, and per level `level_best`,
            `level_mean`, `level_std` (population) and `normalized_cost`
            (`100 * level_best / baseline_best`, exactly `100.0` on the baseline level).

    Notes:
        - A level that is infeasible or fails is recorded with `feasible=False` and the
          sweep continues.
        - With `spec.ga.time_limit_s` set, results depend on machine speed; leave it
          `None` for byte-identical reruns.

    Raises:
        InputError: If the sweep is invalid; nothing is solved then.
    """
    spec = validate_sweep(spec)
    replications = 1 if spec.method == 'exact' else spec.replications
    tasks = [(level, rep) for level in spec.levels for rep in range(replications)]

    def work(task: Tuple[float, int]) -> Tuple[Dict[str, Any], Tuple[TraceRow, ...]]:
        level, rep = task
        seed = spec.seed + rep
        try:
            instance = apply_level(spec.instance, spec.axis, level)
            ci = build_cluster_instance(instance, spec.intra_cap_frac)
            evaluation, trace = solve_method(ci, spec.method, spec.ga._replace(seed=seed), limits)
            status = 'ok' if evaluation is not None and evaluation.feasible else 'infeasible'
            return _row(spec, level, rep, seed, status, evaluation), trace
        except Exception as e:
            message = traceback.format_exc()
            logger.warning('sweep %s=%s replication %d failed: %s', spec.axis, level, rep, e)
            if get_connection is not None:
                db.log_event(get_connection, run_id=run_id, process=f'Failed at sweep {spec.axis}={level} replication {rep}', success=0, message=message)
            status = getattr(e, 'prefix', 'error')
            return _row(spec, level, rep, seed, status, None), ()

    if spec.threads > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=spec.threads) as executor:
            results = list(executor.map(work, tasks))
    else:
        results = [work(task) for task in tasks]

    df = pd.DataFrame([row for row, _ in results])
    grouped = df.groupby('level', sort=False)['total']
    df['level_best'] = grouped.transform('min')
    df['level_mean'] = grouped.transform('mean')
    df['level_std'] = grouped.transform(lambda s: float(np.std(s.dropna())) if s.notna().any() else math.nan)

    best_by_level = df.groupby('level', sort=False)['total'].min()
    base = best_by_level.get(float(spec.baseline), math.nan)
    def normalize(level: float) -> float:
        if level == spec.baseline:
            return 100.0 if base > 0 else math.nan
        best = best_by_level.get(level, math.nan)
        if not base > 0 or pd.isna(best):
            return math.nan
        return 100.0 * best / base
    df['normalized_cost'] = df['level'].map(normalize)

    for level in spec.levels:
        best = best_by_level.get(float(level), math.nan)
        logger.info('sweep %s=%s: best C=%s', spec.axis, level, 'infeasible' if pd.isna(best) else f'{best:.4f}')

    if get_connection is not None:
        for _, trace in results:
            db.insert_named_tuples(get_connection, [t._replace(run_id=run_id) for t in trace])
        db.insert_named_tuples(get_connection, [
            SweepRow(
                run_id=run_id, axis=r.axis, level=r.level, replication=int(r.replication),
                feasible=int(r.feasible), total=_opt(r.total), detour_vot=_opt(r.detour_vot),
                wait_vot=_opt(r.wait_vot), recharge_vot=_opt(r.recharge_vot), energy=_opt(r.energy),
                facility=_opt(r.facility), charger=_opt(r.charger),
                chargers_installed=int(r.chargers_installed), normalized_cost=_opt(r.normalized_cost))
            for r in df.itertuples(index=False)])
    return df

def _opt(value: float) -> Optional[float]:
    return None if pd.isna(value) else float(value)

def write_sweep_csv(df: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format='%.6f')
    return path

def load_sweep_spec(path: Union[str, Path], instance: Optional[Instance] = None) -> SweepSpec:
    """
    Reads a sweep JSON file.

    Keys mirror `SweepSpec`; `ga` holds `GaConfig` fields. `instance` may be a path
    (relative to the sweep file) or an inline instance object; an explicit `instance`
    argument wins over both.

    Raises:
        InputError: If the file is missing or malformed.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
    except FileNotFoundError as e:
        raise InputError(f'sweep file not found: {path}') from e
    except json.JSONDecodeError as e:
        raise InputError(f'malformed sweep JSON in {path}: {e}') from e
    if not isinstance(data, dict):
        raise InputError(f'sweep JSON in {path} must be an object')

    if instance is None:
        source = data.get('instance')
        if isinstance(source, str):
            instance = load_instance(path.parent / source)
        elif isinstance(source, dict):
            instance = ensure_valid(instance_from_dict(source))

    defaults = SweepSpec(axis='', levels=())
    try:
        ga_fields = dict(data.get('ga', {}))
        if 'charger_weights' in ga_fields and ga_fields['charger_weights'] is not None:
            ga_fields['charger_weights'] = tuple(float(w) for w in ga_fields['charger_weights'])
        unknown = set(ga_fields) - set(GaConfig._fields)
        if unknown:
            raise InputError(f'unknown GA field(s) in {path}: {", ".join(sorted(unknown))}')
        return SweepSpec(
            axis=str(data['axis']),
            levels=tuple(float(level) for level in data['levels']),
            replications=int(data.get('replications', defaults.replications)),
            method=str(data.get('method', defaults.method)),
            instance=instance,
            seed=int(data.get('seed', defaults.seed)),
            baseline=None if data.get('baseline') is None else float(data['baseline']),
            ga=defaults.ga._replace(**ga_fields),
            intra_cap_frac=float(data.get('intra_cap_frac', g.INTRA_CAP_FRAC)),
            threads=int(data.get('threads', defaults.threads)))
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, InputError):
            raise
        raise InputError(f'malformed sweep spec in {path}: {e!r}') from e

def optimality_gap(heuristic: float, oracle: float) -> float:
    """
    Relative excess of a heuristic cost over the oracle cost, `(heuristic - oracle) / oracle`.

    Returns `0.0` when both are zero and `inf` when only the oracle is zero.
    """
    if oracle == 0:
        return 0.0 if heuristic == 0 else math.inf
    return (heuristic - oracle) / oracle

def gap_table(
    instances: Sequence[Instance],
    config: GaConfig = GaConfig(),
    limits: Limits = Limits(),
    replications: int = 5,
    intra_cap_frac: float = g.INTRA_CAP_FRAC) -> pd.DataFrame:
    """
    Compares the GA (best of `replications` seeds) with the exact oracle per instance.

    Returns:
        pd.DataFrame: `instance`, `ga_best`, `oracle`, `gap_pct`; costs are NaN when a
        method finds nothing feasible.
    """
    rows = []
    for i, instance in enumerate(instances):
        ci = build_cluster_instance(instance, intra_cap_frac)
        oracle = exact_solve(ci, limits).best
        runs = [ga_solve(ci, config._replace(seed=config.seed + rep)).best for rep in range(replications)]
        totals = [e.solution.cost.total for e in runs if e.feasible]
        ga_best = min(totals) if totals else math.nan
        oracle_total = oracle.solution.cost.total if oracle is not None else math.nan
        gap = math.nan if math.isnan(ga_best) or math.isnan(oracle_total) else 100.0 * optimality_gap(ga_best, oracle_total)
        logger.info('instance %d: GA %.4f oracle %.4f gap %.2f%%', i, ga_best, oracle_total, gap)
        rows.append({'instance': i, 'ga_best': ga_best, 'oracle': oracle_total, 'gap_pct': gap})
    return pd.DataFrame(rows, columns=['instance', 'ga_best', 'oracle', 'gap_pct'])
