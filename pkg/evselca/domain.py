from __future__ import annotations

import json
import hashlib
import logging

from pathlib import Path
from typing import List, Dict, Any, Optional, Tuple, Union

from . import globals as g
from .errors import InputError, ValidationError
from .types import *

functions = [
    'default_chargers', 'default_costs', 'derive_model_params', 'validate_instance',
    'ensure_valid', 'travel_min', 'depot_key', 'facility_key', 'instance_to_dict',
    'instance_from_dict', 'load_instance', 'save_instance', 'instance_hash',
    'with_costs', 'with_chargers', 'with_battery', 'with_time_step']

__all__ = functions

logger = logging.getLogger(__name__)

Location = Tuple[str, float, float]


def default_chargers(lifespan_days: float = g.CHARGER_LIFESPAN_DAYS) -> Tuple[ChargerSpec, ...]:
    """
    Returns the basic, moderate and fast charger types with their purchase prices and lifespans.

    Each type adds 100 miles of range. Types are listed by increasing power so the
    derived recharge rate is strictly increasing along the catalog.

    Example:
        ```python
        basic, moderate, fast = default_chargers()
        basic.purchase_cost_usd  # 73000.0
        ```
    """
    return (
        ChargerSpec(0, 'basic', 50.0, 100.0, 265.0, 73_000.0, lifespan_days),
        ChargerSpec(1, 'moderate', 180.0, 100.0, 88.0, 157_000.0, lifespan_days),
        ChargerSpec(2, 'fast', 360.0, 100.0, 29.0, 228_000.0, lifespan_days),)

def default_costs() -> CostParams:
    return CostParams()

def derive_model_params(chargers: Tuple[ChargerSpec, ...], costs: CostParams) -> ModelParams:
    """
    Converts catalog values into the per-minute and per-day parameters of the model.

    Args:
        chargers (Tuple[ChargerSpec, ...]):
            The charger catalog, in index order.
        costs (CostParams):
            Prices, truck speed and lifespans.

    Returns:
        ModelParams:
            - `recharge_rate`: R_k = (miles / speed * 60) / charge minutes, i.e. driving
              minutes gained per charging minute.
            - `charger_cost_per_day`: purchase cost amortized over the charger lifespan.
            - `energy_cost_per_min`: USD/kWh * kW / 60 per charging minute.
            - `vot_per_min`: USD/mile * mph / 60.

    Raises:
        ValidationError: If the speed, a lifespan or a charger field is not positive.

    Example:
        ```python
        params = derive_model_params(default_chargers(), default_costs())
        params.charger_cost_per_day[0]  # 20.0
        params.recharge_rate[0]         # 200 / 265
        ```
    """
    problems = []
    if costs.truck_speed_mph <= 0:
        problems.append(Violation('cost_params', 'truck_speed_mph', f'{costs.truck_speed_mph} <= 0'))
    if costs.charger_lifespan_days <= 0:
        problems.append(Violation('cost_params', 'charger_lifespan_days', f'{costs.charger_lifespan_days} <= 0'))
    for spec in chargers:
        if spec.lifespan_days <= 0:
            problems.append(Violation('charger_spec', f'charger={spec.id}', 'lifespan_days <= 0'))
        if spec.added_charge_minutes <= 0 or spec.added_range_miles <= 0:
            problems.append(Violation('charger_spec', f'charger={spec.id}', 'range and charge time must be positive'))
    if problems:
        raise ValidationError('cannot derive model parameters', problems)

    speed = costs.truck_speed_mph
    rates = tuple((spec.added_range_miles / speed * 60.0) / spec.added_charge_minutes for spec in chargers)
    per_day = tuple(spec.purchase_cost_usd / spec.lifespan_days for spec in chargers)
    energy = tuple(costs.energy_price_usd_per_kwh * spec.power_kw / 60.0 for spec in chargers)
    vot = costs.vot_usd_per_mile * speed / 60.0
    return ModelParams(rates, per_day, energy, vot)

def depot_key(route: Route) -> str:
    return f'depot:{route.id}'

def facility_key(facility: Facility) -> str:
    return f'facility:{facility.id}'

def travel_min(instance: Instance, a: Location, b: Location) -> float:
    """
    Travel time in minutes between two `(id, x, y)` locations.

    Uses `travel_overrides[a_id][b_id]` when present, else the Manhattan distance in
    miles at the truck speed.
    """
    overrides = instance.travel_overrides
    if overrides:
        row = overrides.get(a[0])
        if row is not None and b[0] in row:
            return float(row[b[0]])
    miles = abs(a[1] - b[1]) + abs(a[2] - b[2])
    return miles / instance.costs.truck_speed_mph * 60.0

def validate_instance(instance: Instance) -> List[Violation]:
    """
    Returns every violated instance invariant. An empty list means the instance is valid.

    Codes:
        `no_chargers`, `charger_spec`, `charger_rate_order`, `cost_params`, `facility_cost`,
        `empty_route`, `battery_order`, `battery_range`, `negative_service`, `duplicate_stop`,
        `shared_stop`, `nonpositive_battery`, `nonpositive_shift`, `nonpositive_time_step`,
        `epsilon_range`, `travel_override`.
    """
    out = []

    if not instance.chargers:
        out.append(Violation('no_chargers', 'chargers', 'catalog is empty'))
    for spec in instance.chargers:
        fields = ('power_kw', 'added_range_miles', 'added_charge_minutes', 'lifespan_days')
        for name in fields:
            if getattr(spec, name) <= 0:
                out.append(Violation('charger_spec', f'charger={spec.id}', f'{name} must be positive'))
        if spec.purchase_cost_usd < 0:
            out.append(Violation('charger_spec', f'charger={spec.id}', 'purchase_cost_usd must be non-negative'))

    costs = instance.costs
    for name, value in costs._asdict().items():
        if value <= 0:
            out.append(Violation('cost_params', name, f'{value} must be positive'))

    # R_k must grow with power
    if costs.truck_speed_mph > 0 and all(s.added_charge_minutes > 0 for s in instance.chargers):
        by_power = sorted(instance.chargers, key=lambda s: (s.power_kw, s.id))
        rates = [(s.added_range_miles / costs.truck_speed_mph * 60.0) / s.added_charge_minutes for s in by_power]
        for (lo, hi), (r_lo, r_hi) in zip(zip(by_power, by_power[1:]), zip(rates, rates[1:])):
            if not r_hi > r_lo:
                out.append(Violation('charger_rate_order', f'charger={hi.id}', f'rate {r_hi:.6g} <= {r_lo:.6g} of charger {lo.id}'))

    for facility in instance.facilities:
        if facility.cost_per_day < 0:
            out.append(Violation('facility_cost', f'facility={facility.id}', 'cost_per_day must be non-negative'))

    if instance.battery_cap_min <= 0:
        out.append(Violation('nonpositive_battery', 'battery_cap_min', f'{instance.battery_cap_min}'))
    if instance.max_shift_min <= 0:
        out.append(Violation('nonpositive_shift', 'max_shift_min', f'{instance.max_shift_min}'))
    if instance.time_step_min <= 0:
        out.append(Violation('nonpositive_time_step', 'time_step_min', f'{instance.time_step_min}'))
    if not (0 < instance.epsilon_min < instance.time_step_min):
        out.append(Violation('epsilon_range', 'epsilon_min', f'{instance.epsilon_min} not in (0, {instance.time_step_min})'))

    seen: Dict[str, int] = {}
    for route in instance.routes:
        where = f'route={route.id}'
        if not route.stops:
            out.append(Violation('empty_route', where, 'route has no customers'))
        if route.final_battery_min > route.initial_battery_min:
            out.append(Violation('battery_order', where, f'final {route.final_battery_min} > initial {route.initial_battery_min}'))
        if route.final_battery_min < 0 or route.initial_battery_min > instance.battery_cap_min:
            out.append(Violation('battery_range', where, 'battery levels must lie in [0, battery_cap_min]'))

        local = set()
        for stop in route.stops:
            if stop.service_min < 0:
                out.append(Violation('negative_service', f'{where} stop={stop.id}', f'{stop.service_min}'))
            if stop.id in local:
                out.append(Violation('duplicate_stop', f'{where} stop={stop.id}', 'stop visited twice'))
            elif stop.id in seen:
                out.append(Violation('shared_stop', f'{where} stop={stop.id}', f'also on route {seen[stop.id]}'))
            local.add(stop.id)
            seen.setdefault(stop.id, route.id)

    for a, row in (instance.travel_overrides or {}).items():
        for b, minutes in row.items():
            if minutes < 0:
                out.append(Violation('travel_override', f'{a}->{b}', f'{minutes} < 0'))

    return out

def ensure_valid(instance: Instance) -> Instance:
    violations = validate_instance(instance)
    if violations:
        codes = ', '.join(sorted({v.code for v in violations}))
        for v in violations:
            logger.debug('%s at %s: %s', v.code, v.where, v.detail)
        raise ValidationError(f'instance violates {len(violations)} invariant(s): {codes}', violations)
    logger.debug('instance valid: %d route(s), %d facility(ies), %d charger type(s)', len(instance.routes), len(instance.facilities), len(instance.chargers))
    return instance

def instance_to_dict(instance: Instance) -> Dict[str, Any]:
    data = {
        'battery_cap_min': instance.battery_cap_min,
        'max_shift_min': instance.max_shift_min,
        'time_step_min': instance.time_step_min,
        'epsilon_min': instance.epsilon_min,
        'costs': instance.costs._asdict(),
        'chargers': [c._asdict() for c in instance.chargers],
        'facilities': [f._asdict() for f in instance.facilities],
        'routes': [{
            'id': r.id,
            'depot': list(r.depot),
            'initial_battery_min': r.initial_battery_min,
            'final_battery_min': r.final_battery_min,
            'stops': [s._asdict() for s in r.stops]} for r in instance.routes],}
    if instance.travel_overrides:
        data['travel_overrides'] = instance.travel_overrides
    return data

def instance_from_dict(data: Dict[str, Any]) -> Instance:
    """
    Builds an `Instance` from its JSON form.

    Missing scalar fields fall back to the reference defaults. Missing charger lifespans
    fall back to `costs.charger_lifespan_days`.

    Raises:
        InputError: If a required block is missing or a value has the wrong type.
    """
    try:
        costs = CostParams(**{k: float(v) for k, v in data.get('costs', {}).items()})
        chargers = tuple(
            ChargerSpec(
                id=int(c['id']),
                name=str(c.get('name', f"type-{c['id']}")),
                power_kw=float(c['power_kw']),
                added_range_miles=float(c['added_range_miles']),
                added_charge_minutes=float(c['added_charge_minutes']),
                purchase_cost_usd=float(c['purchase_cost_usd']),
                lifespan_days=float(c.get('lifespan_days', costs.charger_lifespan_days)))
            for c in data['chargers'])
        facilities = tuple(
            Facility(int(f['id']), float(f['x']), float(f['y']), float(f.get('cost_per_day', costs.facility_cost_per_day)))
            for f in data['facilities'])
        routes = tuple(
            Route(
                id=int(r['id']),
                depot=(float(r['depot'][0]), float(r['depot'][1])),
                stops=tuple(Stop(str(s['id']), float(s['x']), float(s['y']), float(s.get('service_min', g.SERVICE_MIN))) for s in r['stops']),
                initial_battery_min=float(r.get('initial_battery_min', g.INITIAL_BATTERY_MIN)),
                final_battery_min=float(r.get('final_battery_min', g.FINAL_BATTERY_MIN)))
            for r in data['routes'])
        overrides = data.get('travel_overrides')
        if overrides is not None:
            overrides = {str(a): {str(b): float(m) for b, m in row.items()} for a, row in overrides.items()}
        return Instance(
            routes=routes,
            facilities=facilities,
            chargers=chargers,
            costs=costs,
            battery_cap_min=float(data.get('battery_cap_min', g.BATTERY_CAP_MIN)),
            max_shift_min=float(data.get('max_shift_min', g.MAX_SHIFT_MIN)),
            time_step_min=float(data.get('time_step_min', g.TIME_STEP_MIN)),
            epsilon_min=float(data.get('epsilon_min', g.EPSILON_MIN)),
            travel_overrides=overrides)
    except (KeyError, TypeError, ValueError, AttributeError, IndexError) as e:
        raise InputError(f'malformed instance: {e!r}') from e

def load_instance(path: Union[str, Path], validate: bool = True) -> Instance:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
    except FileNotFoundError as e:
        raise InputError(f'instance file not found: {path}') from e
    except json.JSONDecodeError as e:
        raise InputError(f'malformed instance JSON in {path}: {e}') from e
    if not isinstance(data, dict):
        raise InputError(f'instance JSON in {path} must be an object')
    instance = instance_from_dict(data)
    return ensure_valid(instance) if validate else instance

def save_instance(instance: Instance, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(json.dumps(instance_to_dict(instance), indent=2, sort_keys=True), encoding='utf-8')
    return path

def instance_hash(instance: Instance) -> str:
    canonical = json.dumps(instance_to_dict(instance), sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()

def with_costs(instance: Instance, **changes: float) -> Instance:
    return instance._replace(costs=instance.costs._replace(**changes))

def with_chargers(instance: Instance, cost_factor: float) -> Instance:
    chargers = tuple(c._replace(purchase_cost_usd=c.purchase_cost_usd * cost_factor) for c in instance.chargers)
    return instance._replace(chargers=chargers)

def with_battery(instance: Instance, battery_cap_min: float) -> Instance:
    """Rescales B̄ and every route's initial and final battery by the same factor."""
    factor = battery_cap_min / instance.battery_cap_min
    routes = tuple(
        r._replace(initial_battery_min=r.initial_battery_min * factor, final_battery_min=r.final_battery_min * factor)
        for r in instance.routes)
    return instance._replace(battery_cap_min=battery_cap_min, routes=routes)

def with_time_step(instance: Instance, time_step_min: float) -> Instance:
    epsilon = min(instance.epsilon_min, time_step_min / 2.0)
    return instance._replace(time_step_min=time_step_min, epsilon_min=epsilon)
