from __future__ import annotations

import pytz
import sqlite3
import datetime as dt

from typing import Callable, Union, NamedTuple, Dict, Tuple, Optional, Any
from collections import namedtuple

import numpy as np

from . import globals as g


records = [
    'Stop', 'Route', 'Facility', 'ChargerSpec', 'CostParams', 'Instance', 'ModelParams',
    'Violation', 'CutSolution', 'Cluster', 'RouteLayout', 'ClusterInstance',
    'Deployment', 'RechargeEvent', 'Recharges', 'RouteTimeline', 'Schedule', 'CostBreakdown',
    'Solution', 'Evaluation', 'GaConfig', 'GaResult', 'ExactResult', 'LpRow', 'MilpArtifact',
    'ReplayResult', 'SweepSpec', 'Limits']

rows = ['Run', 'TraceRow', 'SweepRow', 'run_events']

__all__ = records + rows + [
    'Gene', 'RechargePlan', 'Key', 'Pool', 'SQLite3ConnectionGenerator', 'DatabaseRow']

# A gene is None (no detour) or (facility index, charger index)
Gene = Optional[Tuple[int, int]]
RechargePlan = Tuple[Gene, ...]

# (route index, cluster position); positions 1..n are clusters, 0 and n+1 the depot
Key = Tuple[int, int]
Pool = Tuple[int, int]


class Stop(NamedTuple):
    id: str
    x: float
    y: float
    service_min: float = g.SERVICE_MIN


class Route(NamedTuple):
    id: int
    depot: Tuple[float, float]
    stops: Tuple[Stop, ...]
    initial_battery_min: float = g.INITIAL_BATTERY_MIN
    final_battery_min: float = g.FINAL_BATTERY_MIN


class Facility(NamedTuple):
    id: int
    x: float
    y: float
    cost_per_day: float = g.FACILITY_COST_PER_DAY


class ChargerSpec(NamedTuple):
    id: int
    name: str
    power_kw: float
    added_range_miles: float
    added_charge_minutes: float
    purchase_cost_usd: float
    lifespan_days: float = g.CHARGER_LIFESPAN_DAYS


class CostParams(NamedTuple):
    facility_cost_per_day: float = g.FACILITY_COST_PER_DAY
    energy_price_usd_per_kwh: float = g.ENERGY_PRICE_USD_PER_KWH
    vot_usd_per_mile: float = g.VOT_USD_PER_MILE
    truck_speed_mph: float = g.TRUCK_SPEED_MPH
    charger_lifespan_days: float = g.CHARGER_LIFESPAN_DAYS
    facility_lifespan_days: float = g.FACILITY_LIFESPAN_DAYS


class Instance(NamedTuple):
    routes: Tuple[Route, ...]
    facilities: Tuple[Facility, ...]
    chargers: Tuple[ChargerSpec, ...]
    costs: CostParams = CostParams()
    battery_cap_min: float = g.BATTERY_CAP_MIN
    max_shift_min: float = g.MAX_SHIFT_MIN
    time_step_min: float = g.TIME_STEP_MIN
    epsilon_min: float = g.EPSILON_MIN
    # location id -> location id -> minutes, replaces the Manhattan estimate
    travel_overrides: Optional[Dict[str, Dict[str, float]]] = None


class ModelParams(NamedTuple):
    recharge_rate: Tuple[float, ...]        # R_k, driving-minutes per charging-minute
    charger_cost_per_day: Tuple[float, ...] # C_k^nu
    energy_cost_per_min: Tuple[float, ...]  # C_k^xi per charging-minute
    vot_per_min: float                      # C^rho per minute


class Violation(NamedTuple):
    code: str
    where: str = ''
    detail: str = ''
    severity: str = 'error'


class CutSolution(NamedTuple):
    route: int
    cut_positions: Tuple[int, ...]  # 0-based stop index after which a cut is placed
    objective: float
    n_stops: int


class Cluster(NamedTuple):
    route: int
    position: int                # 1-based position in the route's cluster sequence
    members: Tuple[int, ...]     # 0-based stop indices
    internal_travel_min: float   # T^gamma
    internal_service_min: float  # sum of member T^kappa
    entry: int
    exit: int


class RouteLayout(NamedTuple):
    """
    Cluster-level travel data of one route.

    Positions run from 0 (depot start) through 1..n (clusters) to n+1 (depot end).

    Attributes:
        leg_min: (n+1,) travel from the exit of position i to the entry of position i+1.
        service_min: (n+2,) T^kappa per position, zero at the depot.
        internal_min: (n+2,) T^gamma per position, zero at the depot.
        out_min: (n+2, F) travel from the exit of position i to each facility.
        back_min: (n+2, F) travel from each facility to the entry of position i+1;
            the last row holds the return to the depot used by the depot branch.
        detour_min: (n+1, F) T^delta, the extra driving of a detour after position i.
    """
    route: int
    clusters: Tuple[Cluster, ...]
    leg_min: np.ndarray
    service_min: np.ndarray
    internal_min: np.ndarray
    out_min: np.ndarray
    back_min: np.ndarray
    detour_min: np.ndarray


class ClusterInstance(NamedTuple):
    instance: Instance
    params: ModelParams
    layouts: Tuple[RouteLayout, ...]
    keys: Tuple[Key, ...]
    facility_sets: Dict[Key, Tuple[int, ...]]         # F_cir
    windows: Dict[Key, Tuple[float, float]]           # real-valued time window per cluster
    time_sets: Dict[Key, Tuple[int, ...]]             # T_cirf (identical for every f in F_cir)
    horizon: int                                      # last time step index
    big_m: float
    intra_cap_min: float


class Deployment(NamedTuple):
    open_flags: Tuple[int, ...]                  # y_f
    charger_counts: Tuple[Tuple[int, ...], ...]  # z_fk


class RechargeEvent(NamedTuple):
    route: int
    position: int
    facility: int
    charger: int
    arrival: float        # d + out leg, the FCFS queue key
    before_charge: float  # b'
    recharge: float       # u
    wait: float           # w
    start: float          # s
    end: float            # e
    steps: Tuple[int, ...]


class Recharges(NamedTuple):
    durations: Dict[Key, float]            # u per visiting cluster
    before_charge: Dict[Key, float]        # b' per visiting cluster
    batteries: Tuple[Tuple[float, ...], ...]
    visits: Dict[Pool, Tuple[Key, ...]]    # L_fk in route order
    issues: Tuple[Violation, ...] = ()


class RouteTimeline(NamedTuple):
    route: int
    departures: Tuple[float, ...]  # d per position; the last entry is the depot return
    batteries: Tuple[float, ...]   # b on arrival per position


class Schedule(NamedTuple):
    timelines: Tuple[RouteTimeline, ...]
    events: Tuple[RechargeEvent, ...]
    converged: bool = True
    issues: Tuple[Violation, ...] = ()


class CostBreakdown(NamedTuple):
    detour_vot: float = 0.0
    wait_vot: float = 0.0
    recharge_vot: float = 0.0
    energy: float = 0.0
    facility: float = 0.0
    charger: float = 0.0
    total: float = 0.0

    @property
    def vot(self) -> float:
        return self.detour_vot + self.wait_vot + self.recharge_vot


class Solution(NamedTuple):
    plan: RechargePlan
    deployment: Deployment
    schedule: Schedule
    cost: CostBreakdown


class Evaluation(NamedTuple):
    solution: Solution
    feasible: bool
    violations: Tuple[Violation, ...] = ()

    @property
    def errors(self) -> Tuple[Violation, ...]:
        return tuple(v for v in self.violations if v.severity == 'error')

    def fitness(self) -> Tuple[int, float]:
        if self.feasible:
            return (0, self.solution.cost.total)
        return (1, float(len(self.errors)))


class GaConfig(NamedTuple):
    pop_size: int = 50
    iterations: int = 200
    parents: int = 10
    mutate_fraction: float = 0.2
    no_charge_prob: float = 0.5
    step_lower: int = 1
    step_upper: Optional[int] = None   # None means the number of used pools
    seed: int = 0
    time_limit_s: Optional[float] = None
    temperature: float = 1.0
    charger_weights: Optional[Tuple[float, ...]] = None
    threads: int = 1


class GaResult(NamedTuple):
    best: Evaluation
    trace: Tuple['TraceRow', ...]
    generations: int
    evaluations: int
    stopped: str = 'iterations'


class ExactResult(NamedTuple):
    best: Optional[Evaluation]
    plans: int        # plans whose charger box was searched
    deployments: int  # (plan, z) pairs evaluated
    space: int        # size of the searched space


class LpRow(NamedTuple):
    name: str
    terms: Tuple[Tuple[str, float], ...]
    sense: str  # '<=', '>=' or '=='
    rhs: float


class MilpArtifact(NamedTuple):
    problem: Any                                   # pulp.LpProblem
    families: Dict[str, Tuple[str, ...]]           # symbol -> variable names
    bounds: Dict[str, Tuple[Optional[float], Optional[float], str]]
    rows: Tuple[LpRow, ...]
    objective: Tuple[Tuple[str, float], ...]
    big_m: float
    epsilon: float


class ReplayResult(NamedTuple):
    evaluation: Evaluation
    lp_objective: float
    row_violations: Tuple[str, ...] = ()


class SweepSpec(NamedTuple):
    axis: str
    levels: Tuple[float, ...]
    replications: int = 5
    method: str = 'ga'
    instance: Optional[Instance] = None
    seed: int = 0
    baseline: Optional[float] = None
    ga: GaConfig = GaConfig(pop_size=20, iterations=30, parents=4, time_limit_s=30.0)
    intra_cap_frac: float = g.INTRA_CAP_FRAC
    threads: int = 1


class Limits(NamedTuple):
    max_space: int = 10**7
    max_lp_variables: int = 200_000
    threads: int = 1


# Rows of the run ledger; the class name is the table name
Run = namedtuple('runs', ['run_id', 'command', 'config', 'seed', 'version', 'instance_hash', 'wall_time_s', 'exit_status'])
TraceRow = namedtuple('convergence', ['run_id', 'generation', 'best', 'mean', 'feasible_share'])
SweepRow = namedtuple('sweep_results', [
    'run_id', 'axis', 'level', 'replication', 'feasible', 'total', 'detour_vot', 'wait_vot',
    'recharge_vot', 'energy', 'facility', 'charger', 'chargers_installed', 'normalized_cost'])

class run_events(NamedTuple):
    timestamp: str
    run_id: int = 0
    process: str = ""
    success: int = 1
    message: str = ""

    @staticmethod
    def default_timestamp():
        return dt.datetime.now(pytz.timezone(g.TIMEZONE)).isoformat()

DatabaseRow = Union[Run, TraceRow, SweepRow, run_events, None]

SQLite3ConnectionGenerator = Callable[[], 'sqlite3.Connection']
