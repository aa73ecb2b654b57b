import numpy as np
import pytest

from evselca.errors import InputError
from evselca.evaluator import (
    build_schedule, check_feasibility, compute_open_flags, compute_recharge_durations,
    counts_from_pools, empty_counts, energy_deficit, evaluate_plan, has_fcfs_ties, objective,
    occupancy_table, occupied_steps, pool_visits, pool_waits)
from evselca.ga import initialize
from evselca.harness import gen_instance
from evselca.transform import build_cluster_instance
from evselca.types import Deployment, GaConfig

from builders import FAST_TOTAL, SLOW_TOTAL, VOT_PER_MIN

SLOW_AT_DEPOT = ((0, 0),)
ONE_SLOW = ((1, 0, 0), (0, 0), (0, 0))


def codes(violations):
    return {v.code for v in violations}

def error_codes(violations):
    return {v.code for v in violations if v.severity == 'error'}

def test_open_flags():
    assert compute_open_flags([[0, 0], [2, 0]]) == (0, 1)

def test_counts_from_pools(ci):
    assert counts_from_pools(ci, {(0, 1): 2}) == ((0, 2), (0, 0), (0, 0))
    assert empty_counts(ci) == ((0, 0), (0, 0), (0, 0))

def test_recharge_covers_the_deficit(ci):
    recharges = compute_recharge_durations(ci, SLOW_AT_DEPOT)
    assert recharges.durations == {(0, 1): pytest.approx(44.0)}
    assert recharges.before_charge == {(0, 1): pytest.approx(116.0)}
    assert recharges.batteries == ((196.0, 176.0, 160.0),)
    assert recharges.visits == {(0, 0): ((0, 1),)}
    assert recharges.issues == ()

def test_fast_charger_halves_the_duration(ci):
    assert compute_recharge_durations(ci, ((0, 1),)).durations[(0, 1)] == pytest.approx(22.0)

def test_rounded_deficit(ci):
    assert energy_deficit(ci, 0, SLOW_AT_DEPOT) == pytest.approx(44.0)
    assert energy_deficit(ci, 0, SLOW_AT_DEPOT, rounded=True) == 45.0
    recharges = compute_recharge_durations(ci, SLOW_AT_DEPOT, rounded_deficit=True)
    assert recharges.durations[(0, 1)] == 45.0

def test_no_charge_leaves_a_deficit(ci):
    recharges = compute_recharge_durations(ci, (None,))
    assert 'battery_final' in codes(recharges.issues)

def test_detour_deficit_beyond_one_stop(ci):
    # 20 extra minutes of driving raise the deficit to 64, the battery only takes 54
    recharges = compute_recharge_durations(ci, ((1, 0),))
    assert recharges.durations[(0, 1)] == pytest.approx(54.0)
    assert 'battery_final' in codes(recharges.issues)

def test_plan_of_the_wrong_length(ci):
    with pytest.raises(InputError):
        compute_recharge_durations(ci, (None, None))

def test_schedule_times(ci):
    schedule = build_schedule(ci, SLOW_AT_DEPOT, ONE_SLOW)
    event = schedule.events[0]
    assert (event.arrival, event.wait, event.start, event.end) == pytest.approx((90.0, 0.0, 90.0, 134.0))
    assert event.steps == (6, 7, 8)
    assert schedule.timelines[0].departures == pytest.approx((0.0, 50.0, 134.0))
    assert schedule.converged

def test_occupied_steps(ci):
    assert occupied_steps(ci, 30.0, 75.0) == (2, 3, 4, 5)
    assert occupied_steps(ci, 30.0, 30.0) == (2,)
    assert occupied_steps(ci, 830.0, 900.0) == (55, 56)

def test_cost_of_one_slow_charger(ci):
    evaluation = evaluate_plan(ci, SLOW_AT_DEPOT, ONE_SLOW)
    cost = evaluation.solution.cost
    assert evaluation.feasible
    assert cost.total == pytest.approx(SLOW_TOTAL)
    assert cost.recharge_vot == pytest.approx(44 * VOT_PER_MIN)
    assert cost.energy == pytest.approx(44 * 0.43)
    assert (cost.facility, cost.charger, cost.detour_vot, cost.wait_vot) == pytest.approx((35.0, 10.0, 0.0, 0.0))
    assert cost.total == pytest.approx(cost.vot + cost.energy + cost.facility + cost.charger)

def test_cost_of_one_fast_charger(ci):
    evaluation = evaluate_plan(ci, ((0, 1),), ((0, 1), (0, 0), (0, 0)))
    assert evaluation.feasible
    assert evaluation.solution.cost.total == pytest.approx(FAST_TOTAL)

def test_objective_of_an_idle_charger(ci):
    schedule = build_schedule(ci, (None,), empty_counts(ci))
    deployment = Deployment((1, 0, 0), ((1, 0), (0, 0), (0, 0)))
    assert objective(ci, (None,), deployment, schedule).total == pytest.approx(45.0)

def test_missing_charger_is_infeasible(ci):
    evaluation = evaluate_plan(ci, SLOW_AT_DEPOT, empty_counts(ci))
    assert not evaluation.feasible
    assert 'charger_capacity' in error_codes(evaluation.violations)

def test_shared_charger_queues_first_come_first_served(two_route_ci):
    plan = ((0, 0), (0, 0))
    evaluation = evaluate_plan(two_route_ci, plan, ((1, 0), (0, 0), (0, 0)))
    first, second = evaluation.solution.schedule.events
    assert evaluation.feasible
    assert (first.wait, second.wait) == pytest.approx((0.0, 44.0))
    assert second.start == pytest.approx(first.end)
    assert evaluation.solution.cost.wait_vot == pytest.approx(44 * VOT_PER_MIN)
    assert pool_waits(evaluation.solution.schedule) == {(0, 0): pytest.approx(44.0)}
    assert has_fcfs_ties(evaluation.solution.schedule)

def test_priority_reorders_a_tie(two_route_ci):
    plan = ((0, 0), (0, 0))
    schedule = build_schedule(two_route_ci, plan, ((1, 0), (0, 0), (0, 0)), priority=(1, 0))
    first, second = schedule.events
    assert (first.wait, second.wait) == pytest.approx((44.0, 0.0))

def test_one_charger_per_visit_removes_waiting(two_route_ci):
    plan = ((0, 0), (0, 1))
    visits = pool_visits(two_route_ci, plan)
    evaluation = evaluate_plan(two_route_ci, plan, counts_from_pools(two_route_ci, visits))
    assert all(e.wait == 0 for e in evaluation.solution.schedule.events)

    full = evaluate_plan(two_route_ci, ((0, 0), (0, 0)), ((2, 0), (0, 0), (0, 0)))
    assert all(e.wait == 0 for e in full.solution.schedule.events)

def test_compute_chain_passes_the_checker(ci):
    evaluation = evaluate_plan(ci, SLOW_AT_DEPOT, ONE_SLOW)
    solution = evaluation.solution
    assert error_codes(check_feasibility(ci, solution.plan, solution.deployment, solution.schedule)) == set()

def _tampered(ci, event_changes=None, timeline_changes=None, deployment=None):
    solution = evaluate_plan(ci, SLOW_AT_DEPOT, ONE_SLOW).solution
    schedule = solution.schedule
    if event_changes:
        schedule = schedule._replace(events=(schedule.events[0]._replace(**event_changes),))
    if timeline_changes:
        schedule = schedule._replace(timelines=(schedule.timelines[0]._replace(**timeline_changes),))
    return error_codes(check_feasibility(ci, solution.plan, deployment or solution.deployment, schedule))

def test_checker_names_the_broken_constraint(ci):
    assert 'charge_start' in _tampered(ci, {'start': 95.0, 'end': 139.0, 'steps': (6, 7, 8, 9)})
    assert 'charge_end' in _tampered(ci, {'end': 150.0})
    assert 'battery_cap' in _tampered(ci, {'recharge': 100.0})
    assert 'battery_before_charge' in _tampered(ci, {'before_charge': 100.0})
    assert 'occupancy_definition' in _tampered(ci, {'steps': (6, 7)})
    assert 'battery_final' in _tampered(ci, timeline_changes={'batteries': (196.0, 176.0, 150.0)})
    assert 'operational_time' in _tampered(ci, timeline_changes={'departures': (0.0, 50.0, 900.0)})
    assert 'departure_time' in _tampered(ci, timeline_changes={'departures': (0.0, 40.0, 134.0)})
    assert 'chargers_need_open_facility' in _tampered(ci, deployment=Deployment((0, 0, 0), ONE_SLOW))

def test_overlapping_recharges_break_capacity(two_route_ci):
    plan = ((0, 0), (0, 0))
    solution = evaluate_plan(two_route_ci, plan, ((1, 0), (0, 0), (0, 0))).solution
    first, second = solution.schedule.events
    # both start on arrival as if there were two chargers
    jumped = second._replace(wait=0.0, start=90.0, end=134.0, steps=first.steps)
    timelines = (solution.schedule.timelines[0], solution.schedule.timelines[1]._replace(departures=(0.0, 50.0, 134.0)))
    schedule = solution.schedule._replace(events=(first, jumped), timelines=timelines)
    assert error_codes(check_feasibility(two_route_ci, plan, solution.deployment, schedule)) == {'charger_capacity'}

def test_queue_wait_cannot_turn_into_idle_time(two_route_ci):
    plan = ((0, 0), (0, 0))
    solution = evaluate_plan(two_route_ci, plan, ((1, 0), (0, 0), (0, 0))).solution
    first, queued = solution.schedule.events
    # leave 44 min later and arrive when the charger frees up
    idle = queued._replace(wait=0.0, arrival=queued.arrival + 44.0)
    departures = list(solution.schedule.timelines[1].departures)
    departures[1] += 44.0
    timelines = (solution.schedule.timelines[0], solution.schedule.timelines[1]._replace(departures=tuple(departures)))
    schedule = solution.schedule._replace(events=(first, idle), timelines=timelines)
    assert error_codes(check_feasibility(two_route_ci, plan, solution.deployment, schedule)) == {'departure_time'}
    assert objective(two_route_ci, plan, solution.deployment, schedule).wait_vot == 0.0

def test_facility_outside_the_feasible_set(ci):
    solution = evaluate_plan(ci, SLOW_AT_DEPOT, ONE_SLOW).solution
    assert 'facility_not_feasible' in error_codes(check_feasibility(ci, ((2, 0),), solution.deployment, solution.schedule))

def test_strict_occupancy_turns_idle_steps_into_errors(two_route_ci):
    # the queued recharge [134, 178] holds steps 8 to 11, 16 idle minutes
    plan = ((0, 0), (0, 0))
    lenient = evaluate_plan(two_route_ci, plan, ((1, 0), (0, 0), (0, 0)))
    strict = evaluate_plan(two_route_ci, plan, ((1, 0), (0, 0), (0, 0)), strict_occupancy=True)
    assert lenient.feasible and 'idle_occupancy' in codes(lenient.violations)
    assert not strict.feasible and 'idle_occupancy' in error_codes(strict.violations)

def _random_plans(n_plans, seed):
    rng = np.random.default_rng(seed)
    for i in range(n_plans):
        instance = gen_instance(3, 3, 3, extent=10.0, seed=seed * 100 + i % 5)
        ci = build_cluster_instance(instance)
        yield ci, initialize(ci, GaConfig(no_charge_prob=0.3), rng)

def test_one_charger_per_visit_never_queues():
    for ci, plan in _random_plans(40, 1):
        visits = pool_visits(ci, plan)
        schedule = build_schedule(ci, plan, counts_from_pools(ci, visits))
        assert all(e.wait == 0 for e in schedule.events)

def test_checker_accepts_every_clean_compute_chain():
    checked = 0
    for ci, plan in _random_plans(60, 2):
        evaluation = evaluate_plan(ci, plan, counts_from_pools(ci, pool_visits(ci, plan)))
        if evaluation.solution.schedule.issues:
            continue
        checked += 1
        assert evaluation.feasible, evaluation.errors
    assert checked > 0

def test_checker_catches_a_shifted_start():
    for ci, plan in _random_plans(20, 3):
        solution = evaluate_plan(ci, plan, counts_from_pools(ci, pool_visits(ci, plan))).solution
        if not solution.schedule.events:
            continue
        first = solution.schedule.events[0]
        late = first._replace(start=first.start + 1.0, end=first.end + 1.0)
        schedule = solution.schedule._replace(events=(late,) + solution.schedule.events[1:])
        assert 'charge_start' in error_codes(check_feasibility(ci, plan, solution.deployment, schedule))

def test_occupancy_table(two_route_ci):
    evaluation = evaluate_plan(two_route_ci, ((0, 0), (0, 0)), ((1, 0), (0, 0), (0, 0)))
    table = occupancy_table(two_route_ci, evaluation.solution.schedule)
    assert list(table.columns) == ['facility', 'charger', 'step', 'time_min', 'count']
    assert table.loc[table['step'] == 8, 'count'].tolist() == [2]
    assert table['step'].tolist() == [6, 7, 8, 9, 10, 11]
