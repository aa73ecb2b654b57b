import numpy as np
import pytest

from evselca.errors import InputError
from evselca.exact import exact_solve
from evselca.ga import (
    crossover, facility_order, ga_solve, initialize, mutate, plan_rng, refine_charger_counts,
    roulette, validate_config)
from evselca.types import GaConfig

from builders import FAST_TOTAL

SMALL = GaConfig(pop_size=20, iterations=3, parents=4, seed=0)


def test_roulette_follows_the_weights():
    rng = np.random.default_rng(0)
    assert {roulette([0.0, 1.0, 0.0], rng) for _ in range(50)} == {1}
    draws = [roulette([0.0, 0.0], rng) for _ in range(50)]
    assert set(draws) <= {0, 1}

def test_roulette_prefers_heavy_weights():
    rng = np.random.default_rng(1)
    draws = [roulette([1.0, 9.0], rng) for _ in range(2000)]
    assert 0.85 < np.mean(draws) < 0.95

def test_crossover_mixes_parent_genes():
    rng = np.random.default_rng(2)
    a, b = ((0, 0), None, (1, 1), None), (None, (0, 1), None, (1, 0))
    child = crossover(a, b, rng)
    assert all(c in (x, y) for c, x, y in zip(child, a, b))
    assert crossover(a, a, rng) == a
    with pytest.raises(ValueError):
        crossover(a, b[:2], rng)

def test_facilities_ranked_by_detour(ci):
    assert facility_order(ci, (0, 1)) == (0, 1)

def test_mutation_cycles_facilities_and_chargers(ci):
    config = GaConfig(mutate_fraction=1.0)
    rng = np.random.default_rng(0)
    assert mutate(ci, (None,), config, rng) == ((0, 0),)
    assert mutate(ci, ((0, 0),), config, rng) == ((1, 1),)
    assert mutate(ci, ((1, 1),), config, rng) == ((0, 0),)
    # one gene and the default fraction: nothing to mutate
    assert mutate(ci, ((1, 1),), GaConfig(), rng) == ((1, 1),)

def test_initial_plan_charges_a_route_in_deficit(ci):
    config = GaConfig(no_charge_prob=1.0)
    rng = np.random.default_rng(4)
    for _ in range(10):
        plan = initialize(ci, config, rng)
        assert plan[0] is not None and plan[0][0] == 0

def test_config_errors_are_reported_together(ci):
    with pytest.raises(InputError) as info:
        validate_config(ci, GaConfig(pop_size=1, parents=1, mutate_fraction=2.0))
    message = str(info.value)
    assert 'pop_size' in message and 'parents' in message and 'mutate_fraction' in message
    with pytest.raises(InputError):
        validate_config(ci, GaConfig(charger_weights=(1.0,)))
    assert validate_config(ci, SMALL) is SMALL

def test_refinement_prefers_a_charger_per_route(two_route_ci):
    # one charger saves 10 USD/day but makes the second route wait 44 min
    plan = ((0, 0), (0, 0))
    best = refine_charger_counts(two_route_ci, plan, GaConfig(), plan_rng(0, plan))
    assert best.feasible
    assert best.solution.deployment.charger_counts[0] == (2, 0)
    assert all(e.wait == 0 for e in best.solution.schedule.events)

def test_refinement_without_detours(ci):
    evaluation = refine_charger_counts(ci, (None,), GaConfig(), np.random.default_rng(0))
    assert not evaluation.feasible
    assert evaluation.solution.deployment.charger_counts[0] == (0, 0)

def test_ga_finds_the_fast_charger(ci):
    result = ga_solve(ci, SMALL)
    assert result.best.feasible
    assert result.best.solution.plan == ((0, 1),)
    assert result.best.solution.cost.total == pytest.approx(FAST_TOTAL)
    assert result.stopped == 'iterations'
    assert [row.generation for row in result.trace] == [0, 1, 2, 3]

def test_best_never_gets_worse(two_route_ci):
    result = ga_solve(two_route_ci, GaConfig(pop_size=10, iterations=5, parents=3, seed=5))
    bests = [row.best for row in result.trace if row.best is not None]
    assert bests == sorted(bests, reverse=True)

def test_same_seed_same_run(two_route_ci):
    config = GaConfig(pop_size=10, iterations=4, parents=3, seed=9)
    first, second = ga_solve(two_route_ci, config), ga_solve(two_route_ci, config)
    assert first.best.solution == second.best.solution
    assert first.trace == second.trace

def test_threads_do_not_change_the_result(two_route_ci):
    config = GaConfig(pop_size=10, iterations=4, parents=3, seed=9)
    serial = ga_solve(two_route_ci, config)
    parallel = ga_solve(two_route_ci, config._replace(threads=2))
    assert serial.best.solution == parallel.best.solution
    assert serial.trace == parallel.trace

def test_generation_callback(ci):
    rows = []
    ga_solve(ci, SMALL._replace(iterations=2), on_generation=rows.append)
    assert [row.generation for row in rows] == [0, 1, 2]

def test_ga_never_beats_the_oracle(two_route_ci):
    oracle = exact_solve(two_route_ci).best.solution.cost.total
    result = ga_solve(two_route_ci, GaConfig(pop_size=12, iterations=5, parents=4, seed=3))
    assert result.best.feasible
    assert result.best.solution.cost.total >= oracle - 1e-6
