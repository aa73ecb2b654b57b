import json
import math

import numpy as np
import pandas as pd
import pytest

from evselca import db
from evselca.domain import save_instance
from evselca.errors import InputError, ValidationError
from evselca.harness import (
    SWEEP_COLUMNS, apply_level, gap_table, gen_instance, load_sweep_spec, optimality_gap,
    run_sweep, validate_sweep, write_sweep_csv)
from evselca.types import GaConfig, SweepSpec

from builders import FAST_TOTAL, VOT_PER_MIN, make_instance

TINY_GA = GaConfig(pop_size=8, iterations=2, parents=3, time_limit_s=None)


def exact_sweep(axis, levels, **changes):
    return SweepSpec(**{'axis': axis, 'levels': levels, 'method': 'exact', 'instance': make_instance(), **changes})

def test_generated_instance_shape():
    instance = gen_instance(3, 4, 3, seed=11)
    assert len(instance.routes) == 3
    assert all(len(route.stops) == 4 for route in instance.routes)
    assert len(instance.facilities) == 3
    assert (instance.facilities[0].x, instance.facilities[0].y) == (0.0, 0.0)
    ids = [stop.id for route in instance.routes for stop in route.stops]
    assert len(ids) == len(set(ids))

def test_generator_is_seeded():
    assert gen_instance(2, 3, 2, seed=4) == gen_instance(2, 3, 2, seed=4)
    assert gen_instance(2, 3, 2, seed=4) != gen_instance(2, 3, 2, seed=5)

def test_stops_follow_the_angle_around_the_depot():
    for route in gen_instance(2, 6, 1, seed=3).routes:
        angles = [math.atan2(s.y, s.x) for s in route.stops]
        assert angles == sorted(angles)

def test_generator_rejects_bad_counts():
    with pytest.raises(ValidationError):
        gen_instance(1, 0, 2)
    with pytest.raises(InputError):
        gen_instance(0, 3, 2)

def test_apply_level_per_axis():
    instance = make_instance()
    assert [c.purchase_cost_usd for c in apply_level(instance, 'charger_cost_pct', -80).chargers] == pytest.approx([7_300.0, 14_600.0])
    assert apply_level(instance, 'energy_cost_pct', 100).costs.energy_price_usd_per_kwh == pytest.approx(0.86)
    assert apply_level(instance, 'vot_pct', 50).costs.vot_usd_per_mile == pytest.approx(1.377 * 1.5)
    assert apply_level(instance, 'range_miles', 50).battery_cap_min == pytest.approx(100.0)
    assert apply_level(instance, 't_delta_min', 5).time_step_min == 5.0

def test_apply_level_errors():
    instance = make_instance()
    with pytest.raises(InputError):
        apply_level(instance, 'fleet_size', 3)
    with pytest.raises(ValidationError):
        apply_level(instance, 'energy_cost_pct', -100)
    with pytest.raises(InputError):
        apply_level(instance, 'range_miles', 0)

def test_baseline_defaults():
    assert validate_sweep(exact_sweep('vot_pct', (50.0, 0.0))).baseline == 0.0
    assert validate_sweep(exact_sweep('range_miles', (90.0, 110.0))).baseline == 90.0
    assert validate_sweep(exact_sweep('vot_pct', (25.0, 50.0))).baseline == 25.0
    with pytest.raises(InputError):
        validate_sweep(exact_sweep('vot_pct', (0.0, 25.0), baseline=10.0))

def test_sweep_validation_fails_before_solving():
    with pytest.raises(InputError):
        validate_sweep(exact_sweep('vot_pct', ()))
    with pytest.raises(InputError):
        validate_sweep(exact_sweep('vot_pct', (0.0,), method='simplex'))
    with pytest.raises(InputError):
        validate_sweep(SweepSpec(axis='vot_pct', levels=(0.0,)))
    with pytest.raises(ValidationError):
        validate_sweep(exact_sweep('energy_cost_pct', (0.0, -100.0)))

def test_cheaper_chargers_lower_the_normalized_cost():
    df = run_sweep(exact_sweep('charger_cost_pct', (0.0, -80.0)))
    assert set(SWEEP_COLUMNS) <= set(df.columns)
    assert {'chargers_slow', 'chargers_fast', 'level_best', 'level_mean', 'level_std', 'normalized_cost'} <= set(df.columns)
    assert len(df) == 2
    base, cheap = df.iloc[0], df.iloc[1]
    assert base.total == pytest.approx(FAST_TOTAL)
    assert base.normalized_cost == 100.0
    # 4 USD/day for the fast charger instead of 20
    cheap_total = 39.0 + 22 * (VOT_PER_MIN + 0.86)
    assert cheap.total == pytest.approx(cheap_total)
    assert cheap.normalized_cost == pytest.approx(100.0 * cheap_total / FAST_TOTAL)
    assert cheap.normalized_cost < 100.0
    assert (cheap.chargers_fast, cheap.chargers_slow, cheap.chargers_installed) == (1, 0, 1)

def test_infeasible_level_is_recorded():
    df = run_sweep(exact_sweep('range_miles', (100.0, 20.0)))
    assert df['feasible'].tolist() == [True, False]
    assert df['status'].tolist() == ['ok', 'infeasible']
    assert math.isnan(df.iloc[1].total)
    assert math.isnan(df.iloc[1].normalized_cost)
    assert df.iloc[0].normalized_cost == 100.0

def test_charger_cost_never_raises_the_total():
    df = run_sweep(exact_sweep('charger_cost_pct', (0.0, -20.0, -40.0, -60.0, -80.0)))
    totals = df['total'].tolist()
    assert all(later <= earlier + 1e-9 for earlier, later in zip(totals, totals[1:]))
    assert df['normalized_cost'].iloc[-1] <= 90.0

def test_time_value_pushes_toward_fast_chargers():
    # at a fifth of the time value the slow charger at the depot is cheaper
    df = run_sweep(exact_sweep('vot_pct', (-80.0, 0.0, 100.0)))
    assert df['chargers_fast'].tolist() == [0, 1, 1]
    assert df['chargers_slow'].tolist() == [1, 0, 0]
    assert df.iloc[0].total == pytest.approx(45.0 + 44 * (0.2 * VOT_PER_MIN + 0.43))

def test_time_step_does_not_change_the_cost():
    df = run_sweep(exact_sweep('t_delta_min', (60.0, 1.0)))
    assert df['total'].tolist() == pytest.approx([FAST_TOTAL, FAST_TOTAL])
    assert df['normalized_cost'].tolist() == pytest.approx([100.0, 100.0])

def test_replication_statistics():
    spec = SweepSpec(axis='vot_pct', levels=(0.0,), replications=3, instance=make_instance(2), ga=TINY_GA)
    df = run_sweep(spec)
    assert df['replication'].tolist() == [0, 1, 2]
    assert df['seed'].tolist() == [0, 1, 2]
    totals = df['total'].dropna()
    assert df.iloc[0].level_best == pytest.approx(totals.min())
    assert df.iloc[0].level_mean == pytest.approx(totals.mean())
    assert df.iloc[0].level_std == pytest.approx(float(np.std(totals)))

def test_sweep_is_reproducible_across_threads():
    spec = SweepSpec(axis='vot_pct', levels=(0.0, 50.0), replications=2, instance=make_instance(2), ga=TINY_GA)
    serial = run_sweep(spec)
    parallel = run_sweep(spec._replace(threads=2))
    pd.testing.assert_frame_equal(serial, parallel)

def test_sweep_csv(tmp_path):
    df = run_sweep(exact_sweep('charger_cost_pct', (0.0, -80.0)))
    path = write_sweep_csv(df, tmp_path / 'nested' / 'results.csv')
    loaded = pd.read_csv(path)
    assert list(loaded.columns) == list(df.columns)
    assert loaded['normalized_cost'].iloc[0] == 100.0

def test_sweep_writes_the_ledger(tmp_path):
    get_connection = db.initialize_database('ledger.db', tmp_path)
    spec = SweepSpec(axis='vot_pct', levels=(0.0, 50.0), replications=1, instance=make_instance(), ga=TINY_GA)
    run_sweep(spec, get_connection, run_id=7)
    rows = db.read_table(get_connection, 'sweep_results', run_id=7)
    assert rows['level'].tolist() == [0.0, 50.0]
    assert rows['normalized_cost'].iloc[0] == 100.0
    trace = db.read_table(get_connection, 'convergence', run_id=7)
    assert len(trace) == 2 * (TINY_GA.iterations + 1)

def test_failed_level_is_logged(tmp_path):
    get_connection = db.initialize_database('ledger.db', tmp_path)
    # an 8 mile battery cannot hold the 20 min leg inside one cluster
    run_sweep(exact_sweep('range_miles', (100.0, 8.0)), get_connection, run_id=3)
    events = db.read_table(get_connection, 'run_events', run_id=3)
    assert len(events) == 1
    assert events['success'].iloc[0] == 0
    assert 'ClusteringError' in events['message'].iloc[0]
    rows = db.read_table(get_connection, 'sweep_results', run_id=3)
    assert rows['feasible'].tolist() == [1, 0]

def test_optimality_gap():
    assert optimality_gap(110.0, 100.0) == pytest.approx(0.1)
    assert optimality_gap(100.0, 100.0) == 0.0
    assert optimality_gap(0.0, 0.0) == 0.0
    assert optimality_gap(5.0, 0.0) == math.inf

def test_gap_table_on_the_fixture():
    table = gap_table([make_instance()], GaConfig(pop_size=20, iterations=2, parents=4), replications=1)
    assert list(table.columns) == ['instance', 'ga_best', 'oracle', 'gap_pct']
    assert table.iloc[0].oracle == pytest.approx(FAST_TOTAL)
    assert table.iloc[0].gap_pct == pytest.approx(0.0)

@pytest.mark.slow
def test_ga_stays_above_the_oracle_on_generated_instances():
    instances = [gen_instance(2, 2, 3, extent=10.0, seed=seed) for seed in range(5)]
    table = gap_table(instances, GaConfig(pop_size=20, iterations=10, parents=5), replications=2)
    gaps = table['gap_pct'].dropna()
    assert (gaps >= -1e-6).all()

def test_load_sweep_spec(tmp_path, instance):
    save_instance(instance, tmp_path / 'instance.json')
    path = tmp_path / 'sweep.json'
    path.write_text(json.dumps({
        'axis': 'vot_pct', 'levels': [0, 50], 'method': 'exact',
        'instance': 'instance.json', 'ga': {'pop_size': 10}}), encoding='utf-8')
    spec = load_sweep_spec(path)
    assert spec.levels == (0.0, 50.0)
    assert spec.method == 'exact'
    assert spec.instance == instance
    assert spec.ga.pop_size == 10
    assert spec.ga.iterations == SweepSpec(axis='', levels=()).ga.iterations

def test_load_sweep_spec_errors(tmp_path):
    with pytest.raises(InputError):
        load_sweep_spec(tmp_path / 'missing.json')
    broken = tmp_path / 'broken.json'
    broken.write_text('{"axis": ', encoding='utf-8')
    with pytest.raises(InputError):
        load_sweep_spec(broken)
    no_axis = tmp_path / 'no_axis.json'
    no_axis.write_text(json.dumps({'levels': [0]}), encoding='utf-8')
    with pytest.raises(InputError):
        load_sweep_spec(no_axis)
    unknown = tmp_path / 'unknown.json'
    unknown.write_text(json.dumps({'axis': 'vot_pct', 'levels': [0], 'ga': {'speed': 3}}), encoding='utf-8')
    with pytest.raises(InputError):
        load_sweep_spec(unknown)
