import json

import pandas as pd
import pytest

from evselca import db
from evselca.cli import DB_NAME, dispatch, main
from evselca.domain import instance_hash, load_instance, save_instance
from evselca.evaluator import evaluate_plan
from evselca.exact import lp_point
from evselca.harness import apply_level, gen_instance

from builders import FAST_TOTAL, SLOW_TOTAL, make_instance

ONE_SLOW = [[1, 0], [0, 0], [0, 0]]


def read_json(path):
    return json.loads(path.read_text(encoding='utf-8'))

def write_json(path, data):
    path.write_text(json.dumps(data), encoding='utf-8')
    return path

def test_gen_instance(tmp_path):
    out = tmp_path / 'out'
    status = dispatch(['gen-instance', '--routes', '2', '--stops', '3', '--facilities', '2', '--seed', '4', '--out-dir', str(out)])
    assert status == 0
    assert load_instance(out / 'instance.json') == gen_instance(2, 3, 2, seed=4)

    manifest = read_json(out / 'manifest.json')
    assert manifest['command'] == 'gen-instance'
    assert manifest['exit_status'] == 0
    assert manifest['seed'] == 4
    assert manifest['instance_hash'] == instance_hash(gen_instance(2, 3, 2, seed=4))

    get_connection = db.initialize_database(DB_NAME, out)
    runs = db.read_table(get_connection, 'runs')
    assert runs['command'].tolist() == ['gen-instance']
    assert runs['exit_status'].tolist() == [0]

def test_seed_from_the_environment(tmp_path, monkeypatch):
    monkeypatch.setenv('EVSELCA_SEED', '7')
    out = tmp_path / 'out'
    assert dispatch(['gen-instance', '--routes', '1', '--stops', '2', '--facilities', '2', '--out-dir', str(out), '--no-db']) == 0
    assert read_json(out / 'manifest.json')['seed'] == 7
    assert load_instance(out / 'instance.json') == gen_instance(1, 2, 2, seed=7)
    assert not (out / DB_NAME).exists()

def test_malformed_instance_writes_nothing(tmp_path):
    broken = tmp_path / 'broken.json'
    broken.write_text('{"routes": [', encoding='utf-8')
    out = tmp_path / 'out'
    assert dispatch(['solve', '--instance', str(broken), '--out-dir', str(out)]) == 2
    assert not out.exists()

def test_main_exits_with_the_status(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(['solve', '--instance', str(tmp_path / 'missing.json'), '--out-dir', str(tmp_path / 'out')])
    assert info.value.code == 2

def test_unknown_flag(instance_file):
    assert dispatch(['solve', '--instance', str(instance_file), '--colour', 'red']) == 2

def test_invalid_ga_config_is_bad_input(tmp_path, instance_file):
    out = tmp_path / 'out'
    assert dispatch(['solve', '--instance', str(instance_file), '--pop-size', '1', '--out-dir', str(out)]) == 2
    assert not out.exists()

def test_cluster(tmp_path, instance_file, monkeypatch):
    monkeypatch.setenv('EVSELCA_INSTANCE', str(instance_file))
    out = tmp_path / 'out'
    assert dispatch(['cluster', '--out-dir', str(out), '--no-db']) == 0
    clusters = read_json(out / 'clusters.json')
    assert clusters['intra_cap_min'] == 100.0
    assert clusters['routes'][0]['clusters'][0]['members'] == [0, 1]

def test_solve_exact(tmp_path, instance_file):
    out = tmp_path / 'out'
    assert dispatch(['solve', '--instance', str(instance_file), '--method', 'exact', '--out-dir', str(out)]) == 0
    solution = read_json(out / 'solution.json')
    assert solution['feasible']
    assert solution['plan'] == [[0, 1]]
    assert solution['charger_counts'] == [[0, 1], [0, 0], [0, 0]]
    assert solution['cost']['total'] == pytest.approx(FAST_TOTAL)
    assert pd.read_csv(out / 'occupancy.csv')['step'].tolist() == [6, 7]
    assert read_json(out / 'manifest.json')['instance_hash'] == instance_hash(load_instance(instance_file))

def test_solve_refuses_a_large_space(tmp_path, instance_file):
    out = tmp_path / 'out'
    assert dispatch(['solve', '--instance', str(instance_file), '--method', 'exact', '--max-space', '1', '--out-dir', str(out)]) == 1
    assert read_json(out / 'diagnostics.json')['error'].startswith('refused')
    assert read_json(out / 'manifest.json')['exit_status'] == 1
    events = db.read_table(db.initialize_database(DB_NAME, out), 'run_events')
    assert 0 in events['success'].tolist()

def test_ga_runs_are_reproducible(tmp_path, instance_file):
    args = ['solve', '--instance', str(instance_file), '--pop-size', '20', '--iterations', '3', '--parents', '4', '--seed', '0', '--no-db']
    assert dispatch(args + ['--out-dir', str(tmp_path / 'a')]) == 0
    assert dispatch(args + ['--out-dir', str(tmp_path / 'b'), '--threads', '1']) == 0
    first = (tmp_path / 'a' / 'solution.json').read_bytes()
    assert first == (tmp_path / 'b' / 'solution.json').read_bytes()
    trace = pd.read_csv(tmp_path / 'a' / 'convergence.csv')
    assert list(trace.columns) == ['generation', 'best', 'mean', 'feasible_share']
    assert trace['generation'].tolist() == [0, 1, 2, 3]

def test_evaluate_with_explain(tmp_path, instance_file):
    plan = write_json(tmp_path / 'plan.json', {'plan': [[0, 0]], 'charger_counts': ONE_SLOW})
    out = tmp_path / 'out'
    assert dispatch(['evaluate', '--instance', str(instance_file), '--plan', str(plan), '--explain', '--out-dir', str(out), '--no-db']) == 0
    evaluation = read_json(out / 'evaluation.json')
    assert evaluation['feasible']
    assert evaluation['cost']['total'] == pytest.approx(SLOW_TOTAL)
    assert evaluation['events'][0]['steps'] == [6, 7, 8]
    assert read_json(out / 'sets.json')['horizon'] == 56

def test_evaluate_reports_an_infeasible_plan(tmp_path, instance_file):
    plan = write_json(tmp_path / 'plan.json', {'plan': [[0, 0]], 'charger_counts': [[0, 0], [0, 0], [0, 0]]})
    out = tmp_path / 'out'
    assert dispatch(['evaluate', '--instance', str(instance_file), '--plan', str(plan), '--out-dir', str(out), '--no-db']) == 1
    codes = {v['code'] for v in read_json(out / 'evaluation.json')['violations']}
    assert 'charger_capacity' in codes

def test_evaluate_rejects_a_plan_of_the_wrong_length(tmp_path, instance_file):
    plan = write_json(tmp_path / 'plan.json', {'plan': [None, None], 'charger_counts': ONE_SLOW})
    assert dispatch(['evaluate', '--instance', str(instance_file), '--plan', str(plan), '--out-dir', str(tmp_path / 'out')]) == 2

def test_export_and_replay(tmp_path, ci, instance_file):
    out = tmp_path / 'out'
    assert dispatch(['export-milp', '--instance', str(instance_file), '--out-dir', str(out), '--no-db']) == 0
    assert 'charger_capacity_0_0_6' in (out / 'model.lp').read_text(encoding='utf-8')

    values = lp_point(ci, evaluate_plan(ci, ((0, 0),), ONE_SLOW).solution)
    point = write_json(tmp_path / 'point.json', {'variables': values})
    assert dispatch(['replay', '--instance', str(instance_file), '--solution', str(point), '--out-dir', str(out), '--no-db']) == 0
    replayed = read_json(out / 'replay.json')
    assert replayed['feasible']
    assert replayed['row_violations'] == []
    assert replayed['lp_objective'] == pytest.approx(SLOW_TOTAL)

def test_replay_fails_on_a_broken_point(tmp_path, ci, instance_file):
    values = lp_point(ci, evaluate_plan(ci, ((0, 0),), ONE_SLOW).solution)
    values['z_0_0'] = 0.0
    point = write_json(tmp_path / 'point.json', values)
    out = tmp_path / 'out'
    assert dispatch(['replay', '--instance', str(instance_file), '--solution', str(point), '--out-dir', str(out), '--no-db']) == 1
    assert any(row.startswith('charger_capacity') for row in read_json(out / 'replay.json')['row_violations'])

def test_sweep(tmp_path, instance):
    save_instance(instance, tmp_path / 'instance.json')
    spec = write_json(tmp_path / 'sweep.json', {
        'axis': 'charger_cost_pct', 'levels': [0, -80], 'method': 'exact', 'instance': 'instance.json'})
    out = tmp_path / 'out'
    assert dispatch(['sweep', '--spec', str(spec), '--out-dir', str(out)]) == 0
    results = pd.read_csv(out / 'results.csv')
    assert results['level'].tolist() == [0.0, -80.0]
    assert results['normalized_cost'].iloc[0] == 100.0
    assert results['normalized_cost'].iloc[1] < 100.0
    rows = db.read_table(db.initialize_database(DB_NAME, out), 'sweep_results')
    assert len(rows) == 2

def test_sweep_without_an_instance(tmp_path):
    spec = write_json(tmp_path / 'sweep.json', {'axis': 'vot_pct', 'levels': [0]})
    out = tmp_path / 'out'
    assert dispatch(['sweep', '--spec', str(spec), '--out-dir', str(out)]) == 2
    assert not out.exists()

def test_unclusterable_instance_writes_diagnostics(tmp_path):
    # 8 miles of range leave an 8 min cluster cap, below every leg
    instance = apply_level(make_instance(), 'range_miles', 8.0)
    path = save_instance(instance, tmp_path / 'short.json')
    out = tmp_path / 'out'
    assert dispatch(['solve', '--instance', str(path), '--method', 'exact', '--out-dir', str(out)]) == 1
    assert read_json(out / 'diagnostics.json')['error'].startswith('infeasible')
    manifest = read_json(out / 'manifest.json')
    assert manifest['exit_status'] == 1
    assert manifest['instance_hash'] == instance_hash(load_instance(path))
    get_connection = db.initialize_database(DB_NAME, out)
    assert db.read_table(get_connection, 'runs')['exit_status'].tolist() == [1]
    events = db.read_table(get_connection, 'run_events')
    assert 'Failed at solve' in events['process'].tolist()

def test_replay_refuses_an_oversized_model(tmp_path, ci, instance_file):
    values = lp_point(ci, evaluate_plan(ci, ((0, 0),), ONE_SLOW).solution)
    point = write_json(tmp_path / 'point.json', values)
    out = tmp_path / 'out'
    args = ['replay', '--instance', str(instance_file), '--solution', str(point), '--max-lp-variables', '5', '--out-dir', str(out), '--no-db']
    assert dispatch(args) == 1
    assert read_json(out / 'diagnostics.json')['error'].startswith('refused')
    assert read_json(out / 'manifest.json')['exit_status'] == 1
    assert not (out / 'replay.json').exists()
