import sqlite3

import pytest

from evselca import db
from evselca import globals as g
from evselca.types import Run, SweepRow, TraceRow


@pytest.fixture
def get_connection(tmp_path):
    return db.initialize_database('runs.db', tmp_path)

def tables(get_connection):
    with get_connection() as con:
        return {row[0] for row in con.execute("SELECT name FROM sqlite_master WHERE type='table'")}

def test_new_ledger_has_every_table(get_connection):
    assert tables(get_connection) == set(db.DB_TABLES)
    assert g.run_id_counter == 1

def test_rows_land_in_the_table_named_after_them(get_connection):
    db.insert_named_tuples(get_connection, [
        TraceRow(4, 0, 120.5, 130.0, 0.5),
        None,
        TraceRow(4, 1, 110.0, 118.0, 0.75)])
    trace = db.read_table(get_connection, 'convergence', run_id=4)
    assert trace['generation'].tolist() == [0, 1]
    assert trace['best'].tolist() == [120.5, 110.0]

def test_missing_values_are_stored_as_null(get_connection):
    db.insert_named_tuple(get_connection, SweepRow(2, 'vot_pct', 50.0, 0, 0, None, None, None, None, None, None, None, 0, None))
    row = db.read_table(get_connection, 'sweep_results').iloc[0]
    assert row['feasible'] == 0
    assert row['total'] is None or row['total'] != row['total']

def test_log_event(get_connection):
    db.log_event(get_connection, run_id=9, process='Failed at solve', success=0, message='boom')
    events = db.read_table(get_connection, 'run_events', run_id=9)
    assert events[['process', 'success', 'message']].values.tolist() == [['Failed at solve', 0, 'boom']]
    assert events['timestamp'].iloc[0].endswith('+00:00')

def test_failed_insert_is_logged_not_raised(get_connection):
    with get_connection() as con:
        con.execute('DROP TABLE convergence')
    db.insert_named_tuple(get_connection, TraceRow(5, 0, 1.0, 1.0, 1.0))
    events = db.read_table(get_connection, 'run_events', run_id=5)
    assert events['process'].tolist() == ['Failed at inserting data into convergence']

def test_execute_command_gives_up(get_connection):
    with pytest.raises(sqlite3.DatabaseError):
        db.execute_command(get_connection, 'SELECT * FROM nowhere', delay=0.0, retries=1)

def test_run_ids_continue_after_reopening(tmp_path):
    get_connection = db.initialize_database('runs.db', tmp_path)
    first = db.next_run_id()
    db.insert_named_tuple(get_connection, Run(first, 'solve', '{}', 0, g.VERSION, 'abc', 0.1, 0))
    db.initialize_database('runs.db', tmp_path)
    assert db.next_run_id() == first + 1

def test_hard_reset_empties_the_ledger(tmp_path):
    get_connection = db.initialize_database('runs.db', tmp_path)
    db.insert_named_tuple(get_connection, Run(12, 'solve', '{}', 0, g.VERSION, 'abc', 0.1, 0))
    get_connection = db.initialize_database('runs.db', tmp_path, hard_reset=True)
    assert db.read_table(get_connection, 'runs').empty
    assert db.next_run_id() == 1

def test_unknown_table(get_connection):
    with pytest.raises(ValueError):
        db.read_table(get_connection, 'albums')
