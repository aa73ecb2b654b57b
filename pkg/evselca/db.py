from __future__ import annotations
import time
import sqlite3
import traceback
import pandas as pd

from pathlib import Path

from . import globals as g
from .types import *
from typing import Dict, Any, Optional, List, Tuple, Union

functions = [
    'initialize_database', 'execute_command', 'insert_named_tuple', 'insert_named_tuples',
    'log_event', 'next_run_id', 'read_table']

__all__ = functions

DB_TABLES = {
    'runs' : '(run_id INTEGER, command TEXT, config TEXT, seed INTEGER, version TEXT, instance_hash TEXT, wall_time_s REAL, exit_status INTEGER)',
    'run_events': '(timestamp TEXT, run_id INTEGER, process TEXT, success INTEGER, message TEXT)',
    'convergence' : '(run_id INTEGER, generation INTEGER, best REAL, mean REAL, feasible_share REAL)',
    'sweep_results' : '(run_id INTEGER, axis TEXT, level REAL, replication INTEGER, feasible INTEGER, total REAL, detour_vot REAL, wait_vot REAL, recharge_vot REAL, energy REAL, facility REAL, charger REAL, chargers_installed INTEGER, normalized_cost REAL)',}


def __reset_tables(get_connection: SQLite3ConnectionGenerator, tables: Dict[str, str]) -> None:
    """
    Drops and recreates all tables of the run ledger.

    Args:
        get_connection (Callable[[], sqlite3.Connection]):
            A function that returns a new SQLite connection object.
        tables (dict[str, str]):
            Table name -> column definitions in `CREATE TABLE` form.

    Notes:
        - This function **irreversibly deletes** all data in the specified tables.
    """
    con = get_connection()
    cur = con.cursor()
    for name, cols in tables.items():
        cur.execute(f"DROP TABLE IF EXISTS {name}")
        cur.execute(f"CREATE TABLE {name} {cols};")
    con.commit()
    con.close()

def __create_index_if_missing(
    get_connection:SQLite3ConnectionGenerator,
    index_name:str,
    table_name:str,
    columns:str) -> None:
    with get_connection() as con:
        cur = con.cursor()
        cur.execute("SELECT name FROM sqlite_master WHERE type='index' AND name=?;", (index_name,))

        if not cur.fetchone():
            cur.execute(f"CREATE INDEX {index_name} ON {table_name} ({columns});")
            con.commit()

def __create_indexes(get_connection:SQLite3ConnectionGenerator) -> None:
    index_list = [
        ("idx_runs", "runs", "run_id"),
        ("idx_run_events", "run_events", "run_id, timestamp"),
        ("idx_convergence", "convergence", "run_id, generation"),
        ("idx_sweep_results", "sweep_results", "run_id, axis, level")]

    for index in index_list:
        __create_index_if_missing(get_connection, *index)

def __initialize_globals(get_connection:SQLite3ConnectionGenerator) -> None:
    """
    Continues run numbering after the highest `run_id` already in the ledger.

    Global Variables Set:
        - `g.run_id_counter (int)`: Next id handed out by `next_run_id`.
    """
    with get_connection() as con:
        last = pd.read_sql("SELECT MAX(run_id) AS last FROM runs", con)['last'].iloc[0]
    with g.lock:
        g.run_id_counter = 1 if pd.isna(last) else int(last) + 1

def __check_filepath(filepath: Union[str, Path, None] = None) -> Path:
    """
    Ensures that the given directory exists, creating it if missing.

    Args:
        filepath (Union[str, Path, None], optional):
            - If `None`, returns the current working directory.
            - A relative path is taken under `cwd()`.

    Returns:
        Path: The absolute directory.
    """
    if filepath is None:
        return Path.cwd()

    if isinstance(filepath, str):
        filepath = Path(filepath)

    if not filepath.is_absolute():
        filepath = Path.cwd() / filepath

    if not filepath.exists():
        filepath.mkdir(parents=True, exist_ok=True)

    return filepath

def initialize_database(db_name: str, filepath: Union[str, Path, None] = None, hard_reset: bool = False) -> SQLite3ConnectionGenerator:
    """
    Opens (or creates) the run ledger and returns a connection generator.

    Args:
        db_name (str):
            The name of the SQLite database file.
        filepath (Union[str, Path, None], optional):
            The directory where the database file is stored. Defaults to `None`, which
            means the current working directory.
        hard_reset (bool, optional):
            If `True`, drops and recreates every table. Defaults to `False`.

    Returns:
        SQLite3ConnectionGenerator:
            A function that returns an open SQLite connection.

    Notes:
        - The database connection uses:
            - **WAL mode (`PRAGMA journal_mode=WAL;`)** so sweep workers can log concurrently.
            - **`PRAGMA synchronous=FULL;`** for durability.
            - **`PRAGMA temp_store=MEMORY;`**.
        - A new file is always created from scratch. An existing one keeps its rows and
          run numbering continues after its last run.

    Example:
        ```python
        get_connection = initialize_database("evselca_runs.db", filepath="out")
        run_id = next_run_id()
        ```
    """
    filepath = __check_filepath(filepath)

    file = filepath / db_name
    hard_reset = hard_reset or (not file.exists())

    def get_connection():
        con = sqlite3.connect(file, check_same_thread=False)
        con.execute("PRAGMA journal_mode=WAL;")
        con.execute("PRAGMA synchronous=FULL;")
        con.execute("PRAGMA temp_store=MEMORY;")
        return con

    if hard_reset:
        __reset_tables(get_connection, DB_TABLES)
        __create_indexes(get_connection)
    __initialize_globals(get_connection)

    return get_connection

def next_run_id() -> int:
    """Hands out run ids under `g.lock`."""
    with g.lock:
        run_id = g.run_id_counter
        g.run_id_counter += 1
        return run_id

def execute_command(
    get_connection: SQLite3ConnectionGenerator,
    cmd: str,
    row: Optional[DatabaseRow] = None,
    delay: float = 0.2,
    retries: int = 5) -> None:
    """
    Runs one SQL command, retrying after `delay` seconds when the database is busy.

    Args:
        get_connection (SQLite3ConnectionGenerator):
            A function that returns an SQLite connection.
        cmd (str):
            The SQL command to be executed.
        row (Optional[DatabaseRow], optional):
            Parameters of the command. Defaults to `None`.
        delay (float, optional):
            Seconds to wait between attempts. Defaults to `0.2`.
        retries (int, optional):
            Attempts after the first one. Defaults to `5`.

    Raises:
        sqlite3.DatabaseError: If the last attempt fails too.
    """
    attempt = 0
    while True:
        con = get_connection()
        try:
            cur = con.cursor()
            if row is None:
                cur.execute(cmd)
            else:
                cur.execute(cmd, row)
            con.commit()
            return
        except sqlite3.DatabaseError:
            if attempt >= retries:
                raise
            attempt += 1
            time.sleep(delay)
        finally:
            con.close()

def insert_named_tuple(
    get_connection: SQLite3ConnectionGenerator,
    row: Optional[DatabaseRow],
    log: bool = True) -> None:
    """
    Inserts a namedtuple record into the table named after its class.

    The INSERT is built from the namedtuple's `_fields`. Failures are recorded in
    `run_events` when `log` is set, and swallowed.

    Example:
        ```python
        insert_named_tuple(get_connection, TraceRow(1, 0, 812.4, 930.1, 0.6))
        ```
    """
    if row is None:
        return

    table = row.__class__.__name__
    fields = row._fields
    field_placeholders = ', '.join(['?'] * len(fields))

    insert_cmd = f"INSERT INTO {table} ({', '.join(fields)}) VALUES ({field_placeholders});"
    try:
        execute_command(get_connection, insert_cmd, tuple(row))
    except sqlite3.DatabaseError:
        if log and table != 'run_events':
            message = traceback.format_exc()
            log_event(
                get_connection,
                run_id=getattr(row, 'run_id', 0),
                process=f"Failed at inserting data into {table}",
                success=0,
                message=message)

def insert_named_tuples(
    get_connection: SQLite3ConnectionGenerator,
    rows: List[Optional[DatabaseRow]],
    log: bool = True) -> None:
    for row in rows:
        if row is not None:
            insert_named_tuple(get_connection, row, log=log)

def log_event(get_connection: SQLite3ConnectionGenerator, **kwargs: Any) -> None:
    """
    Inserts a timestamped `run_events` row.

    Example:
        ```python
        log_event(get_connection, run_id=3, process="sweep level 40", success=0, message=traceback.format_exc())
        ```
    """
    event = run_events(timestamp=run_events.default_timestamp(), **kwargs)
    insert_named_tuple(get_connection, event, log=False)

def read_table(get_connection: SQLite3ConnectionGenerator, table: str, run_id: Optional[int] = None) -> pd.DataFrame:
    """Reads a ledger table, optionally restricted to one run."""
    if table not in DB_TABLES:
        raise ValueError(f'unknown table {table}')
    con = get_connection()
    try:
        if run_id is None:
            return pd.read_sql(f"SELECT * FROM {table}", con)
        return pd.read_sql(f"SELECT * FROM {table} WHERE run_id = ?", con, params=(run_id,))
    finally:
        con.close()
