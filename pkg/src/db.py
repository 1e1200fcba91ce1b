"""Process-wide DuckDB connection holding one loaded run for the viewer.

app.py loads the run in its lifespan hook; query helpers in src.duckdb read
through get_conn() and the page handlers resolve paths through get_run_dir().
"""
from pathlib import Path

import duckdb

from .common import DEFAULT_RUN_DIR
from .metrics_to_duckdb import load_run_into_duckdb

_conn: duckdb.DuckDBPyConnection | None = None
_run_dir: Path | None = None


def init_db(run_dir: str | Path = DEFAULT_RUN_DIR) -> None:
    global _conn, _run_dir
    _conn = load_run_into_duckdb(run_dir)
    _run_dir = Path(run_dir)


def _no_run_loaded() -> RuntimeError:
    return RuntimeError("no run loaded into the viewer database (load one with init_db(run_dir))")


def get_conn() -> duckdb.DuckDBPyConnection:
    if _conn is None:
        raise _no_run_loaded()
    return _conn


def get_run_dir() -> Path:
    if _run_dir is None:
        raise _no_run_loaded()
    return _run_dir
