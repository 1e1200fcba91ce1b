from pathlib import Path

import duckdb

from .common import read_rows
from .errors import MissingArtifactError
from .evaluation.evaluate import VARIANTS


# (metrics, summary) file pairs, full run first; a baseline-only run has only the baseline pair.
_RUN_FILES = (("metrics.csv", "summary.csv"), ("baseline_metrics.csv", "baseline_summary.csv"))


def _run_files(root: Path) -> tuple[Path, Path]:
    for metrics, summary in _RUN_FILES:
        if (root / metrics).exists():
            if not (root / summary).exists():
                raise MissingArtifactError(str(root / summary), "eval")
            return root / metrics, root / summary
    raise MissingArtifactError(str(root / "metrics.csv"), "eval")


def _summary_row(row: dict[str, str]) -> tuple[str, float, float, float]:
    # Columns are variant, IS_<t_obs>_<t_fut>, IS_<t_obs>_<horizon>, stderr; the IS names follow the config.
    variant, short, long, stderr = row.values()
    return variant, float(short), float(long), float(stderr)


def load_run_into_duckdb(run_dir: str | Path) -> duckdb.DuckDBPyConnection:
    root = Path(run_dir)
    metrics_file, summary_file = _run_files(root)
    metrics = read_rows(metrics_file)
    summary = read_rows(summary_file)
    coverage = read_rows(root / "coverage.csv") if (root / "coverage.csv").exists() else []

    conn = duckdb.connect(database=":memory:")
    conn.execute("""
                 CREATE TABLE metric (
                                        sequence_id INTEGER,
                                        step        INTEGER,
                                        variant     VARCHAR,
                                        psi         DOUBLE
                 );
                 """)
    conn.execute("""
                 CREATE TABLE summary (
                                        variant  VARCHAR,
                                        is_short DOUBLE,
                                        is_long  DOUBLE,
                                        stderr   DOUBLE
                 );
                 """)
    conn.execute("""
                 CREATE TABLE variant (
                                        name    VARCHAR PRIMARY KEY,
                                        ordinal INTEGER
                 );
                 """)
    conn.execute("""
                 CREATE TABLE coverage (
                                        variant        VARCHAR,
                                        fork_sequences INTEGER,
                                        covered        INTEGER,
                                        rate           DOUBLE
                 );
                 """)

    metric_rows = [(int(r["sequence_id"]), int(r["step"]), r["variant"], float(r["psi"])) for r in metrics]
    summary_rows = [_summary_row(r) for r in summary]
    coverage_rows = [(r["variant"], int(r["fork_sequences"]), int(r["covered"]), float(r["rate"])) for r in coverage]

    # Bulk insert
    conn.executemany("INSERT INTO variant (name, ordinal) VALUES (?, ?)", [(v, i) for i, v in enumerate(VARIANTS)])
    if summary_rows:
        conn.executemany("INSERT INTO summary (variant, is_short, is_long, stderr) VALUES (?, ?, ?, ?)", summary_rows)
    if metric_rows:
        conn.executemany("INSERT INTO metric (sequence_id, step, variant, psi) VALUES (?, ?, ?, ?)", metric_rows)
    if coverage_rows:
        conn.executemany("INSERT INTO coverage (variant, fork_sequences, covered, rate) VALUES (?, ?, ?, ?)", coverage_rows)

    conn.execute("CREATE INDEX metric_variant_idx ON metric(variant);")
    conn.execute("CREATE INDEX metric_sequence_idx ON metric(sequence_id);")

    return conn
