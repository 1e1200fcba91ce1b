from collections import defaultdict

from ..db import get_conn


def fetch_variants() -> list[str]:
    rows = get_conn().execute(
        """
        SELECT DISTINCT m.variant, v.ordinal
        FROM metric m
        LEFT JOIN variant v ON v.name = m.variant
        ORDER BY v.ordinal NULLS LAST, m.variant
        """
    ).fetchall()
    return [variant for variant, _ in rows]


def fetch_summary() -> list[dict]:
    """Per-variant rows of the run's summary file, with the number of scored sequences."""
    rows = get_conn().execute(
        """
        SELECT
            s.variant,
            s.is_short,
            s.is_long,
            s.stderr,
            (SELECT count(DISTINCT m.sequence_id) FROM metric m WHERE m.variant = s.variant) AS sequences
        FROM summary s
        LEFT JOIN variant v ON v.name = s.variant
        ORDER BY v.ordinal NULLS LAST, s.variant
        """
    ).fetchall()
    cols = ["variant", "is_short", "is_long", "stderr", "sequences"]
    return [dict(zip(cols, row)) for row in rows]


def fetch_step_means(sequence_id: int | None = None) -> dict[str, list[dict]]:
    """Mean psi per step for every variant, optionally for one sequence only."""
    where = "WHERE m.sequence_id = ?" if sequence_id is not None else ""
    params = [sequence_id] if sequence_id is not None else []
    rows = get_conn().execute(
        f"""
        SELECT m.variant, m.step, avg(m.psi) AS psi
        FROM metric m
        LEFT JOIN variant v ON v.name = m.variant
        {where}
        GROUP BY m.variant, v.ordinal, m.step
        ORDER BY v.ordinal NULLS LAST, m.variant, m.step
        """,
        params,
    ).fetchall()
    by_variant: dict[str, list[dict]] = {}
    for variant, step, psi in rows:
        by_variant.setdefault(variant, []).append({"step": step, "value": psi})
    return by_variant


def fetch_sequences() -> list[dict]:
    """One row per sequence with its mean psi under every variant."""
    rows = get_conn().execute(
        """
        SELECT sequence_id, variant, avg(psi) AS psi
        FROM metric
        GROUP BY sequence_id, variant
        ORDER BY sequence_id
        """
    ).fetchall()
    by_sequence: dict[int, dict[str, float]] = defaultdict(dict)
    for sequence_id, variant, psi in rows:
        by_sequence[sequence_id][variant] = psi
    return [{"sequence_id": sid, "psi": values} for sid, values in by_sequence.items()]


def fetch_sequence(sequence_id: int) -> list[dict] | None:
    """Per-step psi of one sequence, one dict per step keyed by variant."""
    rows = get_conn().execute(
        "SELECT step, variant, psi FROM metric WHERE sequence_id = ? ORDER BY step",
        [sequence_id],
    ).fetchall()
    if not rows:
        return None
    steps: dict[int, dict[str, float]] = defaultdict(dict)
    for step, variant, psi in rows:
        steps[step][variant] = psi
    return [{"step": step, "psi": values} for step, values in steps.items()]


def fetch_coverage() -> list[dict]:
    rows = get_conn().execute(
        """
        SELECT c.variant, c.fork_sequences, c.covered, c.rate
        FROM coverage c
        LEFT JOIN variant v ON v.name = c.variant
        ORDER BY v.ordinal NULLS LAST, c.variant
        """
    ).fetchall()
    cols = ["variant", "fork_sequences", "covered", "rate"]
    return [dict(zip(cols, row)) for row in rows]
