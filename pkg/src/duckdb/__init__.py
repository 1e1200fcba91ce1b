from .metrics import fetch_coverage, fetch_sequence, fetch_sequences, fetch_step_means, fetch_summary, fetch_variants
from .trends import build_trend_chart, fetch_step_chart

__all__ = [
    "build_trend_chart",
    "fetch_coverage",
    "fetch_sequence",
    "fetch_sequences",
    "fetch_step_chart",
    "fetch_step_means",
    "fetch_summary",
    "fetch_variants",
]
