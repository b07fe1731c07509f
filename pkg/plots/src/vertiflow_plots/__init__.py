"""Figure scripts over the simulator's exports."""

from .figures import cdf_figure, decomposition_figure, queues_figure
from .io import discover_runs, load_cdf, load_summary, load_trace

__all__ = [
    "cdf_figure",
    "decomposition_figure",
    "discover_runs",
    "load_cdf",
    "load_summary",
    "load_trace",
    "queues_figure",
]
