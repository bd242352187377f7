"""Layer assignment search for convolutional networks via inherited sampling."""

from .assignments import (
    AssignmentError,
    LayerAssignment,
    count_assignments,
    count_range,
    enumerate_assignments,
    is_inherited_chain,
    seed_assignment,
    successors,
)
from .search import SearchConfig, SearchTrace, run_search, select_top1

__version__ = "0.1.0"
