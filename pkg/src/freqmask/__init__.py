"""Confidential dissemination of hierarchical frequency tables.

Small cell adjustment masks the finest-level table once; iLBA masks every
coarser aggregate with bounded information loss; the audit module replays a
differencing attacker against any release.
"""

from .core import (
    DEFAULT_K,
    Case,
    FeasibleInterval,
    IlbaTrace,
    ScaResult,
    Shift,
    SmallCellPartition,
    apply_ilba,
    apply_sca,
    feasible_interval,
    ilba_general,
    masked_aggregate,
    partition_small_cells,
)
from .storage import load_finest_table, save_finest_table
from .tables import (
    AggregationRequest,
    CellQuery,
    FinestTable,
    aggregate_table,
    build_finest_table,
    info_loss_summary,
    ingest_microdata,
    query_cell,
)

__version__ = "0.1.0"
